import copy
import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from psihilfer.cli import PRESETS, SCHEMA_VERSION, config_from_dict, load_config, main, run
from psihilfer.errors import ConfigurationError

from conftest import EXAMPLE6_BRACKET, EXAMPLE6_OMEGA, EXAMPLE6_RHO


def preset(**sections):
    data = copy.deepcopy(PRESETS["example6"]["config"])
    for name, fields in sections.items():
        data[name].update(fields)
    return data


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(x) if x != "" else None for x in r] for r in rows[1:]]


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# --- loading -----------------------------------------------------------------------------


def test_example_preset():
    cfg = load_config("example6")
    pr = cfg.problem
    assert (pr.alpha, pr.beta, pr.M, pr.r, pr.T, pr.psi_expr) == (0.5, 1.0, 0.0, 0.5, 1.0, "t")


@pytest.mark.parametrize(
    "change, field",
    [
        ({"problem": {"r": 1.2}}, "problem.r"),
        ({"problem": {"beta": 1.5}}, "problem.beta"),
        ({"problem": {"alpha": 1.0}}, "problem.alpha"),
        ({"problem": {"f_expr": "sqrt(t"}}, "problem.f_expr"),
        ({"problem": {"lower_expr": "foo(t)"}}, "problem.lower_expr"),
        ({"problem": {"psi_expr": "t + y"}}, "problem.psi_expr"),
        ({"problem": {"psi_expr": "-t"}}, "problem.psi_expr"),
        ({"problem": {"M": -1.0}}, "problem.M"),
        ({"problem": {"alpha": "half"}}, "problem.alpha"),
        ({"problem": {"colour": 3}}, "problem"),
        ({"mesh": {"N": 1}}, "mesh.N"),
        ({"mesh": {"N": 2.5}}, "mesh.N"),
        ({"solver": {"mode": "newton"}}, "solver.mode"),
        ({"solver": {"Ltilde": None}}, "solver.Ltilde"),
        ({"solver": {"tol": 0}}, "solver.tol"),
        ({"output": {"format": "xml"}}, "output.format"),
    ],
)
def test_config_rejections_name_the_field(change, field):
    with pytest.raises(ConfigurationError) as exc:
        config_from_dict(preset(**change))
    assert exc.value.field == field
    assert field in str(exc.value)


def test_missing_field_and_bad_json(tmp_path):
    data = preset()
    del data["problem"]["alpha"]
    with pytest.raises(ConfigurationError) as exc:
        config_from_dict(data)
    assert exc.value.field == "problem.alpha" and "missing" in str(exc.value)
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        load_config(str(bad))
    with pytest.raises(ConfigurationError, match="no such file"):
        load_config(str(tmp_path / "missing.json"))


def test_r_condition_with_any_alpha():
    for alpha in (0.1, 0.5, 0.9):
        with pytest.raises(ConfigurationError) as exc:
            config_from_dict(preset(problem={"r": 1.2, "alpha": alpha}))
        assert exc.value.field == "problem.r"


# --- runs --------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def picard_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("picard")
    cfg = config_from_dict(preset(mesh={"N": 256}, solver={"max_iter": 5, "n_samples": 2000}))
    return run(cfg, str(out)), out


def test_picard_iteration_table(picard_run):
    summary, out = picard_run
    header, rows = read_csv(out / "iterations.csv")
    assert header == ["n", "sup_diff", "error", "bound"]
    assert [r[0] for r in rows] == [0, 1, 2, 3, 4, 5]
    for n, _, err, bound in rows:
        assert bound == pytest.approx(EXAMPLE6_BRACKET * EXAMPLE6_RHO**n, rel=1e-12)
        assert err <= bound + summary["slack"]
    assert summary["converged"] is False and summary["n_steps"] == 5
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["Omega"] == pytest.approx(EXAMPLE6_OMEGA, abs=1e-12)
    assert summary["contraction"]["rho"] == pytest.approx(EXAMPLE6_RHO, abs=1e-12)
    assert summary["certificates"]["lower"]["holds"] and summary["certificates"]["upper"]["defect_is_zero"]


def test_summary_recomputable_from_files(picard_run):
    summary, out = picard_run
    on_disk = json.loads((out / "summary.json").read_text())
    assert on_disk["files"] == ["iterations.csv", "solution.csv", "summary.json"]
    _, sol = read_csv(out / "solution.csv")
    _, it = read_csv(out / "iterations.csv")
    t = np.array([r[0] for r in sol])
    v = np.array([r[1] for r in sol])
    assert on_disk["lambda0"] == math.gamma(1.0) * v[0]
    assert on_disk["final_sup_diff"] == it[-1][1]
    assert on_disk["final_error"] == it[-1][2]
    assert on_disk["final_error"] == pytest.approx(np.max(np.abs(v - (np.sqrt(t) + 1) / 5)), rel=1e-12)
    assert on_disk["mesh"]["N"] == len(sol) - 1


def test_linear_bvp_zero_forcing(tmp_path):
    cfg = config_from_dict(preset(problem={"f_expr": "0"}, mesh={"N": 64}, solver={"mode": "linear-bvp"}))
    summary = run(cfg, str(tmp_path))
    header, rows = read_csv(tmp_path / "solution.csv")
    assert header == ["t", "v", "y"]
    assert all(r[1] == 0.0 and r[2] == 0.0 for r in rows)
    assert summary["lambda0"] == 0.0 and summary["decreasing_root_diagnostic"] == -0.5


def test_linear_bvp_rejects_y_in_forcing():
    with pytest.raises(ConfigurationError) as exc:
        config_from_dict(preset(solver={"mode": "linear-bvp"}))
    assert exc.value.field == "problem.f_expr"


def test_linear_ivp_gamma_below_one(tmp_path):
    data = preset(problem={"beta": 0.0, "f_expr": "1", "y0": 1.0}, mesh={"N": 64}, solver={"mode": "linear-ivp"})
    summary = run(config_from_dict(data), str(tmp_path))
    _, rows = read_csv(tmp_path / "solution.csv")
    assert rows[0][2] is None  # raw value is unbounded at t = 0
    assert rows[0][1] == pytest.approx(1 / math.gamma(0.5))
    assert summary["gamma"] == 0.5


def test_monotone_mode(tmp_path):
    cfg = config_from_dict(preset(mesh={"N": 256}, solver={"mode": "monotone", "n_samples": 2000}))
    summary = run(cfg, str(tmp_path))
    assert summary["converged"] and summary["final_gap"] <= 1e-8
    tol = 1e-8 + summary["slack"] + 1e-12
    for name in ("solution.csv", "maximal.csv"):
        _, rows = read_csv(tmp_path / name)
        t = np.array([r[0] for r in rows])
        assert np.max(np.abs(np.array([r[2] for r in rows]) - (np.sqrt(t) + 1) / 5)) <= tol
    header, _ = read_csv(tmp_path / "iterations.csv")
    assert header[-1] == "bound"


def test_json_format(tmp_path):
    cfg = config_from_dict(preset(mesh={"N": 32}, solver={"mode": "linear-bvp"}, problem={"f_expr": "sqrt(t)"}, output={"format": "json"}))
    run(cfg, str(tmp_path))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["summary.json"]
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["tables"]["solution"]["columns"] == ["t", "v", "y"]
    assert len(data["tables"]["solution"]["rows"]) == 33


def test_determinism(tmp_path):
    data = preset(mesh={"N": 128}, solver={"n_samples": 500})
    run(config_from_dict(data), str(tmp_path / "a"))
    run(config_from_dict(data), str(tmp_path / "b"))
    for name in ("solution.csv", "iterations.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    raw = (tmp_path / "a" / "solution.csv").read_bytes()
    assert raw.startswith(b"t,v,y\r\n") and raw.endswith(b"\r\n")


# --- entry point --------------------------------------------------------------------------------


def test_main_solve_with_overrides(tmp_path, capsys):
    path = write_config(tmp_path, preset(solver={"n_samples": 500}))
    assert main(["solve", path, "--mesh-n", "64", "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["mesh"]["N"] == 64 and summary["config"]["solver"]["seed"] == 7
    assert "wrote" in capsys.readouterr().out


def test_main_exit_codes(tmp_path, capsys, monkeypatch):
    assert main(["solve", write_config(tmp_path, preset(problem={"r": 1.2}))]) == 2
    assert "problem.r" in capsys.readouterr().err
    assert main(["solve", "example6", "--mesh-n", "32", "--out", str(tmp_path / "x"), "--mode", "monotone"]) == 0
    data = preset(mesh={"N": 32}, solver={"max_iter": 2, "n_samples": 100})
    assert main(["solve", write_config(tmp_path, data, "short.json"), "--out", str(tmp_path / "y")]) == 4
    data = preset(mesh={"N": 32}, problem={"lower_expr": "sqrt(t) + 2"}, solver={"n_samples": 100})
    assert main(["solve", write_config(tmp_path, data, "bad.json"), "--out", str(tmp_path / "z")]) == 3
    monkeypatch.setenv("PSI_HILFER_THREADS", "lots")
    assert main(["solve", "example6", "--out", str(tmp_path / "w")]) == 2
    assert "PSI_HILFER_THREADS" in capsys.readouterr().err


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    outs = []
    for n in ("1", "0", "3"):
        monkeypatch.setenv("PSI_HILFER_THREADS", n)
        d = tmp_path / f"t{n}"
        assert main(["solve", "example6", "--mesh-n", "64", "--out", str(d)]) == 0
        outs.append((d / "solution.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_presets_commands(capsys):
    assert main(["presets", "list"]) == 0
    assert capsys.readouterr().out.startswith("example6\t")
    assert main(["presets", "show", "example6"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown == PRESETS["example6"]["config"]
    assert config_from_dict(shown).problem.f_expr == PRESETS["example6"]["config"]["problem"]["f_expr"]
    assert main(["presets", "show", "nope"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "psihilfer", "presets", "list"], capture_output=True, text=True, check=True)
    assert "example6" in proc.stdout


def test_csv_quoting_is_rfc4180():
    from psihilfer.cli import _csv_text

    text = _csv_text(["a", "b"], [["x,y", 1], ['q"uote', 2.5]])
    rows = list(csv.reader(io.StringIO(text, newline="")))
    assert rows == [["a", "b"], ["x,y", "1"], ['q"uote', "2.5"]]
