"""Command line front end: JSON configs in, CSV tables and a JSON summary out.

    psihilfer solve <config-or-preset> [--mesh-n N] [--mode M] [--out DIR] [--seed S]
    psihilfer presets list
    psihilfer presets show <name>
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigurationError, EvaluationError, HypothesisViolation, PsiHilferError
from .expr import ExprSyntaxError, compile_expr
from .linear import (
    LinearProblem,
    boundary_residual,
    decreasing_root_diagnostic,
    root_function,
    solve_linear_bvp,
    solve_linear_ivp,
)
from .monotone import (
    IterationConfig,
    NonlinearProblem,
    check_lipschitz,
    check_monotone_f,
    compute_omega,
    contraction_check,
    monotone_solve,
    picard_unique_solve,
    verify_nonlinear_lower,
    verify_nonlinear_upper,
)
from .parallel import worker_count
from .psi_core import GradedMesh, OrderParams, PsiMap, WeightedGridFunction, default_grading

SCHEMA_VERSION = "1.0"
MODES = ("linear-ivp", "linear-bvp", "monotone", "picard")
FD_STEP = 1e-6


# --- configuration ------------------------------------------------------------


@dataclass
class ProblemConfig:
    alpha: float
    beta: float
    M: float
    T: float
    f_expr: str
    r: float | None = None
    psi_expr: str = "t"
    dpsi_expr: str | None = None
    exact_expr: str | None = None
    lower_expr: str | None = None
    upper_expr: str | None = None
    delta: float = 1.0
    y0: float = 0.0


@dataclass
class MeshConfig:
    N: int = 512
    grading_exponent: float | None = None


@dataclass
class SolverConfig:
    mode: str = "picard"
    tol: float = 1e-8
    max_iter: int = 200
    Ltilde: float | None = None
    tol_order: float = 1e-8
    n_samples: int = 10_000
    seed: int = 42
    init: str = "lower"
    check_hypotheses: bool = True


@dataclass
class OutputConfig:
    format: str = "csv"
    path: str = "out"
    emit_bound_curve: bool = True


@dataclass
class RunConfig:
    problem: ProblemConfig
    mesh: MeshConfig = field(default_factory=MeshConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS: dict[str, dict] = {
    "example6": {
        "description": "Caputo-type problem (alpha=1/2, beta=1, M=0, r=1/2, T=1, Psi=t) with exact solution (sqrt(t)+1)/5",
        "config": {
            "problem": {
                "alpha": 0.5,
                "beta": 1.0,
                "M": 0.0,
                "r": 0.5,
                "T": 1.0,
                "psi_expr": "t",
                "dpsi_expr": "1",
                "f_expr": "sqrt(pi)/10 - (sqrt(t)+1)/25 + sin((sqrt(t)+1)/5)/25 + (5*y - sin(y))/25",
                "exact_expr": "(sqrt(t)+1)/5",
                "lower_expr": "-(sqrt(t)+1)/6",
                "upper_expr": "sqrt(t)+1",
                "delta": 1.0,
            },
            "mesh": {"N": 512, "grading_exponent": None},
            "solver": {"mode": "picard", "tol": 1e-8, "max_iter": 200, "Ltilde": 0.24, "seed": 42, "init": "lower"},
            "output": {"format": "csv", "path": "out/example6", "emit_bound_curve": True},
        },
    },
}


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected an object, got {type(data).__name__}", prefix)
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigurationError(f"unknown field(s) {unknown}", prefix)
    kwargs = {}
    for name, f in names.items():
        path = f"{prefix}.{name}"
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigurationError("missing required field", path)
            continue
        kwargs[name] = _coerce(data[name], f.type, path)
    return cls(**kwargs)


def _coerce(value, type_name: str, path: str):
    optional = "None" in type_name
    if value is None:
        if optional:
            return None
        raise ConfigurationError("must not be null", path)
    base = type_name.replace("| None", "").strip()
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigurationError(f"expected a finite number, got {value!r}", path)
        return float(value)
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"expected an integer, got {value!r}", path)
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"expected true or false, got {value!r}", path)
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ConfigurationError(f"expected a string, got {value!r}", path)
        return value
    raise AssertionError(type_name)


def config_from_dict(data: dict) -> RunConfig:
    """Build and fully validate a :class:`RunConfig` (errors name the offending field)."""
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a JSON object", "config")
    unknown = sorted(set(data) - {"problem", "mesh", "solver", "output", "description"})
    if unknown:
        raise ConfigurationError(f"unknown section(s) {unknown}", "config")
    if "problem" not in data:
        raise ConfigurationError("missing required section", "problem")
    cfg = RunConfig(
        _build(ProblemConfig, data["problem"], "problem"),
        _build(MeshConfig, data.get("mesh", {}), "mesh"),
        _build(SolverConfig, data.get("solver", {}), "solver"),
        _build(OutputConfig, data.get("output", {}), "output"),
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Re-check every invariant of the problem the config describes."""
    s, pr, o = cfg.solver, cfg.problem, cfg.output
    if s.mode not in MODES:
        raise ConfigurationError(f"mode must be one of {list(MODES)}, got {s.mode!r}", "solver.mode")
    if o.format not in ("csv", "json"):
        raise ConfigurationError(f"format must be 'csv' or 'json', got {o.format!r}", "output.format")
    if s.init not in ("lower", "upper"):
        raise ConfigurationError(f"init must be 'lower' or 'upper', got {s.init!r}", "solver.init")
    IterationConfig(s.tol, s.max_iter, s.tol_order, s.n_samples, s.seed)
    needs = {"linear-bvp": ["r"], "monotone": ["r", "lower_expr", "upper_expr"], "picard": ["r", "lower_expr", "upper_expr"]}
    for name in needs.get(s.mode, []):
        if getattr(pr, name) is None:
            raise ConfigurationError(f"required for mode {s.mode!r}", f"problem.{name}")
    if s.mode == "picard" and s.Ltilde is None:
        raise ConfigurationError("required for mode 'picard'", "solver.Ltilde")
    build_problem(cfg)


def load_config(source: str) -> RunConfig:
    """Load a JSON config file, or a preset by name when no such file exists."""
    path = Path(source)
    if path.is_file():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})", str(path)) from exc
        return config_from_dict(data)
    if source in PRESETS:
        return config_from_dict(copy.deepcopy(PRESETS[source]["config"]))
    raise ConfigurationError(f"no such file or preset: {source!r}", "config")


# --- problem assembly -----------------------------------------------------------


def _expr(src: str, path: str, allowed):
    try:
        return compile_expr(src, allowed)
    except ExprSyntaxError as exc:
        raise ConfigurationError(str(exc), path) from exc


def _psi_map(pr: ProblemConfig) -> PsiMap:
    psi_fn = _expr(pr.psi_expr, "problem.psi_expr", ("t",))
    if pr.dpsi_expr is not None:
        d_fn = _expr(pr.dpsi_expr, "problem.dpsi_expr", ("t",))

        def dpsi(t):
            return np.broadcast_to(d_fn(t), np.shape(t)).astype(float)
    else:
        h = FD_STEP * max(1.0, pr.T)

        def dpsi(t):
            t = np.asarray(t, dtype=float)
            lo = np.maximum(t - h, 0.0)
            return (psi_fn(t + h) - psi_fn(lo)) / (t + h - lo)

    def psi(t):
        return np.broadcast_to(psi_fn(t), np.shape(t)).astype(float)

    try:
        return PsiMap(psi, dpsi, pr.T, pr.psi_expr)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc), "problem.psi_expr") from exc
    except EvaluationError as exc:
        raise ConfigurationError(f"cannot evaluate: {exc}", "problem.psi_expr") from exc


@dataclass
class Assembled:
    order: OrderParams
    psi: PsiMap
    mesh: GradedMesh
    f: Any
    exact: Any
    lower: Any
    upper: Any


def build_problem(cfg: RunConfig) -> Assembled:
    pr = cfg.problem
    try:
        order = OrderParams(pr.alpha, pr.beta)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], f"problem.{exc.field}") from exc
    if not pr.T > 0:
        raise ConfigurationError(f"must be positive, got {pr.T}", "problem.T")
    if not pr.M >= 0:
        raise ConfigurationError(f"must be non-negative, got {pr.M}", "problem.M")
    if not pr.delta > 0:
        raise ConfigurationError(f"must be positive, got {pr.delta}", "problem.delta")
    psi = _psi_map(pr)
    p = cfg.mesh.grading_exponent
    try:
        mesh = GradedMesh(pr.T, cfg.mesh.N, default_grading(order.gamma) if p is None else p)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], exc.field) from exc
    linear = cfg.solver.mode.startswith("linear")
    f = _expr(pr.f_expr, "problem.f_expr", ("t",) if linear else ("t", "y"))
    opt = {}
    for name in ("exact_expr", "lower_expr", "upper_expr"):
        src = getattr(pr, name)
        opt[name] = None if src is None else _expr(src, f"problem.{name}", ("t",))
    if pr.r is not None:
        try:
            LinearProblem(order, psi, pr.M, mesh, pr.r)
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], "problem.r") from exc
    elif not linear:
        raise ConfigurationError("required for nonlinear modes", "problem.r")
    return Assembled(order, psi, mesh, f, opt["exact_expr"], opt["lower_expr"], opt["upper_expr"])


# --- output -------------------------------------------------------------------


def _num(x) -> str:
    """Shortest round-trip decimal form; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return ""
    return repr(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _solution_rows(u: WeightedGridFunction):
    raw = u.raw
    for i, (t, v) in enumerate(zip(u.t, u.values)):
        y = None if (i == 0 and u.gamma < 1.0) else raw[i]
        yield (t, v, y)


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


class _Writer:
    def __init__(self, out: Path, fmt: str):
        self.out, self.fmt = out, fmt
        self.tables: dict[str, dict] = {}
        out.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, header, rows):
        rows = list(rows)
        if self.fmt == "csv":
            (self.out / f"{name}.csv").write_bytes(_csv_text(header, rows).encode("utf-8"))
        self.tables[name] = {"columns": list(header), "rows": [[v if v is None or isinstance(v, int) else float(v) for v in r] for r in rows]}

    def summary(self, data: dict):
        if self.fmt == "json":
            data = dict(data, tables=self.tables)
        text = json.dumps(_json_safe(data), indent=2, sort_keys=True, allow_nan=False) + "\n"
        (self.out / "summary.json").write_bytes(text.encode("utf-8"))


# --- run ------------------------------------------------------------------------


def run(cfg: RunConfig, out_dir: str | None = None) -> dict:
    """Execute the configured solver and write its artefacts; returns the summary dict."""
    validate(cfg)
    a = build_problem(cfg)
    s = cfg.solver
    out = Path(out_dir or cfg.output.path)
    writer = _Writer(out, cfg.output.format)
    summary: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "mode": s.mode,
        "config": cfg.to_dict(),
        "gamma": a.order.gamma,
        "mesh": {"N": a.mesh.N, "grading_exponent": a.mesh.grading, "T": a.mesh.T},
        "files": [],
    }
    if s.mode.startswith("linear"):
        _run_linear(cfg, a, writer, summary)
    else:
        _run_nonlinear(cfg, a, writer, summary)
    if cfg.output.format == "csv":
        summary["files"] = sorted(f"{k}.csv" for k in writer.tables) + ["summary.json"]
    else:
        summary["files"] = ["summary.json"]
    writer.summary(summary)
    return summary


def _run_linear(cfg, a, writer, summary):
    pr = cfg.problem
    p = LinearProblem(a.order, a.psi, pr.M, a.mesh, pr.r, a.f)
    if cfg.solver.mode == "linear-ivp":
        y = solve_linear_ivp(p, pr.y0)
        summary["y0"] = pr.y0
    else:
        y, lam = solve_linear_bvp(p)
        summary.update(
            lambda0=lam,
            root_residual=root_function(p, lam),
            decreasing_root_diagnostic=decreasing_root_diagnostic(p),
            boundary_residual=boundary_residual(y, p),
        )
    writer.table("solution", ("t", "v", "y"), _solution_rows(y))
    summary["weighted_norm"] = float(np.max(np.abs(y.values)))


def assemble_nonlinear(cfg: RunConfig, a: Assembled | None = None):
    """``(NonlinearProblem, w0, z0)`` described by a config (bounds are ``None`` when absent)."""
    a = build_problem(cfg) if a is None else a
    pr = cfg.problem
    if pr.r is None:
        raise ConfigurationError("required for nonlinear problems", "problem.r")
    p = NonlinearProblem(a.order, a.psi, pr.M, pr.r, a.mesh, a.f, a.exact, True, pr.delta)
    w0 = None if a.lower is None else p.grid(a.lower)
    z0 = None if a.upper is None else p.grid(a.upper)
    return p, w0, z0


def _run_nonlinear(cfg, a, writer, summary):
    s = cfg.solver
    p, w0, z0 = assemble_nonlinear(cfg, a)
    it = IterationConfig(s.tol, s.max_iter, s.tol_order, s.n_samples, s.seed, s.check_hypotheses)
    omega = compute_omega(p)
    summary["Omega"] = omega
    cl, cu = verify_nonlinear_lower(w0, p), verify_nonlinear_upper(z0, p)
    summary["certificates"] = {
        c.kind: {"holds": c.holds, "min_margin": c.min_margin, "defect_is_zero": c.defect_is_zero,
                 "boundary_functionals": list(c.boundary_values)}
        for c in (cl, cu)
    }
    mono = check_monotone_f(p, w0, z0, s.n_samples, s.seed)
    summary["samples"] = {"monotone_in_y": {"holds": mono.holds, "max_violation": mono.max_violation, "n": mono.n_samples}}
    if s.Ltilde is not None:
        cd = contraction_check(p, s.Ltilde, w0, z0)
        lip = check_lipschitz(p, s.Ltilde, w0, z0, s.n_samples, s.seed)
        summary["samples"]["lipschitz"] = {"holds": lip.holds, "max_violation": lip.max_violation, "n": lip.n_samples}
        summary["contraction"] = {"Omega": cd.Omega, "Ltilde": cd.Ltilde, "rho": cd.rho, "Ltilde_max": cd.Ltilde_max,
                                  "contraction_ok": cd.contraction_ok, "bracket_norm": cd.bracket_norm}
    emit_bound = cfg.output.emit_bound_curve
    if s.mode == "picard":
        y_init = w0 if s.init == "lower" else z0
        y, rep = picard_unique_solve(p, y_init, w0, z0, s.Ltilde, it)
        writer.table("solution", ("t", "v", "y"), _solution_rows(y))
        header = ["n", "sup_diff", "error"] + (["bound"] if emit_bound else [])
        rows = []
        for n in range(rep.n_steps + 1):
            row = [n, rep.sup_diffs[n], None if rep.measured_error is None else rep.measured_error[n]]
            if emit_bound:
                row.append(rep.bound_curve[n])
            rows.append(row)
        writer.table("iterations", header, rows)
        summary.update(converged=rep.converged, n_steps=rep.n_steps, slack=rep.slack, forcing_bound=rep.forcing_bound,
                       lambda0=_lambda0(y), final_sup_diff=rep.sup_diffs[-1],
                       final_error=None if rep.measured_error is None else rep.measured_error[-1])
    else:
        res = monotone_solve(p, w0, z0, it, s.Ltilde)
        writer.table("solution", ("t", "v", "y"), _solution_rows(res.w_star))
        writer.table("maximal", ("t", "v", "y"), _solution_rows(res.z_star))
        header = ["n", "sup_diff_lower", "sup_diff_upper", "gap", "error_lower", "error_upper"]
        if emit_bound:
            header.append("bound")
        rows = []
        for n in range(res.n_steps + 1):
            el = None if res.lower.measured_error is None else res.lower.measured_error[n]
            eu = None if res.upper.measured_error is None else res.upper.measured_error[n]
            row = [n, res.lower.sup_diffs[n], res.upper.sup_diffs[n], res.gaps[n], el, eu]
            if emit_bound:
                row.append(None if res.bound_curve is None else res.bound_curve[n])
            rows.append(row)
        writer.table("iterations", header, rows)
        summary.update(converged=res.converged, n_steps=res.n_steps, slack=res.slack, final_gap=res.gaps[-1],
                       lambda0_minimal=_lambda0(res.w_star), lambda0_maximal=_lambda0(res.z_star),
                       forcing_bound=max(res.lower.forcing_bound, res.upper.forcing_bound),
                       ordering_violations=0)


def _lambda0(y: WeightedGridFunction) -> float:
    """``I^{1-gamma} y(0) = Gamma(gamma) v(0)``, recomputable from the solution table."""
    return math.gamma(y.gamma) * float(y.values[0])


# --- entry point ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="psihilfer", description="Monotone iterative solver for psi-Hilfer boundary value problems.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="run a config file or preset")
    sp.add_argument("config", help="path to a JSON config, or a preset name")
    sp.add_argument("--mesh-n", type=int, dest="mesh_n", help="override mesh.N")
    sp.add_argument("--mode", choices=MODES, help="override solver.mode")
    sp.add_argument("--out", help="output directory (overrides output.path)")
    sp.add_argument("--seed", type=int, help="override solver.seed")
    pp = sub.add_parser("presets", help="list or show built-in problems")
    psub = pp.add_subparsers(dest="action", required=True)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "presets":
            return _presets(args)
        worker_count()  # validates PSI_HILFER_THREADS early
        cfg = load_config(args.config)
        if args.mesh_n is not None:
            cfg.mesh.N = args.mesh_n
        if args.mode is not None:
            cfg.solver.mode = args.mode
        if args.seed is not None:
            cfg.solver.seed = args.seed
        summary = run(cfg, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (HypothesisViolation, EvaluationError) as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return 3
    except PsiHilferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or cfg.output.path
    print(f"{summary['mode']}: wrote {', '.join(summary['files'])} to {out}")
    if "converged" in summary and not summary["converged"]:
        print("warning: iteration did not converge within max_iter", file=sys.stderr)
        return 4
    return 0


def _presets(args) -> int:
    if args.action == "list":
        for name, p in sorted(PRESETS.items()):
            print(f"{name}\t{p['description']}")
        return 0
    if args.name not in PRESETS:
        print(f"unknown preset {args.name!r}; available: {', '.join(sorted(PRESETS))}", file=sys.stderr)
        return 2
    print(json.dumps(PRESETS[args.name]["config"], indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
