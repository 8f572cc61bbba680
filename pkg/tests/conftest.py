"""Shared fixtures and the acceptance summary printer."""
from __future__ import annotations

import math

import numpy as np
import pytest

from psihilfer.cli import assemble_nonlinear, load_config
from psihilfer.linear import LinearProblem
from psihilfer.psi_core import OrderParams, PsiMap, graded_mesh

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}

SQRT_PI = math.sqrt(math.pi)
EXAMPLE6_OMEGA = 4 / SQRT_PI
EXAMPLE6_RHO = 24 / (25 * SQRT_PI)
EXAMPLE6_BRACKET = 7 / 3


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _ACCEPTANCE[n] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


PSI_MAPS = {
    "id": lambda T: PsiMap.identity(T),
    "t^2": lambda T: PsiMap(lambda t: np.asarray(t, float) ** 2, lambda t: 2 * np.asarray(t, float), T),
    "expm1": lambda T: PsiMap(np.expm1, np.exp, T),
}


def make_psi(name: str, T: float = 1.0) -> PsiMap:
    return PSI_MAPS[name](T)


def example6(N: int = 512):
    """The built-in preset as ``(problem, w0, z0)`` on an ``N`` mesh."""
    cfg = load_config("example6")
    cfg.mesh.N = N
    return assemble_nonlinear(cfg)


def linear_problem(alpha, beta, M, psi="id", N=256, r=None, T=1.0, grading=None):
    order = OrderParams(alpha, beta)
    return LinearProblem(order, make_psi(psi, T), M, graded_mesh(T, N, order.gamma, grading), r=r)


@pytest.fixture(scope="session")
def ex6_512():
    return example6(512)
