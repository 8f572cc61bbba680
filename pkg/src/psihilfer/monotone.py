"""Nonlinear boundary problems by monotone iteration.

``D^{alpha,beta;Psi} y - M y = f(t, y)`` with ``I^{1-gamma}y(0) = r I^{1-gamma}y(T)``.
The operator ``A`` freezes the right-hand side at ``phi`` and solves the linear
boundary problem, so ``A phi`` is one linear solve with the cached kernels.
Starting from a lower solution ``w0`` and an upper solution ``z0``, the
iterates ``w_n = A w_{n-1}`` increase, ``z_n = A z_{n-1}`` decrease and stay
ordered. Both sequences are checked against that at every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import specfun
from .errors import ConfigurationError, EvaluationError, HypothesisViolation
from .linear import (
    LinearProblem,
    XiParams,
    boundary_gap,
    defect_lower,
    defect_upper,
    linear_defect,
    solve_linear_bvp,
)
from .psi_core import (
    GradedMesh,
    OrderParams,
    PsiMap,
    WeightedGridFunction,
    partial_order_leq,
    weighted_norm,
)

RHS = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class NonlinearProblem:
    """Right-hand side ``f(t, y)`` (vectorised over arrays) plus the linear data.

    ``exact`` optionally registers a reference solution ``t -> y*(t)`` used for
    measured-error columns and the quadrature slack.
    """

    order: OrderParams
    psi: PsiMap
    M: float
    r: float
    mesh: GradedMesh
    f: RHS
    exact: Callable | None = None
    monotone_in_y: bool = True
    delta: float = 1.0

    def __post_init__(self):
        self.linear  # validates M, r and the horizon

    @cached_property
    def linear(self) -> LinearProblem:
        return LinearProblem(self.order, self.psi, self.M, self.mesh, self.r)

    @property
    def xi_params(self) -> XiParams:
        return XiParams(self.delta)

    @property
    def gamma(self) -> float:
        return self.order.gamma

    @property
    def width(self) -> float:
        return self.linear.width

    def grid(self, fn: Callable) -> WeightedGridFunction:
        """Sample a raw function of ``t`` on the mesh."""
        return WeightedGridFunction.from_raw(fn, self.mesh, self.order, self.psi)

    def exact_grid(self) -> WeightedGridFunction | None:
        return None if self.exact is None else self.grid(self.exact)


@dataclass(frozen=True)
class IterationConfig:
    """Stopping and checking parameters shared by both iterations."""

    tol: float = 1e-8
    max_iter: int = 200
    tol_order: float = 1e-8
    n_samples: int = 10_000
    seed: int = 42
    check_hypotheses: bool = True
    certificate_tol: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}", "solver.tol")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}", "solver.max_iter")
        if self.n_samples < 0:
            raise ConfigurationError(f"n_samples must be >= 0, got {self.n_samples}", "solver.n_samples")


@dataclass(frozen=True)
class ContractionData:
    Omega: float
    Ltilde: float
    rho: float
    bracket_norm: float | None
    contraction_ok: bool
    Ltilde_max: float

    def bound(self, n: int) -> float | None:
        """``rho^n ||z0 - w0||``."""
        if self.bracket_norm is None:
            return None
        return self.rho**n * self.bracket_norm


@dataclass
class IterationReport:
    """Per-step record of one iteration; index 0 is the starting function."""

    iterates: list = field(default_factory=list)
    sup_diffs: list = field(default_factory=list)
    ordering_ok: list = field(default_factory=list)
    ordering_violation: list = field(default_factory=list)
    bound_curve: list | None = None
    measured_error: list | None = None
    forcing_bound: float = 0.0
    converged: bool = False
    n_steps: int = 0
    slack: float | None = None


@dataclass
class MonotoneResult:
    w_star: WeightedGridFunction
    z_star: WeightedGridFunction
    lower: IterationReport
    upper: IterationReport
    gaps: list
    ordering_ok: list
    bound_curve: list | None
    converged: bool
    n_steps: int
    slack: float | None = None
    contraction: ContractionData | None = None


# --- constants ----------------------------------------------------------------


def compute_omega(p: NonlinearProblem | LinearProblem) -> float:
    """``B(alpha-gamma+1, gamma) r E_{a,g} E_{a,a+1-g} / (1 - r E_{a,1}) + B(alpha, gamma) E_{a,a}``, all at ``M w^alpha``."""
    lin = p.linear if isinstance(p, NonlinearProblem) else p
    r = lin.require_r()
    a, g = lin.order.alpha, lin.gamma
    z = lin.M * lin.width**a
    e_g = specfun.ml(a, g, z)
    e_shift = specfun.ml(a, a + 1.0 - g, z)
    e_1 = specfun.ml(a, 1.0, z)
    e_a = specfun.ml(a, a, z)
    return specfun.beta(a - g + 1.0, g) * r * e_g * e_shift / (1.0 - r * e_1) + specfun.beta(a, g) * e_a


def contraction_check(
    p: NonlinearProblem,
    Ltilde: float,
    w0: WeightedGridFunction | None = None,
    z0: WeightedGridFunction | None = None,
) -> ContractionData:
    """``rho = Omega w^alpha Ltilde``; contraction iff ``Ltilde < 1 / (Omega w^alpha)`` (right end excluded)."""
    if not (Ltilde >= 0 and math.isfinite(Ltilde)):
        raise ConfigurationError(f"Ltilde must be a finite non-negative number, got {Ltilde}", "solver.Ltilde")
    omega = compute_omega(p)
    wa = p.width**p.order.alpha
    l_max = 1.0 / (omega * wa)
    bracket = None if w0 is None or z0 is None else weighted_norm(z0 - w0)
    return ContractionData(omega, float(Ltilde), omega * wa * Ltilde, bracket, bool(Ltilde < l_max), l_max)


# --- the operator A -----------------------------------------------------------


def _locate_failure(p: NonlinearProblem, t: np.ndarray, y: np.ndarray, exc: Exception | None):
    for i, (ti, yi) in enumerate(zip(t, y)):
        try:
            val = float(np.asarray(p.f(np.asarray([ti]), np.asarray([yi]))).ravel()[0])
        except Exception as inner:  # noqa: BLE001 - any failure of user code is reported
            raise EvaluationError(f"f failed at node {i} (t={ti:.17g}, y={yi:.17g}): {inner}") from inner
        if not math.isfinite(val):
            raise EvaluationError(f"f is not finite at node {i} (t={ti:.17g}, y={yi:.17g}): {val}")
    raise EvaluationError(f"f failed on the mesh: {exc}") from exc


def eval_f(p: NonlinearProblem, t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised ``f(t, y)`` with failures turned into :class:`EvaluationError` naming the node."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    try:
        out = np.asarray(p.f(t, y), dtype=float)
        out = np.broadcast_to(out, t.shape).astype(float) if out.shape != t.shape else out
    except Exception as exc:  # noqa: BLE001
        _locate_failure(p, t, y, exc)
    if not np.all(np.isfinite(out)):
        _locate_failure(p, t, y, None)
    return out


def frozen_forcing(phi: WeightedGridFunction, p: NonlinearProblem) -> WeightedGridFunction:
    """``f(., phi(.))`` as a weighted grid function.

    For ``gamma < 1`` the raw ``phi`` is unbounded at ``t = 0``; the weighted
    forcing there is copied from node 1, which keeps ``A`` order preserving.
    """
    t = p.mesh.nodes
    if p.gamma == 1.0:
        return phi.like(eval_f(p, t, phi.raw))
    U = phi.U
    v = np.empty_like(phi.values)
    v[1:] = U[1:] ** (1.0 - p.gamma) * eval_f(p, t[1:], phi.raw[1:])
    v[0] = v[1]
    return phi.like(v)


def apply_operator_A(phi: WeightedGridFunction, p: NonlinearProblem) -> WeightedGridFunction:
    """``A phi``: the linear boundary solution with forcing frozen at ``phi``."""
    _same_mesh(phi, p)
    return solve_linear_bvp(p.linear, frozen_forcing(phi, p))[0]


def fixed_point_residual(p: NonlinearProblem) -> float:
    """``||A y* - y*||`` for the registered exact solution."""
    ys = p.exact_grid()
    if ys is None:
        raise ConfigurationError("no exact solution registered", "problem.exact_expr")
    return weighted_norm(apply_operator_A(ys, p) - ys)


def quadrature_slack(p: NonlinearProblem) -> float | None:
    """Three times the fixed-point residual of the exact solution, or ``None`` without one."""
    return None if p.exact is None else 3.0 * fixed_point_residual(p)


def _same_mesh(u: WeightedGridFunction, p: NonlinearProblem):
    if u.mesh != p.mesh or u.gamma != p.gamma:
        raise ConfigurationError("grid function does not live on the problem mesh")


# --- sampled hypothesis checks ------------------------------------------------


def _sample_pairs(p, w0, z0, n, seed):
    rng = np.random.default_rng(seed)
    first = 0 if p.gamma == 1.0 else 1
    idx = rng.integers(first, p.mesh.N + 1, size=n)
    lo, hi = w0.raw[idx], z0.raw[idx]
    a = lo + (hi - lo) * rng.random(n)
    b = lo + (hi - lo) * rng.random(n)
    return p.mesh.nodes[idx], np.minimum(a, b), np.maximum(a, b)


@dataclass(frozen=True)
class SampleCheck:
    holds: bool
    max_violation: float
    worst_t: float
    worst_y: tuple
    n_samples: int


def _sample_check(p, w0, z0, n, seed, slope, what):
    if n == 0:
        return SampleCheck(True, 0.0, math.nan, (math.nan, math.nan), 0)
    t, y1, y2 = _sample_pairs(p, w0, z0, n, seed)
    f1, f2 = eval_f(p, t, y1), eval_f(p, t, y2)
    excess = (f1 - f2) + slope * (y2 - y1) if what == "monotone" else (f2 - f1) - slope * (y2 - y1)
    tol = 1e-10 * (1.0 + np.abs(f1) + np.abs(f2))
    k = int(np.argmax(excess - tol))
    viol = float(max(excess[k], 0.0))
    return SampleCheck(bool(np.all(excess <= tol)), viol, float(t[k]), (float(y1[k]), float(y2[k])), n)


def check_monotone_f(p: NonlinearProblem, w0, z0, n_samples: int = 10_000, seed: int = 42) -> SampleCheck:
    """Sampled check that ``f(t, y1) <= f(t, y2)`` whenever ``w0 <= y1 <= y2 <= z0``."""
    return _sample_check(p, w0, z0, n_samples, seed, 0.0, "monotone")


def check_lipschitz(p: NonlinearProblem, Ltilde: float, w0, z0, n_samples: int = 10_000, seed: int = 42) -> SampleCheck:
    """Sampled check of ``f(t, x2) - f(t, x1) <= Ltilde (x2 - x1)`` for ``x1 <= x2`` in the bracket."""
    return _sample_check(p, w0, z0, n_samples, seed, Ltilde, "lipschitz")


# --- lower/upper certificates -------------------------------------------------


@dataclass(frozen=True)
class SolutionCertificate:
    """Nodewise margins (weighted, nodes ``1..N``) of a lower or upper solution inequality.

    A margin is non-negative where the inequality holds.
    """

    kind: str
    holds: bool
    margins: np.ndarray
    min_margin: float
    defect_is_zero: bool
    boundary_values: tuple


def _certificate(u, p, kind, tol):
    _same_mesh(u, p)
    lin = p.linear.with_forcing(None)
    x = p.xi_params
    lhs = linear_defect(u, lin)
    g = frozen_forcing(u, p).values
    if kind == "lower":
        d = defect_lower(u, lin, x).values
        margins = (g - d - lhs)[1:]
    else:
        d = defect_upper(u, lin, x).values
        margins = (lhs - g - d)[1:]
    m = float(np.min(margins))
    return SolutionCertificate(kind, m >= -tol, margins, m, bool(np.all(d == 0.0)), tuple(boundary_gap(u, lin)))


def verify_nonlinear_lower(w: WeightedGridFunction, p: NonlinearProblem, tol: float = 1e-6) -> SolutionCertificate:
    """Margins of ``f(t, w) - a_w - (D w - M w)``; a lower solution has all margins ``>= -tol``."""
    return _certificate(w, p, "lower", tol)


def verify_nonlinear_upper(z: WeightedGridFunction, p: NonlinearProblem, tol: float = 1e-6) -> SolutionCertificate:
    """Margins of ``D z - M z - f(t, z) - b_z``; an upper solution has all margins ``>= -tol``."""
    return _certificate(z, p, "upper", tol)


# --- iterations ---------------------------------------------------------------


def _require_order(u, w, tol, what, step=None):
    chk = partial_order_leq(u, w, tol)
    if not chk.holds:
        raise HypothesisViolation(
            f"ordering {what} violated by {chk.violation:.3e}" + (f" at step {step}" if step is not None else ""),
            {"relation": what, "violation": chk.violation, "step": step},
        )
    return chk


def _check_f_hypotheses(p, w0, z0, cfg, Ltilde=None):
    if not cfg.check_hypotheses:
        return
    if Ltilde is None:
        chk = check_monotone_f(p, w0, z0, cfg.n_samples, cfg.seed)
        name = "f non-decreasing in y"
    else:
        chk = check_lipschitz(p, Ltilde, w0, z0, cfg.n_samples, cfg.seed)
        name = f"one-sided Lipschitz bound with Ltilde={Ltilde}"
    if not chk.holds:
        raise HypothesisViolation(
            f"{name} fails at t={chk.worst_t:.6g}, y=({chk.worst_y[0]:.6g}, {chk.worst_y[1]:.6g}) by {chk.max_violation:.3e}",
            {"check": name, "violation": chk.max_violation, "t": chk.worst_t, "y": chk.worst_y},
        )


def monotone_solve(
    p: NonlinearProblem,
    w0: WeightedGridFunction,
    z0: WeightedGridFunction,
    config: IterationConfig = IterationConfig(),
    Ltilde: float | None = None,
) -> MonotoneResult:
    """Iterate ``w_n = A w_{n-1}``, ``z_n = A z_{n-1}`` until ``||z_n - w_n|| <= tol``.

    Every step certifies ``w_{n-1} <= w_n <= z_n <= z_{n-1}``; a violation
    beyond ``tol_order`` aborts with :class:`HypothesisViolation`. With
    ``Ltilde`` the theoretical curve ``rho^n ||z0 - w0||`` is recorded as well.
    Running out of iterations is not an error; ``converged`` is then false.
    """
    _same_mesh(w0, p)
    _same_mesh(z0, p)
    _require_order(w0, z0, config.tol_order, "w0 <= z0")
    if config.check_hypotheses:
        for cert in (verify_nonlinear_lower(w0, p, config.certificate_tol), verify_nonlinear_upper(z0, p, config.certificate_tol)):
            if not cert.holds:
                raise HypothesisViolation(
                    f"{'w0' if cert.kind == 'lower' else 'z0'} is not a {cert.kind} solution: min margin {cert.min_margin:.3e}",
                    {"certificate": cert.kind, "min_margin": cert.min_margin},
                )
        _check_f_hypotheses(p, w0, z0, config)
    contraction = None if Ltilde is None else contraction_check(p, Ltilde, w0, z0)
    lower, upper = IterationReport([w0], [0.0]), IterationReport([z0], [0.0])
    gaps = [weighted_norm(z0 - w0)]
    ordering_ok = [True]
    w, z = w0, z0
    converged = gaps[0] <= config.tol
    n = 0
    while not converged and n < config.max_iter:
        n += 1
        w_new, z_new = apply_operator_A(w, p), apply_operator_A(z, p)
        checks = [
            _require_order(w, w_new, config.tol_order, "w_{n-1} <= w_n", n),
            _require_order(w_new, z_new, config.tol_order, "w_n <= z_n", n),
            _require_order(z_new, z, config.tol_order, "z_n <= z_{n-1}", n),
        ]
        ordering_ok.append(True)
        worst = max(c.violation for c in checks)
        for rep, old, new in ((lower, w, w_new), (upper, z, z_new)):
            rep.iterates.append(new)
            rep.sup_diffs.append(weighted_norm(new - old))
            rep.ordering_ok.append(True)
            rep.ordering_violation.append(worst)
        w, z = w_new, z_new
        gaps.append(weighted_norm(z - w))
        converged = gaps[-1] <= config.tol
    bound = None if contraction is None else [contraction.bound(k) for k in range(n + 1)]
    slack = quadrature_slack(p)
    for rep in (lower, upper):
        rep.converged, rep.n_steps, rep.bound_curve, rep.slack = converged, n, bound, slack
        rep.forcing_bound = max(weighted_norm(frozen_forcing(x, p)) for x in rep.iterates)
        if p.exact is not None:
            ys = p.exact_grid()
            rep.measured_error = [weighted_norm(x - ys) for x in rep.iterates]
    return MonotoneResult(w, z, lower, upper, gaps, ordering_ok, bound, converged, n, slack, contraction)


def picard_unique_solve(
    p: NonlinearProblem,
    y0_init: WeightedGridFunction,
    w0: WeightedGridFunction,
    z0: WeightedGridFunction,
    Ltilde: float,
    config: IterationConfig = IterationConfig(),
    min_iter: int = 0,
) -> tuple[WeightedGridFunction, IterationReport]:
    """Picard iteration ``y_n = A y_{n-1}`` inside ``[w0, z0]`` under the contraction condition.

    Stops when ``||y_n - y_{n-1}|| <= tol`` or ``rho^n ||z0 - w0|| <= tol``
    (but not before ``min_iter`` steps). Leaving the bracket beyond
    ``tol_order`` aborts with :class:`HypothesisViolation`.
    """
    for u in (y0_init, w0, z0):
        _same_mesh(u, p)
    cd = contraction_check(p, Ltilde, w0, z0)
    if not cd.contraction_ok:
        raise ConfigurationError(
            f"no contraction: Ltilde={Ltilde} must be below 1/(Omega w^alpha) = {cd.Ltilde_max:.12g} (rho={cd.rho:.6g})",
            "solver.Ltilde",
        )
    _require_order(w0, z0, config.tol_order, "w0 <= z0")
    _require_order(w0, y0_init, config.tol_order, "w0 <= y0")
    _require_order(y0_init, z0, config.tol_order, "y0 <= z0")
    _check_f_hypotheses(p, w0, z0, config, Ltilde)
    ys = p.exact_grid()
    rep = IterationReport([y0_init], [0.0], [True], [0.0], [cd.bound(0)], None if ys is None else [weighted_norm(y0_init - ys)])
    y = y0_init
    n = 0
    while n < config.max_iter:
        n += 1
        y_new = apply_operator_A(y, p)
        lo = _require_order(w0, y_new, config.tol_order, "w0 <= y_n", n)
        hi = _require_order(y_new, z0, config.tol_order, "y_n <= z0", n)
        rep.iterates.append(y_new)
        rep.sup_diffs.append(weighted_norm(y_new - y))
        rep.ordering_ok.append(True)
        rep.ordering_violation.append(max(lo.violation, hi.violation))
        rep.bound_curve.append(cd.bound(n))
        if ys is not None:
            rep.measured_error.append(weighted_norm(y_new - ys))
        y = y_new
        if n >= min_iter and (rep.sup_diffs[-1] <= config.tol or rep.bound_curve[-1] <= config.tol):
            rep.converged = True
            break
    rep.n_steps = n
    rep.slack = quadrature_slack(p)
    rep.forcing_bound = max(weighted_norm(frozen_forcing(x, p)) for x in rep.iterates)
    return y, rep
