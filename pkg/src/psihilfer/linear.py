"""Linear psi-Hilfer problems: Cauchy problem, two-point boundary problem, defects.

The Cauchy problem ``D y - M y = g``, ``I^{1-gamma} y(0) = y0`` has the solution

    y = y0 U^(gamma-1) E_{alpha,gamma}(M U^alpha)
        + int_0^t Psi'(s) (U(t)-U(s))^(alpha-1) E_{alpha,alpha}(M (U(t)-U(s))^alpha) g(s) ds.

Expanding the Mittag-Leffler kernel termwise turns the convolution into
``sum_k M^k I^{alpha(k+1)} g``, so every kernel is a finite sum of the
product-quadrature matrices from ``psi_core``. These depend only on the mesh,
``Psi``, ``alpha``, ``gamma`` and ``M`` and are cached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Union

import numpy as np

from . import specfun
from .errors import ConfigurationError
from .parallel import parallel_map
from .psi_core import (
    GradedMesh,
    OrderParams,
    PsiMap,
    WeightedGridFunction,
    boundary_functional,
    boundary_functional_at_zero,
    hilfer_derivative,
    rl_weights,
)

COMPARISON_TOL = 1e-6
# Hypothesis tolerance when D y - M y has to come from the numerical derivative,
# whose error (about 1e-4 at N = 512 away from t = 0) would swamp COMPARISON_TOL.
DERIVATIVE_TOL = 1e-3
SERIES_REL_TOL = 1e-16
SERIES_MAX_TERMS = 10_000

Forcing = Union[Callable, WeightedGridFunction, None]


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """``D^{alpha,beta;Psi} y - M y = g`` on the mesh, with ``I^{1-gamma}y(0) = r I^{1-gamma}y(T)``.

    ``r`` may be ``None`` for a pure Cauchy problem. When given it must satisfy
    ``0 < r < 1 / E_{alpha,1}(M w^alpha)`` with ``w = Psi(T) - Psi(0)``.
    ``g`` is a raw callable ``t -> g(t)``, a grid function, or ``None`` (zero).
    ``M = 0`` is admitted.
    """

    order: OrderParams
    psi: PsiMap
    M: float
    mesh: GradedMesh
    r: float | None = None
    g: Forcing = None

    def __post_init__(self):
        if not (self.M >= 0 and math.isfinite(self.M)):
            raise ConfigurationError(f"M must be a finite non-negative number, got {self.M}", "M")
        if abs(self.mesh.T - self.psi.T) > 1e-12 * self.psi.T:
            raise ConfigurationError("mesh horizon and Psi horizon differ", "T")
        if self.r is not None:
            bound = r_upper_bound(self.order, self.psi, self.M)
            if not 0.0 < self.r < bound:
                raise ConfigurationError(
                    f"r must lie in (0, 1/E_{{alpha,1}}(M w^alpha)) = (0, {bound:.12g}), got {self.r}", "r"
                )

    @property
    def T(self) -> float:
        return self.psi.T

    @property
    def gamma(self) -> float:
        return self.order.gamma

    @property
    def width(self) -> float:
        """``w = Psi(T) - Psi(0)``."""
        return float(self.psi.offset(self.T))

    @property
    def U(self) -> np.ndarray:
        return self.psi.offset(self.mesh.nodes)

    def forcing(self, g: Forcing = None) -> WeightedGridFunction:
        """Forcing on the mesh as a weighted grid function (``g`` overrides the stored one)."""
        g = self.g if g is None else g
        if g is None:
            return WeightedGridFunction.zeros(self.mesh, self.order, self.psi)
        if isinstance(g, WeightedGridFunction):
            if g.mesh != self.mesh or g.gamma != self.gamma:
                raise ConfigurationError("forcing lives on a different mesh or weight", "g")
            return g
        return WeightedGridFunction.from_raw(g, self.mesh, self.order, self.psi)

    def with_forcing(self, g: Forcing) -> "LinearProblem":
        return LinearProblem(self.order, self.psi, self.M, self.mesh, self.r, g)

    def require_r(self) -> float:
        if self.r is None:
            raise ConfigurationError("this operation needs the boundary weight r", "r")
        return self.r


def r_upper_bound(order: OrderParams, psi: PsiMap, M: float) -> float:
    w = float(psi.offset(psi.T))
    return 1.0 / specfun.ml(order.alpha, 1.0, M * w**order.alpha)


# --- ML-kernel quadrature ---------------------------------------------------


def _series_length(alpha: float, mu0: float, z: float) -> int:
    """Number of terms of ``sum_k z^k / Gamma(alpha k + mu0 + 1)`` worth keeping."""
    if z == 0.0:
        return 1
    total = 0.0
    prev = math.inf
    for k in range(SERIES_MAX_TERMS):
        term = math.exp(k * math.log(z) - math.lgamma(alpha * k + mu0 + 1.0))
        total += term
        if term < SERIES_REL_TOL * total and term <= prev:
            return k + 1
        prev = term
    raise ConfigurationError(f"kernel series for M w^alpha = {z:.6g} needs more than {SERIES_MAX_TERMS} terms", "M")


@lru_cache(maxsize=32)
def _ml_kernel(mesh: GradedMesh, psi: PsiMap, alpha: float, gamma: float, M: float, mu0: float, row: int | None):
    U = psi.offset(mesh.nodes)
    n_terms = _series_length(alpha, mu0, M * float(U[-1]) ** alpha)
    kappa = gamma - 1.0

    def term(k):
        return M**k * rl_weights(U, mu0 + alpha * k, kappa, row=row)

    parts = parallel_map(term, range(n_terms))
    K = parts[0].copy()
    for P in parts[1:]:
        K += P
    K.setflags(write=False)
    return K


def ivp_kernel(p: LinearProblem) -> np.ndarray:
    """Matrix ``K`` with ``(K v_g)_j ~= int_0^{t_j} Psi' (U_j - U)^(alpha-1) E_{alpha,alpha}(M (U_j-U)^alpha) g``."""
    return _ml_kernel(p.mesh, p.psi, p.order.alpha, p.gamma, float(p.M), p.order.alpha, None)


def boundary_row(p: LinearProblem) -> np.ndarray:
    """Row ``b`` with ``b . v_g ~= int_0^T Psi' (w - U)^(alpha-gamma) E_{alpha,alpha+1-gamma}(M (w-U)^alpha) g``."""
    a = p.order.alpha
    return _ml_kernel(p.mesh, p.psi, a, p.gamma, float(p.M), a + 1.0 - p.gamma, p.mesh.N)


def clear_kernel_cache():
    _ml_kernel.cache_clear()


# --- Cauchy problem -----------------------------------------------------------


def homogeneous_solution(p: LinearProblem) -> np.ndarray:
    """Weighted values of ``U^(gamma-1) E_{alpha,gamma}(M U^alpha)``."""
    return specfun.ml(p.order.alpha, p.gamma, p.M * p.U**p.order.alpha)


def solve_linear_ivp(p: LinearProblem, y0: float, g: Forcing = None) -> WeightedGridFunction:
    """Solution of the Cauchy problem with weighted initial datum ``y0 = I^{1-gamma}y(0)``."""
    vg = p.forcing(g)
    U = p.U
    conv = ivp_kernel(p) @ vg.values
    v = y0 * homogeneous_solution(p) + U ** (1.0 - p.gamma) * conv
    return WeightedGridFunction(p.mesh, v, p.order, p.psi)


# --- boundary problem ---------------------------------------------------------


def _ml_at_width(p: LinearProblem, n2: float) -> float:
    return specfun.ml(p.order.alpha, n2, p.M * p.width**p.order.alpha)


def boundary_integral(p: LinearProblem, g: Forcing = None) -> float:
    """``I^{1-gamma}`` of the convolution part at ``T``: the integral in the closed form of lambda0."""
    return float(boundary_row(p) @ p.forcing(g).values)


def lambda0(p: LinearProblem, g: Forcing = None) -> float:
    r = p.require_r()
    return r / (1.0 - r * _ml_at_width(p, 1.0)) * boundary_integral(p, g)


def solve_linear_bvp(p: LinearProblem, g: Forcing = None) -> tuple[WeightedGridFunction, float]:
    """Unique solution of the boundary problem and its weighted initial value ``lambda0``.

    ``lambda0`` comes from the closed form; the solution is then the Cauchy
    problem started at ``lambda0``.
    """
    lam = lambda0(p, g)
    return solve_linear_ivp(p, lam, g), lam


def terminal_functional(p: LinearProblem, lam: float, g: Forcing = None) -> float:
    """``I^{1-gamma} y(T; lambda)`` for the Cauchy solution started at ``lambda`` (kernel formula)."""
    return lam * _ml_at_width(p, 1.0) + boundary_integral(p, g)


def root_function(p: LinearProblem, lam: float, g: Forcing = None) -> float:
    """``g(lambda) = r I^{1-gamma} y(T; lambda) - lambda``; affine and decreasing in ``lambda``."""
    return p.require_r() * terminal_functional(p, lam, g) - lam


def decreasing_root_diagnostic(p: LinearProblem) -> float:
    """Slope ``r E_{alpha,1}(M w^alpha) - 1`` of the root function; negative under the r-condition."""
    return p.require_r() * _ml_at_width(p, 1.0) - 1.0


def boundary_residual(y: WeightedGridFunction, p: LinearProblem) -> float:
    """``|I^{1-gamma}y(0) - r I^{1-gamma}y(T)|`` with both functionals taken from the grid data."""
    return abs(boundary_functional_at_zero(y) - p.require_r() * boundary_functional(y))


# --- xi and the defects a_u, b_v ----------------------------------------------


@dataclass(frozen=True)
class XiParams:
    """Exponent ``delta > 0`` of the auxiliary power function ``xi``."""

    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}", "delta")

    def normalization(self, gamma: float) -> float:
        return math.gamma(2.0 + self.delta - gamma) / math.gamma(self.delta + 1.0)


def xi(t, x: XiParams, p: LinearProblem):
    """Raw ``xi(t) = Gamma(2+delta-gamma)/Gamma(delta+1) U^delta / w^(1-gamma+delta)``."""
    U = p.psi.offset(t)
    out = x.normalization(p.gamma) * U**x.delta / p.width ** (1.0 - p.gamma + x.delta)
    return float(out) if np.ndim(out) == 0 else out


def xi_grid(x: XiParams, p: LinearProblem) -> WeightedGridFunction:
    U = p.U
    v = U ** (1.0 - p.gamma) * xi(p.mesh.nodes, x, p)
    return WeightedGridFunction(p.mesh, v, p.order, p.psi)


def _xi_operator_weighted(x: XiParams, p: LinearProblem) -> np.ndarray:
    """Weighted values of ``D xi - M xi``, ``D xi`` from the power rule."""
    a, g, d = p.order.alpha, p.gamma, x.delta
    expo = 1.0 - g + d - a
    if expo < 0:
        raise ConfigurationError(
            f"delta={d} is too small for alpha={a}, gamma={g}: D xi leaves the weighted space "
            f"(need delta >= alpha + gamma - 1)",
            "delta",
        )
    U = p.U
    scale = math.gamma(2.0 + d - g) / p.width ** (1.0 - g + d)
    dxi = scale / math.gamma(d + 1.0 - a) * U**expo
    mxi = p.M * scale / math.gamma(d + 1.0) * U ** (1.0 - g + d)
    return dxi - mxi


def hilfer_xi(t, x: XiParams, p: LinearProblem):
    """Raw ``D^{alpha,beta;Psi} xi(t)``, closed form."""
    a, g, d = p.order.alpha, p.gamma, x.delta
    U = p.psi.offset(t)
    out = math.gamma(2.0 + d - g) / math.gamma(d + 1.0 - a) * U ** (d - a) / p.width ** (1.0 - g + d)
    return float(out) if np.ndim(out) == 0 else out


class BoundaryGap(NamedTuple):
    at_zero: float
    at_T: float


def boundary_gap(u: WeightedGridFunction, p: LinearProblem) -> BoundaryGap:
    """``(I^{1-gamma}u(0), I^{1-gamma}u(T))``, both by quadrature on the grid data."""
    return BoundaryGap(boundary_functional_at_zero(u), boundary_functional(u))


def defect_lower(u: WeightedGridFunction, p: LinearProblem, x: XiParams = XiParams()) -> WeightedGridFunction:
    """The function ``a_u`` (weighted values)."""
    r = p.require_r()
    b = boundary_gap(u, p)
    if r * b.at_T >= b.at_zero:
        return WeightedGridFunction.zeros(p.mesh, p.order, p.psi)
    c = (b.at_zero - r * b.at_T) / r
    return WeightedGridFunction(p.mesh, c * _xi_operator_weighted(x, p), p.order, p.psi)


def defect_upper(v: WeightedGridFunction, p: LinearProblem, x: XiParams = XiParams()) -> WeightedGridFunction:
    """The function ``b_v`` (weighted values); mirror image of :func:`defect_lower`."""
    r = p.require_r()
    b = boundary_gap(v, p)
    if r * b.at_T <= b.at_zero:
        return WeightedGridFunction.zeros(p.mesh, p.order, p.psi)
    c = (r * b.at_T - b.at_zero) / r
    return WeightedGridFunction(p.mesh, c * _xi_operator_weighted(x, p), p.order, p.psi)


# --- comparison certificates --------------------------------------------------


@dataclass(frozen=True)
class ComparisonCertificate:
    """Outcome of a sign-propagation check.

    ``max_defect`` is the largest weighted value of ``D y - M y - bound`` on
    ``(0, T]``, ``initial_value`` is ``I^{1-gamma}y(0)`` and
    ``max_positive_value`` the largest weighted value of ``y``.
    """

    hypotheses_hold: bool
    conclusion_holds: bool
    max_positive_value: float
    max_defect: float
    initial_value: float

    @property
    def consistent(self) -> bool:
        """False only for a counterexample: hypotheses hold but the conclusion fails."""
        return self.conclusion_holds or not self.hypotheses_hold


def linear_defect(y: WeightedGridFunction, p: LinearProblem) -> np.ndarray:
    """Weighted values of ``D y - M y`` from the numerical derivative (``nan`` at ``t = 0``)."""
    d = hilfer_derivative(y, p.order)
    out = p.U ** (1.0 - p.gamma) * d - p.M * y.values
    out[0] = np.nan
    return out


def _certify(y, p, bound_weighted, operator_weighted, tol, hyp_tol) -> ComparisonCertificate:
    if not y.same_grid(WeightedGridFunction.zeros(p.mesh, p.order, p.psi)):
        raise ConfigurationError("grid function does not live on the problem mesh")
    if operator_weighted is None:
        # the first interior node carries the O(1e-2) derivative error; skip it
        first = 2
        operator_weighted = linear_defect(y, p)
        hyp_tol = DERIVATIVE_TOL if hyp_tol is None else hyp_tol
    else:
        first = 1
        operator_weighted = p.forcing(operator_weighted).values
        hyp_tol = COMPARISON_TOL if hyp_tol is None else hyp_tol
    excess = np.asarray(operator_weighted)[first:] - bound_weighted[first:]
    max_defect = float(np.max(excess))
    y0 = boundary_functional_at_zero(y)
    hyp = max_defect <= hyp_tol and y0 <= hyp_tol
    top = float(np.max(y.values))
    return ComparisonCertificate(hyp, top <= tol, max(top, 0.0), max_defect, y0)


def check_comparison_thm1(
    y: WeightedGridFunction,
    p: LinearProblem,
    operator_value: Forcing = None,
    tol: float = COMPARISON_TOL,
    hyp_tol: float | None = None,
) -> ComparisonCertificate:
    """Sign propagation: ``D y - M y <= 0`` and ``I^{1-gamma}y(0) <= 0`` should force ``y <= 0``.

    ``operator_value`` supplies ``D y - M y`` when it is known (for instance the
    forcing that produced ``y``) and is then checked to ``1e-6``. Otherwise it
    is computed numerically on nodes ``2..N`` and checked to ``1e-3``;
    ``hyp_tol`` overrides either default.
    """
    zero = np.zeros(p.mesh.N + 1)
    return _certify(y, p, zero, operator_value, tol, hyp_tol)


def check_comparison_thm2(
    y: WeightedGridFunction,
    u: WeightedGridFunction,
    p: LinearProblem,
    x: XiParams = XiParams(),
    operator_value: Forcing = None,
    tol: float = COMPARISON_TOL,
    hyp_tol: float | None = None,
) -> ComparisonCertificate:
    """As :func:`check_comparison_thm1` with the bound ``D y - M y <= -a_u``."""
    return _certify(y, p, -defect_lower(u, p, x).values, operator_value, tol, hyp_tol)


def check_comparison_thm3(
    y: WeightedGridFunction,
    v: WeightedGridFunction,
    p: LinearProblem,
    x: XiParams = XiParams(),
    operator_value: Forcing = None,
    tol: float = COMPARISON_TOL,
    hyp_tol: float | None = None,
) -> ComparisonCertificate:
    """As :func:`check_comparison_thm1` with the bound ``D y - M y <= -b_v``."""
    return _certify(y, p, -defect_upper(v, p, x).values, operator_value, tol, hyp_tol)

