"""The psi-calculus on graded meshes.

Every psi-weighted integral is rewritten with the substitution ``u = Psi(s) - Psi(0)``,
which turns ``I^{mu;Psi}`` into an ordinary Riemann-Liouville integral in ``u``:

    I^{mu;Psi} h(t) = 1/Gamma(mu) * int_0^{U(t)} (U(t) - u)^(mu-1) h(u) du.

Grid data are stored in weighted form ``v = U^(1-gamma) * y`` so the endpoint
singularity ``U^(gamma-1)`` never has to be sampled. Quadrature interpolates
``v`` piecewise linearly in ``u`` and integrates it exactly against
``(U_j - u)^(mu-1) * u^(gamma-1)`` (product trapezoidal rule).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Union

import numpy as np
import scipy.special as sc

from .errors import ConfigurationError, DomainError

TOL_ORDER = 1e-8
PSI_SAMPLES = 1000


@dataclass(frozen=True)
class OrderParams:
    """Order ``alpha`` in (0,1) and type ``beta`` in [0,1] of the Hilfer derivative."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}", "alpha")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}", "beta")

    @property
    def gamma(self) -> float:
        return self.alpha + self.beta * (1.0 - self.alpha)


@dataclass(frozen=True, eq=False)
class PsiMap:
    """Increasing weight map ``Psi`` on ``[0, T]`` together with its derivative.

    Both callables must accept numpy arrays. ``Psi'`` is sampled on 1000 points
    of ``(0, T]`` at construction and any non-positive sample is rejected; the
    left endpoint is skipped so maps such as ``t**2`` remain admissible.
    """

    psi: Callable[[np.ndarray], np.ndarray]
    dpsi: Callable[[np.ndarray], np.ndarray]
    T: float
    name: str = "psi"

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T}", "T")
        ts = self.T * np.arange(1, PSI_SAMPLES + 1) / PSI_SAMPLES
        d = np.asarray(self.dpsi(ts), dtype=float)
        if d.shape != ts.shape:
            d = np.broadcast_to(d, ts.shape)
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            bad = ts[~(np.isfinite(d) & (d > 0))][0]
            raise ConfigurationError(f"Psi' must be positive on (0, T]; fails at t={bad:.6g}", "psi")
        vals = np.asarray(self.psi(np.concatenate([[0.0], ts])), dtype=float)
        if not np.all(np.isfinite(vals)) or np.any(np.diff(vals) <= 0):
            raise ConfigurationError("Psi must be finite and strictly increasing on [0, T]", "psi")

    @classmethod
    def identity(cls, T: float = 1.0) -> "PsiMap":
        return cls(lambda t: np.asarray(t, dtype=float), lambda t: np.ones_like(np.asarray(t, dtype=float)), T, "t")

    def offset(self, t) -> np.ndarray:
        """``Psi(t) - Psi(0)``, clipped at zero against rounding."""
        t = np.asarray(t, dtype=float)
        return np.maximum(np.asarray(self.psi(t), dtype=float) - float(np.asarray(self.psi(0.0))), 0.0)


def default_grading(gamma: float) -> float:
    return max(1.0, 2.0 / gamma)


@dataclass(frozen=True)
class GradedMesh:
    """Nodes ``t_i = T (i/N)^p`` for ``i = 0..N``."""

    T: float
    N: int
    grading: float = 2.0

    def __post_init__(self):
        if self.N < 2:
            raise ConfigurationError(f"mesh needs N >= 2 intervals, got {self.N}", "mesh.N")
        if not self.grading >= 1.0:
            raise ConfigurationError(f"grading exponent must be >= 1, got {self.grading}", "mesh.grading_exponent")
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T}", "T")

    @cached_property
    def nodes(self) -> np.ndarray:
        t = self.T * (np.arange(self.N + 1) / self.N) ** self.grading
        t[-1] = self.T
        return t

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[j] - t) > 1e-12 * max(1.0, self.T):
            raise DomainError(f"t={t!r} is not a node of the mesh")
        return j

    def refine(self) -> "GradedMesh":
        return GradedMesh(self.T, 2 * self.N, self.grading)


def graded_mesh(T: float, N: int, gamma: float = 1.0, grading: float | None = None) -> GradedMesh:
    return GradedMesh(T, N, default_grading(gamma) if grading is None else grading)


@dataclass(frozen=True, eq=False)
class WeightedGridFunction:
    """Grid function stored as ``v_i = (Psi(t_i) - Psi(0))^(1-gamma) y(t_i)``."""

    mesh: GradedMesh
    values: np.ndarray
    order: OrderParams
    psi: PsiMap

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.N + 1,):
            raise ConfigurationError(f"expected {self.mesh.N + 1} weighted values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("weighted values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def gamma(self) -> float:
        return self.order.gamma

    @cached_property
    def U(self) -> np.ndarray:
        return self.psi.offset(self.mesh.nodes)

    @property
    def t(self) -> np.ndarray:
        return self.mesh.nodes

    @cached_property
    def raw(self) -> np.ndarray:
        """``y(t_i)``; the entry at ``t = 0`` is ``inf``-signed when ``gamma < 1``."""
        y = np.empty_like(self.values)
        y[1:] = self.values[1:] * self.U[1:] ** (self.gamma - 1.0)
        if self.gamma == 1.0:
            y[0] = self.values[0]
        else:
            y[0] = np.copysign(np.inf, self.values[0]) if self.values[0] != 0 else 0.0
        return y

    def like(self, values) -> "WeightedGridFunction":
        return WeightedGridFunction(self.mesh, np.asarray(values, dtype=float), self.order, self.psi)

    def same_grid(self, other: "WeightedGridFunction") -> bool:
        return (
            self.mesh == other.mesh
            and self.gamma == other.gamma
            and (self.psi is other.psi or np.array_equal(self.U, other.U))
        )

    def __add__(self, other):
        if isinstance(other, WeightedGridFunction):
            _require_same_grid(self, other)
            return self.like(self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, WeightedGridFunction):
            _require_same_grid(self, other)
            return self.like(self.values - other.values)
        return NotImplemented

    def __neg__(self):
        return self.like(-self.values)

    def __mul__(self, c):
        if np.isscalar(c):
            return self.like(float(c) * self.values)
        return NotImplemented

    __rmul__ = __mul__

    @classmethod
    def from_weighted(cls, fn, mesh, order, psi) -> "WeightedGridFunction":
        """Sample a callable that already returns weighted values ``v(t)``."""
        return cls(mesh, _call_vectorized(fn, mesh.nodes), order, psi)

    @classmethod
    def from_raw(cls, fn, mesh, order, psi) -> "WeightedGridFunction":
        """Sample ``y(t)`` at ``t > 0`` and weight it.

        For ``gamma = 1`` the value at ``t = 0`` is sampled directly; otherwise
        the weighted limit is extrapolated linearly (in ``u``) from nodes 1 and 2.
        """
        U = psi.offset(mesh.nodes)
        gamma = order.gamma
        v = np.empty(mesh.N + 1)
        if gamma == 1.0:
            v[:] = _call_vectorized(fn, mesh.nodes)
        else:
            v[1:] = U[1:] ** (1.0 - gamma) * _call_vectorized(fn, mesh.nodes[1:])
            v[0] = extrapolate_to_zero(U, v)
        return cls(mesh, v, order, psi)

    @classmethod
    def zeros(cls, mesh, order, psi) -> "WeightedGridFunction":
        return cls(mesh, np.zeros(mesh.N + 1), order, psi)


def extrapolate_to_zero(U: np.ndarray, v: np.ndarray) -> float:
    return float(v[1] - U[1] * (v[2] - v[1]) / (U[2] - U[1]))


def _call_vectorized(fn, t: np.ndarray) -> np.ndarray:
    out = np.asarray(fn(t), dtype=float)
    if out.shape == t.shape:
        return out
    if out.ndim == 0:
        return np.full(t.shape, float(out))
    return np.array([float(fn(x)) for x in t])


def _require_same_grid(u: WeightedGridFunction, w: WeightedGridFunction):
    if not u.same_grid(w):
        raise ConfigurationError("grid functions live on different meshes or weights")


class OrderCheck(NamedTuple):
    holds: bool
    violation: float


def weighted_norm(u: WeightedGridFunction) -> float:
    """Discrete ``C_{1-gamma;Psi}`` norm: ``max_i |v_i|``."""
    if u.values.size == 0:
        raise ConfigurationError("weighted_norm of an empty grid function")
    return float(np.max(np.abs(u.values)))


def partial_order_leq(u: WeightedGridFunction, w: WeightedGridFunction, tol: float = TOL_ORDER) -> OrderCheck:
    """Test ``u <= w`` nodewise on weighted values, with absolute tolerance ``tol``."""
    _require_same_grid(u, w)
    excess = float(np.max(u.values - w.values))
    violation = max(excess, 0.0)
    return OrderCheck(violation <= tol, violation)


# --- product quadrature -----------------------------------------------------


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W
# An interval is integrated by Gauss-Legendre when it is this small relative to
# its distance from every singularity; the closed forms cancel badly there.
_FAR = 0.1


def _gauss_coeffs(Ul, d, Uj, mu, kappa):
    u = Ul[:, None] + d[:, None] * _GL_X[None, :]
    k = (Uj[:, None] - u) ** (mu - 1.0) * d[:, None] * _GL_W[None, :]
    if kappa != 0.0:
        k = k * u**kappa
    left = (k * (1.0 - _GL_X)).sum(axis=1)
    right = (k * _GL_X).sum(axis=1)
    return left, right


def _regular_coeffs(a, b, d, mu):
    # s = U_j - u on [a, b], d = b - a; coefficients of the nodal values at
    # u = U_i (left) and u = U_{i+1} (right) for the kernel s^(mu-1).
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log1p(-d / b)
        m0 = -(b**mu) * np.expm1(mu * lx) / mu
        m1 = -(b ** (mu + 1)) * np.expm1((mu + 1) * lx) / (mu + 1)
    m0 = np.where(a <= 0, b**mu / mu, m0)
    m1 = np.where(a <= 0, b ** (mu + 1) / (mu + 1), m1)
    left = (m1 - a * m0) / d
    right = (b * m0 - m1) / d
    return left, right


def _beta_diff(p, q, lo, hi):
    # I_hi(p,q) - I_lo(p,q), switching to the complementary form near 1
    direct = sc.betainc(p, q, hi) - sc.betainc(p, q, lo)
    comp = sc.betainc(q, p, 1.0 - lo) - sc.betainc(q, p, 1.0 - hi)
    return np.where(lo >= 0.5, comp, direct)


def _singular_coeffs(Ul, Ur, d, Uj, mu, kappa):
    lo = Ul / Uj
    hi = np.minimum(Ur / Uj, 1.0)
    a0 = Uj ** (mu + kappa) * sc.beta(kappa + 1, mu) * _beta_diff(kappa + 1, mu, lo, hi)
    a1 = Uj ** (mu + kappa + 1) * sc.beta(kappa + 2, mu) * _beta_diff(kappa + 2, mu, lo, hi)
    left = (Ur * a0 - a1) / d
    right = (a1 - Ul * a0) / d
    return left, right


def _interval_coeffs(Ul, Ur, Uj, mu, kappa):
    d = Ur - Ul
    a = Uj - Ur
    if kappa == 0.0:
        far = d <= _FAR * a
    else:
        far = (d <= _FAR * a) & (d <= _FAR * Ul)
    left = np.empty_like(d)
    right = np.empty_like(d)
    if far.any():
        left[far], right[far] = _gauss_coeffs(Ul[far], d[far], Uj[far], mu, kappa)
    near = ~far
    if near.any():
        if kappa == 0.0:
            left[near], right[near] = _regular_coeffs(a[near], Uj[near] - Ul[near], d[near], mu)
        else:
            left[near], right[near] = _singular_coeffs(Ul[near], Ur[near], d[near], Uj[near], mu, kappa)
    return left, right


def rl_weights(U: np.ndarray, mu: float, kappa: float = 0.0, row: int | None = None) -> np.ndarray:
    """Product-trapezoidal weights for ``I^mu`` applied to data ``u^kappa * v(u)``.

    Returns the lower-triangular matrix ``W`` with
    ``I^mu h(U_j) ~= sum_i W[j, i] v_i``, exact whenever ``v`` is piecewise
    linear in ``u``. With ``row`` set, only that row is returned (1-D).
    All weights are non-negative.
    """
    if not mu > 0:
        raise DomainError(f"fractional order must be positive, got {mu}")
    if not -1.0 < kappa <= 0.0:
        raise DomainError(f"weight exponent must lie in (-1, 0], got {kappa}")
    U = np.asarray(U, dtype=float)
    n = U.size
    if row is None:
        jj, ii = np.tril_indices(n, -1)
    else:
        ii = np.arange(row)
        jj = np.full(row, row)
    Uj, Ul, Ur = U[jj], U[ii], U[ii + 1]
    left, right = _interval_coeffs(Ul, Ur, Uj, mu, kappa)
    left = left / math.gamma(mu)
    right = right / math.gamma(mu)
    if row is None:
        W = np.zeros((n, n))
        W[jj, ii] += left
        W[jj, ii + 1] += right
        return W
    w = np.zeros(n)
    np.add.at(w, ii, left)
    np.add.at(w, ii + 1, right)
    return w


GridOrCallable = Union[WeightedGridFunction, Callable]


def _as_grid(h: GridOrCallable, mesh, psi, gamma) -> WeightedGridFunction:
    if isinstance(h, WeightedGridFunction):
        return h
    if mesh is None or psi is None:
        raise ConfigurationError("a callable integrand needs an explicit mesh and PsiMap")
    order = _order_for_gamma(gamma)
    return WeightedGridFunction.from_raw(h, mesh, order, psi)


def _order_for_gamma(gamma: float) -> OrderParams:
    # Any (alpha, beta) with the requested gamma identifies the same weighted space.
    if gamma == 1.0:
        return OrderParams(0.5, 1.0)
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"weight index gamma must lie in (0, 1], got {gamma}")
    alpha = gamma / 2.0
    return OrderParams(alpha, (gamma - alpha) / (1.0 - alpha))


def frac_integral_grid(mu: float, h: GridOrCallable, *, mesh=None, psi=None, gamma: float = 1.0) -> WeightedGridFunction:
    """``I^{mu;Psi} h`` at every node, returned in the same weighted space as ``h``."""
    hg = _as_grid(h, mesh, psi, gamma)
    kappa = hg.gamma - 1.0
    raw = rl_weights(hg.U, mu, kappa) @ hg.values
    v = np.zeros_like(raw)
    v[1:] = hg.U[1:] ** (1.0 - hg.gamma) * raw[1:]
    return hg.like(v)


def frac_integral(mu: float, h: GridOrCallable, t: float, *, mesh=None, psi=None, gamma: float = 1.0) -> float:
    """``I^{mu;Psi} h(t)`` at a mesh node ``t`` (raw, unweighted value)."""
    if not mu > 0:
        raise DomainError(f"fractional order must be positive, got {mu}")
    hg = _as_grid(h, mesh, psi, gamma)
    j = hg.mesh.index_of(t)
    kappa = hg.gamma - 1.0
    if j == 0:
        # limit of U^(mu+kappa) * Gamma(kappa+1)/Gamma(mu+kappa+1) * v(0)
        e = mu + kappa
        if e > 0 or hg.values[0] == 0:
            return 0.0
        if e == 0:
            return math.gamma(kappa + 1) * float(hg.values[0])
        return math.copysign(math.inf, hg.values[0])
    return float(rl_weights(hg.U, mu, kappa, row=j) @ hg.values)


def boundary_functional_at_zero(h: WeightedGridFunction) -> float:
    """``I^{1-gamma;Psi} h(0) = Gamma(gamma) v(0)``."""
    return math.gamma(h.gamma) * float(h.values[0])


def boundary_functional(h: WeightedGridFunction, j: int = -1) -> float:
    """``I^{1-gamma;Psi} h`` at node ``j`` by product quadrature (``h`` itself when gamma = 1)."""
    j = j % (h.mesh.N + 1)
    if j == 0:
        return boundary_functional_at_zero(h)
    if h.gamma == 1.0:
        return float(h.values[j])
    return float(rl_weights(h.U, 1.0 - h.gamma, h.gamma - 1.0, row=j) @ h.values)


def frac_integral_semigroup_residual(mu1: float, mu2: float, h: GridOrCallable, t: float, *, mesh=None, psi=None, gamma: float = 1.0) -> float:
    """``|I^{mu1}(I^{mu2} h)(t) - I^{mu1+mu2} h(t)|`` on the mesh."""
    hg = _as_grid(h, mesh, psi, gamma)
    inner = frac_integral_grid(mu2, hg)
    return abs(frac_integral(mu1, inner, t) - frac_integral(mu1 + mu2, hg, t))


# --- numerical Hilfer derivative ---------------------------------------------


def nonuniform_derivative(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order three-point derivative on a non-uniform grid (one-sided at the ends)."""
    return np.gradient(f, x, edge_order=2)


def _derivative_in_u(G: np.ndarray, mesh: GradedMesh, psi: PsiMap) -> np.ndarray:
    # Differentiate in the uniform mesh coordinate x = (t/T)^(1/p), where power
    # behaviour at t = 0 is much smoother, then apply du/dx = Psi'(t) p T x^(p-1).
    x = np.arange(mesh.N + 1) / mesh.N
    dGdx = np.gradient(G, x, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dudx = np.asarray(psi.dpsi(mesh.nodes), dtype=float) * mesh.grading * mesh.T * x ** (mesh.grading - 1.0)
        out = dGdx / dudx
    return out


def hilfer_derivative(h: GridOrCallable, order: OrderParams, psi: PsiMap | None = None, mesh: GradedMesh | None = None, t: float | None = None):
    """Numerical ``^H D^{alpha,beta;Psi} h``, raw values at every node (``nan`` at 0) or at ``t``.

    Uses the equivalent Riemann-Liouville form
    ``d/du I^{1-alpha} (h - I^{1-gamma}h(0) U^(gamma-1) / Gamma(gamma))``:
    subtracting the initial term makes the integrand vanish at 0, the product
    quadrature integrates first, and the single derivative is taken last by
    central differences in the mesh coordinate (the dominant error source).
    For data that are not smooth in ``u`` (``sqrt(t)``, say) the first interior
    node keeps an O(1e-2) error that does not shrink under refinement.
    """
    if isinstance(h, WeightedGridFunction):
        if h.gamma != order.gamma:
            raise ConfigurationError("grid function weight does not match the derivative order")
        hg, psi, mesh = h, h.psi, h.mesh
    else:
        if psi is None or mesh is None:
            raise ConfigurationError("a callable needs an explicit mesh and PsiMap")
        hg = WeightedGridFunction.from_raw(h, mesh, order, psi)
    if t is not None and t <= 0:
        raise DomainError("the Hilfer derivative is only defined on (0, T]")
    # U^(1-gamma) * c U^(gamma-1) / Gamma(gamma) = v(0) in weighted form
    w = hg.values - hg.values[0]
    G = rl_weights(hg.U, 1.0 - order.alpha, order.gamma - 1.0) @ w
    out = _derivative_in_u(G, mesh, psi)
    out[0] = np.nan
    if t is None:
        return out
    return float(out[mesh.index_of(t)])
