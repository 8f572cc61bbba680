import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psihilfer.errors import ConfigurationError, DomainError
from psihilfer.psi_core import (
    GradedMesh,
    OrderParams,
    PsiMap,
    WeightedGridFunction,
    boundary_functional,
    boundary_functional_at_zero,
    frac_integral,
    frac_integral_grid,
    frac_integral_semigroup_residual,
    graded_mesh,
    hilfer_derivative,
    partial_order_leq,
    rl_weights,
    weighted_norm,
)

from conftest import make_psi

CAPUTO_HALF = OrderParams(0.5, 1.0)
ID = PsiMap.identity(1.0)


def grid(fn, N=256, order=CAPUTO_HALF, psi=ID, T=1.0, grading=None):
    return WeightedGridFunction.from_raw(fn, graded_mesh(T, N, order.gamma, grading), order, psi)


# --- types ---------------------------------------------------------------------


def test_order_params_gamma():
    assert OrderParams(0.5, 1.0).gamma == 1.0
    assert OrderParams(0.5, 0.0).gamma == 0.5
    assert OrderParams(0.6, 0.5).gamma == pytest.approx(0.8)


@pytest.mark.parametrize("alpha, beta", [(0.0, 0.5), (1.0, 0.5), (0.5, -0.1), (0.5, 1.5)])
def test_order_params_rejected(alpha, beta):
    with pytest.raises(ConfigurationError):
        OrderParams(alpha, beta)


def test_psi_maps_accepted():
    for name in ("id", "t^2", "expm1"):
        assert make_psi(name).offset(0.0) == 0.0


@pytest.mark.parametrize(
    "psi, dpsi",
    [(lambda t: -np.asarray(t), lambda t: -np.ones_like(np.asarray(t))), (lambda t: np.asarray(t), lambda t: 0 * np.asarray(t))],
)
def test_psi_map_rejects_non_increasing(psi, dpsi):
    with pytest.raises(ConfigurationError):
        PsiMap(psi, dpsi, 1.0)


def test_graded_mesh():
    m = graded_mesh(2.0, 64, 0.5)
    assert m.grading == 4.0
    assert m.nodes[0] == 0.0 and m.nodes[-1] == 2.0
    assert np.all(np.diff(m.nodes) > 0)
    assert m.refine().nodes[::2] == pytest.approx(m.nodes, rel=1e-14)
    with pytest.raises(ConfigurationError):
        GradedMesh(1.0, 1)
    with pytest.raises(DomainError):
        m.index_of(0.123456)


def test_from_raw_extrapolates_weighted_value_at_zero():
    order = OrderParams(0.5, 0.0)  # gamma = 1/2
    u = grid(lambda t: 3.0 / np.sqrt(t) + t, order=order)
    assert u.values[0] == pytest.approx(3.0, abs=1e-6)
    assert u.raw[1:] == pytest.approx(3.0 / np.sqrt(u.t[1:]) + u.t[1:], rel=1e-12)


# --- norm and order ------------------------------------------------------------


def test_weighted_norm_examples():
    z0, w0 = grid(lambda t: np.sqrt(t) + 1), grid(lambda t: -(np.sqrt(t) + 1) / 6)
    assert weighted_norm(z0 - w0) == pytest.approx(7 / 3, rel=1e-14)
    assert weighted_norm(WeightedGridFunction.zeros(z0.mesh, z0.order, z0.psi)) == 0.0
    order = OrderParams(0.4, 0.2)
    psi = make_psi("t^2")
    one = WeightedGridFunction.from_weighted(lambda t: np.ones_like(t), graded_mesh(1.0, 64, order.gamma), order, psi)
    assert weighted_norm(one) == 1.0


def test_weighted_norm_mesh_invariance():
    u = lambda t: np.sin(3 * t) + np.sqrt(t)  # noqa: E731
    norms = [weighted_norm(grid(u, N)) for N in (32, 64, 128, 256, 512)]
    diffs = np.abs(np.diff(norms))
    assert diffs[-1] < 1e-4
    assert diffs[-1] <= diffs[0]


def test_partial_order_examples():
    z0, w0 = grid(lambda t: np.sqrt(t) + 1), grid(lambda t: -(np.sqrt(t) + 1) / 6)
    assert partial_order_leq(w0, w0) == (True, 0.0)
    assert partial_order_leq(w0, z0).holds
    chk = partial_order_leq(w0.like(w0.values + 1e-3), w0)
    assert not chk.holds and chk.violation == pytest.approx(1e-3, rel=1e-9)
    assert partial_order_leq(w0.like(w0.values + 1e-9), w0).holds


def test_partial_order_mismatched_meshes():
    with pytest.raises(ConfigurationError):
        partial_order_leq(grid(np.sin, 64), grid(np.sin, 128))


# --- fractional integral --------------------------------------------------------


def test_frac_integral_examples():
    mesh = graded_mesh(1.0, 256)
    assert frac_integral(0.5, lambda t: 0 * t, 1.0, mesh=mesh, psi=ID) == 0.0
    assert frac_integral(0.5, lambda t: np.ones_like(t), 1.0, mesh=mesh, psi=ID) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-13)
    assert frac_integral(1.0, lambda t: t, 1.0, mesh=mesh, psi=ID) == pytest.approx(0.5, rel=1e-13)
    sq = make_psi("t^2")
    mesh = graded_mesh(1.0, 512)
    val = frac_integral(0.5, lambda t: sq.offset(t) ** 0.5, 1.0, mesh=mesh, psi=sq)
    assert val == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-4)


def test_frac_integral_errors():
    mesh = graded_mesh(1.0, 16)
    with pytest.raises(DomainError):
        frac_integral(0.0, np.sin, 1.0, mesh=mesh, psi=ID)
    with pytest.raises(DomainError):
        frac_integral(0.5, np.sin, 0.3, mesh=mesh, psi=ID)


def test_semigroup_examples():
    mesh = graded_mesh(1.0, 64)
    assert frac_integral_semigroup_residual(0.5, 0.5, lambda t: 0 * t, 1.0, mesh=mesh, psi=ID) == 0.0
    res = [frac_integral_semigroup_residual(0.5, 0.5, lambda t: np.ones_like(t), 1.0, mesh=graded_mesh(1.0, N), psi=ID) for N in (64, 128, 256)]
    assert res[2] < res[1] < res[0] < 1e-2
    res = [frac_integral_semigroup_residual(0.25, 0.75, lambda t: t, 1.0, mesh=graded_mesh(1.0, N), psi=make_psi("expm1")) for N in (64, 128, 256)]
    assert res[2] < res[0] and res[2] < 1e-3


def _random_data(seed, n):
    rng = np.random.default_rng(seed)
    return rng.normal(size=n)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000), st.sampled_from(["id", "t^2", "expm1"]))
def test_frac_integral_linear(mu, a, b, seed, psi_name):
    psi = make_psi(psi_name)
    order = OrderParams(0.3, 0.4)
    mesh = graded_mesh(1.0, 64, order.gamma)
    h1 = WeightedGridFunction(mesh, _random_data(seed, 65), order, psi)
    h2 = WeightedGridFunction(mesh, _random_data(seed + 1, 65), order, psi)
    lhs = frac_integral_grid(mu, a * h1 + b * h2).values
    rhs = a * frac_integral_grid(mu, h1).values + b * frac_integral_grid(mu, h2).values
    scale = 1 + np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-0.95, 0.0), st.integers(2, 40), st.floats(1.0, 8.0))
def test_quadrature_weights_non_negative(mu, kappa, N, p):
    U = (np.arange(N + 1) / N) ** p
    W = rl_weights(U, mu, kappa)
    assert np.all(W >= 0)
    assert np.all(np.triu(W, 1) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.5))
def test_frac_integral_positive(seed, mu):
    order = OrderParams(0.5, 0.5)
    mesh = graded_mesh(1.0, 64, order.gamma)
    h = WeightedGridFunction(mesh, np.abs(_random_data(seed, 65)), order, make_psi("t^2"))
    assert np.all(frac_integral_grid(mu, h).values >= 0)


def test_power_rule_small_case():
    psi = make_psi("expm1")
    mesh = graded_mesh(1.0, 256)
    out = frac_integral_grid(0.7, lambda t: psi.offset(t) ** 1.5, mesh=mesh, psi=psi)
    U = psi.offset(mesh.nodes)
    exact = math.gamma(2.5) / math.gamma(3.2) * U**2.2
    assert np.max(np.abs(out.values - exact)) < 1e-4


def test_boundary_functionals():
    order = OrderParams(0.5, 0.0)  # gamma = 1/2
    mesh = graded_mesh(1.0, 512, order.gamma)
    # y = U^(gamma-1): I^(1-gamma) y = Gamma(gamma) everywhere
    y = WeightedGridFunction.from_weighted(lambda t: np.ones_like(t), mesh, order, ID)
    assert boundary_functional_at_zero(y) == pytest.approx(math.gamma(0.5))
    assert boundary_functional(y) == pytest.approx(math.gamma(0.5), rel=1e-12)
    assert boundary_functional(y, 0) == boundary_functional_at_zero(y)


# --- Hilfer derivative ----------------------------------------------------------


def test_hilfer_derivative_caputo_example():
    mesh = graded_mesh(1.0, 512)
    d = hilfer_derivative(lambda t: np.sqrt(t) + 1, CAPUTO_HALF, ID, mesh)
    assert math.isnan(d[0])
    target = math.sqrt(math.pi) / 2
    # node 1 carries the documented first-cell error
    assert abs(d[1] - target) < 0.05
    assert np.max(np.abs(d[2:] - target)) < 1e-3
    assert hilfer_derivative(lambda t: np.sqrt(t) + 1, CAPUTO_HALF, ID, mesh, t=1.0) == pytest.approx(target, abs=1e-4)


def test_hilfer_derivative_of_constant_is_zero():
    order = OrderParams(0.3, 1.0)
    mesh = graded_mesh(1.0, 64)
    d = hilfer_derivative(lambda t: 4.2 + 0 * t, order, make_psi("t^2"), mesh)
    assert np.all(d[1:] == 0.0)


def test_hilfer_derivative_left_inverse():
    errs = []
    for N in (128, 256, 512):
        mesh = graded_mesh(1.0, N)
        Ig = frac_integral_grid(0.5, np.sqrt, mesh=mesh, psi=ID)
        d = hilfer_derivative(Ig, CAPUTO_HALF)
        errs.append(np.max(np.abs(d[2:] - np.sqrt(mesh.nodes[2:]))))
    assert errs[-1] < 2e-3
    assert errs[-1] < errs[0]


def test_hilfer_inversion_identity():
    """I^alpha D h = h - U^(gamma-1)/Gamma(gamma) I^(1-gamma) h(0) for h = c U^(gamma-1) + U^(d-1)."""
    order = OrderParams(0.6, 0.5)
    g, a = order.gamma, order.alpha
    psi = make_psi("t^2")
    c, dd = 0.7, 2.5
    mesh = graded_mesh(1.0, 512, g)
    U = psi.offset(mesh.nodes)
    h = WeightedGridFunction(mesh, c + U ** (dd - g), order, psi)
    Dh = hilfer_derivative(h, order)
    Dh_w = np.zeros_like(U)
    Dh_w[1:] = U[1:] ** (1 - g) * Dh[1:]
    out = frac_integral_grid(a, WeightedGridFunction(mesh, Dh_w, order, psi))
    assert np.max(np.abs(out.values - U ** (dd - g))) < 2e-3
    # closed form of the derivative (c U^(gamma-1) is annihilated)
    exact = math.gamma(dd) / math.gamma(dd - a) * U[2:] ** (dd - a - 1)
    assert np.max(np.abs(Dh[2:] - exact)) < 2e-3


def test_hilfer_derivative_errors():
    mesh = graded_mesh(1.0, 16)
    with pytest.raises(DomainError):
        hilfer_derivative(np.sqrt, CAPUTO_HALF, ID, mesh, t=0.0)
    with pytest.raises(ConfigurationError):
        hilfer_derivative(np.sqrt, CAPUTO_HALF)
    u = grid(np.sqrt, 16)
    with pytest.raises(ConfigurationError):
        hilfer_derivative(u, OrderParams(0.5, 0.5))
