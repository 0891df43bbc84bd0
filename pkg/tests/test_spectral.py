import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canontrace.cache import EigenCache
from canontrace.fields import fourier_field, random_field
from canontrace.spectral import (ModelGeometry, build_operator, default_window, direct_zeta, eta0, heat_fit,
                                 heat_trace, hurwitz_eta0, theta1, zeta, zeta0, zeta_prime_at_0)

UNIT = (1.0, 1.0)


# --------------------------------------------------------------------------
# geometry


def test_geometry_volume_and_gauss_bonnet(curved_torus):
    g, op = curved_torus
    assert g.volume() == pytest.approx(g.density().integral(UNIT))
    assert g.volume() > 0
    assert abs(g.integral_g(g.curvature())) <= 1e-10


def test_geometry_validation():
    with pytest.raises(ValueError):
        ModelGeometry("sphere", (1.0,), 16)
    with pytest.raises(ValueError):
        ModelGeometry.torus((1.0,), 16)
    with pytest.raises(ValueError):
        ModelGeometry.circle(-1.0, 16)


def test_conformal_change_adds_to_phi():
    g = ModelGeometry.circle(2 * np.pi, 32, 0.1)
    assert float(g.conformal(0.3, 0.5).phi.values) == pytest.approx(0.25)


# --------------------------------------------------------------------------
# theta functions and exact spectra


def test_theta_direct_vs_poisson_circle():
    eps = 0.05
    k = np.arange(1, 2000)
    direct = 2 * np.sum(np.exp(-k**2 * eps))
    op = build_operator("laplacian", ModelGeometry.circle(2 * np.pi, 64))
    assert heat_trace(op, eps) == pytest.approx(direct, abs=1e-12)
    # both branches of theta1 agree where they meet
    L = 2 * np.pi
    x_switch = L**2 / (4 * np.pi**2)
    assert theta1(x_switch * (1 - 1e-9), L)[0] == pytest.approx(theta1(x_switch * (1 + 1e-9), L)[0], rel=1e-8)


def test_theta_flat_torus_value(flat_torus):
    g, op = flat_torus
    eps = 0.01
    p = np.arange(-60, 61)
    lam = 4 * np.pi**2 * (p[:, None] ** 2 + p[None, :] ** 2)
    direct = np.sum(np.exp(-lam * eps)) - 1.0
    val = heat_trace(op, eps)
    assert val == pytest.approx(direct, abs=1e-10)
    # up to the dual-lattice term 4 e^{-1/(4 eps)} / (4 pi eps) ~ 4.4e-10
    assert val == pytest.approx(1 / (4 * np.pi * eps) - 1, abs=1e-9)
    assert val - (1 / (4 * np.pi * eps) - 1) == pytest.approx(4 * math.exp(-25) / (4 * np.pi * eps), rel=1e-6)


def test_exact_spectra_examples(flat_torus):
    g, op = flat_torus
    assert op.kernel_dim == 1
    ev = op.enumerate(12)
    assert np.allclose(ev[:4], 4 * np.pi**2)
    assert np.allclose(ev[4:8], 8 * np.pi**2)
    assert np.all(np.diff(ev) >= 0)
    d = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 64), twist=0.25)
    assert d.kernel_dim == 0
    assert np.allclose(d.enumerate(4), [0.25, -0.75, 1.25, -1.75])


def test_unit_weight_equals_unweighted(flat_torus):
    g, op = flat_torus
    assert heat_trace(op, 0.02, weight=1.0) == pytest.approx(heat_trace(op, 0.02), rel=1e-14)


def test_build_operator_errors():
    with pytest.raises(ValueError):
        build_operator("laplacian", ModelGeometry.torus(UNIT, 8))
    with pytest.raises(ValueError):
        build_operator("biharmonic", ModelGeometry.torus(UNIT, 32))
    with pytest.raises(ValueError):
        build_operator("dirac_circle", ModelGeometry.circle(1.0, 32), twist=1.5)
    with pytest.raises(ValueError):
        build_operator("dirac_circle", ModelGeometry.torus(UNIT, 32))


# --------------------------------------------------------------------------
# dense realizations


def test_dense_flat_torus_matches_exact():
    g = ModelGeometry.torus(UNIT, 32)
    dense = build_operator("laplacian", g, realization="dense")
    exact = build_operator("laplacian", g)
    d = dense.spectrum().eigenvalues[:50]
    e = exact.spectrum(50).eigenvalues
    assert np.max(np.abs(d - e)) <= 1e-10 * np.max(e)
    assert dense.spectrum().kernel_dim == 1


def test_dense_circle_spectral_convergence():
    phi = lambda N: fourier_field((2 * np.pi,), N, [{"k": [1], "cos": 0.1}])
    lows = []
    for N in (128, 256):
        op = build_operator("laplacian", ModelGeometry.circle(2 * np.pi, N, phi(N)))
        op.solve(vectors=False)
        lows.append(op.eigenvalues[1])
    assert abs(lows[0] - lows[1]) <= 1e-8
    assert abs(op.eigenvalues[0]) <= 1e-9


def test_dense_dirac_is_self_adjoint_and_real():
    phi = random_field((2 * np.pi,), 64, band=2, amplitude=0.2, seed=3)
    op = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 64, phi))
    M = op.build_matrix()
    assert np.allclose(M, M.conj().T, atol=1e-14)


@pytest.mark.parametrize("c", [0.3, -0.2])
def test_scaling_law(c):
    L = 2 * np.pi
    phi = fourier_field((L,), 64, [{"k": [1], "cos": 0.1}])
    base = build_operator("laplacian", ModelGeometry.circle(L, 64, phi))
    moved = build_operator("laplacian", ModelGeometry.circle(L, 64, phi + c))
    base.solve(vectors=False)
    moved.solve(vectors=False)
    assert np.max(np.abs(moved.eigenvalues - math.exp(-2 * c) * base.eigenvalues)) <= 1e-9 * np.max(base.eigenvalues)
    e0 = build_operator("laplacian", ModelGeometry.circle(L, 64)).enumerate(20)
    e1 = build_operator("laplacian", ModelGeometry.circle(L, 64, c)).enumerate(20)
    assert np.array_equal(e1, math.exp(-2 * c) * e0)


def test_dense_refuses_below_trust_threshold():
    phi = random_field((2 * np.pi,), 64, band=2, amplitude=0.1, seed=4)
    op = build_operator("laplacian", ModelGeometry.circle(2 * np.pi, 64, phi))
    with pytest.raises(ValueError):
        heat_trace(op, op.eps_floor / 2)


@pytest.mark.parametrize("family,L", [("laplacian", 2 * np.pi), ("dirac_circle", 2 * np.pi)])
def test_trust_threshold_calibration(family, L):
    # at eps_floor(N) the trace must not move by more than 1e-8 under N -> 2N
    phi = lambda N: random_field((L,), N, band=2, amplitude=0.2, seed=7)
    ops = [build_operator(family, ModelGeometry.circle(L, N, phi(N))) for N in (128, 256)]
    eps = ops[0].eps_floor
    vals = [heat_trace(o, eps, signed=family == "dirac_circle") for o in ops]
    assert abs(vals[0] - vals[1]) < 1e-8


def test_heat_trace_monotone_and_positive(curved_torus):
    g, op = curved_torus
    lo, hi = default_window(op)
    th = heat_trace(op, np.geomspace(lo, 10 * hi, 40))
    assert np.all(th > 0) and np.all(np.diff(th) < 0)


# --------------------------------------------------------------------------
# heat fits


def test_fit_flat_torus(flat_torus):
    g, op = flat_torus
    fit = heat_fit(op)
    assert fit.a[0] == pytest.approx(1 / (4 * np.pi), abs=1e-12)
    assert fit.constant_fitted == pytest.approx(-1.0, abs=1e-9)
    assert fit.a[2] == pytest.approx(0.0, abs=1e-9)
    assert fit.residual <= 1e-9


def test_fit_circle():
    L = 3.0
    op = build_operator("laplacian", ModelGeometry.circle(L, 64))
    fit = heat_fit(op, integer_steps=False, max_exponent=2)
    assert fit.a[0] == pytest.approx(L / math.sqrt(4 * np.pi), abs=1e-9)
    assert fit.a[1] == pytest.approx(0.0, abs=1e-8)


def test_fit_grid_validation(flat_torus):
    g, op = flat_torus
    with pytest.raises(ValueError):
        heat_fit(op, np.geomspace(1e-3, 1e-2, 8))
    with pytest.raises(ValueError):
        heat_fit(op, np.linspace(1e-3, 1e-2, 16))


def test_fit_refuses_ill_conditioned_design(flat_torus):
    g, op = flat_torus
    with pytest.raises(ValueError, match="ill-conditioned"):
        heat_fit(op, np.geomspace(1e-3, 1.1e-3, 16), integer_steps=False, max_exponent=3)


def test_fit_reconstruction_within_residual(curved_torus):
    g, op = curved_torus
    fit = heat_fit(op)
    eps = np.asarray(fit.eps_grid)
    assert np.max(np.abs(fit.evaluate(eps) - heat_trace(op, eps))) <= fit.residual * (1 + 1e-9)


def test_fit_curved_torus_local_coefficients(curved_torus, torus_direction):
    g, op = curved_torus
    f = torus_direction
    fit = heat_fit(op, weight=f)
    assert fit.a[0] == pytest.approx(g.integral_g(f) / (4 * np.pi), abs=1e-4)
    # f-weighted a_2 = (1/12 pi) int f K dvol_g
    assert fit.a[2] == pytest.approx(g.integral_g(f * g.curvature()) / (12 * np.pi), abs=1e-5)
    plain = heat_fit(op)
    assert plain.a[0] == pytest.approx(g.volume() / (4 * np.pi), abs=1e-8)
    # zeta(0) + dim ker equals the t^0 channel a_n (Gauss-Bonnet: 0)
    assert zeta0(op) + op.kernel_dim == pytest.approx(plain.a[2], abs=1e-5)


# --------------------------------------------------------------------------
# zeta and eta


def test_circle_zeta_values(circle_2pi):
    g, op = circle_2pi
    assert zeta0(op) == pytest.approx(-1.0, abs=1e-12)
    assert zeta_prime_at_0(op) == pytest.approx(-2 * math.log(2 * np.pi), abs=1e-12)


@pytest.mark.parametrize("t0", [0.5, 1.0, 2.0])
def test_zeta_independent_of_split(circle_2pi, t0):
    g, op = circle_2pi
    assert zeta_prime_at_0(op, t0=t0) == pytest.approx(-2 * math.log(2 * np.pi), abs=1e-10)
    assert zeta(op, 0.3 + 0.2j, t0=t0) == pytest.approx(complex(2 * mpmath.zeta(0.6 + 0.4j)), abs=1e-10)


def test_flat_torus_zeta0(flat_torus):
    g, op = flat_torus
    assert zeta0(op) == pytest.approx(-1.0, abs=1e-10)


@pytest.mark.parametrize("z", [2.5, 3.0 + 1.0j])
def test_mellin_matches_direct_sum_torus(flat_torus, z):
    g, op = flat_torus
    assert zeta(op, z) == pytest.approx(direct_zeta(op, z), abs=1e-10)


def test_mellin_matches_direct_sum_circle(circle_2pi):
    g, op = circle_2pi
    assert zeta(op, 2.0) == pytest.approx(2 * float(mpmath.zeta(4)), abs=1e-12)
    assert zeta(op, 2.0) == pytest.approx(direct_zeta(op, 2.0), abs=1e-10)


def test_zeta_refuses_poles(flat_torus):
    g, op = flat_torus
    with pytest.raises(ValueError):
        zeta(op, 1.0)


@settings(max_examples=8, deadline=None)
@given(a=st.floats(0.05, 0.95))
def test_eta_twisted_dirac(a):
    op = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 64), twist=a)
    assert hurwitz_eta0(a) == pytest.approx(1 - 2 * a, abs=1e-12)
    assert eta0(op) == pytest.approx(hurwitz_eta0(a), abs=1e-8)


def test_dense_dirac_eta():
    phi = random_field((2 * np.pi,), 256, band=2, amplitude=0.2, seed=3)
    op = build_operator("dirac_circle", ModelGeometry.circle(2 * np.pi, 256, phi), twist=0.25)
    # eta(0) is a conformal invariant
    assert eta0(op) == pytest.approx(0.5, abs=1e-5)


def test_power_operator_zeta(circle_2pi):
    g, op = circle_2pi
    half = build_operator("power", g, base=op, power=0.5)
    assert half.order == 1.0
    assert zeta(half, 2.0) == pytest.approx(2 * float(mpmath.zeta(2)), abs=1e-10)


# --------------------------------------------------------------------------
# eigenpair cache


def test_cache_round_trip(tmp_path):
    phi = random_field((2 * np.pi,), 64, band=2, amplitude=0.2, seed=1)
    g = ModelGeometry.circle(2 * np.pi, 64, phi)
    cache = EigenCache(tmp_path)
    cold = build_operator("dirac_circle", g)
    cold.solve(vectors=True, cache=cache)
    assert not cold.cache_hit and cache.misses == 1
    warm = build_operator("dirac_circle", g)
    warm.solve(vectors=True, cache=cache)
    assert warm.cache_hit and cache.hits == 1
    assert np.array_equal(cold.eigenvalues, warm.eigenvalues)
    assert np.array_equal(cold.eigenvectors, warm.eigenvectors)
    # a different operator misses
    other = build_operator("dirac_circle", g, twist=0.3)
    assert cache.load(other) is None


def test_cache_rejects_corrupt_file(tmp_path):
    g = ModelGeometry.circle(2 * np.pi, 32, random_field((2 * np.pi,), 32, seed=2))
    cache = EigenCache(tmp_path)
    op = build_operator("laplacian", g)
    op.solve(vectors=False, cache=cache)
    path = cache.path(op)
    data = path.read_bytes()
    path.write_bytes(data[:40])
    assert cache.load(build_operator("laplacian", g), vectors=False) is None
    path.write_bytes(data[:-8])
    assert cache.load(build_operator("laplacian", g), vectors=False) is None
