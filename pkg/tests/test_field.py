import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sklab.field import (
    PERIOD,
    CounterexampleField,
    certify_gradient_bound,
    fourier_tail_bound,
    hankel_coefficient,
    laplacian_residual,
    null_field,
    phi0_fourier,
    poisson_extension,
)
from sklab.geometry import bump_profile


@pytest.fixture(scope="module")
def field():
    return CounterexampleField(0.3, n1=4, m_max=6)


def test_bump_profile_shape():
    assert bump_profile(0.0) == 1.0
    r = np.linspace(0, 1, 101)
    v = bump_profile(r)
    assert np.all(np.diff(v) <= 0)
    assert np.all(v[r >= 0.75] == 0)


def test_zero_mode_is_cell_mean(field):
    assert math.isclose(float(hankel_coefficient(0.0)), field.cell_mean, rel_tol=1e-12)


def test_psi_k_periodic_and_single_bump_near_origin(field):
    x = np.array([[0.1, -0.05], [0.2, 0.3]])
    k = 4
    step = PERIOD * 2.0**-k
    assert np.allclose(field.psi_k(k, x), field.psi_k(k, x + step * np.array([3, -2])))
    assert np.allclose(field.psi_k(k, x * 2.0**-k), field.psi_k1(k, x * 2.0**-k))


def test_boundary_values_within_tail_bound(field):
    rng = np.random.default_rng(0)
    xh = rng.uniform(0, 1, size=(200, 2))
    for k in (0, 4):
        x = np.column_stack([xh, np.zeros(200)])
        err = np.abs(field.phi_k(k, x) - field.psi_k(k, xh))
        assert np.all(err <= field.phi_k_tail_bound(k, 0.0))


def test_tail_bound_at_moderate_height():
    assert fourier_tail_bound(0.05, 32) < 1e-4


def test_fourier_matches_poisson_quadrature():
    rng = np.random.default_rng(1)
    for _ in range(6):
        u = rng.uniform(0, PERIOD, 2)
        t = rng.uniform(0.05, 1.0)
        f = phi0_fourier(u[0], u[1], t, 32)
        p = poisson_extension(u[0], u[1], t)
        assert abs(f - p) < 1e-4


def test_single_scale_total(field):
    f = CounterexampleField(0.3, m_max=0)
    x = np.random.default_rng(2).uniform(0, 1, size=(50, 3))
    assert np.array_equal(f.phi_total(x), f.phi_k(0, x))


def test_nonnegative_and_bounded(field):
    rng = np.random.default_rng(3)
    x = np.column_stack([rng.uniform(-2, 2, size=(10000, 2)), rng.exponential(0.05, 10000)])
    v = field.phi_fast(x)
    assert np.all(v >= -1e-4)
    assert np.all(v <= field.sup_bound + 1e-4)
    ref = field.phi_total(x[:300])
    assert np.all(ref >= -field.phi_k_tail_bound(0, 0.0) * 2)


def test_fast_table_matches_reference(field):
    rng = np.random.default_rng(4)
    x = np.column_stack([rng.uniform(-1, 1, size=(400, 2)), rng.uniform(0.0, 0.3, 400)])
    # 32 modes are not converged at the boundary itself; compare against 64
    assert np.max(np.abs(field.phi_fast(x) - field.phi_total(x, modes=64))) < 1e-4


def test_sigma_structure(field):
    rng = np.random.default_rng(5)
    x = np.column_stack([rng.uniform(-1, 1, size=(100, 2)), rng.uniform(0, 1, 100)])
    s = field.sigma(x)
    assert np.all(s[:, 2, 2] == 1.0)
    off = s.copy()
    for i in range(3):
        off[:, i, i] = 0
    assert np.all(off == 0)
    assert np.array_equal(s[:, 0, 0], s[:, 1, 1])
    eig = np.linalg.eigvalsh(s)
    assert np.all(eig >= 1 - 1e-4) and np.all(eig <= 1 + field.sup_bound + 1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2))
def test_sigma_even_in_x3(a, b, c):
    f = CounterexampleField(0.3, n1=4, m_max=3)
    x = np.array([a, b, c])
    y = np.array([a, b, -c])
    assert np.array_equal(f.sigma(x), f.sigma(y))
    assert np.array_equal(f.sigma(x, fast=False), f.sigma(y, fast=False))


def test_large_height_limit(field):
    x = np.array([[0.3, 0.7, 50.0], [1.1, -0.4, 80.0]])
    limit = 1 + field.cell_mean * field.amplitudes.sum()
    assert np.allclose(field.sigma(x)[:, 0, 0], limit, atol=1e-10)
    assert np.allclose(field.sigma(x, fast=False)[:, 0, 0], limit, atol=1e-10)


def test_null_field_is_zero():
    f = null_field()
    x = np.random.default_rng(6).uniform(0, 1, size=(20, 3))
    assert np.all(f.phi_fast(x) == 0) and np.all(f.phi_total(x) == 0)


def test_json_roundtrip(field):
    back = CounterexampleField.from_json(field.to_json())
    assert back == field


@pytest.mark.parametrize("gamma", [0.0, 1.5])
def test_gamma_range(gamma):
    with pytest.raises(ValueError):
        CounterexampleField(gamma)


def test_laplacian_residual_second_order():
    f = CounterexampleField(0.3, m_max=0)
    coarse = laplacian_residual(f, n=16, x3_min=1.0, order=2)
    fine = laplacian_residual(f, n=32, x3_min=1.0, order=2)
    assert 3.0 < coarse / fine < 5.0


def test_gradient_certificate_null_field():
    assert certify_gradient_bound(null_field()).c1 == 0.0


def test_gradient_certificate_single_scale_matches_direct_derivative():
    f = CounterexampleField(0.3, m_max=0)
    cert = certify_gradient_bound(f, x3_max=1.0, ray_points=32)
    top = cert.normalized[0]
    assert cert.x3[0] == 1.0
    # direct derivative of phi_0 at x3 = 1 over the same rays, by the Fourier series
    rho = np.linspace(0, 1.5, 32)
    pts = np.concatenate([np.column_stack([rho, 0 * rho]), np.column_stack([rho, rho]) / math.sqrt(2)])
    h = 1e-6
    best = 0.0
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        p = np.column_stack([pts, np.ones(len(pts))])
        best = max(best, np.max(np.abs(f.phi_k(0, p + e) - f.phi_k(0, p - e)) / (2 * h)))
    assert math.isclose(top, best, rel_tol=1e-4)


def test_gradient_certificate_bounded_toward_boundary():
    f = CounterexampleField(0.3, n1=2, m_max=3)
    c1 = certify_gradient_bound(f, refine=1).c1
    c2 = certify_gradient_bound(f, refine=2).c1
    assert abs(c2 / c1 - 1) < 0.2


def test_weighted_lipschitz_with_certified_constant():
    f = CounterexampleField(0.3, n1=2, m_max=3)
    c1 = certify_gradient_bound(f, refine=2).c1
    rng = np.random.default_rng(7)
    x3 = 2.0 ** rng.uniform(-8, 0, 300)
    x = np.column_stack([rng.uniform(-1, 1, (300, 2)), x3])
    y = x.copy()
    y[:, :2] += rng.normal(size=(300, 2)) * x3[:, None] * 0.5
    lhs = np.abs(f.sigma(x, fast=False)[:, 0, 0] - f.sigma(y, fast=False)[:, 0, 0])
    rhs = c1 * np.linalg.norm(x - y, axis=1) * 2 * x3 ** (f.gamma - 1)
    assert np.all(lhs <= 2 * rhs)
