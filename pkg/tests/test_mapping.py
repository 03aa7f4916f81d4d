import math

import mpmath
import numpy as np
import pytest
from scipy import sparse

from sklab.geometry import FlatBoundary, LacunarySeries, LocalizedChart, RadialBump
from sklab.mapping import (
    MixedBVP,
    SolverError,
    _hessian_at,
    certify_lemma31,
    certify_prop21,
    eps_sweep,
    green_sum,
    green_sum_oracle,
    injectivity_margin,
    neumann_flux,
    pcg,
    second_derivative_constant,
    solve_component,
    solve_mapping,
    tube_reflection_fixture,
    walk_on_spheres,
)

TOL = 1e-8  # solver rtol 1e-10 on the residual, a few orders of conditioning


@pytest.fixture(scope="module")
def flat3():
    return solve_mapping(MixedBVP(FlatBoundary(), n=16))


@pytest.fixture(scope="module")
def bump3():
    return solve_mapping(MixedBVP(RadialBump(0.1, radius=0.5), n=32))


# ----------------------------------------------------------------- problem


def test_bvp_validation():
    with pytest.raises(ValueError):
        MixedBVP(FlatBoundary(d_minus_1=3))
    with pytest.raises(ValueError):
        MixedBVP(FlatBoundary(), bottom="robin")
    assert MixedBVP(FlatBoundary()).n == 64


def test_every_boundary_node_in_exactly_one_face():
    bvp = MixedBVP(FlatBoundary(), n=8)
    side, top, bottom = bvp.face_masks()
    idx = np.indices(bvp.shape)
    on_boundary = np.zeros(bvp.shape, bool)
    for a in range(bvp.d - 1):
        on_boundary |= (idx[a] == 0) | (idx[a] == bvp.n)
    on_boundary |= (idx[-1] == 0) | (idx[-1] == bvp.nz)
    count = side.astype(int) + top + bottom
    assert np.array_equal(count, on_boundary.astype(int))


def test_resolution_flags_steep_charts():
    base = LacunarySeries(0.8, amplitude=0.5, depth=8, base_frequency=1)
    assert MixedBVP(LocalizedChart(base, 0.125), n=64).resolves_boundary() < 1
    assert MixedBVP(LocalizedChart(base, 1.0), n=64).resolves_boundary() > 1


# ------------------------------------------------------------------ solver


def test_pcg_matches_direct_solve():
    n = 200
    main = 2.0 + np.linspace(0, 1, n)
    K = sparse.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr")
    b = np.random.default_rng(0).normal(size=n)
    x, hist = pcg(K, b)
    assert hist[-1] <= 1e-10
    assert np.allclose(x, sparse.linalg.spsolve(K.tocsc(), b), atol=1e-8)


def test_pcg_reports_history_on_failure():
    n = 100
    K = sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    with pytest.raises(SolverError) as err:
        pcg(K, np.ones(n), maxiter=3)
    assert len(err.value.history) == 4


# --------------------------------------------------------------- flat case


def test_flat_components_are_coordinates(flat3):
    x = flat3.bvp.physical_nodes()
    for i, s in enumerate(flat3.parts):
        assert np.max(np.abs(s.values - x[..., i])) < TOL
        assert s.residual <= 1e-10


def test_flat_jacobian_identity_and_certificate(flat3):
    assert np.max(np.abs(flat3.node_jacobian() - np.eye(3))) < TOL
    cert = certify_lemma31(flat3)
    assert cert.passed
    assert abs(cert.det_min - 1) < TOL and abs(cert.det_max - 1) < TOL
    assert cert.c2 < 1e-6 and cert.tangential_max < TOL


def test_flat_boundary_holder_quotient_zero(flat3):
    assert certify_prop21(flat3, "dirichlet").holder_quotient < 1e-7


def test_flat_2d():
    H = solve_mapping(MixedBVP(FlatBoundary(d_minus_1=1), n=32))
    assert np.max(np.abs(H.node_jacobian() - np.eye(2))) < TOL


# -------------------------------------------------------------- bump case


def test_dirichlet_values_exact(bump3):
    for s in bump3.parts:
        from sklab.mapping import component_data

        data, mask = component_data(bump3.bvp, s.component)
        assert np.array_equal(s.values[mask], data[mask])


def test_discrete_maximum_principle(bump3):
    for s in bump3.parts:
        v, m = s.values, s.dirichlet
        assert v.min() >= v[m].min() - TOL
        assert v.max() <= v[m].max() + TOL


def test_graph_face_values(bump3):
    _, _, bottom = bump3.bvp.face_masks()
    assert np.all(bump3.parts[-1].values[bottom] == 0.0)


def test_tangential_components_have_zero_normal_flux(bump3):
    for s in bump3.parts[:-1]:
        assert np.max(np.abs(neumann_flux(s))) < TOL


def test_refinement_ratio_2d():
    phi = RadialBump(0.1, radius=0.5, d_minus_1=1)
    v = {n: solve_mapping(MixedBVP(phi, n=n)).parts for n in (16, 32, 64)}
    for i in range(2):
        d1 = np.max(np.abs(v[16][i].values - v[32][i].values[::2, ::2]))
        d2 = np.max(np.abs(v[32][i].values - v[64][i].values[::2, ::2]))
        assert d1 / d2 >= 3


def test_matches_walk_on_spheres(bump3):
    phi = bump3.bvp.phi
    probes = np.array([[0, 0, 0.2], [0.1, 0.05, 0.15], [0.3, -0.2, 0.3], [-0.2, 0.4, 0.5],
                       [0.0, 0.0, 1.0]])

    def h3_data(p, which):
        return np.where(which == 0, 0.0, p[:, 2])

    mean, se = walk_on_spheres(phi, probes, 2.0, h3_data, 2000, seed=1)
    fem = bump3.value(probes)[:, 2]
    # FEM discretisation error at n = 32 is below 1e-3
    assert np.all(np.abs(fem - mean) <= 3 * se + 1e-3)


def test_mapping_injective_on_ball(bump3):
    assert injectivity_margin(bump3, n_pairs=3000) > 0.5


def test_gentle_bump_certificate_passes():
    cert = certify_lemma31(solve_mapping(MixedBVP(RadialBump(0.02, radius=0.5), n=32)))
    assert cert.passed and not cert.violations
    assert cert.normal_c_min > 0 and cert.normal_misalignment < 0.05


def test_tall_bump_certificate_fails_with_nodes(bump3):
    # the cap stretches the map near its tip: det is about 2.5 there
    cert = certify_lemma31(bump3)
    assert not cert.passed_det and cert.det_max > 2 and cert.violations
    assert all(np.linalg.norm(p) <= cert.ball_radius for p in cert.violations)


# ------------------------------------------------------- boundary holder


def test_neumann_reflection_fixture():
    asym, mismatch = tube_reflection_fixture(n=16)
    assert asym < TOL and mismatch < TOL


def test_boundary_holder_stable_under_refinement():
    phi = RadialBump(0.3, radius=0.5, gamma=0.8)
    coarse = solve_mapping(MixedBVP(phi, n=32))
    fine = solve_mapping(MixedBVP(phi, n=64))
    for case, comp in (("dirichlet", None), ("neumann", 0)):
        q1 = certify_prop21(coarse, case, component=comp, n_pairs=4000).holder_quotient
        q2 = certify_prop21(fine, case, component=comp, n_pairs=4000).holder_quotient
        assert abs(q2 / q1 - 1) < 0.1


def test_boundary_holder_rejects_unknown_case(flat3):
    with pytest.raises(ValueError):
        certify_prop21(flat3, "robin")


# --------------------------------------------------- second derivatives


def test_second_derivative_shell_slope_matches_truncated_series():
    # To first order in the amplitude h_d = x_d - P[Phi] with P the Poisson
    # extension, so |d^2 h_d / dx_1^2| at x_1 = 0 is sum_k a_k f_k^2 exp(-f_k t).
    # Over resolvable shells this finite sum has its own log-log slope, which
    # is what the grid can reproduce.
    g, b, depth, amp, n = 0.8, 2.0, 5, 0.05, 256
    phi = LacunarySeries(g, amplitude=amp, depth=depth, base_frequency=b, d_minus_1=1)
    H = solve_mapping(MixedBVP(phi, n=n))
    h = 2.0 / n
    shells, lo = [], 3 * h
    while lo < 0.5:
        shells.append((lo, min(2 * lo, 0.5)))
        lo *= 2
    k = np.arange(depth + 1)
    f = b * 2.0**k
    a = amp * 2.0 ** (-k * (1 + g))
    centers = np.array([math.sqrt(lo * hi) for lo, hi in shells])
    meas, oracle = [], []
    for lo, hi in shells:
        z = np.linspace(lo, hi, 4)
        pts = np.column_stack([np.zeros(4), phi.eval(np.zeros((4, 1))) + z])
        meas.append(np.abs(_hessian_at(H, pts, h)[:, 1, 0, 0]).max())
        oracle.append(max(np.sum(a * f**2 * np.exp(-f * t)) for t in z))
    s_meas = np.polyfit(np.log(centers), np.log(meas), 1)[0]
    s_orc = np.polyfit(np.log(centers), np.log(oracle), 1)[0]
    assert abs(s_meas - s_orc) < 0.15
    assert np.allclose(meas, oracle, rtol=0.25)
    c2, slope = second_derivative_constant(H, g, radius=0.05, component=1)
    assert slope < 0 and math.isfinite(c2)


# ------------------------------------------------------------ eps sweep


def test_eps_sweep_skips_unresolved_and_reports_passing():
    base = LacunarySeries(0.8, amplitude=0.5, depth=8, base_frequency=1)
    sweep = eps_sweep(base, [0.125, 1.0, 0.5, 0.25], n=32)
    # stops at the first resolved chart that passes
    assert sweep.eps == [1.0, 0.5, 0.25]
    assert [r >= 1 for r in sweep.resolution] == [True, True, False]
    assert sweep.certificates[:2] == [None, None]
    assert sweep.certificates[2].passed and sweep.largest_passing == 0.25


# ------------------------------------------------------------ green sum


@pytest.mark.parametrize("gamma", [0.6, 0.75, 1.0])
def test_green_sum_closed_form(gamma):
    r = green_sum(gamma)
    exact = green_sum_oracle(gamma)
    assert r.converges
    assert abs(r.value - float(exact)) <= 1e-12 * float(exact)
    with mpmath.workdps(40):
        double = mpmath.nsum(lambda kk, j: 2 ** (-kk) * mpmath.power(2, -j * (2 * mpmath.mpf(gamma) - 1)),
                             [0, mpmath.inf], [1, mpmath.inf])
    assert abs(r.double_sum - float(double)) <= 1e-12 * float(double)


def test_green_sum_gamma_one():
    assert green_sum(1.0).value == 1.0


@pytest.mark.parametrize("gamma", [0.3, 0.5])
def test_green_sum_divergence_flag(gamma):
    r = green_sum(gamma, terms=50)
    assert not r.converges and r.value is None
    assert np.all(np.diff(r.partial_sums) >= 1.0 - 1e-12)


def test_green_sum_half_partial_sums_linear():
    assert green_sum(0.5, terms=20).partial_sums == [float(j) for j in range(1, 21)]


def test_green_sum_range():
    with pytest.raises(ValueError):
        green_sum(0.0)
