import math

import numpy as np
import pytest
from scipy import stats

from sklab.analysis import (
    WeightFunction,
    bessel_calibration,
    bessel_exit_prob,
    check_weighted_lipschitz,
    divergence_cell,
    exit_table,
    integrability_check,
    integrability_refinement,
    ito_consistency,
    local_time_scaling,
    mann_kendall,
    time_change_oracle,
    time_change_test,
)
from sklab.engine import REASONS, ConstantSigma, CouplingBatch, StoppingRule, run_coupling_batch, \
    simulate_graph_domain_batch
from sklab.field import CounterexampleField, certify_gradient_bound, null_field
from sklab.geometry import FlatBoundary, GraphDomain, RadialBump
from sklab.mapping import MixedBVP, solve_mapping


def _batch(reasons, r0=1.0, dist=None, L=None):
    n = len(reasons)
    y = np.zeros((n, 3))
    yp = np.zeros((n, 3))
    if dist is not None:
        yp[:, 0] = dist
    return CouplingBatch(
        steps=np.ones(n, np.int64), reason=np.array([REASONS.index(r) for r in reasons]),
        y=y, yp=yp, L=np.zeros(n) if L is None else np.asarray(L, float), A=np.zeros(n),
        maxd=np.zeros(n), r0=r0, dt=1e-6,
    )


# ----------------------------------------------------------------- weight


def test_weight_depends_on_height_only():
    G = WeightFunction(0.3)
    x = np.array([[0.1, -2.0, 0.25], [5.0, 3.0, -0.25], [0.0, 0.0, 0.25]])
    v = G(x)
    assert v[0] == v[1] == v[2] == 0.25 ** -0.7
    assert G(np.array([0.0, 0.0, 0.0])) == math.inf
    assert np.all(WeightFunction(1.0)(x) == 1.0)


# ------------------------------------------------------------ bessel exits


def test_bessel_exit_examples():
    for k in range(1, 9):
        assert math.isclose(bessel_exit_prob(2.0 ** (-k - 1), 1.0, 2.0**-k), 1 / (k + 1), rel_tol=1e-14)
    assert bessel_exit_prob(0.5, 2.0, 0.5) == 0.0
    assert bessel_exit_prob(0.5, 2.0, 2.0) == 1.0
    assert math.isclose(bessel_exit_prob(0.5, 2.0, 1.0), 0.5, rel_tol=1e-15)


def test_bessel_exit_scale_invariant():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, r0, b = np.sort(rng.uniform(0.01, 5, 3))
        s = rng.uniform(1e-3, 1e3)
        assert math.isclose(bessel_exit_prob(a, b, r0), bessel_exit_prob(s * a, s * b, s * r0),
                            rel_tol=1e-10, abs_tol=1e-12)


@pytest.mark.parametrize("a,b,r0", [(1.0, 1.0, 1.0), (0.5, 2.0, 3.0), (0.0, 1.0, 0.5)])
def test_bessel_exit_rejects_bad_annuli(a, b, r0):
    with pytest.raises(ValueError):
        bessel_exit_prob(a, b, r0)


def test_exit_table_counts():
    b = _batch(["outer"] * 30 + ["inner"] * 50 + ["horizon"] * 20, r0=2.0**-5)
    row = exit_table(b, 5)
    assert (row.trials, row.inner, row.outer, row.horizon) == (100, 50, 30, 20)
    assert row.inner + row.outer + row.horizon == row.trials
    assert row.expected == 0.5 and row.p_outer == 30 / 80
    assert math.isclose(row.se, math.sqrt(0.375 * 0.625 / 80))
    assert 0 <= row.p_outer <= 1


def test_bessel_calibration_lane():
    # discretised planar Brownian motion from r0 = 1 in [1/2, 2]
    p, se, _ = bessel_calibration(0.5, 2.0, 1.0, 4000, 1e-4, seed=0)
    assert abs(p - 0.5) <= 3 * se


# ------------------------------------------------------- time-change test


def test_time_change_oracle_self_calibration():
    n, reps, passes = 2000, 200, 0
    for r in range(reps):
        a = time_change_oracle(1.0, n, seed=2 * r + 1)
        b = time_change_oracle(1.0, n, seed=2 * r + 2)
        passes += stats.ks_2samp(a, b).pvalue >= 0.01
    assert passes >= 0.95 * reps


def test_time_change_accepts_oracle_distributed_runs():
    d = np.append(time_change_oracle(1.0, 3000, seed=99), np.full(7, 9.0))
    r = time_change_test(_batch(["clock"] * 3000 + ["horizon"] * 7, dist=d), 1.0)
    assert r.passed and r.n_used == 3000 and r.n_excluded == 7


def test_time_change_null_field_never_stops_on_clock():
    rule = StoppingRule(kind="clock", b=1.0, T=0.01)
    batch = run_coupling_batch(null_field(), np.zeros(3), np.array([2.0**-4, 0, 0]), 0, 50,
                               4.0**-8, rule)
    assert batch.count("horizon") == 50 and np.all(batch.A == 0)
    with pytest.raises(ValueError, match="clock-stopped"):
        time_change_test(batch, 1.0)


# ------------------------------------------------------ local-time scaling


def test_local_time_scaling_recovers_slope():
    rng = np.random.default_rng(3)
    true = -0.4 * math.log(2)
    samples = {k: math.exp(1.0 + true * k) * rng.exponential(1.0, 4000) for k in range(4, 8)}
    fit = local_time_scaling(samples, gamma=0.3)
    assert math.isclose(fit.predicted, true)
    assert fit.ci[0] <= true <= fit.ci[1]
    assert fit.within(0.35)


def test_local_time_scaling_needs_three_levels():
    with pytest.raises(ValueError):
        local_time_scaling({4: [1.0, 2.0], 5: [1.0, 3.0]})


def test_local_time_prediction_flat_at_half():
    fit = local_time_scaling({k: [1.0, 2.0, 3.0] for k in (1, 2, 3)}, gamma=0.5)
    assert fit.predicted == 0.0 and abs(fit.slope) < 1e-12


def test_null_field_local_time_independent_of_separation():
    rule = StoppingRule(kind="horizon", T=0.01)
    L = [run_coupling_batch(null_field(), np.zeros(3), np.array([2.0**-k, 0, 0]), 5, 20,
                            4.0**-10, rule).L for k in (4, 5, 6)]
    assert np.array_equal(L[0], L[1]) and np.array_equal(L[1], L[2])


# ----------------------------------------------------- condition checkers


def test_weighted_lipschitz_constant_sigma():
    S = ConstantSigma(np.diag([2.0, 1.0, 1.0])).S
    rng = np.random.default_rng(4)
    x = rng.uniform(0.1, 1, (50, 3))
    y = rng.uniform(0.1, 1, (50, 3))
    assert check_weighted_lipschitz(lambda p: np.broadcast_to(S, p.shape[:-1] + (3, 3)),
                                    WeightFunction(0.5), x, y) == 0.0


def test_weighted_lipschitz_rejects_boundary_points():
    with pytest.raises(ValueError):
        check_weighted_lipschitz(lambda p: p, WeightFunction(0.5), np.zeros((1, 3)), np.ones((1, 3)))


def _pairs(n, seed):
    rng = np.random.default_rng(seed)
    x3 = 2.0 ** rng.uniform(-8, 0, n)
    x = np.column_stack([rng.uniform(-1, 1, (n, 2)), x3])
    y = x.copy()
    y[:, :2] += rng.normal(size=(n, 2)) * x3[:, None] * 0.5
    y[:, 2] *= np.exp(rng.normal(size=n) * 0.3)
    return x, y


def test_weighted_lipschitz_consistent_with_gradient_certificate():
    f = CounterexampleField(0.3, n1=4, m_max=6)
    c1 = certify_gradient_bound(f).c1
    x, y = _pairs(2000, 5)
    ratio = check_weighted_lipschitz(lambda p: f.sigma(p, fast=False), WeightFunction(0.3), x, y)
    # the denominator carries G(x) + G(y), about twice the certified slope weight
    assert c1 / 4 <= ratio <= c1


def test_weighted_lipschitz_respects_even_extension():
    f = CounterexampleField(0.3, n1=2, m_max=3)
    G = WeightFunction(0.3)
    x, y = _pairs(300, 6)
    ybar = y * np.array([1.0, 1.0, -1.0])
    sig = lambda p: f.sigma(p, fast=False)  # noqa: E731
    assert np.array_equal(sig(y), sig(ybar))
    for i in range(50):
        straddle = check_weighted_lipschitz(sig, G, x[i:i + 1], ybar[i:i + 1])
        same_side = check_weighted_lipschitz(sig, G, x[i:i + 1], y[i:i + 1])
        assert straddle <= same_side * (1 + 1e-12)


def test_integrability_gamma_one_is_horizon():
    e = integrability_check(None, 1.0, 0.25, 1e-3, 50, seed=0)
    assert math.isclose(e.mean, 0.25, rel_tol=1e-12) and e.se < 1e-12


def test_integrability_refinement_trends():
    # continuum value for gamma = 0.75 is E|N|^-1/2 * T^(3/4) / (3/4) = 0.811 at T = 1/4
    stable = integrability_refinement(None, 0.75, 0.25, 1e-4, 1000, seed=1)
    assert stable["rel_spread"] < 0.10
    assert all(e.clamped > 0 for e in stable["estimates"])
    growing = integrability_refinement(None, 0.5, 0.25, 1e-4, 1000, seed=1)
    assert growing["increasing"]


# -------------------------------------------------------------- trend test


def test_mann_kendall_exact_tail():
    mk = mann_kendall([5.0, 4.0, 3.0, 2.0, 1.0])
    assert mk.exact and mk.S == -10
    assert math.isclose(mk.p_decreasing, 1 / 120, rel_tol=1e-12)
    assert mk.trend() == "decreasing"
    assert mann_kendall([1.0, 2.0, 3.0, 4.0, 5.0]).trend() == "increasing"


def test_mann_kendall_no_trend():
    assert mann_kendall([0.3, 0.31, 0.29, 0.30, 0.32]).trend() == "none"


def test_mann_kendall_normal_approximation_with_ties():
    x = [3.0, 3.0, 2.0, 2.0, 1.0, 1.0, 0.0, 0.0, -1.0, -1.0, -2.0, -2.0]
    mk = mann_kendall(x)
    assert not mk.exact
    n, t = len(x), 6
    var = (n * (n - 1) * (2 * n + 5) - t * 2 * 1 * 9) / 18
    assert mk.var == var and mk.S == -60
    assert math.isclose(mk.p_decreasing, stats.norm.cdf((mk.S + 1) / math.sqrt(var)))


def test_mann_kendall_needs_three_points():
    with pytest.raises(ValueError):
        mann_kendall([1.0, 2.0])


# ------------------------------------------------------ divergence matrix


def test_divergence_unreachable_delta():
    batch = divergence_cell(0.3, 4, 1e-3, 10.0, 30, seed=0)
    assert batch.count("outer") == 0


def test_divergence_null_field_never_separates():
    r0 = 2.0**-4
    rule = StoppingRule(kind="distance", delta=1.5 * r0, T=0.01)
    batch = run_coupling_batch(null_field(), np.zeros(3), np.array([r0, 0, 0]), 0, 40, 4.0**-8, rule)
    assert batch.count("outer") == 0
    assert np.all(np.abs(batch.maxd - r0) < 1e-12)


# ----------------------------------------------------------- Ito check


def test_ito_flat_identity():
    H = solve_mapping(MixedBVP(FlatBoundary(), n=16))
    dom = GraphDomain(FlatBoundary())
    Y, L, ex = simulate_graph_domain_batch(dom, np.array([0.0, 0.0, 0.05]), 0, np.arange(200), 1e-4,
                                           0.01, box=(0.9, 0.9))
    flat = Y.reshape(-1, 3)
    assert np.max(np.abs(H.value(flat) - flat)) < 1e-8
    assert np.max(np.abs(H.jacobian(flat) - np.eye(3))) < 1e-8
    r = ito_consistency(H, Y, L, 1e-4, ex)
    assert np.all(np.abs(r.qv_ratio[:2] - 1) < 0.05) and r.lt_at_contact_only


def test_ito_bump_quadratic_variation_and_local_time():
    phi = RadialBump(0.1, radius=0.5, gamma=0.8)
    H = solve_mapping(MixedBVP(phi, n=32))
    dom = GraphDomain(phi)
    y0 = np.array([0.0, 0.0, float(phi.eval(np.zeros(2))) + 0.1])
    Y, L, ex = simulate_graph_domain_batch(dom, y0, 3, np.arange(1000), 1e-4, 0.02, box=(0.6, 0.8))
    r = ito_consistency(H, Y, L, 1e-4, ex, contact_tol=1e-9)
    assert r.exits == 0 and np.any(L[:, -1] > 0)
    assert np.all((r.qv_ratio >= 0.9) & (r.qv_ratio <= 1.1))
    # tangential components carry no local-time drift; h_d does
    assert np.all(r.drift_ok[:-1]) and r.drift_mean[-1] > 3 * r.drift_se[-1]
    assert r.lt_at_contact_only
