"""Statistical checks on coupled runs and on the diffusion field."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, asdict
from functools import lru_cache

import numpy as np
from scipy import stats

from .engine import (
    REASONS,
    StoppingRule,
    halfspace_batch,
    run_coupling_batch,
    validate_dt,
)
from .field import CounterexampleField


# ----------------------------------------------------------------- weight


@dataclass(frozen=True)
class WeightFunction:
    """``G(x) = |x_d|^{gamma - 1}``."""

    gamma: float

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        xd = np.abs(np.asarray(x, float)[..., -1])
        with np.errstate(divide="ignore"):
            return xd ** (self.gamma - 1.0)


# ------------------------------------------------------------ bessel exits


def bessel_exit_prob(a, b, r0):
    """Probability that planar Brownian motion from radius ``r0`` reaches ``b`` before ``a``."""
    if not (0 < a <= r0 <= b):
        raise ValueError("need 0 < a <= r0 <= b")
    if a == b:
        raise ValueError("degenerate annulus a == b")
    return math.log(r0 / a) / math.log(b / a)


@dataclass
class ExitRow:
    j: int
    k: int
    trials: int
    inner: int
    outer: int
    horizon: int
    expected: float
    completed: float = float("nan")
    completed_se: float = float("nan")

    @property
    def finished(self):
        return self.inner + self.outer

    @property
    def p_outer(self):
        return self.outer / self.finished if self.finished else float("nan")

    @property
    def se(self):
        n = self.finished
        if n == 0:
            return float("nan")
        p = self.p_outer
        return math.sqrt(max(p * (1 - p), 1e-300) / n)

    @property
    def z(self):
        return (self.p_outer - self.expected) / self.se if self.finished else float("nan")

    @property
    def completed_z(self):
        return (self.completed - self.expected) / self.completed_se

    def passed(self, nsigma=3.0):
        return bool(self.finished) and abs(self.z) <= nsigma

    def completed_passed(self, nsigma=3.0):
        return bool(self.trials) and abs(self.completed_z) <= nsigma

    def as_dict(self):
        d = asdict(self)
        d.update(p_outer=self.p_outer, se=self.se, z=self.z, finished=self.finished,
                 completed_z=self.completed_z)
        return d


@dataclass
class ExitTable:
    rows: list = dc_field(default_factory=list)

    def add(self, row):
        self.rows.append(row)
        return row

    def to_csv(self, path):
        keys = ["j", "k", "trials", "inner", "outer", "horizon", "finished",
                "p_outer", "se", "expected", "z", "completed", "completed_se", "completed_z"]
        with open(path, "w") as fh:
            fh.write(",".join(keys) + "\n")
            for r in self.rows:
                d = r.as_dict()
                fh.write(",".join(repr(d[k]) if isinstance(d[k], float) else str(d[k])
                                  for k in keys) + "\n")


def exit_table(batch, j, k=None, a=None, b=None):
    """Exit-frequency row for a batch stopped on the annulus ``[a, b]``.

    Defaults to the symmetric annulus ``[r0/2, 2 r0]`` whose oracle value is 1/2.
    Horizon-exhausted runs are counted and excluded from ``p_outer``.

    ``completed`` keeps every run: a run cut at the horizon with separation
    ``r`` contributes ``bessel_exit_prob(a, b, r)``. Since ``log |Y - Y'|`` is
    a martingale under the Bessel structure this has the oracle as its mean
    for any horizon, and it equals the raw frequency once every run finishes.
    """
    r0 = batch.r0
    a = r0 / 2 if a is None else a
    b = 2 * r0 if b is None else b
    reason = batch.reason
    outer = reason == REASONS.index("outer")
    cut = reason == REASONS.index("horizon")
    vals = outer.astype(float)
    r = np.clip(batch.dist[cut], a, b)
    vals[cut] = np.log(r / a) / math.log(b / a)
    n = int(reason.size)
    return ExitRow(
        j=j, k=j if k is None else k,
        trials=n,
        inner=int(np.sum(reason == REASONS.index("inner"))),
        outer=int(outer.sum()),
        horizon=int(cut.sum()),
        expected=bessel_exit_prob(a, b, r0),
        completed=float(vals.mean()) if n else float("nan"),
        completed_se=float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
    )


def bessel_calibration(a, b, r0, n_paths, dt, seed):
    """Exit frequency of discretised planar Brownian motion (no SDE, no clock).

    Returns ``(p_outer, se, mean_steps)``; the gap to :func:`bessel_exit_prob`
    isolates pure time-discretisation bias.
    """
    rng = np.random.default_rng(seed)
    z = np.zeros((n_paths, 2))
    z[:, 0] = r0
    alive = np.ones(n_paths, bool)
    outer = np.zeros(n_paths, bool)
    steps = np.zeros(n_paths, np.int64)
    sq = math.sqrt(dt)
    while alive.any():
        idx = np.flatnonzero(alive)
        z[idx] += sq * rng.standard_normal((idx.size, 2))
        steps[idx] += 1
        r = np.hypot(z[idx, 0], z[idx, 1])
        hit_out = r >= b
        hit_in = r <= a
        outer[idx[hit_out]] = True
        alive[idx[hit_out | hit_in]] = False
    p = outer.mean()
    return float(p), float(math.sqrt(p * (1 - p) / n_paths)), float(steps.mean())


# ------------------------------------------------------- time-change test


@dataclass
class TimeChangeResult:
    statistic: float
    pvalue: float
    level: float
    passed: bool
    n_used: int
    n_excluded: int
    n_completed: int = 0


def time_change_oracle(b, n, seed):
    """``|e1 + W(b)|`` for planar Brownian motion ``W``: fresh Gaussian draws."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 2)) * math.sqrt(b)
    return np.hypot(1.0 + g[:, 0], g[:, 1])


def time_change_test(batch, b, level=0.01, min_runs=100, oracle_seed=0, oracle_size=None,
                     complete=False, complete_seed=1):
    """Two-sample KS between ``|Y - Y'| / r0`` at the clock stop and the oracle.

    Only runs stopped by the clock enter; the rest are counted as excluded.
    With ``complete`` a run cut at the horizon with clock ``A`` is finished
    by a planar Gaussian step of variance ``b r0^2 - A`` from its current
    separation vector, so the long-clock tail is not dropped.
    """
    stopped = batch.reason == REASONS.index("clock")
    n = int(stopped.sum())
    if n < min_runs:
        raise ValueError(f"only {n} clock-stopped runs (< {min_runs})")
    obs = batch.dist[stopped] / batch.r0
    n_comp = 0
    if complete:
        cut = np.flatnonzero(batch.reason == REASONS.index("horizon"))
        n_comp = cut.size
        z = (batch.y[cut, :2] - batch.yp[cut, :2]) / batch.r0
        rem = np.maximum(b - batch.A[cut] / batch.r0**2, 0.0)
        g = np.random.default_rng(complete_seed).standard_normal((n_comp, 2))
        obs = np.concatenate([obs, np.hypot(*(z + g * np.sqrt(rem)[:, None]).T)])
    ref = time_change_oracle(b, oracle_size or obs.size, oracle_seed)
    res = stats.ks_2samp(obs, ref)
    return TimeChangeResult(
        statistic=float(res.statistic), pvalue=float(res.pvalue), level=level,
        passed=bool(res.pvalue >= level), n_used=n, n_excluded=int(stopped.size - n - n_comp),
        n_completed=int(n_comp),
    )


# ------------------------------------------------------ local-time scaling


@dataclass
class SlopeFit:
    slope: float
    se: float
    ci: tuple
    intercept: float
    levels: list
    means: list
    predicted: float | None = None

    def within(self, rel):
        return self.predicted is not None and abs(self.slope - self.predicted) <= rel * abs(self.predicted)


def local_time_scaling(samples, gamma=None):
    """Weighted fit of ``log E[L]`` against the separation exponent ``k``.

    ``samples`` maps ``k`` to the local times at the stop. The standard error
    of each log-mean comes from the delta method.
    """
    ks = sorted(samples)
    if len(ks) < 3:
        raise ValueError("local_time_scaling needs at least 3 levels")
    means, ses = [], []
    for k in ks:
        v = np.asarray(samples[k], float)
        m = v.mean()
        means.append(m)
        ses.append(v.std(ddof=1) / (m * math.sqrt(v.size)))
    x = np.asarray(ks, float)
    y = np.log(means)
    w = 1.0 / np.asarray(ses) ** 2
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * y))
    se = math.sqrt(cov[1, 1])
    pred = None if gamma is None else -(1.0 - 2.0 * gamma) * math.log(2.0)
    return SlopeFit(
        slope=float(beta[1]), se=se, ci=(float(beta[1] - 1.96 * se), float(beta[1] + 1.96 * se)),
        intercept=float(beta[0]), levels=ks, means=[float(m) for m in means], predicted=pred,
    )


# ----------------------------------------------------- condition checkers


def check_weighted_lipschitz(sigma, G, x, y):
    """``max |sigma(x) - sigma(y)| / (|x - y| (G(x) + G(y)))`` over the pairs.

    ``sigma`` maps points (..., d) to matrices (..., d, d); the entrywise max is used.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x[..., -1] == 0) or np.any(y[..., -1] == 0):
        raise ValueError("sample pairs must avoid x_d = 0")
    num = np.max(np.abs(sigma(x) - sigma(y)), axis=(-2, -1))
    den = np.linalg.norm(x - y, axis=-1) * (G(x) + G(y))
    return float(np.max(num / den))


@dataclass
class IntegrabilityEstimate:
    gamma: float
    dt: float
    mean: float
    se: float
    clamped: int


def integrability_check(model, gamma, T, dt, n_paths, seed, y0=(0.0, 0.0, 0.0), clamp=1e-12):
    """Monte Carlo ``E int_0^T G(Y_s)^2 ds`` for the reflected process up to ``T``.

    The discrete reflection sits exactly on ``x_d = 0`` after every push, so
    heights are floored at ``max(clamp, sqrt(dt))``, the spatial resolution of
    one step. ``clamped`` counts the floored evaluations.
    """
    nsteps = int(round(T / dt))
    floor = max(clamp, math.sqrt(dt))
    _, _, gint, nclamp = halfspace_batch(
        model, np.asarray(y0, float), seed, np.arange(n_paths), dt, nsteps, gamma, floor
    )
    return IntegrabilityEstimate(
        gamma=gamma, dt=dt, mean=float(gint.mean()),
        se=float(gint.std(ddof=1) / math.sqrt(n_paths)), clamped=int(nclamp.sum()),
    )


def integrability_refinement(model, gamma, T, dt, n_paths, seed, levels=3, y0=(0.0, 0.0, 0.0)):
    """Estimates at ``dt, dt/2, ...``; also reports max relative spread and monotonicity."""
    ests = [integrability_check(model, gamma, T, dt / 2**i, n_paths, seed, y0) for i in range(levels)]
    m = np.array([e.mean for e in ests])
    return {
        "estimates": ests,
        "rel_spread": float((m.max() - m.min()) / m.mean()),
        "increasing": bool(np.all(np.diff(m) > 0)),
    }


# -------------------------------------------------------------- trend test


@lru_cache(maxsize=None)
def _kendall_null(n):
    """Exact null distribution of the number of inversions of a random permutation of n."""
    dist = np.array([1.0])
    for m in range(2, n + 1):
        new = np.zeros(dist.size + m - 1)
        for s in range(m):
            new[s:s + dist.size] += dist
        dist = new
    return dist / dist.sum()


@dataclass
class MannKendall:
    S: int
    var: float
    z: float
    p_decreasing: float
    p_increasing: float
    exact: bool

    def trend(self, level=0.05):
        if self.p_decreasing < level:
            return "decreasing"
        if self.p_increasing < level:
            return "increasing"
        return "none"


def mann_kendall(x):
    """Mann-Kendall trend statistic with one-sided p-values.

    Exact permutation null for tie-free series up to length 10, normal
    approximation with continuity correction otherwise.
    """
    x = np.asarray(x, float)
    n = x.size
    if n < 3:
        raise ValueError("mann_kendall needs at least 3 values")
    diff = np.sign(x[None, :] - x[:, None])
    S = int(np.sum(np.triu(diff, 1)))
    _, counts = np.unique(x, return_counts=True)
    var = (n * (n - 1) * (2 * n + 5) - np.sum(counts * (counts - 1) * (2 * counts + 5))) / 18.0
    ties = bool(np.any(counts > 1))
    if not ties and n <= 10:
        pmf = _kendall_null(n)
        npairs = n * (n - 1) // 2
        # S = npairs - 2 * inversions
        inv_S = (npairs - S) // 2
        p_inc = float(pmf[: inv_S + 1].sum())
        p_dec = float(pmf[inv_S:].sum())
        exact = True
    else:
        zc = (S - np.sign(S)) / math.sqrt(var) if var > 0 else 0.0
        p_inc = float(stats.norm.sf(zc))
        p_dec = float(stats.norm.cdf(zc))
        exact = False
    z = S / math.sqrt(var) if var > 0 else 0.0
    return MannKendall(S=S, var=float(var), z=float(z), p_decreasing=p_dec,
                       p_increasing=p_inc, exact=exact)


# ------------------------------------------------------ divergence matrix


@dataclass
class DivergenceResult:
    gammas: list
    js: list
    prob: np.ndarray
    se: np.ndarray
    hits: np.ndarray
    paths: int
    t0: float
    delta: float
    undersampled: np.ndarray
    trends: dict

    def headline(self, level=0.05):
        """Per-gamma verdict: ``True`` when the column behaves as predicted."""
        out = {}
        for g in self.gammas:
            mk = self.trends[g]
            if g < 0.5:
                out[g] = mk.p_decreasing >= level
            else:
                out[g] = mk.p_decreasing < level
        return out

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("gamma,j,paths,hits,prob,se,undersampled\n")
            for a, g in enumerate(self.gammas):
                for b, j in enumerate(self.js):
                    fh.write(f"{g!r},{j},{self.paths},{int(self.hits[a, b])},"
                             f"{self.prob[a, b]!r},{self.se[a, b]!r},{int(self.undersampled[a, b])}\n")


def divergence_cell(gamma, j, t0, delta, paths, seed, n1=1, m_max=12, dt=None, workers=1,
                    chunk=256):
    """Hits of ``sup_{[0,t0]} |Y - Y'| >= delta`` from separation ``2^-j`` on the boundary."""
    dt = validate_dt(dt if dt is not None else 4.0 ** (-j - 4), j)
    model = CounterexampleField(gamma, n1=n1, m_max=m_max)
    r0 = 2.0 ** (-j)
    rule = StoppingRule(kind="distance", delta=delta, T=t0)
    batch = run_coupling_batch(
        model, np.zeros(3), np.array([r0, 0.0, 0.0]), seed, paths, dt, rule,
        workers=workers, chunk=chunk,
    )
    return batch


def divergence_experiment(gammas, js, t0, delta, paths, seed, n1=1, m_max=12,
                          workers=1, min_hits=5, cell_seed=None):
    """Matrix of ``P(sup_{[0,t0]} |Y - Y'| >= delta)`` over ``(gamma, j)``.

    A cell with fewer than ``min_hits`` hits or misses is flagged undersampled.
    """
    gammas = list(gammas)
    js = list(js)
    if not gammas or not js:
        raise ValueError("empty sweep")
    hits = np.zeros((len(gammas), len(js)), np.int64)
    for a, g in enumerate(gammas):
        for b, j in enumerate(js):
            s = cell_seed(g, j) if cell_seed else seed
            batch = divergence_cell(g, j, t0, delta, paths, s, n1, m_max, workers=workers)
            hits[a, b] = batch.count("outer")
    prob = hits / paths
    se = np.sqrt(prob * (1 - prob) / paths)
    under = (hits < min_hits) | (paths - hits < min_hits)
    trends = {g: mann_kendall(prob[a]) for a, g in enumerate(gammas)}
    return DivergenceResult(gammas, js, prob, se, hits, paths, t0, delta, under, trends)


# ----------------------------------------------------------- Ito check


@dataclass
class ItoReport:
    qv_ratio: np.ndarray
    drift_mean: np.ndarray
    drift_se: np.ndarray
    drift_ok: np.ndarray
    lt_at_contact_only: bool
    exits: int
    n_paths: int


def ito_consistency(mapping, Y, L, dt, exit_index=None, contact_tol=1e-12):
    """Quadratic-variation and drift checks for ``H(X)`` along graph-domain paths.

    ``mapping`` provides ``value(x)`` and ``jacobian(x)`` for points of shape
    (..., d). ``Y`` holds the paths (paths, steps + 1, d) and ``L`` their local
    times. Paths with an exit index are truncated there.
    """
    n, m, d = Y.shape
    if exit_index is None:
        exit_index = np.full(n, -1)
    stop = np.where(exit_index < 0, m - 1, exit_index)
    H = mapping.value(Y.reshape(-1, d)).reshape(n, m, d)
    J = mapping.jacobian(Y.reshape(-1, d)).reshape(n, m, d, d)
    dH = np.diff(H, axis=1)
    pred = np.sum(J[:, :-1] ** 2, axis=-1) * dt
    mask = (np.arange(m - 1)[None, :] < stop[:, None])[..., None]
    qv = np.sum(np.where(mask, dH**2, 0.0), axis=(0, 1))
    qp = np.sum(np.where(mask, pred, 0.0), axis=(0, 1))
    tot = np.sum(np.where(mask, dH, 0.0), axis=1)
    drift_mean = tot.mean(axis=0)
    drift_se = tot.std(axis=0, ddof=1) / math.sqrt(n)
    dL = np.diff(L, axis=1)
    contact = np.abs(Y[:, 1:, -1] - mapping.boundary(Y[:, 1:, :-1])) <= contact_tol
    lt_ok = bool(np.all((dL <= 0) | contact))
    return ItoReport(
        qv_ratio=qv / qp, drift_mean=drift_mean, drift_se=drift_se,
        drift_ok=np.abs(drift_mean) <= 3 * drift_se + 1e-15, lt_at_contact_only=lt_ok,
        exits=int(np.sum(exit_index >= 0)), n_paths=n,
    )
