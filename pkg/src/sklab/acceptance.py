"""Acceptance checks, one per criterion, over cached pipeline runs.

Monte Carlo criteria read resumable run directories under ``root``; a second
call with the same configuration reuses them. ``python -m sklab.acceptance
--warm`` fills the cache, ``python -m sklab.acceptance`` prints one line per
criterion. Sizes come from ``PRESETS``: ``box`` fits a single core in a few
hours, ``full`` uses the path counts of the original targets.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import analysis
from .engine import skorokhod_map_1d
from .field import (
    PERIOD,
    CounterexampleField,
    gradient_refinement_study,
    laplacian_residual,
    phi0_fourier,
    poisson_extension,
)
from .geometry import FlatBoundary, LacunarySeries
from .mapping import MixedBVP, eps_sweep, green_sum, green_sum_oracle, solve_mapping
from .pipeline import ExperimentConfig, RunManifest, cell_key, load_cell, report, run_pipeline

# pinned tolerances
SKOROKHOD_PATHS, SKOROKHOD_STEPS, SKOROKHOD_SECONDS = 10_000, 512, 10.0
LAPLACIAN_TOL, FOURIER_POISSON_TOL, FOURIER_PROBES, PROBE_MIN_HEIGHT = 1e-4, 1e-4, 100, 0.05
GRADIENT_SPREAD = 0.20
EXIT_NSIGMA = 3.0
KS_LEVEL = 0.01
SLOPE_REL = 0.35
GREEN_TOL = 1e-12
DET_RANGE, DHD_FLOOR, JACOBIAN_TOL = (0.5, 2.0), 0.1, 1e-8
TREND_LEVEL = 0.05
DETERMINISM_WORKERS = (1, 2, 8)

DIVERGENCE_DELTA = 2.0**-3.5

PRESETS = {
    "box": {"ac4_sym": 10_000, "ac4_asym": 2_000, "ac5": 4_000, "ac6": 1_000, "ac9": 1_000,
            "ac10": 200},
    "full": {"ac4_sym": 10_000, "ac4_asym": 10_000, "ac5": 10_000, "ac6": 10_000, "ac9": 10_000,
             "ac10": 1_000},
}


@dataclass
class Outcome:
    criterion: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    metrics: dict = dc_field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"AC{self.criterion} {tag} {self.title}: {self.detail} [{self.seconds:.1f} s]"


def configs(root, preset="box"):
    """Run configurations of the Monte Carlo criteria, keyed by name."""
    root = Path(root)
    n = PRESETS[preset]
    field = {"n1": 1, "m_max": 12}

    def cfg(name, **kw):
        return ExperimentConfig(out=str(root / preset / name), name=name, field=dict(field), **kw)

    return {
        # symmetric annulus [r0/2, 2 r0] at j = 5
        "ac4_sym": cfg("ac4_sym", gammas=[0.3], js=[5], paths=n["ac4_sym"], seed=41,
                       horizon=1.5, stop={"kind": "annulus", "a0": 0.5, "a1": 2.0}),
        # [2^-k-1, 1] from 2^-k with k = 3, oracle 1/(k+1)
        "ac4_asym": cfg("ac4_asym", gammas=[0.3], js=[3], paths=n["ac4_asym"], seed=42,
                        horizon=25.0, stop={"kind": "annulus", "a0": 0.5, "a1": 8.0}),
        "ac5": cfg("ac5", gammas=[0.3], js=[6], paths=n["ac5"], seed=51, horizon=0.75,
                   stop={"kind": "clock", "b": 1.0}),
        "ac6": cfg("ac6", gammas=[0.3], js=[4, 5, 6, 7], paths=n["ac6"], seed=61, horizon=1.5,
                   stop={"kind": "annulus", "a0": 0.5, "a1": 2.0}),
        "ac9": cfg("ac9", gammas=[0.3, 0.7], js=[4, 5, 6, 7, 8], paths=n["ac9"], seed=91,
                   horizon=0.01, stop={"kind": "distance", "delta": DIVERGENCE_DELTA}),
        "ac10": cfg("ac10", gammas=[0.3], js=[4, 5], paths=n["ac10"], seed=101, horizon=0.05,
                    stop={"kind": "annulus", "a0": 0.5, "a1": 2.0}, chunk=16),
    }


def _timed(fn):
    def wrapper(*args, **kw):
        t = time.perf_counter()
        out = fn(*args, **kw)
        out.seconds = time.perf_counter() - t
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --------------------------------------------------------------- criteria


def _minimal_push_oracle(w):
    """Smallest nondecreasing ``l >= 0`` with ``w + l >= 0``: ``l_i = max_{j <= i} (-w_j)^+``,
    evaluated as a masked max over the full lower triangle (no running recursion)."""
    n = w.shape[-1]
    need = np.maximum(-w, 0.0)
    mask = np.tril(np.ones((n, n), bool))
    l = np.max(np.where(mask[None], need[:, None, :], 0.0), axis=-1)
    return w + l, l


@_timed
def ac1_skorokhod(seed=0):
    rng = np.random.default_rng(seed)
    w = np.cumsum(rng.normal(size=(SKOROKHOD_PATHS, SKOROKHOD_STEPS)), axis=1) * 0.05
    w[:, 0] = np.abs(w[:, 0])
    t = time.perf_counter()
    got = [skorokhod_map_1d(p) for p in w]
    elapsed = time.perf_counter() - t
    mismatches = 0
    for s in range(0, SKOROKHOD_PATHS, 200):
        y, l = _minimal_push_oracle(w[s:s + 200])
        for i in range(y.shape[0]):
            gy, gl = got[s + i]
            mismatches += int(not (np.array_equal(gy, y[i]) and np.array_equal(gl, l[i])))
    ok = mismatches == 0 and elapsed < SKOROKHOD_SECONDS
    return Outcome(1, "Skorokhod map exact", ok,
                   f"{mismatches} mismatching paths of {SKOROKHOD_PATHS}x{SKOROKHOD_STEPS}, "
                   f"map time {elapsed:.2f} s (< {SKOROKHOD_SECONDS:g} s)",
                   metrics={"mismatches": mismatches, "map_seconds": elapsed})


@_timed
def ac2_field(seed=0):
    f = CounterexampleField(0.3, n1=1, m_max=12)
    res = laplacian_residual(f, k=0, n=64, x3_min=0.5, order=4)
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, PERIOD, (FOURIER_PROBES, 2))
    t = rng.uniform(PROBE_MIN_HEIGHT, 1.0, FOURIER_PROBES)
    four = phi0_fourier(u[:, 0], u[:, 1], t, 32)
    pois = np.array([poisson_extension(u[i, 0], u[i, 1], t[i]) for i in range(FOURIER_PROBES)])
    gap = float(np.max(np.abs(four - pois)))
    ok = res <= LAPLACIAN_TOL and gap <= FOURIER_POISSON_TOL
    return Outcome(2, "field harmonic and Fourier = Poisson", ok,
                   f"Laplacian residual {res:.2e} (<= {LAPLACIAN_TOL:g}), Fourier-Poisson gap "
                   f"{gap:.2e} at {FOURIER_PROBES} probes (<= {FOURIER_POISSON_TOL:g})",
                   metrics={"laplacian": res, "fourier_poisson": gap})


@_timed
def ac3_gradient():
    st = gradient_refinement_study(CounterexampleField(0.3, n1=1, m_max=12), refinements=(1, 2, 4),
                                   tol=GRADIENT_SPREAD)
    c = [ct.c1 for ct in st.certificates]
    return Outcome(3, "normalized gradient stable", st.stable,
                   f"c1 over refinements 1,2,4 = {', '.join(f'{v:.4f}' for v in c)}; spread "
                   f"{st.spread:.2%} (<= {GRADIENT_SPREAD:.0%})",
                   metrics={"c1": c, "spread": st.spread})


def _run(config, log=None):
    m = run_pipeline(config, log=log)
    if m.failed:
        raise RuntimeError(f"cells failed in {config.out}: {m.failed}")
    return m


@_timed
def ac4_exit(root, preset="box", log=None):
    cf = configs(root, preset)
    rows = []
    for name in ("ac4_sym", "ac4_asym"):
        c = cf[name]
        m = _run(c, log)
        j = c.js[0]
        batch = load_cell(m, cell_key(0.3, j))
        r0 = batch.r0
        rows.append(analysis.exit_table(batch, j, a=c.stop["a0"] * r0, b=c.stop["a1"] * r0))
    ok = all(r.completed_passed(EXIT_NSIGMA) for r in rows)
    parts = [f"j={r.j} [{r.expected:.4f}]: completed {r.completed:.4f}+-{r.completed_se:.4f} "
             f"(z={r.completed_z:+.2f}), raw {r.p_outer:.4f} over {r.finished}/{r.trials} finished"
             for r in rows]
    return Outcome(4, "Bessel exit probabilities", ok, "; ".join(parts),
                   metrics={"rows": [r.as_dict() for r in rows]})


@_timed
def ac5_time_change(root, preset="box", log=None):
    c = configs(root, preset)["ac5"]
    m = _run(c, log)
    batch = load_cell(m, cell_key(0.3, 6))
    b = c.stop["b"]
    r = analysis.time_change_test(batch, b, level=KS_LEVEL, oracle_size=10 * batch.steps.size,
                                  complete=True)
    raw = analysis.time_change_test(batch, b, level=KS_LEVEL, oracle_size=10 * r.n_used)
    return Outcome(5, "Bessel time change (KS)", r.passed,
                   f"KS {r.statistic:.4f}, p={r.pvalue:.3g} (>= {KS_LEVEL:g}) over "
                   f"{r.n_used} clock-stopped + {r.n_completed} completed runs; clock-stopped "
                   f"only: KS {raw.statistic:.4f}, p={raw.pvalue:.3g}",
                   metrics={"ks": r.statistic, "p": r.pvalue, "raw_ks": raw.statistic,
                            "raw_p": raw.pvalue, "stopped": r.n_used, "completed": r.n_completed})


@_timed
def ac6_local_time(root, preset="box", log=None):
    c = configs(root, preset)["ac6"]
    m = _run(c, log)
    samples, cut = {}, {}
    for k in c.js:
        batch = load_cell(m, cell_key(0.3, k))
        samples[k] = batch.L
        cut[k] = batch.count("horizon") / batch.steps.size
    fit = analysis.local_time_scaling(samples, gamma=0.3)
    ok = fit.within(SLOPE_REL)
    return Outcome(6, "local-time scaling", ok,
                   f"slope {fit.slope:.4f}+-{fit.se:.4f} vs {fit.predicted:.4f} "
                   f"(+-{SLOPE_REL:.0%}); horizon-cut fractions "
                   + ", ".join(f"k={k}: {v:.1%}" for k, v in cut.items()),
                   metrics={"slope": fit.slope, "se": fit.se, "predicted": fit.predicted,
                            "means": fit.means, "cut": cut})


@_timed
def ac7_green_sum():
    worst = 0.0
    for g in (0.6, 0.75, 1.0):
        r = green_sum(g)
        exact = float(green_sum_oracle(g))
        worst = max(worst, abs(r.value - exact) / exact)
    flags = [not green_sum(g).converges for g in (0.3, 0.5)]
    ok = worst <= GREEN_TOL and all(flags)
    return Outcome(7, "Green-sum dichotomy", ok,
                   f"max relative error {worst:.1e} (<= {GREEN_TOL:g}) at gamma 0.6, 0.75, 1; "
                   f"divergence flagged at 0.3, 0.5: {all(flags)}",
                   metrics={"rel_error": worst})


@_timed
def ac8_mapping():
    H = solve_mapping(MixedBVP(FlatBoundary(), n=64))
    jac = float(np.max(np.abs(H.node_jacobian() - np.eye(3))))
    base = LacunarySeries(0.8, amplitude=0.5, depth=8, base_frequency=1)
    sw = eps_sweep(base, [1.0, 0.5, 0.25, 0.125, 0.0625], n=64, dhd_floor=DHD_FLOOR)
    cert = next((c for c in sw.certificates if c is not None and c.passed), None)
    ok = (jac <= JACOBIAN_TOL and cert is not None and DET_RANGE[0] <= cert.det_min
          and cert.det_max <= DET_RANGE[1] and cert.dhd_min >= DHD_FLOOR)
    detail = f"flat |J - I| {jac:.1e} (<= {JACOBIAN_TOL:g}); "
    if cert is None:
        detail += "no certified eps"
    else:
        detail += (f"lacunary gamma=0.8 certified at eps={sw.largest_passing:g}: det in "
                   f"[{cert.det_min:.3f}, {cert.det_max:.3f}], dh_d/dx_d >= {cert.dhd_min:.3f}")
    return Outcome(8, "mapping certificates", ok, detail,
                   metrics={"jacobian": jac, "eps": sw.largest_passing})


@_timed
def ac9_divergence(root, preset="box", log=None):
    c = configs(root, preset)["ac9"]
    m = _run(c, log)
    rep = report(m)
    cols = {}
    for g in c.gammas:
        cols[g] = [r["prob"] for r in rep.rows if r.get("gamma") == g]
    mk = {g: analysis.mann_kendall(v) for g, v in cols.items()}
    low, high = mk[0.3], mk[0.7]
    ok = low.p_decreasing >= TREND_LEVEL and high.p_decreasing < TREND_LEVEL
    fmt = lambda v: "[" + ", ".join(f"{x:.4f}" for x in v) + "]"  # noqa: E731
    return Outcome(9, "divergence contrast", ok,
                   f"P(sup|Y-Y'| >= {c.stop['delta']:.4f} by t0={c.horizon:g}) over j={c.js}: "
                   f"gamma=0.3 {fmt(cols[0.3])} trend p={low.p_decreasing:.3g}; "
                   f"gamma=0.7 {fmt(cols[0.7])} trend p={high.p_decreasing:.3g}",
                   metrics={"columns": cols, "p_low": low.p_decreasing,
                            "p_high": high.p_decreasing})


@_timed
def ac10_determinism(root, preset="box", log=None):
    base = configs(root, preset)["ac10"]
    blobs, hashes = [], set()
    for w in DETERMINISM_WORKERS:
        c = ExperimentConfig(**{**base.__dict__, "out": f"{base.out}_w{w}", "workers": w})
        m = _run(c, log)
        hashes.add(m.content_hash)
        blobs.append({k: (Path(m.out) / info["file"]).read_bytes() for k, info in m.cells.items()})
    ok = len(hashes) == 1 and all(b == blobs[0] for b in blobs[1:])
    return Outcome(10, "determinism across workers", ok,
                   f"{len(blobs[0])} cells byte-identical with workers {DETERMINISM_WORKERS}: {ok}")


def run_all(root, preset="box", only=None, log=None):
    checks = [
        (1, lambda: ac1_skorokhod()),
        (2, lambda: ac2_field()),
        (3, lambda: ac3_gradient()),
        (4, lambda: ac4_exit(root, preset, log)),
        (5, lambda: ac5_time_change(root, preset, log)),
        (6, lambda: ac6_local_time(root, preset, log)),
        (7, lambda: ac7_green_sum()),
        (8, lambda: ac8_mapping()),
        (9, lambda: ac9_divergence(root, preset, log)),
        (10, lambda: ac10_determinism(root, preset, log)),
    ]
    for num, fn in checks:
        if only and num not in only:
            continue
        yield fn()


def warm(root, preset="box", order=("ac10", "ac9", "ac4_asym", "ac4_sym", "ac6", "ac5"), log=print):
    """Fill the run cache; each configuration is resumable."""
    cf = configs(root, preset)
    for name in order:
        t = time.time()
        if name == "ac10":
            ac10_determinism(root, preset, log)
        else:
            _run(cf[name], log)
        log(f"{name} ready in {time.time() - t:.0f} s")


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m sklab.acceptance", description=__doc__.splitlines()[0])
    p.add_argument("--root", default="acceptance_runs")
    p.add_argument("--preset", choices=sorted(PRESETS), default="box")
    p.add_argument("--only", type=int, nargs="+")
    p.add_argument("--warm", action="store_true", help="only fill the run cache")
    a = p.parse_args(argv)
    if a.warm:
        warm(a.root, a.preset, log=lambda m: print(m, flush=True))
        return 0
    status = 0
    for out in run_all(a.root, a.preset, a.only, log=lambda m: print(m, file=sys.stderr)):
        print(out.line(), flush=True)
        status |= int(not out.passed)
    return status


if __name__ == "__main__":
    sys.exit(main())
