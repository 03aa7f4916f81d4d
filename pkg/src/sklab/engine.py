"""Simulation of reflected diffusions in half-spaces and graph domains.

Half-space runs use the kernels in :mod:`sklab.kernels`: Euler-Maruyama on the
horizontal coordinates, exact one-dimensional Skorokhod reflection on the
vertical one. Noise comes from a counter-based generator keyed by
``(seed, path, step)``, so a path never depends on how work is scheduled.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from multiprocessing import get_context

import numpy as np

from ._accel import kernels
from .field import CounterexampleField, null_field
from .geometry import GraphDomain

REASONS = ("horizon", "inner", "outer", "clock", "localtime")
STOP_KINDS = ("annulus", "clock", "localtime", "distance1", "distance", "horizon")


def max_dt(j):
    """Largest step allowed at separation scale ``2^-j``."""
    return 4.0 ** (-j - 4)


def validate_dt(dt, j):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > max_dt(j) * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds 4^-(j+4)={max_dt(j):g} for j={j}")
    return dt


# ----------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseStream:
    """Gaussian increments ``sqrt(dt) * N(0, I_d)`` addressed by (path, step)."""

    seed: int
    d: int
    dt: float

    def normals(self, path, step0, nsteps):
        return kernels().normal_block(self.seed, path, step0, nsteps, self.d)

    def increments(self, path, nsteps, step0=0):
        return self.normals(path, step0, nsteps) * math.sqrt(self.dt)

    def checksum(self, path, nsteps):
        """SHA-256 of the first ``nsteps`` increments of ``path``."""
        return hashlib.sha256(self.increments(path, nsteps).tobytes()).hexdigest()


# ------------------------------------------------------------ containers


@dataclass
class ReflectedPath:
    t: np.ndarray
    Y: np.ndarray
    L: np.ndarray
    scheme: str
    seed: int
    path: int = 0
    reason: str = "horizon"
    exit_index: int | None = None

    @property
    def steps(self):
        return self.t.size - 1


@dataclass
class CouplingRun:
    """Two solutions on one noise path, with distance and clock records."""

    t: np.ndarray
    R: np.ndarray
    A: np.ndarray
    L: np.ndarray
    Lp: np.ndarray
    reason: str
    steps: int
    seed: int
    path: int
    noise_checksum: str = ""
    exhausted: bool = False

    def to_csv(self, path):
        data = np.column_stack([self.t, self.R, self.A, self.L, self.Lp])
        np.savetxt(path, data, delimiter=",", header="t,R,A,L,Lp", comments="", fmt="%.17g")


@dataclass
class CouplingBatch:
    """Per-path summaries of a batch of coupled runs."""

    steps: np.ndarray
    reason: np.ndarray
    y: np.ndarray
    yp: np.ndarray
    L: np.ndarray
    A: np.ndarray
    maxd: np.ndarray
    r0: float
    dt: float

    @property
    def dist(self):
        return np.linalg.norm(self.y[:, :2] - self.yp[:, :2], axis=1)

    def count(self, reason):
        return int(np.sum(self.reason == REASONS.index(reason)))

    def to_csv(self, path):
        cols = np.column_stack([
            np.arange(self.steps.size), self.steps, self.reason, self.dist / self.r0,
            self.L, self.A, self.maxd,
        ])
        np.savetxt(
            path, cols, delimiter=",", comments="",
            header="path,steps,reason,dist_ratio,L,A,maxd",
            fmt=["%d", "%d", "%d", "%.17g", "%.17g", "%.17g", "%.17g"],
        )

    @staticmethod
    def concat(parts):
        p0 = parts[0]
        return CouplingBatch(
            *(np.concatenate([getattr(p, n) for p in parts])
              for n in ("steps", "reason", "y", "yp", "L", "A", "maxd")),
            r0=p0.r0, dt=p0.dt,
        )


# -------------------------------------------------------- stopping rules


@dataclass(frozen=True)
class StoppingRule:
    """Stopping rule for coupled runs.

    kind: ``annulus`` stops when ``|Y - Y'|`` leaves ``[a0 r0, a1 r0]``;
    ``clock`` when ``A >= b r0^2``; ``localtime`` when ``L >= lt``;
    ``distance1`` when ``|Y - Y'| >= 1``; ``distance`` when ``|Y - Y'| >= delta``;
    ``horizon`` only at ``T``. Every rule is also capped at time ``T``.
    """

    kind: str = "annulus"
    a0: float = 0.5
    a1: float = 2.0
    b: float = 1.0
    lt: float = math.inf
    delta: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ValueError(f"unknown stopping rule {self.kind!r}")
        if self.kind == "annulus" and not 0 <= self.a0 < 1 < self.a1:
            raise ValueError("annulus needs 0 <= a0 < 1 < a1")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    def thresholds(self, r0):
        lo, hi, clock, lt = -1.0, math.inf, math.inf, math.inf
        if self.kind == "annulus":
            lo, hi = self.a0 * r0, self.a1 * r0
        elif self.kind == "clock":
            clock = self.b * r0 * r0
        elif self.kind == "localtime":
            lt = self.lt
        elif self.kind == "distance1":
            hi = 1.0
        elif self.kind == "distance":
            hi = self.delta
        return lo, hi, clock, lt

    def max_steps(self, dt):
        return int(math.ceil(self.T / dt - 1e-9))


# ---------------------------------------------------------------- fields


@dataclass(frozen=True)
class ConstantSigma:
    """Constant diffusion matrix; the vertical row must not mix in horizontal noise
    for the reflection to stay normal, so only ``S[2] = (0, 0, s)`` is accepted."""

    S: np.ndarray = dc_field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        S = np.asarray(self.S, float)
        if S.shape != (3, 3) or S[2, 0] != 0 or S[2, 1] != 0 or S[2, 2] <= 0:
            raise ValueError("constant sigma must be 3x3 with third row (0, 0, s), s > 0")
        object.__setattr__(self, "S", S)


def field_args(model):
    """``(S, F)`` for the kernels: ``sigma(x) = S + phi(x) diag(1, 1, 0)``."""
    if model is None:
        return np.eye(3), null_field().table().as_tuple()
    if isinstance(model, ConstantSigma):
        return np.ascontiguousarray(model.S), null_field().table().as_tuple()
    if isinstance(model, CounterexampleField):
        return np.eye(3), model.table().as_tuple()
    raise TypeError(f"unsupported diffusion model {type(model).__name__}")


def _guard(values, what):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite {what}; reduce dt or check the field")


# ------------------------------------------------------------- skorokhod


def skorokhod_map_1d(w):
    """Minimal pushing: ``l_i = max(0, max_{j<=i} -w_j)``, ``y = w + l``."""
    w = np.ascontiguousarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("w must be a nonempty 1-D path")
    if w[0] < 0:
        raise ValueError("skorokhod_map_1d needs w[0] >= 0")
    return kernels().skorokhod_1d(w)


# ------------------------------------------------------------ half space


def simulate_halfspace(model, y0, seed, dt, T, lt_max=math.inf, path=0):
    """One reflected path in the upper half-space ``{x3 >= 0}``.

    Stops at ``T`` or once the local time reaches ``lt_max``.
    """
    y0 = np.asarray(y0, float)
    if y0.shape != (3,) or y0[2] < 0:
        raise ValueError("y0 must be a point of the closed half-space in R^3")
    S, F = field_args(model)
    nsteps = int(math.ceil(T / dt - 1e-9))
    Y, L, steps, reason = kernels().halfspace_path(seed, path, y0, S, F, dt, nsteps, lt_max)
    _guard(Y, "state")
    return ReflectedPath(
        t=np.arange(steps + 1) * dt, Y=Y, L=L, scheme="halfspace",
        seed=seed, path=path, reason=REASONS[reason],
    )


def halfspace_batch(model, y0, seed, path_ids, dt, nsteps, gamma=1.0, clamp=1e-12):
    """Fixed-horizon batch: final states, local times, and ``int max(y3, clamp)^{2(gamma-1)}``."""
    S, F = field_args(model)
    return kernels().halfspace_batch(
        seed, np.asarray(path_ids, np.int64), np.asarray(y0, float), S, F, dt, nsteps,
        gamma, clamp,
    )


# ----------------------------------------------------------- graph domain


def simulate_graph_domain_batch(domain: GraphDomain, y0, seed, path_ids, dt, T,
                                scheme="project", box=None, noise_scale=1.0):
    """Reflected Brownian motion in a graph domain for several paths at once.

    ``project`` pushes an exterior proposal to its nearest boundary point
    (``dL`` = push length); ``flatten-reflect`` reflects the flattened last
    coordinate and maps back (``dL`` = flattened push times the normal's last
    component). ``box = (half_width, top)`` stops a path that leaves
    ``|xhat|_inf <= half_width, x_d <= top``; its exit index is recorded.

    Returns ``(Y, L, exit_index)`` with ``Y`` of shape (paths, steps + 1, d) and
    ``exit_index = -1`` for paths that stayed inside.
    """
    if scheme not in ("project", "flatten-reflect"):
        raise ValueError(f"unknown scheme {scheme!r}")
    d = domain.d
    y0 = np.asarray(y0, float)
    if y0.shape != (d,):
        raise ValueError(f"y0 must have {d} coordinates")
    if domain.gap(y0) < -domain.tol:
        raise ValueError("y0 must lie in the closed domain")
    path_ids = np.asarray(path_ids, np.int64)
    n = path_ids.size
    nsteps = int(math.ceil(T / dt - 1e-9))
    sq = math.sqrt(dt) * noise_scale
    K = kernels()
    dW = np.stack([K.normal_block(seed, int(p), 0, nsteps, d) for p in path_ids]) * sq
    Y = np.empty((n, nsteps + 1, d))
    L = np.zeros((n, nsteps + 1))
    Y[:, 0] = y0
    x = np.repeat(y0[None], n, axis=0)
    lt = np.zeros(n)
    exit_index = np.full(n, -1, np.int64)
    alive = np.ones(n, bool)
    for s in range(nsteps):
        prop = x + dW[:, s]
        gap = domain.gap(prop)
        out = gap < 0
        if np.any(out):
            if scheme == "project":
                foot = domain.foot_point(prop[out])
                push = np.linalg.norm(foot - prop[out], axis=1)
                prop[out] = foot
                lt[out] += push
            else:
                ell = -gap[out]
                nd = domain.normal_at(prop[out][:, :-1])[:, -1]
                prop[out, -1] += ell
                lt[out] += ell * nd
        x = np.where(alive[:, None], prop, x)
        if box is not None:
            half, top = box
            left = alive & ((np.max(np.abs(x[:, :-1]), axis=1) > half) | (x[:, -1] > top))
            exit_index[left] = s + 1
            alive &= ~left
        Y[:, s + 1] = x
        L[:, s + 1] = lt
    return Y, L, exit_index


def simulate_graph_domain(domain, y0, seed, dt, T, scheme="project", box=None,
                          path=0, noise_scale=1.0):
    """Single-path wrapper around :func:`simulate_graph_domain_batch`."""
    Y, L, ex = simulate_graph_domain_batch(
        domain, y0, seed, [path], dt, T, scheme, box, noise_scale
    )
    e = int(ex[0])
    stop = Y.shape[1] if e < 0 else e + 1
    return ReflectedPath(
        t=np.arange(stop) * dt, Y=Y[0, :stop], L=L[0, :stop], scheme=scheme,
        seed=seed, path=path, reason="horizon" if e < 0 else "box",
        exit_index=None if e < 0 else e,
    )


# --------------------------------------------------------------- coupling


def _check_pair(y0, y0p):
    y0 = np.asarray(y0, float)
    y0p = np.asarray(y0p, float)
    if y0.shape != (3,) or y0p.shape != (3,):
        raise ValueError("starting points must be in R^3")
    if y0[2] < 0 or y0[2] != y0p[2]:
        raise ValueError("coupled starts need equal, nonnegative third coordinates")
    return y0, y0p


def run_coupling(model, y0, y0p, seed, dt, rule: StoppingRule, path=0, record_every=1):
    """One coupled run with full records of ``R``, ``A`` and ``L``."""
    y0, y0p = _check_pair(y0, y0p)
    S, F = field_args(model)
    r0 = float(np.linalg.norm(y0[:2] - y0p[:2]))
    lo, hi, clock, lt = rule.thresholds(r0)
    max_steps = rule.max_steps(dt)
    rec, steps, reason = kernels().coupling_trace(
        seed, path, y0, y0p, S, F, dt, max_steps, lo, hi, clock, lt, record_every
    )
    _guard(rec, "coupling record")
    return CouplingRun(
        t=rec[:, 0], R=rec[:, 1], A=rec[:, 2], L=rec[:, 3], Lp=rec[:, 3].copy(),
        reason=REASONS[reason], steps=int(steps), seed=seed, path=path,
        noise_checksum=NoiseStream(seed, 3, dt).checksum(path, int(steps)),
        exhausted=(reason == 0 and rule.kind != "horizon"),
    )


def _batch_chunk(args):
    model, y0, y0p, seed, ids, dt, rule = args
    S, F = field_args(model)
    r0 = float(np.linalg.norm(y0[:2] - y0p[:2]))
    lo, hi, clock, lt = rule.thresholds(r0)
    out = kernels().coupling_batch(
        seed, ids, y0, y0p, S, F, dt, rule.max_steps(dt), lo, hi, clock, lt
    )
    return CouplingBatch(*out, r0=r0, dt=dt)


def chunk_ids(n_paths, chunk, offset=0):
    return [np.arange(s, min(s + chunk, n_paths), dtype=np.int64) + offset
            for s in range(0, n_paths, chunk)]


def run_coupling_batch(model, y0, y0p, seed, n_paths, dt, rule: StoppingRule,
                       workers=1, chunk=256, path_offset=0):
    """Many coupled runs; summaries are identical for any ``workers``."""
    y0, y0p = _check_pair(y0, y0p)
    jobs = [(model, y0, y0p, seed, ids, dt, rule)
            for ids in chunk_ids(n_paths, chunk, path_offset)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_batch_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork")) as ex:
            parts = list(ex.map(_batch_chunk, jobs))
    batch = CouplingBatch.concat(parts)
    _guard(batch.y, "state")
    return batch
