"""Resumable experiment sweeps over ``(gamma, j)`` cells with hashed manifests."""
from __future__ import annotations

import hashlib
import inspect
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from functools import lru_cache
from importlib import metadata
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import analysis
from .engine import REASONS, STOP_KINDS, CouplingBatch, StoppingRule, max_dt, run_coupling_batch
from .field import CounterexampleField, null_field

CSV_HEADER = "path,steps,reason,y1,y2,y3,yp1,yp2,yp3,L,A,maxd"


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@lru_cache(maxsize=1)
def code_fingerprint():
    """SHA-256 over what determines simulation output.

    Covers the kernel sources, the functions that drive and serialise a cell,
    and the bytes of a short canary run on a small field, so a numerical
    change anywhere in the field construction also changes the hash while
    edits to reporting or docs do not.
    """
    from . import engine
    from .kernels import nb as _nb, np_ as _np

    h = hashlib.sha256()
    for mod in (_nb, _np):
        h.update(Path(mod.__file__).read_bytes())
    for fn in (engine.run_coupling_batch, engine._batch_chunk, engine.field_args,
               engine.StoppingRule, engine.chunk_ids, run_cell, write_batch, _model, _rule,
               derive_seed, cell_dt):
        h.update(inspect.getsource(fn).encode())
    canary = run_coupling_batch(
        CounterexampleField(0.3, n1=1, m_max=3), np.zeros(3), np.array([2.0**-4, 0.0, 0.0]), 1, 4,
        4.0**-8, StoppingRule(kind="horizon", T=200 * 4.0**-8),
    )
    for name in ("steps", "reason", "y", "yp", "L", "A", "maxd"):
        h.update(np.ascontiguousarray(getattr(canary, name)).tobytes())
    return h.hexdigest()


def derive_seed(base, *coords):
    """Cell seed from the base seed and the cell coordinates (63-bit)."""
    text = json.dumps([int(base), *[repr(float(c)) if isinstance(c, float) else c for c in coords]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


# ----------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """One sweep of coupled runs over ``gammas x js``.

    ``field`` holds the field construction (``n1``, ``m_max``,
    ``fourier_modes``; ``{"kind": "null"}`` gives ``phi = 0``). ``stop`` holds
    the stopping-rule parameters; ``horizon`` caps every run. ``dt = None``
    uses the largest admissible step ``4^{-j-4}`` per cell.
    """

    gammas: list
    js: list
    paths: int
    seed: int = 0
    field: dict = dc_field(default_factory=lambda: {"n1": 1, "m_max": 12})
    scheme: str = "skorokhod-exact"
    dt: float | None = None
    horizon: float = 1.0
    stop: dict = dc_field(default_factory=lambda: {"kind": "annulus"})
    y3: float = 0.0
    out: str = "runs"
    workers: int = 1
    chunk: int = 256
    name: str = "sweep"

    def validate(self):
        if not self.gammas or not self.js:
            raise ValueError("empty sweep")
        for g in self.gammas:
            if not 0.0 < float(g) <= 1.0:
                raise ValueError(f"gamma={g} outside (0, 1]")
        for j in self.js:
            if self.dt is not None and self.dt > max_dt(j) * (1 + 1e-12):
                raise ValueError(f"dt={self.dt:g} exceeds 4^-(j+4) for j={j}")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.stop.get("kind", "annulus") not in STOP_KINDS:
            raise ValueError(f"unknown stopping rule {self.stop.get('kind')!r}")
        if self.scheme != "skorokhod-exact":
            raise ValueError("coupled half-space runs support the skorokhod-exact scheme only")
        if self.y3 < 0:
            raise ValueError("starting height must be >= 0")
        return self

    def cells(self):
        return [(float(g), int(j)) for g in self.gammas for j in self.js]

    def resolved(self):
        """Everything that affects output; ``out`` and ``workers`` do not."""
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        d["gammas"] = [float(g) for g in self.gammas]
        d["js"] = [int(j) for j in self.js]
        return d

    def content_hash(self):
        payload = {"config": self.resolved(), "version": tool_version(), "code": code_fingerprint()}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def env_overrides(config: ExperimentConfig, env=None):
    """Apply ``SKLAB_SEED``, ``SKLAB_WORKERS``, ``SKLAB_OUT``, ``SKLAB_PATHS``."""
    env = os.environ if env is None else env
    casts = {"SEED": ("seed", int), "WORKERS": ("workers", int), "OUT": ("out", str),
             "PATHS": ("paths", int)}
    for key, (attr, cast) in casts.items():
        if f"SKLAB_{key}" in env:
            setattr(config, attr, cast(env[f"SKLAB_{key}"]))
    return config


# --------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    config: dict
    content_hash: str
    version: str
    wall_clock: float
    cells: dict
    out: str

    @property
    def failed(self):
        return [k for k, c in self.cells.items() if c.get("status") != "ok"]

    def save(self):
        p = Path(self.out) / "manifest.json"
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return p

    @classmethod
    def load(cls, path):
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        return cls(**json.loads(p.read_text()))


def cell_key(gamma, j):
    return f"gamma={gamma!r},j={j}"


def _model(config, gamma):
    f = dict(config.field)
    if f.get("kind") == "null":
        return null_field()
    return CounterexampleField(
        gamma, n1=int(f.get("n1", 1)), m_max=int(f.get("m_max", 12)),
        fourier_modes=int(f.get("fourier_modes", 32)),
    )


def _rule(config):
    s = dict(config.stop)
    kind = s.pop("kind", "annulus")
    return StoppingRule(kind=kind, T=config.horizon, **s)


def write_batch(batch: CouplingBatch, path):
    cols = np.column_stack([
        np.arange(batch.steps.size), batch.steps, batch.reason, batch.y, batch.yp,
        batch.L, batch.A, batch.maxd,
    ])
    fmt = ["%d", "%d", "%d"] + ["%.17g"] * 9
    np.savetxt(path, cols, delimiter=",", header=CSV_HEADER, comments="", fmt=fmt)


def read_batch(path, r0, dt):
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return CouplingBatch(
        steps=a[:, 1].astype(np.int64), reason=a[:, 2].astype(np.int64),
        y=a[:, 3:6], yp=a[:, 6:9], L=a[:, 9], A=a[:, 10], maxd=a[:, 11], r0=r0, dt=dt,
    )


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cell_dt(config, j):
    return config.dt if config.dt is not None else max_dt(j)


def run_cell(config: ExperimentConfig, gamma, j, path, workers=1):
    r0 = 2.0**-j
    seed = derive_seed(config.seed, gamma, j)
    batch = run_coupling_batch(
        _model(config, gamma), np.array([0.0, 0.0, config.y3]),
        np.array([r0, 0.0, config.y3]), seed, config.paths, cell_dt(config, j),
        _rule(config), workers=workers, chunk=config.chunk,
    )
    write_batch(batch, path)
    return seed


def _cell_job(args):
    config, gamma, j, path = args
    try:
        seed = run_cell(config, gamma, j, path)
        return gamma, j, {"status": "ok", "seed": seed}
    except Exception as exc:  # recorded per cell, surfaced by the exit code
        return gamma, j, {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def run_pipeline(config: ExperimentConfig, log=None):
    """Execute the sweep, skipping cells whose files match the manifest hashes."""
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    h = config.content_hash()
    old = {}
    mpath = out / "manifest.json"
    if mpath.exists():
        try:
            prev = RunManifest.load(mpath)
            if prev.content_hash == h:
                old = prev.cells
        except (json.JSONDecodeError, TypeError, KeyError):
            old = {}
    t0 = time.time()
    cells, todo = {}, []
    for gamma, j in config.cells():
        key = cell_key(gamma, j)
        fname = f"cell_g{gamma!r}_j{j}.csv"
        fpath = out / fname
        prev = old.get(key)
        if (prev and prev.get("status") == "ok" and fpath.exists()
                and _sha(fpath) == prev.get("sha256")):
            cells[key] = prev
            continue
        todo.append((gamma, j, fname))
    jobs = [(config, g, j, str(out / f)) for g, j, f in todo]
    results = []
    if config.workers > 1 and len(jobs) >= config.workers:
        with ProcessPoolExecutor(config.workers, mp_context=get_context("fork")) as ex:
            results = list(ex.map(_cell_job, jobs))
    else:
        for cfg, g, j, p in jobs:
            try:
                seed = run_cell(cfg, g, j, p, workers=config.workers)
                results.append((g, j, {"status": "ok", "seed": seed}))
            except Exception as exc:
                results.append((g, j, {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}))
            if log:
                log(f"cell gamma={g} j={j}: {results[-1][2]['status']}")
    for (g, j, info), (_, _, fname) in zip(results, todo):
        info = dict(info)
        info.update(file=fname, gamma=g, j=j, r0=2.0**-j, dt=cell_dt(config, j))
        if info["status"] == "ok":
            info["sha256"] = _sha(out / fname)
        cells[cell_key(g, j)] = info
    ordered = {cell_key(g, j): cells[cell_key(g, j)] for g, j in config.cells()}
    manifest = RunManifest(
        config=config.resolved(), content_hash=h, version=tool_version(),
        wall_clock=time.time() - t0, cells=ordered, out=str(out),
    )
    manifest.save()
    return manifest


def load_cell(manifest: RunManifest, key):
    c = manifest.cells.get(key)
    if not c or c.get("status") != "ok":
        return None
    p = Path(manifest.out) / c["file"]
    if not p.exists():
        return None
    return read_batch(p, c["r0"], c["dt"])


# ----------------------------------------------------------------- report


def _fmt(v, spec=".4f"):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def cell_summary(config, batch, gamma, j):
    """Statistics of one cell, chosen by the stopping rule."""
    kind = config["stop"].get("kind", "annulus")
    d = {
        "gamma": gamma, "j": j, "paths": int(batch.steps.size),
        "horizon": batch.count("horizon"), "mean_L": float(batch.L.mean()),
    }
    if kind == "annulus":
        a0 = config["stop"].get("a0", 0.5)
        a1 = config["stop"].get("a1", 2.0)
        row = analysis.exit_table(batch, j, a=a0 * batch.r0, b=a1 * batch.r0)
        d.update(p_outer=row.p_outer, se=row.se, expected=row.expected, z=row.z,
                 completed=row.completed, completed_se=row.completed_se,
                 flag=row.completed_passed())
    elif kind == "clock":
        b = config["stop"].get("b", 1.0)
        n = batch.count("clock")
        if n >= 100:
            raw = analysis.time_change_test(batch, b, oracle_size=10 * n)
            r = analysis.time_change_test(batch, b, oracle_size=10 * batch.steps.size,
                                          complete=True)
            d.update(ks_raw=raw.statistic, pvalue_raw=raw.pvalue, ks=r.statistic,
                     pvalue=r.pvalue, flag=r.passed)
        else:
            d.update(ks=None, pvalue=None, flag=None)
    elif kind in ("distance", "distance1"):
        hits = batch.count("outer")
        p = hits / batch.steps.size
        d.update(prob=p, se=math.sqrt(p * (1 - p) / batch.steps.size))
    return d


@dataclass
class Report:
    rows: list
    text: str
    flags: dict

    def to_json(self):
        return json.dumps({"rows": self.rows, "flags": self.flags}, indent=2, sort_keys=True,
                          default=lambda o: None)


def report(manifest: RunManifest):
    """Summary table per cell; missing or failed cells appear as empty rows."""
    cfg = manifest.config
    rows, flags = [], {}
    for key, info in manifest.cells.items():
        batch = load_cell(manifest, key)
        if batch is None:
            rows.append({"cell": key, "gamma": info.get("gamma"), "j": info.get("j"),
                         "missing": True})
            continue
        r = cell_summary(cfg, batch, info["gamma"], info["j"])
        r["cell"] = key
        rows.append(r)
        if r.get("flag") is not None:
            flags[key] = bool(r["flag"])
    kind = cfg["stop"].get("kind", "annulus")
    if kind in ("distance", "distance1"):
        for g in cfg["gammas"]:
            col = [r.get("prob") for r in rows if r.get("gamma") == g]
            if len(col) >= 3 and all(c is not None for c in col):
                mk = analysis.mann_kendall(col)
                flags[f"trend gamma={g!r}"] = mk.trend()
    cols = ["gamma", "j", "paths", "horizon", "p_outer", "se", "completed", "expected", "ks",
            "pvalue", "prob", "mean_L", "flag"]
    lines = [" ".join(f"{c:>10}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c)
            if isinstance(v, bool) or v is None:
                cells.append(f"{'' if v is None else str(v):>10}")
            elif isinstance(v, float):
                cells.append(f"{_fmt(v, '.5g'):>10}")
            else:
                cells.append(f"{v!s:>10}")
        lines.append(" ".join(cells))
    for k, v in flags.items():
        if k.startswith("trend"):
            lines.append(f"{k}: {v}")
    return Report(rows, "\n".join(lines), flags)


def bessel_table(a_list, b_list, r0=1.0):
    """Closed-form ``P(outer first)`` on a grid of annuli ``[a, b]`` from ``r0``."""
    out = []
    for a in a_list:
        for b in b_list:
            if 0 < a <= r0 <= b and a < b:
                out.append((a, b, r0, analysis.bessel_exit_prob(a, b, r0)))
    return out
