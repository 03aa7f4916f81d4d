"""Command-line entry point: ``sklab <subcommand> [options]``.

Global options may also come from a JSON ``--config`` file or from environment
variables ``SKLAB_SEED``, ``SKLAB_WORKERS``, ``SKLAB_OUT``; explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _global_defaults(args):
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    env = os.environ
    seed = args.seed if args.seed is not None else int(env.get("SKLAB_SEED", cfg.get("seed", 0)))
    workers = (args.workers if args.workers is not None
               else int(env.get("SKLAB_WORKERS", cfg.get("workers", 1))))
    out = args.out if args.out is not None else env.get("SKLAB_OUT", cfg.get("out", "sklab_out"))
    return cfg, seed, workers, Path(out)


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))


# ------------------------------------------------------------ subcommands


def cmd_simulate_coupling(args):
    from .pipeline import ExperimentConfig, report, run_pipeline
    from .engine import run_coupling
    from .pipeline import _model, _rule, cell_dt, derive_seed

    cfg, seed, workers, out = _global_defaults(args)
    if cfg:
        config = ExperimentConfig.from_dict({**cfg, "seed": seed, "workers": workers, "out": str(out)})
    else:
        stop = {"kind": args.stop}
        if args.stop == "annulus":
            stop.update(a0=args.a0, a1=args.a1)
        elif args.stop == "clock":
            stop["b"] = args.b
        elif args.stop == "localtime":
            stop["lt"] = args.lt
        elif args.stop == "distance":
            stop["delta"] = args.delta
        config = ExperimentConfig(
            gammas=args.gamma, js=args.j, paths=args.paths, seed=seed,
            field={"n1": args.n1, "m_max": args.m_max}, dt=args.dt, horizon=args.horizon,
            stop=stop, out=str(out), workers=workers,
        )
    manifest = run_pipeline(config, log=lambda m: print(m, file=sys.stderr))
    traces = min(args.traces, config.paths)
    for g, j in config.cells():
        r0 = 2.0**-j
        for p in range(traces):
            run = run_coupling(
                _model(config, g), np.array([0.0, 0.0, config.y3]), np.array([r0, 0.0, config.y3]),
                derive_seed(config.seed, g, j), cell_dt(config, j), _rule(config), path=p,
                record_every=args.record_every,
            )
            run.to_csv(out / f"run_g{g!r}_j{j}_p{p}.csv")
    print(report(manifest).text)
    return 1 if manifest.failed else 0


def _boundary(args):
    from .geometry import FlatBoundary, LacunarySeries, LocalizedChart, RadialBump

    if args.phi == "flat":
        base = FlatBoundary(d_minus_1=args.d - 1)
    elif args.phi == "bump":
        base = RadialBump(args.amplitude, radius=args.radius, d_minus_1=args.d - 1)
    else:
        base = LacunarySeries(args.gamma, amplitude=args.amplitude, depth=args.depth,
                              d_minus_1=args.d - 1)
    return base if args.eps is None else LocalizedChart(base, args.eps)


def cmd_solve_mapping(args):
    from dataclasses import asdict
    from .mapping import MixedBVP, certify_lemma31, solve_mapping

    _, _, _, out = _global_defaults(args)
    out.mkdir(parents=True, exist_ok=True)
    phi = _boundary(args)
    bvp = MixedBVP(phi, n=args.n)
    H = solve_mapping(bvp)
    cert = certify_lemma31(H, ball_radius=args.ball)
    rep = asdict(cert)
    rep.update(passed=cert.passed, boundary=phi.to_dict(), n=args.n,
               residuals=[s.residual for s in H.parts], resolution=bvp.resolves_boundary())
    _write_json(out / "certificate.json", rep)
    y = bvp.nodes()
    mid = bvp.shape[1] // 2 if bvp.d == 3 else None
    sl = (slice(None), mid) if mid is not None else (slice(None),)
    cols = [y[sl][..., 0].ravel(), y[sl][..., -1].ravel()]
    cols += [s.values[sl].ravel() for s in H.parts]
    names = ["y1", "yd"] + [f"h{i + 1}" for i in range(bvp.d)]
    np.savetxt(out / "slice.csv", np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt="%.17g")
    print(json.dumps({k: rep[k] for k in ("det_min", "det_max", "dhd_min", "passed")}))
    return 0 if cert.passed else 1


def cmd_check_field(args):
    from .field import CounterexampleField, gradient_refinement_study

    _, _, _, out = _global_defaults(args)
    out.mkdir(parents=True, exist_ok=True)
    field = CounterexampleField(args.gamma, n1=args.n1, m_max=args.m_max)
    study = gradient_refinement_study(field, refinements=tuple(args.refine), tol=args.tol)
    for c in study.certificates:
        c.to_csv(out / f"gradient_refine{c.refine}.csv")
    print(json.dumps({"c1": [c.c1 for c in study.certificates], "spread": study.spread,
                      "stable": study.stable}))
    return 0 if study.stable else 1


def cmd_analyze(args):
    from .pipeline import RunManifest, report

    _, _, _, out = _global_defaults(args)
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    for run_dir in args.runs:
        m = RunManifest.load(run_dir)
        rep = report(m)
        name = Path(run_dir).name or "run"
        (out / f"{name}_report.json").write_text(rep.to_json())
        keys = sorted({k for r in rep.rows for k in r})
        with open(out / f"{name}_table.csv", "w") as fh:
            fh.write(",".join(keys) + "\n")
            for r in rep.rows:
                fh.write(",".join("" if r.get(k) is None else str(r.get(k)) for k in keys) + "\n")
        print(rep.text)
        status |= int(bool(m.failed))
    return status


def cmd_bessel_table(args):
    from .pipeline import bessel_table

    _, _, _, out = _global_defaults(args)
    out.mkdir(parents=True, exist_ok=True)
    rows = bessel_table(args.a, args.b, args.r0)
    with open(out / "bessel_table.csv", "w") as fh:
        fh.write("a,b,r0,p_outer\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")
    for r in rows:
        print(f"a={r[0]:g} b={r[1]:g} r0={r[2]:g} P(outer first)={r[3]:.12f}")
    return 0


def cmd_report(args):
    from .pipeline import RunManifest, report

    m = RunManifest.load(args.manifest)
    rep = report(m)
    print(rep.text)
    if args.json:
        Path(args.json).write_text(rep.to_json())
    return 1 if m.failed else 0


# ----------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="sklab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with default options")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-coupling", help="coupled runs on one noise path")
    s.add_argument("--gamma", type=float, nargs="+", default=[0.3])
    s.add_argument("--n1", type=int, default=1)
    s.add_argument("--m-max", type=int, default=12)
    s.add_argument("--j", type=int, nargs="+", default=[5], help="initial separation 2^-j")
    s.add_argument("--dt", type=float, help="default 4^-(j+4)")
    s.add_argument("--paths", type=int, default=100)
    s.add_argument("--stop", default="annulus",
                   choices=["annulus", "clock", "localtime", "distance1", "distance", "horizon"])
    s.add_argument("--a0", type=float, default=0.5)
    s.add_argument("--a1", type=float, default=2.0)
    s.add_argument("--b", type=float, default=1.0)
    s.add_argument("--lt", type=float, default=float("inf"))
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--traces", type=int, default=5, help="full per-run CSVs written per cell")
    s.add_argument("--record-every", type=int, default=1)
    s.set_defaults(func=cmd_simulate_coupling)

    s = sub.add_parser("solve-mapping", help="harmonic flattening map and certificates")
    s.add_argument("--phi", choices=["flat", "bump", "lacunary"], default="lacunary")
    s.add_argument("--gamma", type=float, default=0.8)
    s.add_argument("--amplitude", type=float, default=0.5)
    s.add_argument("--radius", type=float, default=0.5)
    s.add_argument("--depth", type=int, default=8)
    s.add_argument("--d", type=int, choices=[2, 3], default=3)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--eps", type=float, help="localize and dilate the boundary at scale eps")
    s.add_argument("--ball", type=float, default=0.125)
    s.set_defaults(func=cmd_solve_mapping)

    s = sub.add_parser("check-field", help="normalized gradient certificate of the field")
    s.add_argument("--gamma", type=float, default=0.3)
    s.add_argument("--n1", type=int, default=4)
    s.add_argument("--m-max", type=int, default=6)
    s.add_argument("--refine", type=int, nargs="+", default=[1, 2, 4])
    s.add_argument("--tol", type=float, default=0.2)
    s.set_defaults(func=cmd_check_field)

    s = sub.add_parser("analyze", help="JSON report and CSV tables for run directories")
    s.add_argument("runs", nargs="+")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bessel-table", help="closed-form exit probabilities")
    s.add_argument("--a", type=float, nargs="+", default=[0.25, 0.5])
    s.add_argument("--b", type=float, nargs="+", default=[2.0, 4.0])
    s.add_argument("--r0", type=float, default=1.0)
    s.set_defaults(func=cmd_bessel_table)

    s = sub.add_parser("report", help="summarize a manifest")
    s.add_argument("manifest")
    s.add_argument("--json", help="write the machine-readable report here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
