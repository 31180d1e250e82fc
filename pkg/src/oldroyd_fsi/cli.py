"""Command line: ``run`` (config -> outputs), ``verify`` (invariant suite), ``bench`` (timed kernels).

Exit codes: 0 success, 1 controlled stop or failed check, 2 error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .config import ConfigError, parse_config
from .runner import EXIT_ERROR, EXIT_OK, EXIT_STOP, UnsupportedConfig, execute


def _load(args):
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([(None, f"cannot read {args.config}: {exc.strerror}")]) from exc
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return parse_config(text, strict=not args.lenient, overrides=overrides)


def cmd_run(args) -> int:
    cfg = _load(args)
    code, traj = execute(cfg, args.out)
    print(f"{traj.stop_reason}: {len(traj.records)} steps, {len(traj.windows)} windows -> {args.out}")
    return code


def cmd_verify(args) -> int:
    from .verify import run_checks

    seed = args.seed if args.seed is not None else 0
    results = run_checks(seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_STOP


def _time(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cmd_bench(args) -> int:
    from . import algebra
    from .geometry import FlatSlab
    from .solute import VelocityHistory, solve_solute_field
    from .solvent_structure import SolventStructureSolver

    rng = np.random.default_rng(args.seed or 0)
    N, M = args.N, 2 * args.N
    rows = []
    L = rng.standard_normal((100000, 2, 2))
    rows.append(("assemble_W 1e5 tensors", _time(lambda: algebra.assemble_W(L))))
    geom = FlatSlab(M=M)
    s = SolventStructureSolver(geom, N, N, 1.0 / N)
    y = geom.shell_grid()[..., 0]
    g = lambda t, y: 0.05 * np.cos(y) * np.sin(np.pi * t)
    st = s.initial_state()
    st, _ = s.step(st, g=g)

    def steps():
        a = st
        for _ in range(4):
            a, _ = s.step(a, g=g)

    rows.append((f"coupled step {N}x{N} (mean of 4)", _time(steps, 1) / 4))
    hist = VelocityHistory(s.grid)
    a = st
    states = [a]
    for _ in range(4):
        a, _ = s.step(a, g=g)
        states.append(a)
    for q in states:
        hist.add_state(q.t, q.geo, q.u, s.E @ q.v)
    T0 = np.zeros((N, N + 1, 2, 2))
    ts = [q.t for q in states[1:]]
    rows.append((f"solute window {N}x{N}, 4 steps", _time(
        lambda: solve_solute_field(hist, T0, ts, t_start=states[0].t, dt=s.dt, mode="incremental"), 1)))
    for name, sec in rows:
        print(f"{name}: {sec * 1e3:.2f} ms")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oldroyd-fsi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="INI-style config file (defaults when omitted)")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="section.key=value, repeatable; applied after the file")
        sp.add_argument("--lenient", action="store_true", help="warn on unknown keys instead of failing")

    common(sub.add_parser("run", help="run a simulation from a config"))
    common(sub.add_parser("verify", help="run the invariant suite"))
    b = sub.add_parser("bench", help="time the main kernels")
    common(b)
    b.add_argument("--N", type=int, default=32, help="fluid cells per axis")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "verify": cmd_verify, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print("configuration error:\n" + str(exc), file=sys.stderr)
        return EXIT_ERROR
    except UnsupportedConfig as exc:
        print(f"unsupported configuration: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
