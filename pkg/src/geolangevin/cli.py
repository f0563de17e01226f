"""Command-line entry point: ``geolangevin <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .diagnostics import SampleCloud, wasserstein1
from .experiments import OUT_ENV, load_config, resolve, run, summarize, write_atomic
from .manifolds import InvalidInputError, make_manifold
from .potentials import ConfigError
from .samplers import DivergenceError

SCANS = {"one-step": "one-step-error", "levels": "adjacent-level", "w1": "w1-scaling", "sgld-bias": "sgld-bias"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", metavar="PATH", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    p.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, else the config's out)")


def build_parser():
    ap = _Parser(prog="geolangevin", description="Riemannian Langevin sampling experiments")
    ap.add_argument("--version", action="version", version=f"geolangevin {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, kind in (("sample", "sample"), ("sgld", "sgld"), ("couple", "coupling"), ("tail-check", "tail-check")):
        sp = sub.add_parser(name)
        _common(sp)
        sp.set_defaults(kind=kind)
    scan = sub.add_parser("scan")
    scan.add_argument("what", choices=sorted(SCANS))
    _common(scan)
    lem = sub.add_parser("lemma-check")
    lem.add_argument("suite", help="jacobi, matrix-ode, triangle, two-point, lyapunov or all")
    lem.add_argument("--manifold", help="kind:ambient_dim, e.g. hyperboloid:3")
    lem.add_argument("--trials", type=int)
    _common(lem)
    w1 = sub.add_parser("w1")
    w1.add_argument("cloud_a")
    w1.add_argument("cloud_b")
    w1.add_argument("--manifold", required=True, help="kind:ambient_dim, e.g. sphere:3")
    w1.add_argument("--out", metavar="DIR")
    sm = sub.add_parser("summarize")
    sm.add_argument("csv", nargs="+")
    return ap


def _manifold_arg(s):
    kind, _, dim = s.partition(":")
    try:
        return {"kind": kind, "ambient_dim": int(dim or 3)}
    except ValueError:
        raise UsageError(f"bad manifold {s!r}; expected kind:ambient_dim") from None


def _config(args, kind):
    over = load_config(args.config) if args.config else {}
    if over.get("kind", kind) != kind:
        raise ConfigError(f"config kind {over['kind']!r} does not match the '{args.command}' command")
    if args.seed is not None:
        over["seed"] = args.seed
    if args.command == "lemma-check":
        over["params"] = {**over.get("params", {}), "suite": args.suite}
        if args.manifold:
            over["manifold"] = _manifold_arg(args.manifold)
        if args.trials is not None:
            over["reps"] = args.trials
    return resolve(kind, over)


def _read_cloud(path, m):
    try:
        pts = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as e:
        raise InvalidInputError(f"cannot read cloud {path}: {e}") from None
    return SampleCloud(m, pts, os.path.basename(path))


def cmd_w1(args):
    m = make_manifold(**_manifold_arg(args.manifold))
    A, B = _read_cloud(args.cloud_a, m), _read_cloud(args.cloud_b, m)
    res = wasserstein1(A, B)
    print(repr(res.value))
    out_dir = args.out or os.environ.get(OUT_ENV) or "."
    lines = [f"# w1: {res.value!r}", f"# cost_matrix_checksum: {res.cost_matrix_checksum}", "row,col"]
    lines += [f"{i},{j}" for i, j in enumerate(res.assignment)]
    write_atomic(os.path.join(out_dir, "assignment.csv"), "\n".join(lines) + "\n")
    return 0


def cmd_summarize(args):
    verdicts = summarize(args.csv)
    for v in verdicts:
        print(v.line())
    return 1 if any(v.status == "FAIL" for v in verdicts) else 0


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command == "w1":
            return cmd_w1(args)
        if args.command == "summarize":
            return cmd_summarize(args)
        kind = SCANS[args.what] if args.command == "scan" else "lemma-check" if args.command == "lemma-check" else args.kind
        cfg = _config(args, kind)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        path, _ = run(cfg, threads=args.threads, out_dir=args.out)
        print(path)
        return 0
    except SystemExit:
        raise
    except Exception as e:  # every failure becomes one JSON record
        rec = {"error": type(e).__name__, "message": str(e)}
        if isinstance(e, DivergenceError):
            rec["step"] = e.step
        if not isinstance(e, (UsageError, ConfigError, InvalidInputError, DivergenceError, FloatingPointError)):
            rec["unexpected"] = True
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
