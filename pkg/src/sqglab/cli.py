"""Command-line entry point: ``sqglab run | verify | diagnose``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bundle import BundleError, cmd_run, cmd_verify, load_spec
from .checks import REGISTRY, SNAPSHOT_CHECKS, Context, run_check
from .extension import ExtensionConfig
from .io import FormatError, dumps, parse_scalar, snapshot_read
from .solver import SimConfig
from .tolerances import judge


def _param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    items = [parse_scalar(v.strip()) for v in value.split(",")]
    return key.strip(), items[0] if len(items) == 1 else items


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sqglab", description="Dissipative QG simulator and diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate and write a report bundle")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    v = sub.add_parser("verify", help="re-check a bundle; nonzero exit on any violation")
    v.add_argument("bundle", type=Path)
    v.add_argument("--quiet", action="store_true", help="print only the verdict")
    d = sub.add_parser("diagnose", help="run one check on a snapshot file")
    d.add_argument("--snapshot", required=True, type=Path)
    d.add_argument("--check", required=True, choices=sorted(SNAPSHOT_CHECKS))
    d.add_argument("--param", action="append", default=[], type=_param, metavar="K=V")
    return ap


def _run(args) -> int:
    spec = load_spec(args.config, args.out)
    manifest = cmd_run(spec, args.out, args.config.read_text()).manifest
    status = "complete" if manifest["complete"] else "INCOMPLETE"
    print(f"bundle written to {args.out} ({status}, {len(manifest['files'])} files)")
    for p in manifest["problems"]:
        print(f"  problem: {p}", file=sys.stderr)
    return 0 if manifest["complete"] else 1


def _verify(args) -> int:
    res = cmd_verify(args.bundle)
    print(res.lines[-1] if args.quiet else res.summary())
    return res.exit_code


def _diagnose(args) -> int:
    snap = snapshot_read(args.snapshot)
    params = dict(args.param)
    cfg = SimConfig(snap.grid, kappa=snap.kappa, alpha=snap.alpha, dt=1.0, t_end=0.0)
    ext = ExtensionConfig(snap.alpha) if snap.alpha < 1 else None
    seed = int(params.pop("seed", 0))
    ctx = Context(cfg, snap.field, None, ext, seed, snap.time)
    records = run_check(args.check, ctx, params)
    for rec in records:
        print(dumps(rec))
    return 0 if all(judge(r) for r in records) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _run, "verify": _verify, "diagnose": _diagnose}[args.command]
    try:
        return handler(args)
    except (BundleError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
