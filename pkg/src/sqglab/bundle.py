"""Experiment specs and report bundles.

Bundle layout under the output directory::

    manifest.json          config echo, versions, seed, file hashes
    config.txt             the experiment spec as read
    snapshots/snap_*.sqg   trajectory snapshots (see :mod:`sqglab.io`)
    checks/<name>.jsonl    one record per check instance
    csv/*.csv              plot-ready tables

The manifest lists a SHA-256 for every other file plus a combined digest.
Timestamps appear only in the manifest.
"""

from __future__ import annotations

import hashlib
import platform
import sys
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checks import REGISTRY, Context, run_check
from .extension import ExtensionConfig
from .io import (FormatError, fmt_float, parse_key_values, parse_scalar, read_jsonl,
                 sha256_file, sim_config_from_dict, sim_config_to_text, snapshot_write,
                 write_json, write_jsonl)
from .solver import BlowUpError, SimConfig, run
from .spectral import PhysicalField, random_field
from .tolerances import judge

FORMAT = "sqglab-bundle-1"
DEFAULT_CHECKS = tuple(REGISTRY)
_EXT_KEYS = {"z_min": float, "rho": float, "J": int, "method": str}
_INIT_KEYS = {"kmax": float, "slope": float, "amplitude": float}


class BundleError(RuntimeError):
    """Missing or corrupt bundle."""


@dataclass
class ExperimentSpec:
    sim: SimConfig
    extension: ExtensionConfig | None
    checks: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: Path | None = None
    init: dict = field(default_factory=dict)
    write_snapshots: bool = True
    workers: int = 1

    def __post_init__(self):
        unknown = set(self.checks) - set(REGISTRY)
        if unknown:
            raise ValueError(f"unknown checks: {sorted(unknown)}")

    def initial_data(self) -> PhysicalField:
        kw = {k: v for k, v in self.init.items()}
        return random_field(self.sim.grid, seed=self.seed, **kw)

    def echo(self) -> dict:
        ext = None
        if self.extension is not None:
            e = self.extension
            ext = {"alpha": e.alpha, "z_min": e.z_min, "rho": e.rho, "J": e.J, "method": e.method}
        return {"sim": parse_key_values(sim_config_to_text(self.sim)), "extension": ext,
                "checks": {k: v for k, v in self.checks.items()}, "seed": self.seed,
                "init": dict(self.init)}


def spec_from_text(text: str, output_dir=None) -> ExperimentSpec:
    """Flat ``key=value`` file.

    SimConfig fields use their own names.  Other keys: ``seed``, ``checks``
    (comma list, ``all`` or ``none``), ``workers``, ``write_snapshots``,
    ``extension.<field>``, ``init.<kmax|slope|amplitude>`` and
    ``check.<name>.<param>`` overrides.  Comma-separated override values
    become lists.
    """
    kv = parse_key_values(text)
    sim_kv, ext_kv, init_kv, overrides = {}, {}, {}, {}
    seed, workers, write_snaps = 0, 1, True
    names = list(DEFAULT_CHECKS)
    for key, value in kv.items():
        if key == "seed":
            seed = int(value)
        elif key == "workers":
            workers = int(value)
        elif key == "write_snapshots":
            write_snaps = parse_scalar(value) is True
        elif key == "checks":
            v = value.strip().lower()
            names = list(DEFAULT_CHECKS) if v == "all" else [] if v in ("none", "") else \
                [s.strip() for s in value.split(",") if s.strip()]
        elif key.startswith("extension."):
            name = key.split(".", 1)[1]
            if name == "alpha":
                ext_kv["alpha"] = float(value)
            elif name in _EXT_KEYS:
                ext_kv[name] = _EXT_KEYS[name](value)
            else:
                raise FormatError(f"unknown extension key {key!r}")
        elif key.startswith("init."):
            name = key.split(".", 1)[1]
            if name not in _INIT_KEYS:
                raise FormatError(f"unknown init key {key!r}")
            init_kv[name] = _INIT_KEYS[name](value)
        elif key.startswith("check."):
            parts = key.split(".")
            if len(parts) != 3:
                raise FormatError(f"override {key!r} must read check.<name>.<param>")
            items = [parse_scalar(s.strip()) for s in value.split(",")]
            overrides.setdefault(parts[1], {})[parts[2]] = items[0] if len(items) == 1 else items
        else:
            sim_kv[key] = value
    sim = sim_config_from_dict(sim_kv)
    unknown = (set(names) | set(overrides)) - set(REGISTRY)
    if unknown:
        raise FormatError(f"unknown checks: {sorted(unknown)}")
    checks = {n: overrides.get(n, {}) for n in names}
    ext = None
    if sim.alpha < 1:
        alpha = ext_kv.pop("alpha", sim.alpha)
        if alpha != sim.alpha:
            raise FormatError("extension.alpha must equal alpha")
        ext = ExtensionConfig(alpha, **ext_kv)
    return ExperimentSpec(sim, ext, checks, seed, Path(output_dir) if output_dir else None,
                          init_kv, write_snaps, workers)


def load_spec(path, output_dir=None) -> ExperimentSpec:
    return spec_from_text(Path(path).read_text(), output_dir)


def _versions() -> dict:
    return {"sqglab": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform()}


def _digest(files: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(f"{name}\0{files[name]}\n".encode())
    return h.hexdigest()


def _error_record(name, params, exc, spec) -> dict:
    return {"check": name, "quantity": None, "value": None, "params": params,
            "grid": {"N": spec.sim.grid.n, "L": spec.sim.grid.length}, "seed": spec.seed,
            "status": "error", "error": f"{type(exc).__name__}: {exc}", "pass": False}


def _csv_tables(ctx: Context) -> dict:
    out = {}
    prof = ctx.cache.get("oscillation_profile")
    if prof is not None:
        rows = ["scale,osc,error"]
        rows += [f"{fmt_float(s)},{fmt_float(o)},{fmt_float(e)}"
                 for s, o, e in zip(prof.scales, prof.osc, prof.errors)]
        out["oscillation.csv"] = "\n".join(rows) + "\n"
    traj = ctx.traj
    if traj is not None:
        from .spectral import l2_norm, sup_norm
        rows = ["time,l2,sup"]
        rows += [f"{fmt_float(t)},{fmt_float(l2_norm(s))},{fmt_float(sup_norm(s))}" for t, s in traj]
        out["norms.csv"] = "\n".join(rows) + "\n"
    return out


def cmd_run(spec: ExperimentSpec, out=None, config_text: str | None = None) -> "ReportBundle":
    """Simulate, run the requested checks and write the bundle."""
    out = out if out is not None else spec.output_dir
    if out is None:
        raise ValueError("no output directory")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    theta0 = spec.initial_data()
    complete = True
    problems = []
    try:
        traj = run(spec.sim, theta0)
    except BlowUpError as exc:
        traj = exc.trajectory
        complete = False
        problems.append(str(exc))
    snap_index = []
    if spec.write_snapshots and traj is not None:
        for i, (t, s) in enumerate(traj):
            rel = f"snapshots/snap_{i:05d}.sqg"
            snapshot_write(out / rel, s, t, spec.sim.alpha, spec.sim.kappa)
            snap_index.append({"file": rel, "time": t})
    ctx = Context(spec.sim, theta0, traj, spec.extension, spec.seed)

    def work(item):
        name, params = item
        try:
            return name, run_check(name, ctx, params), None
        except Exception as exc:  # recorded, the bundle is marked incomplete
            return name, [_error_record(name, params, exc, spec)], exc

    items = list(spec.checks.items()) if traj is not None and len(traj) > 0 else []
    with ThreadPoolExecutor(max_workers=max(1, spec.workers)) as pool:
        results = list(pool.map(work, items))
    for name, records, exc in results:
        write_jsonl(out / "checks" / f"{name}.jsonl", records)
        if exc is not None:
            complete = False
            problems.append(f"{name}: {exc}")
    for fname, text in _csv_tables(ctx).items():
        p = out / "csv" / fname
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    (out / "config.txt").write_text(config_text if config_text is not None else
                                    sim_config_to_text(spec.sim))
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = sha256_file(p)
    manifest = {"format": FORMAT, "config": spec.echo(), "seed": spec.seed, "versions": _versions(),
                "created": _time.strftime("%Y-%m-%dT%H:%M:%SZ", _time.gmtime()),
                "complete": complete, "problems": problems, "checks": list(spec.checks),
                "snapshots": snap_index, "files": files, "digest": _digest(files)}
    write_json(out / "manifest.json", manifest)
    return ReportBundle(out, manifest)


@dataclass(frozen=True)
class ReportBundle:
    """A written bundle: its directory and manifest."""

    path: Path
    manifest: dict

    @property
    def complete(self) -> bool:
        return bool(self.manifest["complete"])

    @property
    def files(self) -> dict:
        return self.manifest["files"]

    def records(self, check: str) -> list[dict]:
        return read_jsonl(self.path / "checks" / f"{check}.jsonl")


@dataclass
class VerifyResult:
    ok: bool
    lines: list

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def summary(self) -> str:
        return "\n".join(self.lines)


def cmd_verify(path) -> VerifyResult:
    """Re-check hashes and re-judge every record against the tolerance table.

    Raises :class:`BundleError` when there is no readable bundle.
    """
    import json

    root = Path(path)
    man_path = root / "manifest.json"
    if not root.is_dir() or not man_path.is_file():
        raise BundleError(f"no bundle at {root} (manifest.json missing)")
    try:
        manifest = json.loads(man_path.read_text())
        files = manifest["files"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise BundleError(f"corrupt manifest: {exc}") from None
    lines, ok = [], True
    if manifest.get("format") != FORMAT:
        raise BundleError(f"unknown bundle format {manifest.get('format')!r}")
    if _digest(files) != manifest.get("digest"):
        ok = False
        lines.append("FAIL manifest digest does not cover the listed files")
    for rel, digest in sorted(files.items()):
        p = root / rel
        if not p.is_file():
            ok = False
            lines.append(f"FAIL missing file {rel}")
        elif sha256_file(p) != digest:
            ok = False
            lines.append(f"FAIL hash mismatch {rel}")
    extra = sorted(p.relative_to(root).as_posix() for p in root.rglob("*")
                   if p.is_file() and p.name != "manifest.json" and
                   p.relative_to(root).as_posix() not in files)
    for rel in extra:
        ok = False
        lines.append(f"FAIL unlisted file {rel}")
    if not manifest.get("complete", False):
        ok = False
        lines.append("FAIL bundle marked incomplete: " + "; ".join(manifest.get("problems", [])))
    for name in manifest.get("checks", []):
        p = root / "checks" / f"{name}.jsonl"
        if not p.is_file():
            continue
        try:
            recs = read_jsonl(p)
        except FormatError as exc:
            ok = False
            lines.append(f"FAIL {exc}")
            continue
        for r in recs:
            try:
                good = judge(r)
            except KeyError as exc:
                good = False
                lines.append(f"FAIL {name}: {exc}")
            label = r.get("quantity") or r.get("status")
            value = r.get("value")
            shown = "-" if value is None else f"{value:.6g}"
            lines.append(f"{'pass' if good else 'FAIL'} {name}/{label} = {shown}")
            ok &= good
    lines.append("OK" if ok else "VIOLATIONS FOUND")
    return VerifyResult(ok, lines)
