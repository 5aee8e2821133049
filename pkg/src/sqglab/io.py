"""Snapshot files, extension dumps, config files and JSON-lines records.

Snapshot layout::

    SQGLAB1\\n
    N=<int> L=<float> t=<float> alpha=<float> kappa=<float>\\n
    N*N little-endian float64, row-major

Extension dumps add ``J=<int> zmin=<float> rho=<float>`` to the header and
store ``J + 2`` layers: the boundary ``z = 0`` followed by the geometric
layers ``zmin * rho**j``, ``j = 0..J``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .extension import ExtensionConfig, ExtensionField
from .solver import VELOCITY_LAWS, SimConfig
from .spectral import Grid, PhysicalField, SpectralField, forward_transform, inverse_transform

MAGIC = b"SQGLAB1\n"
_HEADER_MAX = 4096


class FormatError(ValueError):
    """Malformed snapshot, dump or config file."""


def fmt_float(x) -> str:
    """17 significant digits, enough to round-trip any float64."""
    return format(float(x), ".17g")


# --- snapshots -----------------------------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    field: PhysicalField
    time: float
    alpha: float
    kappa: float
    extra: dict = dataclasses.field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.field.grid


def _atomic_write(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(tokens: dict) -> bytes:
    return (" ".join(f"{k}={v}" for k, v in tokens.items()) + "\n").encode("ascii")


def _physical_values(field) -> tuple[Grid, np.ndarray]:
    if isinstance(field, SpectralField):
        field = inverse_transform(field)
    if not isinstance(field, PhysicalField):
        raise TypeError("expected a PhysicalField or SpectralField")
    return field.grid, field.values


def snapshot_bytes(field, time: float, alpha: float, kappa: float) -> bytes:
    grid, values = _physical_values(field)
    head = _header({"N": grid.n, "L": fmt_float(grid.length), "t": fmt_float(time),
                    "alpha": fmt_float(alpha), "kappa": fmt_float(kappa)})
    return MAGIC + head + np.ascontiguousarray(values, dtype="<f8").tobytes()


def snapshot_write(path, field, time: float, alpha: float, kappa: float):
    """Write a snapshot atomically; spectral input is transformed first."""
    _atomic_write(path, snapshot_bytes(field, time, alpha, kappa))


def _parse(data: bytes):
    if not data.startswith(MAGIC):
        raise FormatError("bad magic bytes")
    end = data.find(b"\n", len(MAGIC), len(MAGIC) + _HEADER_MAX)
    if end < 0:
        raise FormatError("truncated or missing header line")
    try:
        text = data[len(MAGIC):end].decode("ascii")
        tokens = dict(tok.split("=", 1) for tok in text.split())
    except (UnicodeDecodeError, ValueError):
        raise FormatError("unreadable header line") from None
    return tokens, data[end + 1:]


def _require(tokens, keys):
    missing = [k for k in keys if k not in tokens]
    if missing:
        raise FormatError(f"header lacks {', '.join(missing)}")
    try:
        n = int(tokens["N"])
        vals = {k: float(tokens[k]) for k in keys if k != "N"}
    except ValueError:
        raise FormatError("non-numeric header token") from None
    return n, vals


def _payload(raw: bytes, count: int) -> np.ndarray:
    if len(raw) != 8 * count:
        raise FormatError(f"payload has {len(raw)} bytes, header implies {8 * count}")
    return np.frombuffer(raw, dtype="<f8").astype(float)


def snapshot_read(path) -> Snapshot:
    tokens, raw = _parse(Path(path).read_bytes())
    n, vals = _require(tokens, ("N", "L", "t", "alpha", "kappa"))
    try:
        grid = Grid(n, vals["L"])
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    values = _payload(raw, n * n).reshape(n, n)
    return Snapshot(PhysicalField(grid, values), vals["t"], vals["alpha"], vals["kappa"])


# --- extension dumps ------------------------------------------------------------------

def extension_write(path, ext: ExtensionField, cfg: ExtensionConfig, time: float, kappa: float):
    z = ext.z
    if cfg.z_values is not None:
        raise ValueError("only geometric z-grids can be dumped")
    zmin, rho = float(z[1]), float(cfg.rho)
    g = ext.grid
    layers = np.fft.ifft2(ext.coefficients, axes=(-2, -1)).real * g.n**2
    head = _header({"N": g.n, "L": fmt_float(g.length), "t": fmt_float(time),
                    "alpha": fmt_float(ext.alpha), "kappa": fmt_float(kappa),
                    "J": len(z) - 2, "zmin": fmt_float(zmin), "rho": fmt_float(rho)})
    _atomic_write(path, MAGIC + head + np.ascontiguousarray(layers, dtype="<f8").tobytes())


def extension_read(path):
    """Returns ``(ExtensionField, ExtensionConfig, time, kappa)``."""
    tokens, raw = _parse(Path(path).read_bytes())
    n, vals = _require(tokens, ("N", "L", "t", "alpha", "kappa", "zmin", "rho"))
    try:
        J = int(tokens["J"])
    except (KeyError, ValueError):
        raise FormatError("header lacks an integer J") from None
    grid = Grid(n, vals["L"])
    layers = _payload(raw, (J + 2) * n * n).reshape(J + 2, n, n)
    cfg = ExtensionConfig(vals["alpha"], z_min=vals["zmin"], rho=vals["rho"], J=J)
    z = cfg.z_grid(grid.length)
    coeffs = np.fft.fft2(layers, axes=(-2, -1)) / n**2
    return ExtensionField(grid, z, coeffs, vals["alpha"]), cfg, vals["t"], vals["kappa"]


# --- config files ----------------------------------------------------------------------

def parse_key_values(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_scalar(value: str):
    """``true/false``, int, float, else the raw string."""
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def _parse_grid(value: str) -> Grid:
    # "N" or "N,L"
    parts = [p.strip() for p in value.split(",")]
    try:
        if len(parts) == 1:
            return Grid(int(parts[0]))
        if len(parts) == 2:
            return Grid(int(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise FormatError(f"bad grid {value!r}: {exc}") from None
    raise FormatError(f"bad grid {value!r}; use N or N,L")


SIM_KEYS = ("grid", "kappa", "alpha", "dt", "t_end", "dealias", "velocity_law", "snapshot_stride")


def sim_config_from_dict(d: dict) -> SimConfig:
    unknown = set(d) - set(SIM_KEYS) - {"cfl", "blowup_factor"}
    if unknown:
        raise FormatError(f"unknown SimConfig keys: {sorted(unknown)}")
    for key in ("grid", "kappa", "alpha", "dt", "t_end"):
        if key not in d:
            raise FormatError(f"missing SimConfig key {key!r}")
    if d.get("velocity_law", "sqg") == "custom":
        raise FormatError("velocity_law=custom needs a multiplier table and cannot come from a file")
    if d.get("velocity_law", "sqg") not in VELOCITY_LAWS:
        raise FormatError(f"velocity_law must be one of {VELOCITY_LAWS}")
    kw = {}
    for key, value in d.items():
        if key == "grid":
            kw[key] = value if isinstance(value, Grid) else _parse_grid(str(value))
        elif key == "velocity_law":
            kw[key] = str(value)
        elif key == "dealias":
            v = parse_scalar(str(value))
            if not isinstance(v, bool):
                raise FormatError("dealias must be true or false")
            kw[key] = v
        elif key == "snapshot_stride":
            kw[key] = int(value)
        else:
            kw[key] = float(value)
    try:
        return SimConfig(**kw)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_sim_config(path) -> SimConfig:
    return sim_config_from_dict(parse_key_values(Path(path).read_text()))


def sim_config_to_text(cfg: SimConfig) -> str:
    if cfg.velocity_law == "custom":
        raise ValueError("custom multiplier tables have no text form")
    lines = [f"grid={cfg.grid.n},{fmt_float(cfg.grid.length)}",
             f"kappa={fmt_float(cfg.kappa)}", f"alpha={fmt_float(cfg.alpha)}",
             f"dt={fmt_float(cfg.dt)}", f"t_end={fmt_float(cfg.t_end)}",
             f"dealias={'true' if cfg.dealias else 'false'}",
             f"velocity_law={cfg.velocity_law}", f"snapshot_stride={cfg.snapshot_stride}"]
    return "\n".join(lines) + "\n"


# --- JSON with fixed float precision ---------------------------------------------------

def _encode(obj) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        s = fmt_float(x)
        # keep a float marker so the value reads back as float
        return s if any(c in s for c in ".en") else s + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float at 17 significant digits."""
    return _encode(obj)


def write_jsonl(path, records):
    text = "".join(dumps(r) + "\n" for r in records)
    _atomic_write(path, text.encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_json(path, obj):
    _atomic_write(path, (dumps(obj) + "\n").encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def spectral_from_snapshot(snap: Snapshot) -> SpectralField:
    return forward_transform(snap.field)
