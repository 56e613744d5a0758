"""Field files, run configurations and reports.

FNS1 layout (all little endian)::

    bytes  0-3   magic b"FNS1"
    bytes  4-7   format version (u32, currently 1)
    bytes  8-11  kind (u32): 0 plain field, 1 extended field
    bytes 12-15  length of the header extension block in bytes (u32)
    u32 n_per_dim, u32 components, f64 box_length, f64 s
    header extension block
    f64 samples

Samples are written component by component with the first spatial index
fastest (``x1`` fastest, ``x3`` slowest). A plain field with no dissipation
order stores ``s = NaN``. An extended field stacks the boundary trace
(``y = 0``) followed by one frame per ``y`` level; its extension block is
``u32 level_count`` followed by the levels as f64.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .extension import ExtendedField
from .spectral import TorusGrid

MAGIC = b"FNS1"
VERSION = 1
KIND_FIELD = 0
KIND_EXTENDED = 1
_PREAMBLE = struct.Struct("<4sIII")
_HEADER = struct.Struct("<IIdd")
HEADER_BYTES = _PREAMBLE.size + _HEADER.size

REPORT_SCHEMA_VERSION = "fracns-report/1"


class FieldFormatError(ValueError):
    """A field file is malformed, truncated or of an unexpected kind."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


@dataclass
class FieldFile:
    """Contents of an FNS1 file.

    ``data`` has shape ``(n, n, n)`` for scalars, ``(c, n, n, n)`` otherwise,
    with a leading level axis for extended fields. ``s`` is ``None`` when the
    file stores NaN.
    """

    data: np.ndarray
    L: float
    s: float | None = None
    y_levels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.n, self.L)


def _as_components(data: np.ndarray) -> np.ndarray:
    if data.ndim == 3:
        return data[None]
    if data.ndim == 4:
        return data
    raise FieldFormatError(f"field must have 3 or 4 axes, got {data.ndim}")


def _encode(data: np.ndarray) -> bytes:
    comps = _as_components(np.asarray(data, dtype=float))
    n = comps.shape[-1]
    if comps.shape[1:] != (n, n, n):
        raise FieldFormatError(f"field must be cubic, got spatial shape {comps.shape[1:]}")
    # x1 fastest: reverse the spatial axes before a C-order dump
    return np.ascontiguousarray(comps.transpose(0, 3, 2, 1)).astype("<f8", copy=False).tobytes()


def _decode(buf: bytes, comps: int, n: int) -> np.ndarray:
    arr = np.frombuffer(buf, dtype="<f8").reshape(comps, n, n, n).transpose(0, 3, 2, 1)
    arr = np.ascontiguousarray(arr, dtype=float)
    return arr[0] if comps == 1 else arr


def _header(kind: int, ext: bytes, n: int, comps: int, L: float, s: float | None) -> bytes:
    s_val = math.nan if s is None else float(s)
    return _PREAMBLE.pack(MAGIC, VERSION, kind, len(ext)) + _HEADER.pack(n, comps, float(L), s_val) + ext


def write_field(path, data: np.ndarray, L: float = 2 * np.pi, s: float | None = None) -> Path:
    """Write a scalar ``(n, n, n)`` or vector ``(c, n, n, n)`` field."""
    data = np.asarray(data, dtype=float)
    comps = _as_components(data)
    body = _encode(comps)
    path = Path(path)
    path.write_bytes(_header(KIND_FIELD, b"", comps.shape[-1], comps.shape[0], L, s) + body)
    return path


def write_extended(path, ext: ExtendedField) -> Path:
    """Write an extension as stacked frames: the trace, then one per ``y`` level."""
    values = np.concatenate([ext.boundary[None], ext.values])
    comps = values.shape[1] if values.ndim == 5 else 1
    block = struct.pack("<I", ext.y_levels.size) + np.asarray(ext.y_levels, dtype="<f8").tobytes()
    body = b"".join(_encode(v) for v in values)
    path = Path(path)
    path.write_bytes(_header(KIND_EXTENDED, block, ext.grid.n, comps, ext.grid.L, ext.s) + body)
    return path


def _parse(raw: bytes, path) -> tuple[int, int, int, float, float | None, bytes, bytes]:
    if len(raw) < HEADER_BYTES:
        raise FieldFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, kind, ext_len = _PREAMBLE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"{path}: unsupported format version {version}")
    if kind not in (KIND_FIELD, KIND_EXTENDED):
        raise FieldFormatError(f"{path}: unknown kind {kind}")
    n, comps, L, s = _HEADER.unpack_from(raw, _PREAMBLE.size)
    if n < 2 or comps < 1 or not (math.isfinite(L) and L > 0):
        raise FieldFormatError(f"{path}: invalid header (n={n}, components={comps}, L={L})")
    if len(raw) < HEADER_BYTES + ext_len:
        raise FieldFormatError(f"{path}: truncated header extension block")
    ext = raw[HEADER_BYTES:HEADER_BYTES + ext_len]
    body = raw[HEADER_BYTES + ext_len:]
    return kind, n, comps, L, (None if math.isnan(s) else s), ext, body


def _check_body(body: bytes, expected: int, path) -> None:
    if len(body) < expected:
        raise FieldFormatError(f"{path}: truncated data ({len(body)} of {expected} bytes)")
    if len(body) > expected:
        raise FieldFormatError(f"{path}: {len(body) - expected} trailing bytes")


def read_field(path) -> FieldFile:
    """Read a plain or extended FNS1 file.

    For extended files ``data[0]`` is the trace and ``data[k]`` the frame at
    ``y_levels[k - 1]``.
    """
    raw = Path(path).read_bytes()
    kind, n, comps, L, s, ext, body = _parse(raw, path)
    frame = 8 * comps * n**3
    if kind == KIND_FIELD:
        if ext:
            raise FieldFormatError(f"{path}: plain field with a header extension block")
        _check_body(body, frame, path)
        return FieldFile(_decode(body, comps, n), L, s)
    if len(ext) < 4:
        raise FieldFormatError(f"{path}: missing level table")
    (count,) = struct.unpack_from("<I", ext, 0)
    if len(ext) != 4 + 8 * count or count == 0:
        raise FieldFormatError(f"{path}: level table length does not match its count")
    levels = np.frombuffer(ext, dtype="<f8", offset=4).astype(float)
    if np.any(~np.isfinite(levels)) or levels[0] <= 0 or np.any(np.diff(levels) <= 0):
        raise FieldFormatError(f"{path}: level table must be positive and increasing")
    _check_body(body, (count + 1) * frame, path)
    data = np.stack([_decode(body[k * frame:(k + 1) * frame], comps, n) for k in range(count + 1)])
    return FieldFile(data, L, s, levels)


def read_extended(path) -> ExtendedField:
    """Rebuild an :class:`ExtendedField` from its stored trace and level table."""
    ff = read_field(path)
    if ff.y_levels is None:
        raise FieldFormatError(f"{path}: not an extended field")
    if ff.s is None:
        raise FieldFormatError(f"{path}: extended field without a dissipation order")
    return ExtendedField(ff.grid, ff.s, ff.y_levels, ff.data[0])


# Trajectories ----------------------------------------------------------------------

def _frame_name(k: int, prefix: str = "frame") -> str:
    return f"{prefix}_{k:05d}.fns"


def write_trajectory(out_dir, traj, config: dict | None = None) -> Path:
    """Frame files, optional pressure files, ``manifest.json`` and ``energy.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L = traj.grid.L
    for k, u in enumerate(traj.frames):
        write_field(out / _frame_name(k), u, L, traj.s)
    if traj.pressure is not None:
        for k, p in enumerate(traj.pressure):
            write_field(out / _frame_name(k, "pressure"), p, L, traj.s)
    rows = [(float(t), float(e), float(d), float(r))
            for t, e, d, r in zip(traj.times, traj.energy, traj.dissipation, traj.energy_residual)]
    write_csv(out / "energy.csv", ["t", "energy", "dissipation", "residual"], rows)
    manifest = {
        "format": "fracns-trajectory/1",
        "n": traj.grid.n,
        "L": L,
        "s": traj.s,
        "times": [float(t) for t in traj.times],
        "frames": [_frame_name(k) for k in range(len(traj))],
        "pressure": None if traj.pressure is None else [_frame_name(k, "pressure") for k in range(len(traj))],
        "energy": [float(e) for e in traj.energy],
        "dissipation": [float(d) for d in traj.dissipation],
        "solver": None if traj.config is None else traj.config.as_dict(),
        "config": config,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def read_trajectory(in_dir):
    """Inverse of :func:`write_trajectory`."""
    from .solver import SolverConfig, Trajectory

    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FieldFormatError(f"{src}: no manifest.json") from exc
    frames = [read_field(src / name).data for name in manifest["frames"]]
    pressure = None
    if manifest.get("pressure"):
        pressure = [read_field(src / name).data for name in manifest["pressure"]]
    grid = TorusGrid(manifest["n"], manifest["L"])
    cfg = SolverConfig(**manifest["solver"]) if manifest.get("solver") else None
    return Trajectory(grid, manifest["s"], np.asarray(manifest["times"]), frames,
                      np.asarray(manifest["energy"]), np.asarray(manifest["dissipation"]), cfg, pressure)


# Configuration ---------------------------------------------------------------------

_NUMBER_LIST = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["mode", "s", "grid"],
    "properties": {
        "mode": {"enum": ["simulate", "diagnose", "scan"]},
        "s": {"type": "number", "exclusiveMinimum": 0.75, "exclusiveMaximum": 1},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n"],
            "properties": {
                "n": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "minimum": 0},
                "integrator": {"enum": ["etdrk2", "etdrk4"]},
                "seed": {"type": "integer", "minimum": 0},
                "output_dt": {"type": "number", "exclusiveMinimum": 0},
                "nonlinear": {"type": "boolean"},
                "store_pressure": {"type": "boolean"},
                "initial": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["taylor_green", "random_band", "localized_bump"]},
                        "params": {"type": "object"},
                    },
                },
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cylinder_ladder": _NUMBER_LIST,
                "eps": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "auto"}]},
                "lambda_ladder": _NUMBER_LIST,
            },
        },
        "output": {"type": "string"},
    },
}


def validate_config(cfg: dict) -> dict:
    """Validate against :data:`RUN_CONFIG_SCHEMA`; the error names the offending path."""
    validator = jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"config error at {err.json_path}: {err.message}")
    return cfg


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config error at $: cannot read {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config error at $: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    """Content hash of the canonical JSON form (sorted keys, compact separators)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(b"blob %d\0" % len(canon) + canon).hexdigest()


def solver_config(cfg: dict):
    from .solver import SolverConfig

    solver = dict(cfg.get("solver", {}))
    solver.pop("initial", None)
    grid = cfg["grid"]
    return SolverConfig(s=cfg["s"], n=grid["n"], L=grid.get("L", 2 * np.pi), **solver)


# Reports -----------------------------------------------------------------------------

TIMING_KEYS = ("timing",)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def make_report(operation: str, results: dict, cfg: dict | None = None, provenance: dict | None = None,
                timing: dict | None = None) -> dict:
    """Report dict; every number is tagged by ``operation`` and the config hash."""
    prov = dict(provenance or {})
    if cfg is not None:
        prov.setdefault("seed", cfg.get("solver", {}).get("seed", 0))
        prov.setdefault("resolution", cfg["grid"]["n"])
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "operation": operation,
        "config_hash": None if cfg is None else config_hash(cfg),
        "provenance": _jsonable(prov),
        "results": _jsonable(results),
        "timing": _jsonable(timing or {}),
    }


def write_report(path, report: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return path


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}


def report_versions(directory) -> set[str]:
    """Schema versions of every ``*.json`` report in ``directory`` (manifests excluded)."""
    versions = set()
    for p in sorted(Path(directory).glob("*.json")):
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and "operation" in doc:
            versions.add(doc.get("schema_version"))
    return versions


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def svg_plot(path, series: dict, xlabel: str = "", ylabel: str = "", logx: bool = False,
             logy: bool = False, width: int = 480, height: int = 320) -> Path:
    """Minimal line plot. ``series`` maps a label to ``(x, y)`` arrays."""
    pad = 48
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

    def tx(v, log):
        v = np.asarray(v, dtype=float)
        return np.log10(v) if log else v

    pts = {k: (tx(x, logx), tx(y, logy)) for k, (x, y) in series.items()}
    finite = [(x[np.isfinite(x) & np.isfinite(y)], y[np.isfinite(x) & np.isfinite(y)]) for x, y in pts.values()]
    xs = np.concatenate([f[0] for f in finite]) if finite else np.array([0.0, 1.0])
    ys = np.concatenate([f[1] for f in finite]) if finite else np.array([0.0, 1.0])
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    x1, y1 = (x1 if x1 > x0 else x0 + 1), (y1 if y1 > y0 else y0 + 1)

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           'fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
           f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{ylabel}</text>']
    for i, (label, (x, y)) in enumerate(zip(pts, finite)):
        c = colors[i % len(colors)]
        poly = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{c}" points="{poly}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (i + 1)}" fill="{c}" font-size="11">{label}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out))
    return path
