"""Binary grid I/O, config parsing, hashing, and run manifests.

File format (little-endian):
  header: magic "FRLB", u32 version, u32 kind, u32 n, u32 cells,
          f64 lower, f64 upper
  kind 1 (fields): u32 m, then m * (cells+1)^n float64 node values (C order)
  kind 2 (mask):   (cells+1)^n uint8 node flags (0/1)
  kind 3 (slab):   f64 a, f64 gamma, u32 J, (J+1) float64 y-nodes,
                   (cells+1)^n * (J+1) float64 values (x-major)
All writes are atomic (temp file + rename). Config files are flat KEY = VALUE
text with # comments.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "write_mask",
    "read_mask",
    "write_fields",
    "read_fields",
    "write_slab_field",
    "read_slab_field",
    "sha256_file",
    "atomic_write_bytes",
    "atomic_write_text",
    "parse_config",
    "format_config",
    "RunManifest",
]

_MAGIC = b"FRLB"
_VERSION = 1
_HDR = struct.Struct("<4sIIII dd")
_KIND_FIELDS, _KIND_MASK, _KIND_SLAB = 1, 2, 3


class CompatibilityError(Exception):
    """Input files disagree on format version or grid geometry."""


class ConfigError(Exception):
    """A config file failed to parse; message names the offending line."""


def atomic_write_bytes(path, payload):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _header(kind, grid):
    return _HDR.pack(_MAGIC, _VERSION, kind, grid.n, grid.cells_per_axis,
                     float(grid.lower), float(grid.upper))


def _read_header(blob, path):
    if len(blob) < _HDR.size:
        raise CompatibilityError(f"{path}: truncated header")
    magic, ver, kind, n, cells, lower, upper = _HDR.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise CompatibilityError(f"{path}: not a FRLB file")
    if ver != _VERSION:
        raise CompatibilityError(f"{path}: unsupported format version {ver}")
    return kind, n, cells, lower, upper, _HDR.size


def _grid_from(n, cells, lower, upper):
    from .grids import BoxGrid

    return BoxGrid(n, lower, upper, cells)


def write_mask(path, domain):
    payload = _header(_KIND_MASK, domain.grid) + np.ascontiguousarray(
        domain.mask.astype(np.uint8)
    ).tobytes()
    atomic_write_bytes(path, payload)


def read_mask(path):
    from .grids import ThinDomain

    blob = open(path, "rb").read()
    kind, n, cells, lower, upper, off = _read_header(blob, path)
    if kind != _KIND_MASK:
        raise CompatibilityError(f"{path}: expected a mask file, found kind {kind}")
    grid = _grid_from(n, cells, lower, upper)
    count = grid.num_nodes
    arr = np.frombuffer(blob, dtype=np.uint8, count=count, offset=off)
    return ThinDomain(grid, arr.reshape(grid.node_shape).astype(bool))


def write_fields(path, grid, fields):
    arr = np.asarray(fields, dtype="<f8")
    if arr.shape == grid.node_shape:
        arr = arr[None]
    if arr.shape[1:] != grid.node_shape:
        raise ValueError("field shape does not match the grid")
    payload = (
        _header(_KIND_FIELDS, grid)
        + struct.pack("<I", arr.shape[0])
        + np.ascontiguousarray(arr).tobytes()
    )
    atomic_write_bytes(path, payload)


def read_fields(path):
    blob = open(path, "rb").read()
    kind, n, cells, lower, upper, off = _read_header(blob, path)
    if kind != _KIND_FIELDS:
        raise CompatibilityError(f"{path}: expected a field file, found kind {kind}")
    grid = _grid_from(n, cells, lower, upper)
    (m,) = struct.unpack_from("<I", blob, off)
    off += 4
    arr = np.frombuffer(blob, dtype="<f8", count=m * grid.num_nodes, offset=off)
    return grid, arr.reshape((m,) + grid.node_shape).copy()


def write_slab_field(path, ext_field):
    slab = ext_field.slab
    head = _header(_KIND_SLAB, slab.base)
    meta = struct.pack("<ddI", slab.a, slab.gamma, slab.J)
    payload = (
        head
        + meta
        + np.ascontiguousarray(slab.y_nodes, dtype="<f8").tobytes()
        + np.ascontiguousarray(ext_field.values, dtype="<f8").tobytes()
    )
    atomic_write_bytes(path, payload)


def read_slab_field(path):
    from .extension import ExtensionField, SlabGrid

    blob = open(path, "rb").read()
    kind, n, cells, lower, upper, off = _read_header(blob, path)
    if kind != _KIND_SLAB:
        raise CompatibilityError(f"{path}: expected a slab file, found kind {kind}")
    grid = _grid_from(n, cells, lower, upper)
    a, gamma, J = struct.unpack_from("<ddI", blob, off)
    off += 20
    y = np.frombuffer(blob, dtype="<f8", count=J + 1, offset=off).copy()
    off += 8 * (J + 1)
    slab = SlabGrid(grid, J, a=a, Y=float(y[-1]), gamma=gamma)
    slab.y_nodes = y  # stored nodes are authoritative
    vals = np.frombuffer(
        blob, dtype="<f8", count=grid.num_nodes * (J + 1), offset=off
    ).copy()
    return ExtensionField(slab, vals.reshape(slab.values_shape()))


def sha256_file(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


# ---------------------------------------------------------------------------


def parse_config(text_or_path):
    """Parse KEY = VALUE lines (#-comments allowed) into an ordered dict."""
    if "\n" not in str(text_or_path) and os.path.exists(text_or_path):
        text = open(text_or_path).read()
    else:
        text = str(text_or_path)
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected KEY = VALUE, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        out[key] = val.strip()
    return out


def format_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run."""

    tool_version: str
    command: str
    config: dict
    seed: int | None = None
    input_hashes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    complete: bool = False

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path):
        data = json.loads(open(path).read())
        return cls(**data)
