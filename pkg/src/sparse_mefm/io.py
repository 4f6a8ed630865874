"""File formats for tensors, effects, blocks, matrices and configs.

Tensor CSV
    long form with header ``t,i,j,value``, 1-based indices, row-major
    order, values printed with 17 significant digits.
Tensor binary
    magic ``b"MEFM"``, version (u16), dims T, p, q (3 x u64), then the
    row-major float64 values; everything little-endian.
Effects CSV
    ``t,index,value`` for a (T, n) array, 1-based.
Blocks CSV
    ``index,t_start,t_end``: one line per maximal run of sparse (zero)
    time points, 1-based and inclusive.
Matrix CSV
    plain comma-separated rows, no header.
Config
    UTF-8 ``key = value`` lines; ``#`` starts a comment.  Tuples are
    comma-separated, booleans are ``true``/``false``.

All floats are written with 17 significant digits, so every write-read
round trip reproduces the values exactly.
"""

from __future__ import annotations

import dataclasses
import struct
import warnings
from pathlib import Path

import numpy as np

from .dafl import BlockSets
from .errors import FileFormatError
from .simulate import DGPConfig

MAGIC = b"MEFM"
BIN_VERSION = 1
_HEADER = struct.Struct("<4sH3Q")
FLOAT_FMT = "%.17g"


def fmt_float(v: float) -> str:
    return FLOAT_FMT % v


def _read_csv(path, header: str, ncols: int) -> np.ndarray:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != header:
            raise FileFormatError(f"{path}: expected header {header!r}, found {first!r}")
        try:
            with warnings.catch_warnings():
                # header-only files are valid (e.g. no sparse blocks)
                warnings.simplefilter("ignore", UserWarning)
                data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=float)
        except ValueError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        return np.zeros((0, ncols))
    if data.shape[1] != ncols:
        raise FileFormatError(f"{path}: expected {ncols} columns, found {data.shape[1]}")
    return data


def _index_column(col: np.ndarray, path, name: str) -> np.ndarray:
    idx = col.astype(np.int64)
    if np.any(idx != col) or np.any(idx < 1):
        raise FileFormatError(f"{path}: column {name} must hold positive integers")
    return idx - 1


# -- tensors ---------------------------------------------------------------

def write_tensor_csv(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected a (T, p, q) array, got {x.shape}")
    T, p, q = x.shape
    t, i, j = np.indices(x.shape).reshape(3, -1) + 1
    lines = ["t,i,j,value"]
    lines += [f"{a},{b},{c},{fmt_float(v)}" for a, b, c, v in zip(t.tolist(), i.tolist(), j.tolist(), x.ravel().tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tensor_csv(path) -> np.ndarray:
    data = _read_csv(path, "t,i,j,value", 4)
    if data.shape[0] == 0:
        raise FileFormatError(f"{path}: no data rows")
    idx = [_index_column(data[:, k], path, n) for k, n in enumerate("tij")]
    shape = tuple(int(ix.max()) + 1 for ix in idx)
    out = np.full(shape, np.nan)
    seen = np.zeros(shape, dtype=bool)
    seen[idx[0], idx[1], idx[2]] = True
    if data.shape[0] != out.size or not seen.all():
        raise FileFormatError(f"{path}: cells missing or repeated for a {shape} tensor")
    out[idx[0], idx[1], idx[2]] = data[:, 3]
    return out


def write_tensor_bin(path, x: np.ndarray) -> None:
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim != 3:
        raise ValueError(f"expected a (T, p, q) array, got {x.shape}")
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, BIN_VERSION, *x.shape))
        fh.write(x.tobytes(order="C"))


def read_tensor_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, T, p, q = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic bytes {magic!r}")
    if version != BIN_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    n = T * p * q
    if len(raw) != _HEADER.size + 8 * n:
        raise FileFormatError(f"{path}: expected {n} values for dims {(T, p, q)}")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(T, p, q).astype(float)


def tensor_suffix(fmt: str) -> str:
    return {"csv": ".csv", "bin": ".bin"}[fmt]


def write_tensor(path, x: np.ndarray, fmt: str = "csv") -> None:
    (write_tensor_bin if fmt == "bin" else write_tensor_csv)(path, x)


def read_tensor(path) -> np.ndarray:
    """Read a tensor in either format, detected from the leading bytes."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    return read_tensor_bin(path) if head == MAGIC else read_tensor_csv(path)


# -- effects, blocks, matrices ---------------------------------------------

def write_effects_csv(path, eff: np.ndarray) -> None:
    """Write a (T,) or (T, n) array as ``t,index,value`` rows."""
    eff = np.asarray(eff, dtype=float)
    if eff.ndim == 1:
        eff = eff[:, None]
    T, n = eff.shape
    lines = ["t,index,value"]
    for t in range(T):
        lines += [f"{t + 1},{i + 1},{fmt_float(v)}" for i, v in enumerate(eff[t].tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_effects_csv(path) -> np.ndarray:
    """Inverse of :func:`write_effects_csv`; always returns a (T, n) array."""
    data = _read_csv(path, "t,index,value", 3)
    if data.shape[0] == 0:
        raise FileFormatError(f"{path}: no data rows")
    t = _index_column(data[:, 0], path, "t")
    i = _index_column(data[:, 1], path, "index")
    shape = (int(t.max()) + 1, int(i.max()) + 1)
    seen = np.zeros(shape, dtype=bool)
    seen[t, i] = True
    if data.shape[0] != seen.size or not seen.all():
        raise FileFormatError(f"{path}: entries missing or repeated for a {shape} array")
    out = np.empty(shape)
    out[t, i] = data[:, 2]
    return out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def write_blocks_csv(path, blocks: list[BlockSets]) -> None:
    lines = ["index,t_start,t_end"]
    for i, b in enumerate(blocks):
        lines += [f"{i + 1},{a + 1},{e + 1}" for a, e in _runs(b.sparse_mask())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_blocks_csv(path, T: int, n: int) -> list[BlockSets]:
    """Blocks of ``n`` series of length ``T``; series without rows are fully dense."""
    data = _read_csv(path, "index,t_start,t_end", 3)
    mask = np.zeros((T, n), dtype=bool)
    if data.shape[0]:
        idx = _index_column(data[:, 0], path, "index")
        start = _index_column(data[:, 1], path, "t_start")
        end = _index_column(data[:, 2], path, "t_end")
        if idx.max() >= n or end.max() >= T or np.any(start > end):
            raise FileFormatError(f"{path}: block out of range for T={T}, n={n}")
        for i, a, e in zip(idx, start, end):
            mask[a:e + 1, i] = True
    return [BlockSets.from_mask(mask[:, i]) for i in range(n)]


def write_matrix_csv(path, a: np.ndarray) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    np.savetxt(path, a, delimiter=",", fmt=FLOAT_FMT)


def read_matrix_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


# -- configs ---------------------------------------------------------------

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(e) for e in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(values: dict) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in values.items())


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings of a key-value config."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise FileFormatError(f"{source}:{n}: expected 'key = value'")
        if key in out:
            raise FileFormatError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(raw: str, default, key: str, source: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise FileFormatError(f"{source}: bad value {raw!r} for {key}") from None
    return raw


def dgp_from_mapping(raw: dict[str, str], source: str = "<config>", base: DGPConfig | None = None) -> DGPConfig:
    """Build a :class:`DGPConfig` from raw strings layered over ``base``."""
    base = base or DGPConfig()
    known = {f.name for f in dataclasses.fields(DGPConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise FileFormatError(f"{source}: unknown keys {', '.join(unknown)}")
    values = base.to_dict()
    for key, text in raw.items():
        values[key] = _coerce(text, values[key], key, source)
    try:
        return DGPConfig(**values)
    except ValueError as exc:
        raise FileFormatError(f"{source}: {exc}") from exc


def write_config(path, cfg: DGPConfig) -> None:
    Path(path).write_text(format_config(cfg.to_dict()), encoding="utf-8")


def read_config(path) -> DGPConfig:
    path = Path(path)
    return dgp_from_mapping(parse_config_text(path.read_text(encoding="utf-8"), str(path)), str(path))


SCENARIO_DIR = Path(__file__).with_name("scenarios")


def scenario_file(name: str) -> Path:
    return SCENARIO_DIR / f"{name}.cfg"
