"""Line-oriented numeric matrix files.

Every matrix artifact in this package shares one framing: newline-delimited
records with space-separated fields, floats printed with 17 significant
digits so each float64 survives a write/read round trip bit-exactly.

Two record layouts use that framing:

* sequence files (``video.mat``, ``text.mat``):
  ``sample_id T v_11 ... v_Td`` with the T x d block flattened row-major;
* square files (``sim.mat``, ``delta.mat``):
  ``row_index N x_1 ... x_N``, one record per matrix row.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError


def fmt(x: float) -> str:
    """Format one float with enough digits to reconstruct its bits."""
    return format(float(x), ".17g")


def _parse_record(path: Path, lineno: int, line: str) -> tuple[int, int, list[float]]:
    fields = line.split()
    if len(fields) < 2:
        raise FormatError(f"{path}:{lineno}: record needs at least an id and a length")
    try:
        rid = int(fields[0])
        length = int(fields[1])
        values = [float(f) for f in fields[2:]]
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: unparseable field ({exc})") from exc
    if rid < 0 or length < 1:
        raise FormatError(f"{path}:{lineno}: id and length must be non-negative / positive")
    return rid, length, values


def write_sequences(path: str | Path, arrays: Sequence[np.ndarray]) -> None:
    """Write 2-D arrays as one record each; list position is the sample id."""
    lines = []
    for sid, arr in enumerate(arrays):
        a = np.asarray(arr, dtype=float)
        fields = [str(sid), str(a.shape[0])]
        fields.extend(fmt(v) for v in a.ravel())
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sequences(path: str | Path, dim: int, count: int) -> list[np.ndarray]:
    """Read ``count`` records of width ``dim``, returned ordered by sample id.

    Raises FormatError when ids do not cover 0..count-1 exactly, a record
    holds the wrong number of values, or any value is non-finite.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    out: dict[int, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rid, rows, values = _parse_record(path, lineno, line)
        if rid in out:
            raise FormatError(f"{path}:{lineno}: duplicate sample id {rid}")
        if len(values) != rows * dim:
            raise FormatError(
                f"{path}:{lineno}: expected {rows}x{dim}={rows * dim} values, found {len(values)}"
            )
        arr = np.array(values, dtype=float).reshape(rows, dim)
        if not np.isfinite(arr).all():
            raise FormatError(f"{path}:{lineno}: non-finite value in record {rid}")
        out[rid] = arr
    if sorted(out) != list(range(count)):
        raise FormatError(
            f"{path}: expected sample ids 0..{count - 1}, found {sorted(out)[:8]}..."
            if len(out) > 8
            else f"{path}: expected sample ids 0..{count - 1}, found {sorted(out)}"
        )
    return [out[i] for i in range(count)]


def write_square(path: str | Path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    lines = []
    for i in range(n):
        fields = [str(i), str(n)]
        fields.extend(fmt(v) for v in m[i])
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_square(path: str | Path, size: int | None = None) -> np.ndarray:
    """Read an N x N matrix written by :func:`write_square`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    rows: dict[int, list[float]] = {}
    n: int | None = size
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rid, length, values = _parse_record(path, lineno, line)
        if n is None:
            n = length
        if length != n or len(values) != n:
            raise FormatError(f"{path}:{lineno}: expected {n} values per row, found {len(values)}")
        if rid in rows:
            raise FormatError(f"{path}:{lineno}: duplicate row index {rid}")
        rows[rid] = values
    if n is None or sorted(rows) != list(range(n)):
        raise FormatError(f"{path}: rows do not cover 0..N-1")
    m = np.array([rows[i] for i in range(n)], dtype=float)
    if not np.isfinite(m).all():
        raise FormatError(f"{path}: non-finite matrix entry")
    return m
