"""File ingestion: sparse matrix-market, dense CSV, labels, log1p.

Errors during parsing carry the file path and 1-based line number of
the offending content. Matrix files may be gzip-compressed (suffix
``.gz``). The canonical orientation is rows = features, columns =
samples; ``IngestSpec.transpose`` flips a file stored the other way.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import InputError, ParseError
from .linalg import DataMatrix

MM_HEADER = "%%MatrixMarket matrix coordinate real general"

FORMATS = ("auto", "matrix-market", "csv")
NORMALIZATIONS = ("none", "log1p")


@dataclass
class IngestSpec:
    """What to read and how to interpret it."""

    matrix: Union[str, Path]
    fmt: str = "auto"
    labels: Optional[Union[str, Path]] = None
    normalization: str = "none"
    transpose: bool = False

    def __post_init__(self):
        if self.fmt not in FORMATS:
            raise InputError(f"format must be one of {FORMATS}, got {self.fmt!r}")
        if self.normalization not in NORMALIZATIONS:
            raise InputError(
                f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )

    def resolved_format(self) -> str:
        if self.fmt != "auto":
            return self.fmt
        name = str(self.matrix)
        if name.endswith(".gz"):
            name = name[:-3]
        if name.endswith((".mtx", ".mm")):
            return "matrix-market"
        if name.endswith(".csv") or name.endswith(".tsv") or name.endswith(".txt"):
            return "csv"
        raise InputError(f"cannot infer format from {self.matrix}; pass one explicitly")


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _read_lines(path) -> List[str]:
    try:
        with _open_text(path) as fh:
            return fh.read().split("\n")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _entry_line_number(lines: List[str], first_entry_line: int, entry_index: int) -> int:
    """1-based line number of the k-th data entry, skipping blank lines."""
    seen = 0
    for offset, line in enumerate(lines[first_entry_line - 1 :]):
        if line.strip():
            if seen == entry_index:
                return first_entry_line + offset
            seen += 1
    return len(lines)


def _parse_matrix_market(path) -> sp.csc_array:
    lines = _read_lines(path)
    position = 0
    while position < len(lines) and not lines[position].strip():
        position += 1
    if position >= len(lines):
        raise ParseError("empty file", path=path, line=1)
    header = lines[position].strip()
    if header.lower() != MM_HEADER.lower():
        raise ParseError(
            f"expected header {MM_HEADER!r}, got {header!r}", path=path, line=position + 1
        )
    position += 1
    while position < len(lines):
        stripped = lines[position].strip()
        if stripped and not stripped.startswith("%"):
            break
        position += 1
    if position >= len(lines):
        raise ParseError("missing size line", path=path, line=len(lines))
    size_fields = lines[position].split()
    if len(size_fields) != 3:
        raise ParseError("size line needs three integers", path=path, line=position + 1)
    try:
        d, n, nnz = (int(f) for f in size_fields)
    except ValueError as exc:
        raise ParseError(f"bad size line: {exc}", path=path, line=position + 1) from exc
    if d < 1 or n < 1 or nnz < 0:
        raise ParseError("declared dimensions must be positive", path=path, line=position + 1)
    first_entry_line = position + 2

    body = "\n".join(lines[position + 1 :])
    tokens = body.split()
    if len(tokens) != 3 * nnz:
        found = len(tokens) // 3
        raise ParseError(
            f"declared {nnz} entries, found {found}",
            path=path,
            line=_entry_line_number(lines, first_entry_line, max(0, min(found, nnz) - 1)),
        )
    if nnz == 0:
        return sp.csc_array((d, n), dtype=np.float64)
    flat = np.array(tokens)
    try:
        rows = flat[0::3].astype(np.int64)
        cols = flat[1::3].astype(np.int64)
        values = flat[2::3].astype(np.float64)
    except ValueError:
        for index in range(nnz):
            fields = tokens[3 * index : 3 * index + 3]
            try:
                int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError:
                raise ParseError(
                    f"non-numeric entry {' '.join(fields)!r}",
                    path=path,
                    line=_entry_line_number(lines, first_entry_line, index),
                ) from None
        raise
    bad = (rows < 1) | (rows > d) | (cols < 1) | (cols > n)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        raise ParseError(
            f"coordinate ({rows[index]}, {cols[index]}) outside declared {d} x {n}",
            path=path,
            line=_entry_line_number(lines, first_entry_line, index),
        )
    order = np.lexsort((rows, cols))
    linear = (cols[order] - 1) * d + (rows[order] - 1)
    repeat = np.flatnonzero(linear[1:] == linear[:-1])
    if repeat.size:
        index = int(max(order[repeat[0]], order[repeat[0] + 1]))
        raise ParseError(
            f"duplicate coordinate ({rows[index]}, {cols[index]})",
            path=path,
            line=_entry_line_number(lines, first_entry_line, index),
        )
    return sp.csc_array(
        (values, (rows - 1, cols - 1)), shape=(d, n), dtype=np.float64
    )


def _parse_csv(path) -> np.ndarray:
    lines = _read_lines(path)
    rows = []
    width = None
    start = 0
    numbered = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not numbered:
        raise ParseError("empty file", path=path, line=1)
    first_fields = numbered[0][1].split(",")
    try:
        [float(f) for f in first_fields]
    except ValueError:
        start = 1  # header row
    for line_no, line in numbered[start:]:
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ParseError(
                f"expected {width} fields, found {len(fields)}", path=path, line=line_no
            )
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            culprit = next(f for f in fields if not _is_number(f))
            raise ParseError(
                f"non-numeric entry {culprit.strip()!r}", path=path, line=line_no
            ) from None
    if not rows:
        raise ParseError("no data rows", path=path, line=1)
    return np.array(rows, dtype=np.float64)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_labels(path, n: Optional[int] = None) -> Tuple[np.ndarray, List[str]]:
    """Read labels, either one per line or the second field of a CSV.

    Distinct label strings map to ids 0, 1, ... in order of first
    appearance. Returns the id array and the name of each id.
    """
    lines = _read_lines(path)
    numbered = [(i + 1, line.strip()) for i, line in enumerate(lines) if line.strip()]
    if not numbered:
        raise ParseError("empty labels file", path=path, line=1)
    two_column = "," in numbered[0][1]
    tokens = []
    for line_no, line in numbered:
        fields = line.split(",")
        if two_column:
            if len(fields) != 2:
                raise ParseError(
                    f"expected 2 fields, found {len(fields)}", path=path, line=line_no
                )
            tokens.append(fields[1].strip())
        else:
            if len(fields) != 1:
                raise ParseError(
                    "unexpected comma in single-column labels", path=path, line=line_no
                )
            tokens.append(line)
    if n is not None and len(tokens) != n:
        raise InputError(f"{path}: {len(tokens)} labels for {n} samples")
    names: List[str] = []
    index = {}
    ids = np.empty(len(tokens), dtype=np.int64)
    for t, token in enumerate(tokens):
        if token not in index:
            index[token] = len(names)
            names.append(token)
        ids[t] = index[token]
    return ids, names


def load_matrix(spec: IngestSpec) -> Tuple[DataMatrix, List[str]]:
    """Read a matrix (and labels, when given) per the ingest spec.

    Returns the DataMatrix and the label names (empty when no labels
    file was given). Sparse input stays sparse through normalization.
    """
    fmt = spec.resolved_format()
    if fmt == "matrix-market":
        values = _parse_matrix_market(spec.matrix)
    else:
        values = _parse_csv(spec.matrix)
    if spec.transpose:
        values = values.T
        if sp.issparse(values):
            values = sp.csc_array(values)
    labels, names = (None, [])
    if spec.labels is not None:
        labels, names = load_labels(spec.labels, n=values.shape[1])
    A = DataMatrix(values, labels=labels)
    if spec.normalization == "log1p":
        A = log_normalize(A)
    return A, names


def log_normalize(A: DataMatrix) -> DataMatrix:
    """Elementwise natural log(1+x); zeros stay zero.

    Entries must be nonnegative; the error names the first offending
    coordinate, 1-based.
    """
    if A.is_sparse:
        data = A.values.data
        if data.size and data.min() < 0:
            coo = sp.coo_array(A.values)
            bad = int(np.argmin(coo.data))
            raise InputError(
                f"negative entry {coo.data[bad]:g} at ({coo.row[bad] + 1}, {coo.col[bad] + 1})"
            )
        out = A.values.copy()
        out.data = np.log1p(out.data)
        return DataMatrix(out, labels=A.labels)
    if A.values.size and A.values.min() < 0:
        i, j = np.unravel_index(int(np.argmin(A.values)), A.values.shape)
        raise InputError(
            f"negative entry {A.values[i, j]:g} at ({i + 1}, {j + 1})"
        )
    return DataMatrix(np.log1p(A.values), labels=A.labels)


def _format_value(v: float) -> str:
    return repr(float(v))


def write_matrix(A: DataMatrix, path) -> None:
    """Write in matrix-market coordinate form, column-major entries."""
    coo = sp.coo_array(A.values) if A.is_sparse else None
    path = str(path)
    opener = gzip.open(path, "wt", encoding="utf-8") if path.endswith(".gz") else open(
        path, "w", encoding="utf-8"
    )
    with opener as fh:
        fh.write(MM_HEADER + "\n")
        if coo is not None:
            order = np.lexsort((coo.row, coo.col))
            fh.write(f"{A.d} {A.n} {coo.nnz}\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r + 1} {c + 1} {_format_value(v)}\n")
        else:
            mask = A.values != 0.0
            nnz = int(mask.sum())
            fh.write(f"{A.d} {A.n} {nnz}\n")
            for c in range(A.n):
                for r in np.flatnonzero(mask[:, c]):
                    fh.write(f"{r + 1} {c + 1} {_format_value(A.values[r, c])}\n")


def write_labels(labels: Sequence, path, names: Optional[List[str]] = None) -> None:
    """One label per line; integer ids unless names are supplied."""
    path = str(path)
    opener = gzip.open(path, "wt", encoding="utf-8") if path.endswith(".gz") else open(
        path, "w", encoding="utf-8"
    )
    with opener as fh:
        for value in labels:
            token = names[int(value)] if names else str(int(value))
            fh.write(token + "\n")
