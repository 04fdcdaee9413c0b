"""svmlight-style text datasets.

One instance per line: ``label idx:val idx:val ...`` with 1-based,
strictly ascending indices.  ``#`` starts a comment; a ``#dim N`` pragma
fixes the dimensionality (otherwise it is the largest index seen).
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ParseError
from .numkit import SparseVector, as_matrix, rows_of


@dataclass(frozen=True, eq=False)
class Dataset:
    X: sp.csr_matrix
    labels: tuple

    def __post_init__(self):
        if self.X.shape[0] != len(self.labels):
            raise ContractError("one label per instance required")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i: int) -> SparseVector:
        row = self.X[i]
        row.sort_indices()
        return SparseVector(row.indices, row.data, self.dim)

    def rows(self) -> list[SparseVector]:
        return rows_of(self.X)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], tuple(self.labels[i] for i in idx))

    @classmethod
    def from_rows(cls, rows, labels, dim=None) -> "Dataset":
        return cls(sp.csr_matrix(as_matrix(list(rows), dim)), tuple(labels))

    def digest(self) -> str:
        return hashlib.sha256(dumps_svmlight(self).encode("utf-8")).hexdigest()


def _parse_label(tok: str):
    try:
        return int(tok)
    except ValueError:
        v = float(tok)
        if not math.isfinite(v):
            raise ValueError(tok) from None
        return int(v) if v.is_integer() else v


def loads_svmlight(text: str) -> Dataset:
    dim = None
    labels, indptr, indices, values = [], [0], [], []
    max_idx = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("#"):
            head = stripped[1:].split()
            if len(head) == 2 and head[0] == "dim":
                try:
                    dim = int(head[1])
                except ValueError:
                    raise ParseError(f"bad dim pragma {head[1]!r}", lineno, 1) from None
                if dim < 1:
                    raise ParseError("dim pragma must be positive", lineno, 1)
            continue
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        col = 0
        tokens = []
        for tok in body.split():
            col = body.index(tok, col)
            tokens.append((tok, col + 1))
            col += len(tok)
        tok, c = tokens[0]
        try:
            labels.append(_parse_label(tok))
        except ValueError:
            raise ParseError(f"unparsable label {tok!r}", lineno, c) from None
        prev = 0
        for tok, c in tokens[1:]:
            key, sep, val = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                idx = int(key)
                v = float(val)
            except ValueError:
                raise ParseError(f"unparsable token {tok!r}", lineno, c) from None
            if idx < 1:
                raise ParseError("index 0 or negative (indices are 1-based)", lineno, c)
            if idx <= prev:
                raise ParseError("indices not ascending", lineno, c)
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {val!r}", lineno, c)
            prev = idx
            if v != 0.0:
                indices.append(idx - 1)
                values.append(v)
        max_idx = max(max_idx, prev)
        indptr.append(len(indices))
    if dim is None:
        dim = max_idx
    elif max_idx > dim:
        raise ParseError(f"index {max_idx} exceeds #dim {dim}")
    X = sp.csr_matrix((np.asarray(values, dtype=np.float64),
                       np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
                      shape=(len(labels), dim))
    return Dataset(X, tuple(labels))


def load_svmlight(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return loads_svmlight(fh.read())


def dumps_svmlight(data: Dataset) -> str:
    out = io.StringIO()
    out.write(f"#dim {data.dim}\n")
    X = data.X
    for i, label in enumerate(data.labels):
        a, b = X.indptr[i], X.indptr[i + 1]
        order = np.argsort(X.indices[a:b], kind="stable")
        pairs = " ".join(f"{int(j) + 1}:{float(v)!r}"
                         for j, v in zip(X.indices[a:b][order], X.data[a:b][order]))
        out.write(f"{label} {pairs}\n" if pairs else f"{label}\n")
    return out.getvalue()


def dump_svmlight(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_svmlight(data))
