"""Sparse vectors, kernels and Gram matrices.

Sample sets are accepted in three shapes: a sequence of :class:`SparseVector`,
a 2-D :class:`numpy.ndarray` (one row per instance) or a ``scipy.sparse``
matrix.  Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, ContractError

MEDIAN_HEURISTIC = "median-heuristic"


class SparseVector:
    """Immutable sparse vector with 0-based, strictly increasing indices.

    Explicit zeros are dropped on construction, so two vectors that are equal
    as dense arrays always compare equal.
    """

    __slots__ = ("indices", "values", "dim")

    def __init__(self, indices: Iterable[int], values: Iterable[float], dim: int):
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64).ravel()
        val = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64).ravel()
        dim = int(dim)
        if idx.shape != val.shape:
            raise ContractError(
                f"indices and values differ in length ({idx.size} != {val.size})")
        if dim < 0:
            raise ContractError(f"dim must be non-negative, got {dim}")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ContractError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= dim:
                raise ContractError(f"index out of range for dim {dim}")
        if not np.all(np.isfinite(val)):
            raise ContractError("values must be finite")
        keep = val != 0.0
        if not keep.all():
            idx, val = idx[keep], val[keep]
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "dim", dim)

    def __setattr__(self, name, value):
        raise AttributeError("SparseVector is immutable")

    @classmethod
    def from_dense(cls, dense) -> "SparseVector":
        arr = np.asarray(dense, dtype=np.float64).ravel()
        nz = np.flatnonzero(arr)
        return cls(nz, arr[nz], arr.size)

    @classmethod
    def from_dict(cls, mapping: dict, dim: int) -> "SparseVector":
        """Build from ``{index: value}`` in any key order."""
        keys = sorted(mapping)
        return cls(keys, [mapping[k] for k in keys], dim)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def norm(self) -> float:
        return math.sqrt(math.fsum(self.values * self.values))

    def to_json(self) -> dict:
        return {"dim": self.dim, "indices": self.indices.tolist(),
                "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SparseVector":
        return cls(obj["indices"], obj["values"], obj["dim"])

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dim == other.dim
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.dim, self.indices.tobytes(), self.values.tobytes()))

    def __len__(self):
        return self.dim

    def __repr__(self):
        pairs = ", ".join(f"{i}:{v:g}" for i, v in zip(self.indices, self.values))
        return f"SparseVector({{{pairs}}}, dim={self.dim})"


SampleSet = Union[Sequence[SparseVector], np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice plus the bound ``K`` with ``k(u, u) <= K``."""

    kind: str = "cosine"
    gamma: Union[float, str, None] = None
    bound: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine", "rbf"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None:
                object.__setattr__(self, "gamma", MEDIAN_HEURISTIC)
            elif self.gamma != MEDIAN_HEURISTIC:
                g = float(self.gamma)
                if not (g > 0 and math.isfinite(g)):
                    raise ConfigError(f"rbf gamma must be positive, got {self.gamma!r}")
                object.__setattr__(self, "gamma", g)
        elif self.gamma is not None:
            raise ConfigError("cosine kernel takes no gamma")
        if not self.bound > 0:
            raise ConfigError("kernel bound must be positive")

    @property
    def resolved(self) -> bool:
        return self.kind != "rbf" or self.gamma != MEDIAN_HEURISTIC

    def resolve(self, pooled: SampleSet) -> "KernelSpec":
        """Replace a median-heuristic sentinel by the value computed on ``pooled``."""
        if self.resolved:
            return self
        return KernelSpec("rbf", median_heuristic_gamma(pooled), self.bound)

    def to_json(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "bound": self.bound}

    @classmethod
    def from_json(cls, obj: dict) -> "KernelSpec":
        return cls(obj["kind"], obj.get("gamma"), obj.get("bound", 1.0))

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``cosine``, ``rbf``, ``rbf:median`` or ``rbf:<gamma>``."""
        kind, _, arg = text.partition(":")
        if kind == "cosine":
            if arg:
                raise ConfigError("cosine kernel takes no gamma")
            return cls("cosine")
        if kind == "rbf":
            if arg in ("", "median", MEDIAN_HEURISTIC):
                return cls("rbf", MEDIAN_HEURISTIC)
            try:
                return cls("rbf", float(arg))
            except ValueError:
                raise ConfigError(f"bad rbf gamma {arg!r}") from None
        raise ConfigError(f"unknown kernel {text!r}")

    def __str__(self):
        if self.kind == "cosine":
            return "cosine"
        g = "median" if self.gamma == MEDIAN_HEURISTIC else repr(self.gamma)
        return f"rbf:{g}"


def _sparse_dot(u: SparseVector, v: SparseVector) -> float:
    _, iu, iv = np.intersect1d(u.indices, v.indices, assume_unique=True,
                               return_indices=True)
    return math.fsum(u.values[iu] * v.values[iv])


def _check_dims(u: SparseVector, v: SparseVector):
    if u.dim != v.dim:
        raise ContractError(f"dimension mismatch: {u.dim} != {v.dim}")


def cosine_kernel(u: SparseVector, v: SparseVector) -> float:
    """Cosine similarity; 0.0 when either vector is all-zero."""
    _check_dims(u, v)
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        return 0.0
    if u is v or u == v:
        return 1.0
    return _sparse_dot(u, v) / (nu * nv)


def rbf_kernel(u: SparseVector, v: SparseVector, gamma: float) -> float:
    _check_dims(u, v)
    if not gamma > 0:
        raise ContractError(f"gamma must be positive, got {gamma}")
    diff = u.to_dense() - v.to_dense()
    return math.exp(-gamma * math.fsum(diff * diff))


def as_matrix(samples: SampleSet, dim: int | None = None):
    """Return a CSR matrix for sparse input and a float64 ndarray for dense input."""
    if sp.issparse(samples):
        mat = sp.csr_matrix(samples, dtype=np.float64)
    elif isinstance(samples, np.ndarray):
        mat = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    else:
        rows = list(samples)
        if not rows:
            if dim is None:
                raise ContractError("empty sample set with unknown dim")
            return sp.csr_matrix((0, dim))
        if not all(isinstance(r, SparseVector) for r in rows):
            return np.atleast_2d(np.asarray(rows, dtype=np.float64))
        dims = {r.dim for r in rows}
        if len(dims) != 1:
            raise ContractError(f"instances disagree on dim: {sorted(dims)}")
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum([r.nnz for r in rows], out=indptr[1:])
        indices = np.concatenate([r.indices for r in rows]) if indptr[-1] else np.zeros(0, np.int64)
        data = np.concatenate([r.values for r in rows]) if indptr[-1] else np.zeros(0)
        mat = sp.csr_matrix((data, indices, indptr), shape=(len(rows), dims.pop()))
    if dim is not None and mat.shape[1] != dim:
        raise ContractError(f"dimension mismatch: {mat.shape[1]} != {dim}")
    return mat


def rows_of(mat) -> list[SparseVector]:
    """Inverse of :func:`as_matrix` for CSR input."""
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return [SparseVector(mat.indices[a:b], mat.data[a:b], mat.shape[1])
            for a, b in zip(mat.indptr[:-1], mat.indptr[1:])]


def _dense(m) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def _row_sq_norms(m) -> np.ndarray:
    if sp.issparse(m):
        return np.asarray(m.multiply(m).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", m, m)


def _normalize_rows(m):
    norms = np.sqrt(_row_sq_norms(m))
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    if sp.issparse(m):
        return sp.diags(inv) @ m
    return m * inv[:, None]


# relative size of rounding noise left by the norm/dot expansions below
_SNAP = 8.0 * np.finfo(np.float64).eps


def _kernel_block(A, B, kernel: KernelSpec) -> np.ndarray:
    """Kernel values between the rows of ``A`` and ``B``.

    Parallel rows get cosine exactly 1 and coincident rows get rbf exactly 1:
    differences below the rounding noise of the expansion are treated as 0.
    """
    if kernel.kind == "cosine":
        G = _dense(_normalize_rows(A) @ _normalize_rows(B).T)
        G[np.abs(G) >= 1.0 - _SNAP] = np.sign(G[np.abs(G) >= 1.0 - _SNAP])
        return np.clip(G, -1.0, 1.0)
    if not (sp.issparse(A) or sp.issparse(B)):
        d2 = cdist(A, B, "sqeuclidean")
    else:
        na, nb = _row_sq_norms(A), _row_sq_norms(B)
        d2 = na[:, None] + nb[None, :] - 2.0 * _dense(A @ B.T)
        d2[d2 <= _SNAP * (na[:, None] + nb[None, :])] = 0.0
    return np.exp(-kernel.gamma * d2)


def self_kernel(A, kernel: KernelSpec) -> np.ndarray:
    """Exact ``k(u, u)`` for each row."""
    if kernel.kind == "rbf":
        return np.ones(A.shape[0])
    return (_row_sq_norms(A) > 0).astype(np.float64)


def gram(X: SampleSet, Y: SampleSet | None, kernel: KernelSpec) -> np.ndarray:
    """Kernel matrix ``G[i, j] = k(X[i], Y[j])``.

    With ``Y is None`` the Gram of ``X`` with itself is returned, symmetrised
    exactly and with the diagonal set to ``k(x, x)``.
    """
    if not kernel.resolved:
        raise ConfigError("rbf gamma is still the median-heuristic sentinel; resolve it first")
    A = as_matrix(X)
    if Y is None:
        G = _kernel_block(A, A, kernel)
        G = 0.5 * (G + G.T)
        np.fill_diagonal(G, self_kernel(A, kernel))
        return G
    B = as_matrix(Y)
    if A.shape[1] != B.shape[1]:
        raise ContractError(f"dimension mismatch: {A.shape[1]} != {B.shape[1]}")
    return _kernel_block(A, B, kernel)


def pairwise_distances(samples: SampleSet) -> np.ndarray:
    """Euclidean distances over distinct pairs ``i < j`` (condensed form)."""
    A = as_matrix(samples)
    if not sp.issparse(A):
        return pdist(A)
    na = _row_sq_norms(A)
    d2 = na[:, None] + na[None, :] - 2.0 * _dense(A @ A.T)
    d2[d2 <= _SNAP * (na[:, None] + na[None, :])] = 0.0
    iu = np.triu_indices(A.shape[0], k=1)
    return np.sqrt(d2[iu])


def median_heuristic_gamma(pooled: SampleSet) -> float:
    """``1 / (2 * median^2)`` of pairwise distances, or 1.0 when the median is 0."""
    A = as_matrix(pooled)
    if A.shape[0] < 2:
        raise ContractError("median heuristic needs at least 2 instances")
    med = float(np.median(pairwise_distances(A)))
    if med == 0.0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def block_sum(block: np.ndarray) -> float:
    """Compensated sum of every entry; exact-rounded and order independent."""
    return math.fsum(np.asarray(block).ravel().tolist())
