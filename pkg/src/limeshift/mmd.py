"""Biased MMD estimator and the bounded-kernel two-sample test.

The decision rule rejects ``p = q`` at level ``alpha`` when

    MMD_b > sqrt(2 K / m) * (1 + sqrt(2 log(1 / alpha)))

where ``K`` bounds the kernel and ``m`` is the per-side sample size.  The
test is distribution free and therefore conservative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError
from .numkit import KernelSpec, SampleSet, as_matrix, block_sum, gram


@dataclass(frozen=True)
class TwoSampleResult:
    mmd_b: float
    scaled_stat: float
    threshold: float
    alpha: float
    m: int
    reject: bool

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TwoSampleResult":
        return cls(float(obj["mmd_b"]), float(obj["scaled_stat"]), float(obj["threshold"]),
                   float(obj["alpha"]), int(obj["m"]), bool(obj["reject"]))


def _stack(A, B):
    if sp.issparse(A) or sp.issparse(B):
        return sp.vstack([sp.csr_matrix(A), sp.csr_matrix(B)], format="csr")
    return np.vstack([A, B])


def mmd_biased(X: SampleSet, Y: SampleSet, kernel: KernelSpec) -> float:
    """V-statistic MMD between two equally sized samples.

    All index pairs, diagonal included, enter the three kernel means.  The
    kernel must be resolved (no median-heuristic sentinel).
    """
    A, B = as_matrix(X), as_matrix(Y)
    m = A.shape[0]
    if m < 1 or B.shape[0] != m:
        raise ContractError(
            f"two-sample MMD needs equal, non-empty samples (got {A.shape[0]} and {B.shape[0]})")
    if A.shape[1] != B.shape[1]:
        raise ContractError(f"dimension mismatch: {A.shape[1]} != {B.shape[1]}")
    G = gram(_stack(A, B), None, kernel)
    kxx = block_sum(G[:m, :m])
    kyy = block_sum(G[m:, m:])
    kxy = block_sum(G[:m, m:])
    sq = math.fsum([kxx, kyy, -2.0 * kxy]) / (m * m)
    return math.sqrt(max(0.0, sq))


def mmd_threshold(m: int, alpha: float, kernel_bound: float = 1.0) -> float:
    if m < 1:
        raise ContractError(f"sample size must be >= 1, got {m}")
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    if not kernel_bound > 0:
        raise ContractError(f"kernel bound must be positive, got {kernel_bound}")
    return math.sqrt(2.0 * kernel_bound / m) * (1.0 + math.sqrt(2.0 * math.log(1.0 / alpha)))


def two_sample_test(X: SampleSet, Y: SampleSet, kernel: KernelSpec,
                    alpha: float = 0.05) -> TwoSampleResult:
    """Run the test; a median-heuristic RBF gamma is resolved on ``X ∪ Y``."""
    A, B = as_matrix(X), as_matrix(Y)
    if not kernel.resolved:
        kernel = kernel.resolve(_stack(A, B))
    m = A.shape[0]
    stat = mmd_biased(A, B, kernel)
    thr = mmd_threshold(m, alpha, kernel.bound)
    return TwoSampleResult(mmd_b=stat, scaled_stat=m * stat * stat, threshold=thr,
                           alpha=alpha, m=m, reject=bool(stat > thr))
