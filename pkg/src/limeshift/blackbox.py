"""Black-box scorers.

Anything with ``class_ids``, ``dim`` and ``predict_proba(samples)`` returning
an ``(n, n_classes)`` array of row-normalised probabilities is a scorer.  Two
implementations live here: an RBF kernel logistic regression trained in
process, and a client for an external process that speaks a JSON-lines
protocol on its standard streams.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import threading
import itertools
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

from .errors import ContractError, DivergenceError, ProtocolError, TrainingError
from .numkit import KernelSpec, SampleSet, SparseVector, as_matrix, gram, rows_of

log = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True)
class ScoreVector:
    scores: tuple
    class_ids: tuple

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if len(self.scores) != len(self.class_ids):
            raise ContractError("scores and class_ids differ in length")
        check_scores(s)

    def __getitem__(self, class_id):
        return self.scores[self.class_ids.index(class_id)]


def check_scores(scores: np.ndarray, tol: float = NORMALIZATION_TOL) -> None:
    """Raise ContractError unless every row lies in [0, 1] and sums to 1."""
    s = np.atleast_2d(scores)
    if not np.all(np.isfinite(s)):
        raise ContractError("scores not finite")
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ContractError("scores outside [0, 1]")
    if np.any(np.abs(s.sum(axis=1) - 1.0) > tol):
        raise ContractError("scores not normalized")


def score_one(scorer, x: SparseVector) -> ScoreVector:
    row = scorer.predict_proba([x])[0]
    return ScoreVector(tuple(float(v) for v in row), tuple(scorer.class_ids))


def class_column(scorer, class_id) -> int:
    try:
        return list(scorer.class_ids).index(class_id)
    except ValueError:
        raise ContractError(
            f"class {class_id!r} not among scorer classes {list(scorer.class_ids)}") from None


# -- built-in kernel logistic regression -------------------------------------

@dataclass(frozen=True, eq=False)
class KernelLogisticModel:
    """Binary kernel logistic regression; column 1 of the output is ``class_ids[1]``."""

    support_set: sp.csr_matrix
    dual_coeffs: np.ndarray
    bias: float
    kernel: KernelSpec
    class_ids: tuple
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.dual_coeffs) != self.support_set.shape[0]:
            raise ContractError("one dual coefficient per support instance required")
        if not self.kernel.resolved:
            raise ContractError("model kernel gamma must be resolved")

    @property
    def dim(self) -> int:
        return self.support_set.shape[1]

    def decision_function(self, samples: SampleSet) -> np.ndarray:
        A = as_matrix(samples)
        if A.shape[1] != self.dim:
            raise ContractError(f"dimension mismatch: {A.shape[1]} != {self.dim}")
        return gram(A, self.support_set, self.kernel) @ self.dual_coeffs + self.bias

    def predict_proba(self, samples: SampleSet) -> np.ndarray:
        p = expit(self.decision_function(samples))
        return np.column_stack([1.0 - p, p])

    def predict(self, samples: SampleSet) -> list:
        cols = np.argmax(self.predict_proba(samples), axis=1)
        return [self.class_ids[c] for c in cols]

    def to_json(self) -> dict:
        # field order is part of the file format
        return {
            "kind": "kernel-logistic",
            "kernel": self.kernel.kind,
            "gamma": self.kernel.gamma,
            "bias": float(self.bias),
            "dual_coeffs": [float(a) for a in self.dual_coeffs],
            "support_set": [{"indices": v.indices.tolist(), "values": v.values.tolist()}
                            for v in rows_of(self.support_set)],
            "class_ids": list(self.class_ids),
            "dim": self.dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KernelLogisticModel":
        if obj.get("kind") != "kernel-logistic":
            raise ContractError(f"unsupported model kind {obj.get('kind')!r}")
        dim = int(obj["dim"])
        rows = [SparseVector(r["indices"], r["values"], dim) for r in obj["support_set"]]
        return cls(as_matrix(rows, dim), np.asarray(obj["dual_coeffs"], dtype=np.float64),
                   float(obj["bias"]), KernelSpec(obj["kernel"], obj["gamma"]),
                   tuple(obj["class_ids"]))


def predict_proba(model, x: SparseVector) -> ScoreVector:
    return score_one(model, x)


def save_model(model: KernelLogisticModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)
        fh.write("\n")


def load_model(path) -> KernelLogisticModel:
    with open(path, encoding="utf-8") as fh:
        return KernelLogisticModel.from_json(json.load(fh))


def _logistic_loss(K, alpha, bias, t, reg):
    f = K @ alpha + bias
    # -log p(t | f), stable in both tails
    data = -np.mean(t * log_expit(f) + (1.0 - t) * log_expit(-f))
    return float(data + 0.5 * reg * float(alpha @ alpha))


def train_kernel_logistic(X: SampleSet, labels: Sequence, kernel: KernelSpec,
                          reg: float = 1e-3, epochs: int = 2000,
                          lr: float = 0.01) -> KernelLogisticModel:
    """Fit dual coefficients by full-batch proximal gradient descent.

    Minimises ``mean logistic loss + reg/2 * ||alpha||^2`` with the decision
    function ``K @ alpha + bias``.  The L2 term is applied as an exact
    proximal shrink, so large ``reg`` cannot make the iteration diverge.
    The positive class is the larger of the two label values.
    """
    A = as_matrix(X)
    labels = list(labels)
    if A.shape[0] != len(labels):
        raise ContractError("one label per instance required")
    classes = sorted(set(labels))
    if len(classes) != 2:
        raise TrainingError(f"binary training needs exactly two classes, got {classes}")
    if not reg > 0:
        raise ContractError(f"reg must be positive, got {reg}")
    if not lr > 0:
        raise ContractError(f"lr must be positive, got {lr}")
    if epochs < 0:
        raise ContractError("epochs must be non-negative")
    kernel = kernel.resolve(A)
    t = np.array([1.0 if y == classes[1] else 0.0 for y in labels])
    K = gram(A, None, kernel)
    n = len(t)
    alpha = np.zeros(n)
    bias = 0.0
    history = [_logistic_loss(K, alpha, bias, t, reg)]
    shrink = 1.0 / (1.0 + lr * reg)
    for _ in range(epochs):
        r = (expit(K @ alpha + bias) - t) / n
        with np.errstate(over="ignore", invalid="ignore"):  # caught just below
            alpha = (alpha - lr * (K @ r)) * shrink
            bias -= lr * math.fsum(r.tolist())
            loss = _logistic_loss(K, alpha, bias, t, reg)
        if not math.isfinite(loss) or not np.all(np.isfinite(alpha)):
            raise DivergenceError("training loss became non-finite", "lr")
        history.append(loss)
    return KernelLogisticModel(A, alpha, float(bias), kernel, tuple(classes), tuple(history))


class FunctionScorer:
    """Binary scorer from a function mapping a CSR batch to ``P(class_ids[1])``."""

    def __init__(self, fn: Callable, dim: int, class_ids=(0, 1)):
        self.fn = fn
        self.dim = dim
        self.class_ids = tuple(class_ids)

    def predict_proba(self, samples: SampleSet) -> np.ndarray:
        A = sp.csr_matrix(as_matrix(samples, self.dim))
        p = np.asarray(self.fn(A), dtype=np.float64).ravel()
        if p.shape[0] != A.shape[0]:
            raise ContractError("scoring function returned wrong number of scores")
        out = np.column_stack([1.0 - p, p])
        check_scores(out)
        return out


# -- external process --------------------------------------------------------

class ExternalScorer:
    """Client for a child process answering one JSON line per request line.

    Request:  ``{"id": int, "dim": int, "indices": [...], "values": [...]}``
    Response: ``{"id": int, "scores": [...]}``

    Requests are pipelined; a reader thread routes responses to waiting
    callers by id, so concurrent callers are safe.  Any protocol breach
    (bad JSON, unknown or duplicate id, malformed or unnormalised scores)
    poisons the scorer: every pending and later call raises ProtocolError.
    """

    picklable = False

    def __init__(self, command, dim: int, class_ids=None, timeout: float = 30.0):
        if isinstance(command, subprocess.Popen):
            self.proc = command
        else:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1)
        self.dim = int(dim)
        self.timeout = timeout
        self._class_ids = tuple(class_ids) if class_ids is not None else None
        self._ids = itertools.count(1)
        self._pending: dict[int, Future] = {}
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._error: ProtocolError | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        if self.proc.stderr is not None:
            threading.Thread(target=self._stderr_loop, daemon=True).start()

    @property
    def class_ids(self) -> tuple:
        if self._class_ids is None:
            probe = SparseVector([], [], self.dim)
            n = len(self._request([probe])[0])
            self._class_ids = tuple(range(n))
        return self._class_ids

    def _stderr_loop(self):
        for line in self.proc.stderr:
            log.warning("external scorer stderr: %s", line.rstrip("\n"))

    def _fail(self, err: ProtocolError):
        with self._lock:
            if self._error is None:
                self._error = err
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(err)

    def _read_loop(self):
        for raw in self.proc.stdout:
            line = raw.rstrip("\n")
            try:
                msg = json.loads(line)
                rid = msg["id"]
                scores = msg["scores"]
                if not isinstance(rid, int) or not isinstance(scores, list):
                    raise TypeError
            except (ValueError, KeyError, TypeError):
                self._fail(ProtocolError("malformed response", line))
                continue
            with self._lock:
                fut = self._pending.pop(rid, None)
            if fut is None:
                self._fail(ProtocolError(f"response id {rid} matches no pending request", line))
                continue
            try:
                arr = np.asarray(scores, dtype=np.float64)
                if arr.ndim != 1 or arr.size == 0:
                    raise ContractError("scores not a non-empty list")
                check_scores(arr)
                if self._class_ids is not None and arr.size != len(self._class_ids):
                    raise ContractError(
                        f"expected {len(self._class_ids)} scores, got {arr.size}")
            except (ContractError, ValueError, TypeError) as exc:
                err = ProtocolError(str(exc), line)
                fut.set_exception(err)
                self._fail(err)
                continue
            fut.set_result(arr)
        self._fail(ProtocolError("external scorer closed its output"))

    def _request(self, rows: list[SparseVector]) -> list[np.ndarray]:
        futures = []
        with self._write_lock:
            lines = []
            for x in rows:
                if x.dim != self.dim:
                    raise ContractError(f"dimension mismatch: {x.dim} != {self.dim}")
                rid = next(self._ids)
                fut = Future()
                with self._lock:
                    if self._error is not None:
                        raise self._error
                    self._pending[rid] = fut
                futures.append(fut)
                lines.append(json.dumps({"id": rid, "dim": x.dim,
                                         "indices": x.indices.tolist(),
                                         "values": x.values.tolist()}))
            try:
                self.proc.stdin.write("\n".join(lines) + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                err = ProtocolError(f"cannot write to external scorer: {exc}")
                self._fail(err)
                raise err from exc
        out = []
        for fut in futures:
            try:
                out.append(fut.result(timeout=self.timeout))
            except FutureTimeout:
                err = ProtocolError(f"external scorer timed out after {self.timeout}s")
                self._fail(err)
                raise err from None
        return out

    def predict_proba(self, samples: SampleSet) -> np.ndarray:
        A = as_matrix(samples, self.dim)
        rows = rows_of(A) if sp.issparse(A) else [SparseVector.from_dense(r) for r in A]
        if not rows:
            return np.zeros((0, len(self.class_ids)))
        result = np.vstack(self._request(rows))
        if self._class_ids is None:
            self._class_ids = tuple(range(result.shape[1]))
        elif result.shape[1] != len(self._class_ids):
            raise ProtocolError(f"expected {len(self._class_ids)} scores per row")
        return result

    def close(self):
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except (subprocess.TimeoutExpired, OSError):
            self.proc.kill()
            self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_scorer(handle, dim: int, class_ids=None, timeout: float = 30.0) -> ExternalScorer:
    return ExternalScorer(handle, dim, class_ids, timeout)
