"""Shift and fidelity audit of LIME explanations.

For every explained instance ``x`` and perturbation count ``n``:

* a reference set of ``n`` training instances is chosen, either the ``n``
  nearest neighbours of ``x`` or a random draw from the training instances
  the black box assigns to the same class as ``x``;
* LIME draws ``n`` perturbations ``Z`` and fits its surrogate;
* a data-shift test compares the reference set with ``Z`` in feature space;
* a label-shift test compares black-box scores on the two sets;
* fidelity ``1 / (|f_y(x) - g_y(x)| + 1)`` scores the surrogate at ``x``.

Results are aggregated per ``n`` into reject counts, mean and population
standard deviation of the statistics, and the Pearson correlation between
MMD and fidelity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import __version__
from .blackbox import class_column
from .datasets import Dataset
from .errors import AuditError, ConfigError, ContractError, LimeShiftError
from .lime import partial_fisher_yates, run_lime, surrogate_at_instance, uniform_rows
from .mmd import TwoSampleResult, two_sample_test
from .numkit import KernelSpec, SparseVector, as_matrix, gram

log = logging.getLogger(__name__)

DEFAULT_N_GRID = (2, 5, 10, 20, 50, 100, 200, 500)
TESTS = ("data", "label")

# stream tags so reference draws never reuse LIME's uniforms
_CLASS_REF_TAG = 1
_NULL_SPLIT_TAG = 2


class CorrelationUndefined(ContractError):
    pass


@dataclass(frozen=True)
class AuditConfig:
    seed: int = 0
    alpha: float = 0.05
    n_grid: tuple = DEFAULT_N_GRID
    K: int = 6
    ridge: float = 1.0
    class_id: object = 1
    lime_kernel: KernelSpec = field(default_factory=lambda: KernelSpec("cosine"))
    knn_kernel: KernelSpec = field(default_factory=lambda: KernelSpec("cosine"))
    data_kernel: KernelSpec = field(default_factory=lambda: KernelSpec("cosine"))
    label_kernel: KernelSpec = field(default_factory=lambda: KernelSpec("rbf"))
    reference: str = "knn"
    label_mode: str = "vector"
    null_mode: str = "off"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(n < 1 for n in grid) or list(grid) != sorted(set(grid)):
            raise ConfigError(f"n_grid must be non-empty, positive and strictly ascending: {grid}")
        object.__setattr__(self, "n_grid", grid)
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be non-negative, got {self.ridge}")
        if self.reference not in ("knn", "class"):
            raise ConfigError(f"reference must be 'knn' or 'class', got {self.reference!r}")
        if self.label_mode not in ("vector", "scalar"):
            raise ConfigError(f"label_mode must be 'vector' or 'scalar', got {self.label_mode!r}")
        if self.null_mode not in ("off", "self", "disjoint"):
            raise ConfigError(f"null_mode must be off, self or disjoint, got {self.null_mode!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_json(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v
        for k in ("lime_kernel", "knn_kernel", "data_kernel", "label_kernel"):
            out[k] = getattr(self, k).to_json()
        out["n_grid"] = list(self.n_grid)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditRow:
    instance_id: int
    n: int
    data_shift: TwoSampleResult
    label_shift: TwoSampleResult
    fidelity: float
    f_y_at_x: float
    g_y_at_x: float
    loss: float

    def test(self, name: str) -> TwoSampleResult:
        return self.data_shift if name == "data" else self.label_shift

    def to_json(self) -> dict:
        return {"instance_id": self.instance_id, "n": self.n,
                "data_shift": self.data_shift.to_json(),
                "label_shift": self.label_shift.to_json(),
                "fidelity": self.fidelity, "f_y_at_x": self.f_y_at_x,
                "g_y_at_x": self.g_y_at_x, "loss": self.loss}

    @classmethod
    def from_json(cls, obj: dict) -> "AuditRow":
        return cls(int(obj["instance_id"]), int(obj["n"]),
                   TwoSampleResult.from_json(obj["data_shift"]),
                   TwoSampleResult.from_json(obj["label_shift"]),
                   float(obj["fidelity"]), float(obj["f_y_at_x"]),
                   float(obj["g_y_at_x"]), float(obj["loss"]))


# -- primitives --------------------------------------------------------------

def fidelity(f_y: float, g_y: float) -> float:
    if not (math.isfinite(f_y) and math.isfinite(g_y)):
        raise ContractError(f"fidelity needs finite scores, got {f_y}, {g_y}")
    return 1.0 / (abs(f_y - g_y) + 1.0)


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; raises CorrelationUndefined on constant input."""
    x = [float(v) for v in xs]
    y = [float(v) for v in ys]
    if len(x) != len(y) or len(x) < 2:
        raise ContractError("pearson needs two equal-length sequences of length >= 2")
    mx = math.fsum(x) / len(x)
    my = math.fsum(y) / len(y)
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise CorrelationUndefined("correlation undefined for constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def knn_indices(train, x: SparseVector, n: int, kernel: KernelSpec | None = None) -> np.ndarray:
    """Indices of the ``n`` most similar training rows; ties go to the lower index."""
    kernel = kernel or KernelSpec("cosine")
    X = train.X if isinstance(train, Dataset) else as_matrix(train)
    if not 1 <= n <= X.shape[0]:
        raise ContractError(f"cannot take {n} neighbours from {X.shape[0]} training instances")
    if not kernel.resolved:
        kernel = kernel.resolve(X)
    sims = gram(X, as_matrix([x], X.shape[1]), kernel)[:, 0]
    order = np.lexsort((np.arange(len(sims)), -sims))
    return order[:n]


def knn_reference(train, x: SparseVector, n: int, kernel: KernelSpec | None = None):
    X = train.X if isinstance(train, Dataset) else as_matrix(train)
    return X[knn_indices(X, x, n, kernel)]


def class_conditional_indices(predicted, target, n: int, uniforms) -> np.ndarray:
    """Random ``n`` of the positions where ``predicted == target``."""
    matching = [i for i, p in enumerate(predicted) if p == target]
    if len(matching) < n:
        raise AuditError(
            f"class {target!r} has {len(matching)} matching reference instances, need {n}")
    chosen = partial_fisher_yates(len(matching), n, uniforms)
    return np.asarray([matching[p] for p in chosen], dtype=np.int64)


def _argmax_classes(scorer, scores: np.ndarray) -> list:
    return [scorer.class_ids[c] for c in np.argmax(scores, axis=1)]


def class_conditional_reference(reference, f, x: SparseVector, n: int, uniforms):
    X = reference.X if isinstance(reference, Dataset) else as_matrix(reference)
    pred = _argmax_classes(f, f.predict_proba(X))
    target = _argmax_classes(f, f.predict_proba([x]))[0]
    return X[class_conditional_indices(pred, target, n, uniforms)]


# -- one instance ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InstanceSamples:
    """Both samples of each test, as fed to the two-sample tests."""

    reference: sp.csr_matrix
    perturbed: sp.csr_matrix
    reference_scores: np.ndarray
    perturbed_scores: np.ndarray
    f_y_at_x: float
    g_y_at_x: float
    loss: float


class _Context:
    """Per-audit caches shared by every instance."""

    def __init__(self, f, train: Dataset, config: AuditConfig):
        self.f = f
        self.train = train
        self.config = config
        self.col = class_column(f, config.class_id)
        self._train_scores = None

    @property
    def train_scores(self) -> np.ndarray:
        if self._train_scores is None:
            self._train_scores = self.f.predict_proba(self.train.X)
        return self._train_scores

    def reference_pool(self, x, instance_id, n, size):
        """Training indices of a reference draw of ``size`` rows."""
        cfg = self.config
        if cfg.reference == "knn":
            return knn_indices(self.train.X, x, size, cfg.knn_kernel)
        pred = _argmax_classes(self.f, self.train_scores)
        target = _argmax_classes(self.f, self.f.predict_proba([x]))[0]
        u = uniform_rows(cfg.seed, (instance_id, n, _CLASS_REF_TAG), 1, size)[0]
        return class_conditional_indices(pred, target, size, u)


def _null_split(pool: np.ndarray, n: int, uniforms) -> tuple[np.ndarray, np.ndarray]:
    """Two size-``n`` halves of a shuffled pool; they overlap only if ``2n > len(pool)``."""
    order = partial_fisher_yates_order(len(pool), uniforms)
    shuffled = pool[order]
    return shuffled[:n], shuffled[len(pool) - n:]


def partial_fisher_yates_order(size: int, uniforms) -> np.ndarray:
    perm = list(range(size))
    for i in range(size - 1):
        j = i + min(int(math.floor(uniforms[i] * (size - i))), size - i - 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def instance_samples(x: SparseVector, f, train: Dataset, n: int, config: AuditConfig,
                     instance_id: int = 0, _ctx: _Context | None = None) -> InstanceSamples:
    ctx = _ctx or _Context(f, train, config)
    cfg = config
    run = run_lime(x, cfg.class_id, f, n, cfg.K, cfg.lime_kernel, cfg.ridge, cfg.seed,
                   instance_id, allow_empty=True)
    f_y = float(f.predict_proba([x])[0, ctx.col])
    g_y = surrogate_at_instance(run.explanation)

    if cfg.null_mode == "disjoint":
        if cfg.reference == "knn":
            pool = knn_indices(train.X, x, min(2 * n, len(train)), cfg.knn_kernel)
        else:
            pred = _argmax_classes(f, ctx.train_scores)
            target = _argmax_classes(f, f.predict_proba([x]))[0]
            pool = np.asarray([i for i, p in enumerate(pred) if p == target], dtype=np.int64)
            if len(pool) < n:
                raise AuditError(f"class {target!r} has {len(pool)} matching reference "
                                 f"instances, need {n}")
        u = uniform_rows(cfg.seed, (instance_id, n, _NULL_SPLIT_TAG), 1, max(len(pool), 1))[0]
        ref_idx, other_idx = _null_split(pool, n, u)
        R, Z = train.X[ref_idx], train.X[other_idx]
        fR, fZ = ctx.train_scores[ref_idx], ctx.train_scores[other_idx]
    else:
        ref_idx = ctx.reference_pool(x, instance_id, n, n)
        R = train.X[ref_idx]
        fR = ctx.train_scores[ref_idx]
        if cfg.null_mode == "self":
            Z, fZ = R, fR
        else:
            Z, fZ = run.perturbations.z_matrix, run.scores
    if R.shape[0] != Z.shape[0]:
        raise ContractError("reference and perturbation sets differ in size")
    return InstanceSamples(R, Z, fR, fZ, f_y, g_y, run.explanation.loss)


def label_points(scores: np.ndarray, config: AuditConfig, col: int) -> np.ndarray:
    if config.label_mode == "scalar":
        return scores[:, [col]]
    return scores


def audit_instance(x: SparseVector, f, train: Dataset, n: int, config: AuditConfig,
                   instance_id: int = 0, _ctx: _Context | None = None) -> AuditRow:
    ctx = _ctx or _Context(f, train, config)
    try:
        s = instance_samples(x, f, train, n, config, instance_id, ctx)
        data = two_sample_test(s.reference, s.perturbed, config.data_kernel, config.alpha)
        label = two_sample_test(label_points(s.reference_scores, config, ctx.col),
                                label_points(s.perturbed_scores, config, ctx.col),
                                config.label_kernel, config.alpha)
    except LimeShiftError as exc:
        raise AuditError(f"instance {instance_id} (n={n}): {exc}", instance_id) from exc
    return AuditRow(instance_id, n, data, label, fidelity(s.f_y_at_x, s.g_y_at_x),
                    s.f_y_at_x, s.g_y_at_x, s.loss)


# -- whole dataset -----------------------------------------------------------

def _mean_std(values) -> tuple[float, float]:
    v = [float(a) for a in values]
    mean = math.fsum(v) / len(v)
    var = math.fsum((a - mean) ** 2 for a in v) / len(v)
    return mean, math.sqrt(var)


def aggregate(rows: list[AuditRow], n_grid) -> list[dict]:
    """Per-``n`` summary rows in grid order."""
    out = []
    for n in n_grid:
        sel = [r for r in rows if r.n == n]
        if not sel:
            continue
        fid_mean, fid_std = _mean_std(r.fidelity for r in sel)
        entry = {"n": n, "instances": len(sel),
                 "fidelity_mean": fid_mean, "fidelity_std": fid_std}
        for name in TESTS:
            res = [r.test(name) for r in sel]
            rejects = sum(1 for t in res if t.reject)
            mmd_mean, mmd_std = _mean_std(t.mmd_b for t in res)
            sc_mean, sc_std = _mean_std(t.scaled_stat for t in res)
            try:
                corr = pearson([t.mmd_b for t in res], [r.fidelity for r in sel])
            except (CorrelationUndefined, ContractError):
                corr = None
            entry[name] = {
                "reject_count": rejects,
                "fail_count": len(sel) - rejects,
                "reject_fraction": rejects / len(sel),
                "mmd_mean": mmd_mean, "mmd_std": mmd_std,
                "scaled_mean": sc_mean, "scaled_std": sc_std,
                "threshold": res[0].threshold,
                "pearson_mmd_fidelity": corr,
            }
        out.append(entry)
    return out


@dataclass(frozen=True)
class AuditReport:
    aggregates: list
    rows: list
    provenance: dict

    def to_json(self) -> dict:
        return {"provenance": self.provenance, "aggregates": self.aggregates,
                "rows": [r.to_json() for r in self.rows]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "AuditReport":
        return cls(obj["aggregates"], [AuditRow.from_json(r) for r in obj["rows"]],
                   obj["provenance"])

    def aggregate_for(self, n: int) -> dict:
        for a in self.aggregates:
            if a["n"] == n:
                return a
        raise KeyError(n)


_WORKER: dict = {}


def _init_worker(f, train, test, config):
    _WORKER["ctx"] = _Context(f, train, config)
    _WORKER["test"] = test


def _audit_task(instance_id: int):
    ctx = _WORKER["ctx"]
    x = _WORKER["test"][instance_id]
    rows, errors = [], []
    for n in ctx.config.n_grid:
        try:
            rows.append(audit_instance(x, ctx.f, ctx.train, n, ctx.config, instance_id, ctx))
        except AuditError as exc:
            errors.append((instance_id, n, str(exc)))
    return rows, errors


def audit_dataset(test: Dataset, f, train: Dataset, config: AuditConfig, jobs: int = 1,
                  provenance: dict | None = None, instances=None) -> AuditReport:
    """Audit every test instance at every ``n`` in ``config.n_grid``.

    ``jobs > 1`` fans instances out to worker processes (threads when the
    scorer cannot be pickled); results do not depend on ``jobs``.  If any
    instance fails, AuditError is raised after all instances ran, carrying
    the completed rows and every failure.
    """
    ids = list(range(len(test))) if instances is None else [int(i) for i in instances]
    if not ids:
        raise ContractError("empty test set")
    if config.reference == "knn" and max(config.n_grid) > len(train):
        raise ConfigError(f"n = {max(config.n_grid)} exceeds {len(train)} training instances")
    results = []
    if jobs <= 1:
        _init_worker(f, train, test, config)
        results = [_audit_task(i) for i in ids]
    else:
        picklable = getattr(f, "picklable", True)
        if picklable:
            pool = ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                       initargs=(f, train, test, config))
        else:
            _init_worker(f, train, test, config)
            pool = ThreadPoolExecutor(max_workers=jobs)
        with pool:
            results = list(pool.map(_audit_task, ids, chunksize=1 if not picklable else
                                    max(1, len(ids) // (4 * jobs))))
    rows = sorted((r for rs, _ in results for r in rs), key=lambda r: (r.instance_id, r.n))
    failures = [e for _, es in results for e in es]
    if failures:
        first = failures[0]
        raise AuditError(f"{len(failures)} audit task(s) failed; first: {first[2]}",
                         first[0], rows, failures)
    prov = dict(provenance or {})
    prov.setdefault("artifact_version", __version__)
    prov["seed"] = config.seed
    prov["config"] = config.to_json()
    prov["config_digest"] = config.digest()
    prov.setdefault("train_digest", train.digest())
    prov.setdefault("test_digest", test.digest())
    prov["instances"] = len(ids)
    return AuditReport(aggregate(rows, config.n_grid), rows, prov)
