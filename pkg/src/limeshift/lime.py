"""Sparse linear explanations.

Pipeline for one instance ``x`` and class ``y``:

1. draw ``n`` perturbations, each keeping a random non-empty subset of the
   non-zero features of ``x``;
2. encode them as binary rows over the support of ``x``;
3. weight each row by its kernel proximity to ``x``;
4. pick up to ``K`` columns with the LARS-LASSO path on the weighted problem;
5. fit a weighted ridge surrogate on those columns against ``f_y``;
6. report the surrogate weights and the proximity-weighted squared loss.

Randomness is injected as rows of uniforms in [0, 1), one row per
perturbation, so any row can be regenerated from its key alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .blackbox import class_column
from .errors import ContractError, SelectionError, SolverError, StageError
from .numkit import KernelSpec, SparseVector, as_matrix, gram, rows_of


def uniform_rows(seed: int, key: tuple, n_rows: int, width: int) -> np.ndarray:
    """Uniforms in [0, 1) from a Philox stream keyed by ``(seed, *key)``.

    Row ``r`` depends only on ``(seed, key, width, r)``; asking for more rows
    extends the matrix without changing earlier rows.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.random((n_rows, width))


def partial_fisher_yates(size: int, k: int, uniforms) -> list[int]:
    """First ``k`` positions of a Fisher-Yates shuffle of ``range(size)``.

    Step ``i`` swaps position ``i`` with ``i + floor(u_i * (size - i))``.
    Returns the chosen positions in ascending order.
    """
    if not 0 <= k <= size:
        raise ContractError(f"cannot choose {k} of {size}")
    if len(uniforms) < k:
        raise ContractError(f"need {k} uniforms, got {len(uniforms)}")
    perm = list(range(size))
    for i in range(k):
        j = i + min(int(math.floor(uniforms[i] * (size - i))), size - i - 1)
        perm[i], perm[j] = perm[j], perm[i]
    return sorted(perm[:k])


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    parent: SparseVector
    z_binary: np.ndarray  # (n, d_nz) of {0, 1}
    proximities: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.z_binary.shape[0]

    @property
    def z_matrix(self) -> sp.csr_matrix:
        """Perturbations in the original feature space."""
        vals = self.z_binary * self.parent.values[None, :]
        dense_cols = sp.csr_matrix(vals)
        select = sp.csr_matrix(
            (np.ones(self.parent.nnz), (np.arange(self.parent.nnz), self.parent.indices)),
            shape=(self.parent.nnz, self.parent.dim))
        out = (dense_cols @ select).tocsr()
        out.sort_indices()
        return out

    @property
    def z_rows(self) -> list[SparseVector]:
        return rows_of(self.z_matrix)

    def with_proximities(self, d: np.ndarray) -> "PerturbationSet":
        return PerturbationSet(self.parent, self.z_binary, np.asarray(d, dtype=np.float64))


def perturb(x: SparseVector, n: int, uniforms) -> PerturbationSet:
    """Draw ``n`` perturbations of ``x``.

    Row ``r`` of ``uniforms`` drives perturbation ``r``: its first value sets
    the keep-count ``k = 1 + floor(u * d_nz)`` and the next ``k`` values drive
    a partial Fisher-Yates choice of which support positions survive.  Rows
    may be ragged as long as each holds ``1 + k`` values.
    """
    d = x.nnz
    if d == 0:
        raise ContractError("instance has no non-zero features to perturb")
    if n < 1:
        raise ContractError(f"need at least one perturbation, got {n}")
    if len(uniforms) < n:
        raise ContractError(f"need {n} rows of uniforms, got {len(uniforms)}")

    if isinstance(uniforms, np.ndarray) and uniforms.ndim == 2 and uniforms.shape[1] >= d + 1:
        U = uniforms[:n]
        keep = np.clip(1 + np.floor(U[:, 0] * d).astype(np.int64), 1, d)
        perm = np.tile(np.arange(d), (n, 1))
        rows = np.arange(n)
        # steps past a row's keep-count do not touch its first k positions
        for i in range(int(keep.max())):
            j = i + np.minimum(np.floor(U[:, 1 + i] * (d - i)).astype(np.int64), d - i - 1)
            pi, pj = perm[rows, i].copy(), perm[rows, j]
            perm[rows, i] = pj
            perm[rows, j] = pi
        z = (np.arange(d)[None, :] < keep[:, None])
        binary = np.zeros((n, d), dtype=np.uint8)
        r_idx, c_idx = np.nonzero(z)
        binary[r_idx, perm[r_idx, c_idx]] = 1
    else:
        binary = np.zeros((n, d), dtype=np.uint8)
        for r in range(n):
            u = list(uniforms[r])
            if not u:
                raise ContractError(f"uniform row {r} is empty")
            k = min(max(1 + int(math.floor(u[0] * d)), 1), d)
            binary[r, partial_fisher_yates(d, k, u[1:])] = 1
    return PerturbationSet(x, binary)


def to_interpretable(pset: PerturbationSet) -> np.ndarray:
    return pset.z_binary


def proximity_weights(pset: PerturbationSet, pi: KernelSpec) -> np.ndarray:
    """``D_i = pi(z_i, x)``."""
    Z = pset.z_matrix
    x = as_matrix([pset.parent])
    if not pi.resolved:
        pi = pi.resolve(sp.vstack([Z, x], format="csr"))
    return gram(Z, x, pi)[:, 0]


def _weighted_center(A: np.ndarray, w: np.ndarray):
    mean = (w @ A) / w.sum()
    return A - mean, mean


def prepare_weighted_design(Zb, D, y):
    """Weighted centring, sqrt(D) row scaling and unit-norm columns.

    Returns the prepared design, prepared target and the boolean mask of
    informative (non-zero-variance) columns.  Uninformative columns are
    left as zeros.
    """
    A = np.asarray(Zb, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.shape[0] != D.shape[0] or A.shape[0] != y.shape[0]:
        raise ContractError("design, weights and targets disagree on row count")
    if np.any(D < 0) or not D.sum() > 0:
        raise ContractError("weights must be non-negative with positive total")
    Ac, _ = _weighted_center(A, D)
    yc = y - (D @ y) / D.sum()
    s = np.sqrt(D)
    Xw = Ac * s[:, None]
    yw = yc * s
    norms = np.sqrt(np.einsum("ij,ij->j", Xw, Xw))
    scale = max(1.0, float(np.sqrt(D.sum())))
    informative = norms > 1e-10 * scale
    Xw[:, informative] /= norms[informative]
    Xw[:, ~informative] = 0.0
    return Xw, yw, informative


def lars_lasso_path(X: np.ndarray, y: np.ndarray, max_active: int,
                    usable: np.ndarray | None = None, tol: float = 1e-12) -> list[int]:
    """LARS with the lasso modification on a prepared design.

    Walks the path until ``max_active`` variables are active or the residual
    correlation vanishes.  Returns the active set in order of (last) entry.
    """
    n, p = X.shape
    usable = np.ones(p, dtype=bool) if usable is None else usable.copy()
    active: list[int] = []
    signs: list[float] = []
    beta = np.zeros(p)
    mu = np.zeros(n)
    scale = max(float(np.linalg.norm(y)), 1.0)
    drop_guard = -1

    for _ in range(8 * p + 8):
        c = X.T @ (y - mu)
        inactive = [j for j in range(p) if usable[j] and j not in active]
        if not active:
            if not inactive:
                break
            top = max(abs(c[k]) for k in inactive)
            if top <= tol * scale:
                break
            # duplicate columns can differ by rounding in the BLAS product;
            # treat near-equal correlations as tied and take the lowest id
            j = min(k for k in inactive if abs(c[k]) >= top * (1.0 - 1e-12))
            active.append(j)
            signs.append(float(np.sign(c[j])))
            continue
        C = max(abs(c[j]) for j in active)
        if C <= tol * scale:
            break

        XA = X[:, active] * np.asarray(signs)[None, :]
        G = XA.T @ XA
        ones = np.ones(len(active))
        try:
            w_raw = np.linalg.solve(G, ones)
            ok = np.all(np.isfinite(w_raw)) and float(ones @ w_raw) > 0
            if ok:
                resid = np.linalg.norm(G @ w_raw - ones)
                ok = resid <= 1e-8 * max(1.0, np.linalg.norm(w_raw))
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            # newest variable is collinear with the active set
            bad = active.pop()
            signs.pop()
            usable[bad] = False
            continue
        AA = 1.0 / math.sqrt(float(ones @ w_raw))
        w = AA * w_raw
        u = XA @ w
        a = X.T @ u

        gamma_hat = C / AA
        enter = None
        for j in inactive:
            for num, den in ((C - c[j], AA - a[j]), (C + c[j], AA + a[j])):
                if den > tol:
                    g = num / den
                    if tol < g < gamma_hat:
                        gamma_hat, enter = g, j
        direction = np.asarray(signs) * w
        beta_a = beta[active]
        drop = None
        gamma_tilde = math.inf
        for pos, (b, dj) in enumerate(zip(beta_a, direction)):
            if dj != 0 and active[pos] != drop_guard:
                g = -b / dj
                if tol < g < gamma_tilde:
                    gamma_tilde, drop = g, pos

        if drop is not None and gamma_tilde < gamma_hat:
            step = gamma_tilde
            mu = mu + step * u
            beta[active] = beta_a + step * direction
            gone = active.pop(drop)
            signs.pop(drop)
            beta[gone] = 0.0
            drop_guard = gone
            continue

        mu = mu + gamma_hat * u
        beta[active] = beta_a + gamma_hat * direction
        drop_guard = -1
        if enter is None or C - gamma_hat * AA <= tol * scale:
            break  # reached the least-squares fit on the active set
        if len(active) >= max_active:
            break
        active.append(enter)
        signs.append(float(np.sign(c[enter] - gamma_hat * a[enter])))
    return list(active[:max_active])


def lars_lasso_select(Zb, D, y, K: int) -> list[int]:
    """Column ids of the interpretable design chosen by the LARS-LASSO path."""
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    X, yw, informative = prepare_weighted_design(Zb, D, y)
    if not informative.any():
        raise SelectionError("no informative interpretable features")
    return lars_lasso_path(X, yw, K, informative)


def fit_weighted_ridge(Zreg, D, y, ridge: float):
    """Closed-form weighted ridge with an unpenalised intercept.

    Minimises ``sum D_i (y_i - w.row_i - b)^2 + ridge * ||w||^2`` and returns
    ``(w, b)``.
    """
    if ridge < 0:
        raise ContractError(f"ridge must be non-negative, got {ridge}")
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.asarray(Zreg, dtype=np.float64).reshape(len(y), -1)
    if A.shape[0] != D.shape[0]:
        raise ContractError("design and weights disagree on row count")
    total = D.sum()
    if not total > 0:
        raise ContractError("weights must have positive total")
    ybar = float(D @ y) / total
    if A.shape[1] == 0:
        return np.zeros(0), ybar
    Ac, xbar = _weighted_center(A, D)
    yc = y - ybar
    M = Ac.T @ (Ac * D[:, None]) + ridge * np.eye(A.shape[1])
    rhs = Ac.T @ (D * yc)
    if ridge == 0 and np.linalg.matrix_rank(M) < A.shape[1]:
        raise SolverError("normal equations are singular at ridge = 0; use ridge > 0")
    try:
        w = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"normal equations could not be solved ({exc}); use ridge > 0") from exc
    return w, ybar - float(xbar @ w)


def lime_loss(f_scores, g_scores, D) -> float:
    f = np.asarray(f_scores, dtype=np.float64)
    g = np.asarray(g_scores, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if not f.shape == g.shape == D.shape:
        raise ContractError(f"length mismatch: {f.shape}, {g.shape}, {D.shape}")
    return math.fsum((D * (f - g) ** 2).tolist())


@dataclass(frozen=True)
class Explanation:
    class_id: object
    features: tuple            # ((feature id, weight), ...) by |weight| desc
    intercept: float
    selected: tuple            # feature ids in path-entry order
    loss: float
    n_samples: int
    seed: int
    support: tuple = field(default=(), repr=False)  # parent support, column order of Z'
    selected_columns: tuple = field(default=(), repr=False)
    column_weights: tuple = field(default=(), repr=False)

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "features": [[int(f), float(w)] for f, w in self.features],
            "intercept": float(self.intercept),
            "selected": [int(f) for f in self.selected],
            "loss": float(self.loss),
            "n_samples": int(self.n_samples),
            "seed": int(self.seed),
        }


def rank_features(pairs) -> list:
    """Sort ``(feature id, weight)`` by ``|weight|`` descending, ties by ascending id."""
    return sorted(pairs, key=lambda p: (-abs(p[1]), p[0]))


def surrogate_score(expl: Explanation, z_binary_row) -> float:
    """``g(z')`` for a binary row over the parent support."""
    row = np.asarray(z_binary_row, dtype=np.float64)
    terms = [expl.intercept]
    terms += [w * row[c] for c, w in zip(expl.selected_columns, expl.column_weights)]
    return math.fsum(terms)


def surrogate_at_instance(expl: Explanation) -> float:
    """``g_y(x)``: the surrogate on the all-ones row."""
    return math.fsum([expl.intercept, *expl.column_weights])


@dataclass(frozen=True, eq=False)
class LimeRun:
    explanation: Explanation
    perturbations: PerturbationSet
    scores: np.ndarray   # full black-box score matrix on Z
    fitted: np.ndarray   # surrogate values on Z'


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_lime(x: SparseVector, y, f, n: int, K: int, pi: KernelSpec | None = None,
             ridge: float = 1.0, seed: int = 0, instance_id: int = 0,
             allow_empty: bool = False) -> LimeRun:
    """Explain ``f``'s score for class ``y`` at ``x``; returns every intermediate.

    With ``allow_empty`` a perturbation set whose binary columns are all
    constant yields an intercept-only surrogate instead of a SelectionError.
    """
    pi = pi or KernelSpec("cosine")
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    if x.dim != f.dim:
        raise ContractError(f"dimension mismatch: instance {x.dim} vs scorer {f.dim}")
    col = class_column(f, y)
    uniforms = uniform_rows(seed, (instance_id, n), n, x.nnz + 1)
    pset = _stage("perturb", perturb, x, n, uniforms)
    Zb = to_interpretable(pset)
    D = _stage("proximity", proximity_weights, pset, pi)
    pset = pset.with_proximities(D)
    scores = _stage("score", f.predict_proba, pset.z_matrix)
    fy = scores[:, col]
    try:
        cols = lars_lasso_select(Zb, D, fy, K)
    except SelectionError as exc:
        if not allow_empty:
            raise StageError("select", exc) from exc
        cols = []
    except Exception as exc:  # noqa: BLE001
        raise StageError("select", exc) from exc
    w, b = _stage("fit", fit_weighted_ridge, Zb[:, cols], D, fy, ridge)
    # same summation as surrogate_score, so g(z') is reproduced bit for bit
    sub = Zb[:, cols].astype(np.float64)
    fitted = np.array([math.fsum([b, *(row * w).tolist()]) for row in sub]) if cols \
        else np.full(len(fy), float(b))
    loss = lime_loss(fy, fitted, D)

    support = tuple(int(i) for i in x.indices)
    pairs = rank_features((support[c], float(wc)) for c, wc in zip(cols, w))
    expl = Explanation(
        class_id=y, features=tuple(pairs[:K]), intercept=float(b),
        selected=tuple(support[c] for c in cols), loss=loss, n_samples=n, seed=seed,
        support=support, selected_columns=tuple(int(c) for c in cols),
        column_weights=tuple(float(v) for v in w))
    return LimeRun(expl, pset, scores, fitted)


def explain(x: SparseVector, y, f, n: int = 5000, K: int = 6, pi: KernelSpec | None = None,
            ridge: float = 1.0, seed: int = 0, instance_id: int = 0) -> Explanation:
    return run_lime(x, y, f, n, K, pi, ridge, seed, instance_id).explanation
