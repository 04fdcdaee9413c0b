import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from limeshift.audit import (AuditConfig, AuditReport, AuditRow, CorrelationUndefined, aggregate,
                             audit_dataset, audit_instance, class_conditional_indices,
                             class_conditional_reference, fidelity, instance_samples,
                             knn_indices, knn_reference, label_points, pearson)
from limeshift.blackbox import ExternalScorer, FunctionScorer
from limeshift.datasets import Dataset
from limeshift.errors import AuditError, ConfigError, ContractError
from limeshift.mmd import two_sample_test
from limeshift.numkit import SparseVector, cosine_kernel

from conftest import echo_command, sv

GOLDEN = Path(__file__).parent / "golden"


def dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


# -- fidelity and correlation ------------------------------------------------

def test_fidelity_examples():
    assert fidelity(0.4, 0.4) == 1.0
    assert fidelity(0.0, 1.0) == 0.5
    assert fidelity(0.8, 0.6) == pytest.approx(0.8333333, abs=1e-7)
    with pytest.raises(ContractError):
        fidelity(math.nan, 0.5)
    with pytest.raises(ContractError):
        fidelity(0.5, math.inf)


grid = st.integers(0, 10_000).map(lambda k: k / 10_000)


@given(grid, grid, grid)
def test_fidelity_range_and_monotonicity(f, g, h):
    v = fidelity(f, g)
    assert 0.0 < v <= 1.0
    assert (v == 1.0) == (f == g)
    if abs(f - g) < abs(f - h):
        assert fidelity(f, g) > fidelity(f, h)


def test_pearson_examples():
    xs = [0.3, 1.0, 2.5, 4.0]
    assert pearson(xs, [2 * x + 1 for x in xs]) == pytest.approx(1.0)
    assert pearson(xs, [-x for x in xs]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    with pytest.raises(CorrelationUndefined):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ContractError):
        pearson([1.0], [2.0])


# -- reference sets ----------------------------------------------------------

def test_knn_self_is_nearest(bundled_train):
    x = bundled_train[17]
    assert knn_indices(bundled_train, x, 1).tolist() == [17]


def test_knn_hand_example():
    train = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    assert knn_indices(train, sv([1, 0]), 2).tolist() == [0, 1]
    with pytest.raises(ContractError):
        knn_indices(train, sv([1, 0]), 4)


def test_knn_ties_and_permutation_invariance():
    rng = np.random.default_rng(0)
    train = rng.poisson(0.7, size=(40, 6)).astype(float)
    train[10] = train[3]
    x = SparseVector.from_dense(train[3] + 0.0)
    base = knn_indices(train, x, 8)
    assert base[:2].tolist() == [3, 10]
    sims = np.array([cosine_kernel(SparseVector.from_dense(r), x) for r in train])
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(40)
        permuted = perm[knn_indices(train[perm], x, 8)]
        # equal-similarity rows may swap across the cut; the similarities may not
        np.testing.assert_array_equal(sims[permuted], sims[base])
        cut = sims[base[-1]]
        assert (sorted(permuted[sims[permuted] != cut].tolist())
                == sorted(base[sims[base] != cut].tolist()))
    np.testing.assert_array_equal(dense(knn_reference(train, x, 3)), train[base[:3]])


def test_class_conditional_hand_example():
    assert class_conditional_indices(["a", "b", "a", "a"], "a", 2, [0.0, 0.5]).tolist() == [0, 3]
    assert class_conditional_indices([1, 1, 1], 1, 3, [0.9, 0.9, 0.9]).tolist() == [0, 1, 2]
    with pytest.raises(AuditError, match="class 2 has 0"):
        class_conditional_indices([1, 1, 1], 2, 1, [0.1])


def test_class_conditional_reference_uses_predicted_class():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0], [1.0, 0.1]])
    f = FunctionScorer(lambda A: (A[:, 0].toarray().ravel() > 0.5).astype(float), 2)
    ref = class_conditional_reference(X, f, sv([3.0, 0.0]), 3, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(dense(ref), X[[0, 2, 4]])


# -- one instance ------------------------------------------------------------

def test_golden_row(bundled_model, bundled_train, bundled_test):
    row = audit_instance(bundled_test[0], bundled_model, bundled_train, 20,
                         AuditConfig(seed=42), instance_id=0)
    golden = AuditRow.from_json(json.loads((GOLDEN / "audit_row_i0_n20_s42.json").read_text()))
    assert (row.instance_id, row.n) == (golden.instance_id, golden.n)
    for name in ("data", "label"):
        got, want = row.test(name), golden.test(name)
        assert got.reject == want.reject and got.m == want.m
        for field in ("mmd_b", "scaled_stat", "threshold"):
            assert getattr(got, field) == pytest.approx(getattr(want, field), abs=1e-12)
    for field in ("fidelity", "f_y_at_x", "g_y_at_x", "loss"):
        assert getattr(row, field) == pytest.approx(getattr(golden, field), abs=1e-12)


def test_self_null_mode_never_rejects(bundled_model, bundled_train, bundled_test):
    cfg = AuditConfig(seed=1, null_mode="self")
    for n in (2, 20, 100):
        row = audit_instance(bundled_test[3], bundled_model, bundled_train, n, cfg, 3)
        assert row.data_shift.mmd_b == 0.0 and not row.data_shift.reject
        assert row.label_shift.mmd_b == 0.0 and not row.label_shift.reject


def test_reject_flags_reproducible_from_samples(bundled_model, bundled_train, bundled_test):
    cfg = AuditConfig(seed=3)
    for i, n in [(i, n) for i in range(10) for n in (5, 50)]:
        x = bundled_test[i]
        row = audit_instance(x, bundled_model, bundled_train, n, cfg, i)
        s = instance_samples(x, bundled_model, bundled_train, n, cfg, i)
        assert s.reference.shape[0] == s.perturbed.shape[0] == n
        data = two_sample_test(s.reference, s.perturbed, cfg.data_kernel, cfg.alpha)
        label = two_sample_test(label_points(s.reference_scores, cfg, 1),
                                label_points(s.perturbed_scores, cfg, 1),
                                cfg.label_kernel, cfg.alpha)
        assert data == row.data_shift and label == row.label_shift
        assert 0.0 < row.fidelity <= 1.0
        assert row.fidelity == pytest.approx(1 / (abs(row.f_y_at_x - row.g_y_at_x) + 1),
                                             abs=1e-12)


def test_disjoint_null_split_is_disjoint(bundled_model, bundled_train, bundled_test):
    cfg = AuditConfig(seed=0, null_mode="disjoint")
    s = instance_samples(bundled_test[2], bundled_model, bundled_train, 50, cfg, 2)
    ref = {tuple(r.indices.tolist()) + tuple(r.values.tolist())
           for r in Dataset(s.reference, (0,) * 50).rows()}
    other = {tuple(r.indices.tolist()) + tuple(r.values.tolist())
             for r in Dataset(s.perturbed, (0,) * 50).rows()}
    assert not ref & other


def test_scalar_label_mode(bundled_model, bundled_train, bundled_test):
    cfg = AuditConfig(seed=0, label_mode="scalar")
    row = audit_instance(bundled_test[1], bundled_model, bundled_train, 20, cfg, 1)
    assert row.label_shift.m == 20


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(alpha=1.0), dict(n_grid=()),
                                    dict(n_grid=(5, 2)), dict(K=0), dict(ridge=-1.0),
                                    dict(reference="random"), dict(label_mode="both"),
                                    dict(null_mode="on")])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AuditConfig(**kwargs)


def test_config_digest_depends_on_content():
    assert AuditConfig(seed=1).digest() == AuditConfig(seed=1).digest()
    assert AuditConfig(seed=1).digest() != AuditConfig(seed=2).digest()


# -- whole dataset -----------------------------------------------------------

def small_report(model, train, test, **kw):
    cfg = AuditConfig(seed=5, n_grid=(2, 10, 30), **kw)
    return audit_dataset(test, model, train, cfg, instances=range(6))


def test_aggregate_shape_and_invariants(bundled_model, bundled_train, bundled_test):
    report = small_report(bundled_model, bundled_train, bundled_test)
    assert [a["n"] for a in report.aggregates] == [2, 10, 30]
    assert [(r.instance_id, r.n) for r in report.rows] == [(i, n) for i in range(6)
                                                           for n in (2, 10, 30)]
    for agg in report.aggregates:
        assert agg["instances"] == 6
        assert agg["fidelity_std"] >= 0
        for name in ("data", "label"):
            t = agg[name]
            assert t["reject_count"] + t["fail_count"] == 6
            assert 0.0 <= t["reject_fraction"] <= 1.0
            assert t["mmd_std"] >= 0 and t["scaled_std"] >= 0
    prov = report.provenance
    assert prov["seed"] == 5 and prov["config_digest"] == AuditConfig(
        seed=5, n_grid=(2, 10, 30)).digest()
    assert prov["train_digest"] == bundled_train.digest()


def test_duplicating_instances_doubles_counts(bundled_model, bundled_train, bundled_test):
    report = small_report(bundled_model, bundled_train, bundled_test)
    doubled = aggregate(report.rows + [replace(r, instance_id=r.instance_id + 100)
                                       for r in report.rows], (2, 10, 30))
    for a, b in zip(report.aggregates, doubled):
        assert b["instances"] == 2 * a["instances"]
        for name in ("data", "label"):
            assert b[name]["reject_count"] == 2 * a[name]["reject_count"]
            assert b[name]["reject_fraction"] == a[name]["reject_fraction"]
            assert b[name]["mmd_mean"] == pytest.approx(a[name]["mmd_mean"], rel=1e-15)
        assert b["fidelity_mean"] == pytest.approx(a["fidelity_mean"], rel=1e-15)


def test_undefined_correlation_is_absent_not_zero():
    from limeshift.mmd import TwoSampleResult
    t = TwoSampleResult(0.5, 1.0, 1.0, 0.05, 4, False)
    rows = [AuditRow(i, 4, t, t, 0.9, 0.5, 0.4, 0.1) for i in range(3)]
    agg = aggregate(rows, (4,))[0]
    assert agg["data"]["pearson_mmd_fidelity"] is None


def test_report_json_round_trip(bundled_model, bundled_train, bundled_test):
    report = small_report(bundled_model, bundled_train, bundled_test)
    again = AuditReport.from_json(json.loads(report.dumps()))
    assert again.dumps() == report.dumps()


def test_parallel_runs_match_serial(bundled_model, bundled_train, bundled_test):
    cfg = AuditConfig(seed=8, n_grid=(2, 20))
    serial = audit_dataset(bundled_test, bundled_model, bundled_train, cfg, jobs=1,
                           instances=range(8))
    parallel = audit_dataset(bundled_test, bundled_model, bundled_train, cfg, jobs=3,
                             instances=range(8))
    assert serial.dumps() == parallel.dumps()


def test_external_scorer_audit_uses_threads(bundled_train, bundled_test):
    cfg = AuditConfig(seed=2, n_grid=(5,))
    with ExternalScorer(echo_command("--offset", "40"), bundled_train.dim) as f:
        one = audit_dataset(bundled_test, f, bundled_train, cfg, jobs=1, instances=range(4))
        many = audit_dataset(bundled_test, f, bundled_train, cfg, jobs=4, instances=range(4))
    assert one.dumps() == many.dumps()


def test_partial_failure_collects_rows_and_ids():
    # class-conditional references run out for the minority predicted class
    rng = np.random.default_rng(1)
    X = rng.poisson(1.0, size=(30, 5)).astype(float) + 0.1
    X[:5, 0] = 10.0
    data = Dataset.from_rows([SparseVector.from_dense(r) for r in X], [0] * 30, 5)
    f = FunctionScorer(lambda A: (A[:, 0].toarray().ravel() > 5).astype(float) * 0.8 + 0.1, 5)
    cfg = AuditConfig(seed=0, n_grid=(3, 8), reference="class")
    with pytest.raises(AuditError) as info:
        audit_dataset(data, f, data, cfg, instances=[0, 1, 20])
    err = info.value
    assert [(i, n) for i, n, _ in err.failures] == [(0, 8), (1, 8)]
    assert "class 1 has 5" in err.failures[0][2]
    assert sorted((r.instance_id, r.n) for r in err.partial_rows) == [
        (0, 3), (1, 3), (20, 3), (20, 8)]
