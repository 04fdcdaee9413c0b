import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from limeshift.blackbox import (FunctionScorer, KernelLogisticModel, ScoreVector, check_scores,
                                load_model, predict_proba, save_model, train_kernel_logistic)
from limeshift.errors import ContractError, DivergenceError, TrainingError
from limeshift.numkit import KernelSpec, SparseVector, gram

import oracles
from conftest import sv


def model_with(support, coeffs, bias, gamma=1.0):
    return KernelLogisticModel(sp.csr_matrix(np.asarray(support, dtype=float)),
                               np.asarray(coeffs, dtype=float), bias,
                               KernelSpec("rbf", gamma), (0, 1))


# -- prediction --------------------------------------------------------------

def test_zero_model_scores_half():
    m = model_with([[1, 0], [0, 1]], [0, 0], 0.0)
    assert predict_proba(m, sv([3, 4])).scores == (0.5, 0.5)


def test_large_bias_saturates():
    m = model_with([[1, 0]], [0], 20.0)
    assert predict_proba(m, sv([0, 1]))[1] > 0.999


def test_single_support_point_gives_sigmoid_one():
    m = model_with([[1, 2]], [1.0], 0.0)
    assert predict_proba(m, sv([1, 2]))[1] == pytest.approx(0.7310586, abs=1e-7)


def test_dimension_mismatch():
    m = model_with([[1, 2]], [1.0], 0.0)
    with pytest.raises(ContractError):
        predict_proba(m, sv([1, 2, 3]))


def test_score_vector_contract():
    ScoreVector((0.25, 0.75), (0, 1))
    with pytest.raises(ContractError, match="scores not normalized"):
        ScoreVector((0.6, 0.6), (0, 1))
    with pytest.raises(ContractError):
        ScoreVector((1.5, -0.5), (0, 1))
    with pytest.raises(ContractError):
        check_scores(np.array([[math.nan, 1.0]]))


# -- training ----------------------------------------------------------------

def test_orthogonal_pair_matches_loop_oracle():
    X = np.eye(2)
    kernel = KernelSpec("rbf", 1.0)
    model = train_kernel_logistic(X, [1, 0], kernel, reg=1e-3, epochs=200, lr=0.5)
    K = gram(X, None, kernel).tolist()
    alpha, bias = oracles.gd_kernel_logistic(K, [1.0, 0.0], 1e-3, 0.5, 200)
    np.testing.assert_allclose(model.dual_coeffs, alpha, rtol=0, atol=1e-12)
    assert model.bias == pytest.approx(bias, abs=1e-12)
    p = model.predict_proba(X)[:, 1]
    assert p[0] > 0.5 > p[1]


def test_random_problem_matches_loop_oracle():
    rng = np.random.default_rng(4)
    X = rng.poisson(1.0, size=(12, 6)).astype(float)
    t = [int(v) for v in rng.integers(0, 2, 12)]
    t[0], t[1] = 0, 1
    kernel = KernelSpec("rbf", 0.2)
    model = train_kernel_logistic(X, t, kernel, reg=0.01, epochs=60, lr=0.05)
    alpha, bias = oracles.gd_kernel_logistic(gram(X, None, kernel).tolist(),
                                             [float(v) for v in t], 0.01, 0.05, 60)
    np.testing.assert_allclose(model.dual_coeffs, alpha, rtol=0, atol=1e-12)
    assert model.bias == pytest.approx(bias, abs=1e-12)


def test_symmetric_data_scores_half():
    X = np.array([[1.0, 2.0], [1.0, 2.0]])
    model = train_kernel_logistic(X, [0, 1], KernelSpec("rbf", 1.0))
    np.testing.assert_allclose(model.predict_proba(X), 0.5, atol=1e-6)


def test_huge_regularisation_shrinks_to_half():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20, 3))
    y = [0] * 10 + [1] * 10
    model = train_kernel_logistic(X, y, KernelSpec("rbf", 0.5), reg=1e6)
    assert np.max(np.abs(model.dual_coeffs)) < 1e-5
    np.testing.assert_allclose(model.predict_proba(X), 0.5, atol=0.01)


def test_single_class_is_a_training_error():
    with pytest.raises(TrainingError):
        train_kernel_logistic(np.eye(3), [1, 1, 1], KernelSpec("rbf", 1.0))


def test_non_finite_loss_names_hyperparameter():
    with pytest.raises(DivergenceError) as info:
        train_kernel_logistic(np.eye(2), [0, 1], KernelSpec("rbf", 1.0), lr=math.inf, epochs=3)
    assert info.value.hyperparameter == "lr"
    assert "lr" in str(info.value)


def test_training_is_bitwise_deterministic():
    rng = np.random.default_rng(6)
    X = sp.csr_matrix(rng.poisson(0.5, size=(30, 15)).astype(float))
    y = [i % 2 for i in range(30)]
    a = train_kernel_logistic(X, y, KernelSpec("rbf"), epochs=100)
    b = train_kernel_logistic(X, y, KernelSpec("rbf"), epochs=100)
    assert a.dual_coeffs.tobytes() == b.dual_coeffs.tobytes()
    assert a.bias == b.bias


def test_bundled_training_converges(bundled_model, bundled_train):
    hist = np.asarray(bundled_model.history)
    assert np.all(np.diff(hist) <= 0.0)
    acc = np.mean([p == t for p, t in zip(bundled_model.predict(bundled_train.X),
                                          bundled_train.labels)])
    assert acc >= 0.95


def test_bundled_scores_obey_contract(bundled_model, bundled_test):
    check_scores(bundled_model.predict_proba(bundled_test.X))


# -- model files -------------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    X = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    model = train_kernel_logistic(X, [0, 1, 1], KernelSpec("rbf", 0.3), epochs=50)
    path = tmp_path / "m.json"
    save_model(model, path)
    obj = json.loads(path.read_text())
    assert list(obj) == ["kind", "kernel", "gamma", "bias", "dual_coeffs", "support_set",
                         "class_ids", "dim"]
    again = load_model(path)
    np.testing.assert_array_equal(again.predict_proba(X), model.predict_proba(X))
    save_model(again, tmp_path / "m2.json")
    assert (tmp_path / "m2.json").read_bytes() == path.read_bytes()


def test_unknown_model_kind():
    with pytest.raises(ContractError):
        KernelLogisticModel.from_json({"kind": "svm"})


def test_function_scorer_checks_range():
    f = FunctionScorer(lambda A: np.full(A.shape[0], 1.5), dim=2)
    with pytest.raises(ContractError):
        f.predict_proba([SparseVector([0], [1.0], 2)])
