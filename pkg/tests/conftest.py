import sys

import numpy as np
import pytest

from limeshift.blackbox import train_kernel_logistic
from limeshift.cli import bundled_path
from limeshift.datasets import load_svmlight
from limeshift.numkit import KernelSpec, SparseVector


def echo_command(*args):
    """argv for the loopback scorer shipped with the package."""
    return [sys.executable, "-m", "limeshift.echo_scorer", *args]


def sv(dense):
    return SparseVector.from_dense(np.asarray(dense, dtype=np.float64))


@pytest.fixture(scope="session")
def bundled_train():
    return load_svmlight(bundled_path("train"))


@pytest.fixture(scope="session")
def bundled_test():
    return load_svmlight(bundled_path("test"))


@pytest.fixture(scope="session")
def bundled_model(bundled_train):
    return train_kernel_logistic(bundled_train.X, bundled_train.labels, KernelSpec("rbf"))


@pytest.fixture(scope="session")
def model_file(tmp_path_factory, bundled_model):
    from limeshift.blackbox import save_model

    path = tmp_path_factory.mktemp("model") / "model.json"
    save_model(bundled_model, path)
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.rstrip("abc")), k)):
        terminalreporter.write_line(results[key])
