"""LIME explanations and MMD-based shift and fidelity audits."""

__version__ = "0.1.0"

from .numkit import KernelSpec, SparseVector, cosine_kernel, gram, median_heuristic_gamma, rbf_kernel
from .mmd import TwoSampleResult, mmd_biased, mmd_threshold, two_sample_test
from .blackbox import (ExternalScorer, KernelLogisticModel, ScoreVector, load_model,
                       predict_proba, save_model, train_kernel_logistic)
from .lime import Explanation, explain, lime_loss, perturb, surrogate_score
from .audit import AuditConfig, AuditReport, AuditRow, audit_dataset, audit_instance, fidelity, pearson
from .datasets import Dataset, load_svmlight, dump_svmlight

__all__ = [
    "KernelSpec", "SparseVector", "cosine_kernel", "gram", "median_heuristic_gamma", "rbf_kernel",
    "TwoSampleResult", "mmd_biased", "mmd_threshold", "two_sample_test",
    "ExternalScorer", "KernelLogisticModel", "ScoreVector", "load_model", "predict_proba",
    "save_model", "train_kernel_logistic",
    "Explanation", "explain", "lime_loss", "perturb", "surrogate_score",
    "AuditConfig", "AuditReport", "AuditRow", "audit_dataset", "audit_instance", "fidelity",
    "pearson", "Dataset", "load_svmlight", "dump_svmlight",
]
