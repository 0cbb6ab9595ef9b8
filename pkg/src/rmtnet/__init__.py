"""Reject-aware multi-task networks for credit scoring under selection bias."""

from .data import (
    Dataset,
    DiscretizationMap,
    RawTable,
    apply_discretizer,
    assign_splits,
    compose_multi_policy,
    fit_discretizer,
    generate_synthetic_rejection,
    group_summary,
    load_csv,
    make_credit_table,
)
from .metrics import MetricReport, auc, evaluate_model, gate_curve, ks, phi_correlation
from .models import MODEL_KINDS, ModelConfig, RMTNet, fit, fit_model

__version__ = "0.1.0"
