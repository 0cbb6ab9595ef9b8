"""Ranking metrics, rejection/default correlation, gate curves and
multi-seed aggregation."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .nncore import sigmoid

SUBSETS = ("approved-test", "rejected-test", "combined-test")
METRICS = ("auc", "ks")


class UndefinedMetricError(ValueError):
    pass


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    subset: str = "combined-test"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")


def _check_two_classes(labels):
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("metric needs at least one positive and one negative label")
    return n_pos, n_neg


def _unpack(scores, labels):
    if isinstance(scores, ScoredSet):
        return scores.scores, scores.labels
    return np.asarray(scores, dtype=np.float64), np.asarray(labels)


def auc(scores, labels=None) -> float:
    """Area under the ROC curve from the midrank (Mann-Whitney) statistic.

    Ties between a positive and a negative count one half.
    """
    s, y = _unpack(scores, labels)
    n_pos, n_neg = _check_two_classes(y)
    ranks = rankdata(s)  # average ranks for ties
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def ks(scores, labels=None) -> float:
    """Kolmogorov-Smirnov statistic max |TPR - FPR| over score thresholds.

    Thresholds sit at every distinct score (predict positive when
    score >= threshold) plus the two trivial ones, which contribute 0.
    """
    s, y = _unpack(scores, labels)
    n_pos, n_neg = _check_two_classes(y)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos = np.cumsum(y[order] == 1)
    neg = np.cumsum(y[order] == 0)
    # last index of each run of tied scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    diff = np.abs(pos[ends] / n_pos - neg[ends] / n_neg)
    return float(max(diff.max(), 0.0))


# -- correlation between default and rejection ------------------------------


@dataclass(frozen=True)
class ContingencyTable:
    n_dr: int  # default and rejected
    n_d_a: int  # default and approved
    n_nd_r: int  # non-default and rejected
    n_nd_a: int  # non-default and approved

    def __post_init__(self):
        if min(self.n_dr, self.n_d_a, self.n_nd_r, self.n_nd_a) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_dr + self.n_d_a + self.n_nd_r + self.n_nd_a

    @classmethod
    def from_labels(cls, y, r) -> "ContingencyTable":
        y = np.asarray(y)
        r = np.asarray(r)
        return cls(
            int(np.sum((y == 1) & (r == 1))),
            int(np.sum((y == 1) & (r == 0))),
            int(np.sum((y == 0) & (r == 1))),
            int(np.sum((y == 0) & (r == 0))),
        )

    def default_rate_given(self, rejected: bool) -> float:
        d, nd = (self.n_dr, self.n_nd_r) if rejected else (self.n_d_a, self.n_nd_a)
        return d / (d + nd) if d + nd else math.nan


def phi_correlation(table: ContingencyTable) -> float:
    """Pearson correlation of the default and rejection indicators."""
    n = table.total
    p_d = (table.n_dr + table.n_d_a) / n if n else 0.0
    p_r = (table.n_dr + table.n_nd_r) / n if n else 0.0
    if not (0.0 < p_d < 1.0 and 0.0 < p_r < 1.0):
        raise UndefinedMetricError("phi correlation needs both outcomes of both variables")
    p_dr = table.n_dr / n
    return (p_dr - p_d * p_r) / math.sqrt(p_d * (1 - p_d) * p_r * (1 - p_r))


# -- gate curves -------------------------------------------------------------


@dataclass
class GateCurve:
    p: np.ndarray  # (grid,)
    g: np.ndarray  # (M, t-1, grid)

    def to_csv(self) -> str:
        m_count, layers, _ = self.g.shape
        cols = ["p"] + [f"g_m{m + 1}_l{j + 1}" for m in range(m_count) for j in range(layers)]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for i, pv in enumerate(self.p):
            vals = [pv] + [self.g[m, j, i] for m in range(m_count) for j in range(layers)]
            buf.write(",".join(repr(float(v)) for v in vals) + "\n")
        return buf.getvalue()


def gate_values(alpha, beta, p):
    """sigmoid(alpha * p + beta) broadcast over parameter arrays and p."""
    return sigmoid(np.multiply.outer(np.asarray(alpha, dtype=np.float64), p) + np.asarray(beta)[..., None])


def gate_curve(model, grid_size: int = 101) -> GateCurve:
    """Gate output of every policy and layer on a uniform grid of p in [0, 1]."""
    alpha, beta = model.gate_params()
    p = np.linspace(0.0, 1.0, grid_size)
    return GateCurve(p, gate_values(alpha, beta, p))


# -- model evaluation --------------------------------------------------------


def evaluate_model(model, dataset) -> Dict[str, Dict[str, float]]:
    """AUC and KS of the predicted default probability on the test split.

    Rejected test rows are scored against their hidden ground truth. When
    the test split holds no rejected rows (approval-only), the rejected
    subset is reported as not applicable (None), as is any subset whose
    labels are all one class.
    """
    test = np.flatnonzero(dataset.split_mask("test"))
    rej = dataset.r[test] == 1
    scores = model.predict_default(dataset.bins[test])
    labels = dataset.eval_labels(test)
    if rej.any():
        if not dataset.has_hidden_labels or np.any(labels[rej] < 0):
            raise ValueError("rejected test rows lack hidden ground-truth labels")
    out: Dict[str, Dict[str, float]] = {}
    subsets = {
        "approved-test": ~rej,
        "rejected-test": rej,
        "combined-test": np.ones_like(rej),
    }
    for name, mask in subsets.items():
        if not mask.any():
            out[name] = {"auc": None, "ks": None, "n": 0}
            continue
        s, y = scores[mask], labels[mask]
        try:
            out[name] = {"auc": auc(s, y), "ks": ks(s, y), "n": int(mask.sum())}
        except UndefinedMetricError:
            # a single-class subset has no ranking to measure
            out[name] = {"auc": None, "ks": None, "n": int(mask.sum())}
    return out


def _median(values):
    return float(np.median(values)) if values else None


def aggregate(runs: Sequence[Dict[str, Dict[str, float]]]) -> Dict[str, Dict[str, dict]]:
    """Median, min, max and the raw per-run values of every metric.

    Runs reporting None for a metric are skipped for that metric.
    """
    if not runs:
        raise ValueError("need at least one run")
    out = {}
    for subset in runs[0]:
        out[subset] = {}
        for metric in METRICS:
            vals = [run[subset][metric] for run in runs if run[subset][metric] is not None]
            out[subset][metric] = {
                "median": _median(vals),
                "min": min(vals) if vals else None,
                "max": max(vals) if vals else None,
                "values": vals,
            }
    return out


@dataclass
class MetricReport:
    """Per-model, per-dataset aggregated results plus the config echo."""

    results: Dict[str, Dict[str, dict]] = field(default_factory=dict)  # model -> dataset -> aggregate
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def add(self, model: str, dataset: str, runs):
        self.results.setdefault(model, {})[dataset] = aggregate(runs)

    def median(self, model, dataset, subset="combined-test", metric="ks"):
        return self.results[model][dataset][subset][metric]["median"]

    def to_json(self) -> str:
        return json.dumps(
            {"results": self.results, "config": self.config, "diagnostics": self.diagnostics},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        return cls(obj["results"], obj.get("config", {}), obj.get("diagnostics", {}))

    def format_table(self, subset: str = "combined-test") -> str:
        """Rows are models, columns AUC/KS (in %) per dataset."""
        models = list(self.results)
        datasets: List[str] = []
        for m in models:
            for d in self.results[m]:
                if d not in datasets:
                    datasets.append(d)
        head1 = f"{'Approach':<12}" + "".join(f"{d:>18}" for d in datasets)
        head2 = f"{'':<12}" + "".join(f"{'AUC':>9}{'KS':>9}" for _ in datasets)
        lines = [f"[{subset}]", head1, head2]
        for m in models:
            cells = []
            for d in datasets:
                agg = self.results[m].get(d, {}).get(subset)
                for metric in METRICS:
                    v = None if agg is None else agg[metric]["median"]
                    cells.append(f"{'-':>9}" if v is None else f"{100 * v:>9.2f}")
            lines.append(f"{m:<12}" + "".join(cells))
        return "\n".join(lines) + "\n"


def relative_improvement(new: float, base: float) -> Optional[float]:
    if base is None or new is None or base == 0:
        return None
    return (new - base) / abs(base)
