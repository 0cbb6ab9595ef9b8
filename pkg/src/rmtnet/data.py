"""Tabular credit data: loading, quantile discretization, synthetic
rejection policies and train/val/test splitting.

Rejected rows never expose their default label to training code. A
:class:`Dataset` keeps the ground truth for rejected rows in a private
field; :meth:`Dataset.train_view` hands out labels for approved rows only,
and :meth:`Dataset.eval_labels` is the single reader of the hidden ones.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_CODES = {name: i for i, name in enumerate(SPLITS)}
MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}
ROLES = ("feature", "y", "r", "policy", "ignore")
DEFAULT_BINS = 32


class SchemaError(ValueError):
    pass


class CSVParseError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ProtocolError(ValueError):
    """Raised when an operation's data preconditions are not met."""


@dataclass(frozen=True)
class RawTable:
    rows: np.ndarray  # (N, d) float
    column_names: Tuple[str, ...]
    y_raw: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    policy_id: Optional[np.ndarray] = None
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return replace(
            self,
            rows=self.rows[idx],
            y_raw=pick(self.y_raw),
            r=pick(self.r),
            policy_id=pick(self.policy_id),
            dropped=0,
        )


def _default_role(name: str) -> str:
    return {"y": "y", "r": "r", "policy": "policy"}.get(name.strip().lower(), "feature")


def load_csv(path, schema: Optional[Dict[str, str]] = None) -> RawTable:
    """Read a CSV with a header row into a :class:`RawTable`.

    ``schema`` maps column name to one of ``feature``, ``y``, ``r``,
    ``policy`` or ``ignore``. Columns not named in it get the default role:
    ``y``/``r``/``policy`` by name, ``feature`` otherwise. Rows with any
    missing cell are dropped; the number dropped is stored on the table.
    """
    schema = dict(schema or {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError("missing header row", 1) from None
        header = [h.strip() for h in header]
        for name, role in schema.items():
            if role not in ROLES:
                raise SchemaError(f"unknown column role {role!r} for column {name!r}")
            if name not in header:
                raise SchemaError(f"schema column {name!r} not in header")
        roles = [schema.get(h, _default_role(h)) for h in header]
        for role in ("y", "r", "policy"):
            if roles.count(role) > 1:
                raise SchemaError(f"more than one column has role {role!r}")
        feat_cols = [i for i, role in enumerate(roles) if role == "feature"]

        values: List[List[float]] = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CSVParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            parsed = []
            missing = False
            for cell, role in zip(row, roles):
                if role == "ignore":
                    parsed.append(0.0)
                    continue
                cell = cell.strip()
                if cell.lower() in MISSING_TOKENS:
                    missing = True
                    parsed.append(math.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CSVParseError(f"cannot parse {cell!r} as a number", line_no) from None
            if missing:
                dropped += 1
                continue
            values.append(parsed)

    arr = np.array(values, dtype=np.float64).reshape(len(values), len(header))
    if dropped:
        logger.info("dropped %d rows with missing values from %s", dropped, path)

    def column(role, dtype):
        if role not in roles:
            return None
        col = arr[:, roles.index(role)]
        if role in ("y", "r") and not np.all(np.isin(col, (0.0, 1.0))):
            raise SchemaError(f"column with role {role!r} must be 0/1")
        return col.astype(dtype)

    return RawTable(
        rows=arr[:, feat_cols],
        column_names=tuple(header[i] for i in feat_cols),
        y_raw=column("y", np.int64),
        r=column("r", np.int64),
        policy_id=column("policy", np.int64),
        dropped=dropped,
    )


# -- discretization ----------------------------------------------------------


@dataclass(frozen=True)
class DiscretizationMap:
    edges: Tuple[np.ndarray, ...]
    bins: int

    @property
    def d(self) -> int:
        return len(self.edges)

    @property
    def n_bins(self) -> Tuple[int, ...]:
        """Effective number of bins per feature after tie collapsing."""
        return tuple(len(e) + 1 for e in self.edges)

    def to_json(self) -> dict:
        return {"bins": self.bins, "edges": [[float(v) for v in e] for e in self.edges]}

    @classmethod
    def from_json(cls, obj) -> "DiscretizationMap":
        return cls(tuple(np.asarray(e, dtype=np.float64) for e in obj["edges"]), int(obj["bins"]))


def fit_discretizer(table, bins: int = DEFAULT_BINS) -> DiscretizationMap:
    """Quantile bin edges per feature (linear-interpolation quantiles).

    Duplicate edges are merged and edges at or below the column minimum are
    dropped, since no value can fall strictly below them. A constant
    feature therefore gets no edges at all.
    """
    x = table.rows if isinstance(table, RawTable) else np.asarray(table, dtype=np.float64)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if x.shape[0] < bins:
        raise ValueError(f"need at least {bins} rows to fit {bins} bins, got {x.shape[0]}")
    qs = np.arange(1, bins) / bins
    edges = []
    for j in range(x.shape[1]):
        col = x[:, j]
        e = np.unique(np.quantile(col, qs))
        edges.append(e[e > col.min()])
    return DiscretizationMap(tuple(edges), bins)


def apply_discretizer(table, dmap: DiscretizationMap) -> np.ndarray:
    """Bin index of every value: the number of edges strictly below it."""
    x = table.rows if isinstance(table, RawTable) else np.asarray(table, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dmap.d:
        raise ValueError(f"table has {x.shape[-1]} features, discretizer was fit on {dmap.d}")
    out = np.empty(x.shape, dtype=np.int64)
    for j, e in enumerate(dmap.edges):
        out[:, j] = np.searchsorted(e, x[:, j], side="left")
    return out


# -- logistic regression used for policies and propensities ------------------


def fit_logistic(X, y, sample_weight=None, l2=1e-4, tol=1e-6, max_iter=5000):
    """L2-regularised logistic regression by full-batch gradient descent.

    Minimises the weighted mean log-loss plus ``l2/2 * |w|^2`` (intercept
    unpenalised) with a fixed step of 1/L, L the gradient Lipschitz bound.
    Stops when the gradient's max-norm drops below ``tol``.
    Returns (coef, intercept).
    """
    from .nncore import sigmoid

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    w_s = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    w_s = w_s / w_s.sum()
    Xa = np.hstack([X, np.ones((n, 1))])
    gram = (Xa * w_s[:, None]).T @ Xa
    lip = 0.25 * float(np.linalg.eigvalsh(gram)[-1]) + l2
    step = 1.0 / lip
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    theta = np.zeros(d + 1)
    for _ in range(max_iter):
        p = sigmoid(Xa @ theta)
        grad = Xa.T @ (w_s * (p - y)) + reg * theta
        if np.max(np.abs(grad)) < tol:
            break
        theta -= step * grad
    return theta[:-1].copy(), float(theta[-1])


# -- datasets ----------------------------------------------------------------


@dataclass(frozen=True)
class SynthPolicy:
    feature_subset: Tuple[int, ...]
    coef: np.ndarray
    intercept: float
    epsilon: float
    mean: np.ndarray
    scale: np.ndarray
    seed: int

    def score(self, x: np.ndarray) -> np.ndarray:
        """Predicted default probability of the policy model."""
        from .nncore import sigmoid

        z = (x[:, list(self.feature_subset)] - self.mean) / self.scale
        return sigmoid(z @ self.coef + self.intercept)

    def to_json(self) -> dict:
        return {
            "feature_subset": list(self.feature_subset),
            "coef": [float(v) for v in self.coef],
            "intercept": float(self.intercept),
            "epsilon": float(self.epsilon),
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "seed": int(self.seed),
        }


@dataclass(frozen=True)
class TrainView:
    """What a learner may see: features, rejection labels, approved labels."""

    bins: np.ndarray
    r: np.ndarray
    y: np.ndarray  # -1 on rejected rows
    policy: np.ndarray  # 0-based policy index
    n_bins: Tuple[int, ...]
    n_policies: int

    def __len__(self):
        return len(self.r)


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray  # raw features (N, d)
    r: np.ndarray
    y: np.ndarray  # observed default label, -1 where r == 1
    policy_id: np.ndarray  # 1..M
    _hidden_y: Optional[np.ndarray] = field(default=None, repr=False)
    bins: Optional[np.ndarray] = None
    n_bins: Optional[Tuple[int, ...]] = None
    split: Optional[np.ndarray] = None  # codes into SPLITS
    column_names: Tuple[str, ...] = ()
    policies: Tuple[SynthPolicy, ...] = ()

    def __post_init__(self):
        n = len(self.r)
        for name in ("x", "y", "policy_id"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"field {name} has wrong length")
        if np.any((self.r == 0) & (self.y < 0)):
            raise ProtocolError("every approved row needs a default label")
        if np.any((self.r == 1) & (self.y >= 0)):
            raise ProtocolError("rejected rows must not carry an observed label")
        for a in (self.x, self.r, self.y, self.policy_id, self._hidden_y, self.bins, self.split):
            if a is not None:
                a.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.r)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_policies(self) -> int:
        return int(self.policy_id.max()) if self.n else 1

    @property
    def has_hidden_labels(self) -> bool:
        return self._hidden_y is not None

    def discretize(self, dmap: DiscretizationMap) -> "Dataset":
        return replace(self, bins=apply_discretizer(self.x, dmap), n_bins=dmap.n_bins)

    def split_mask(self, name: str) -> np.ndarray:
        if self.split is None:
            raise ProtocolError("dataset has no split assignment")
        return self.split == SPLIT_CODES[name]

    def train_view(self, split: str = "train") -> TrainView:
        """Rows a learner trains on.

        For ``split="train"`` this is every train-tagged row plus every
        rejected row, whatever its tag: rejected rows contribute features
        and r only.
        """
        if self.bins is None:
            raise ProtocolError("dataset is not discretized")
        mask = self.split_mask(split)
        if split == "train":
            mask = mask | (self.r == 1)
        return self.view(np.flatnonzero(mask))

    def view(self, idx) -> TrainView:
        if self.bins is None:
            raise ProtocolError("dataset is not discretized")
        return TrainView(
            bins=self.bins[idx],
            r=self.r[idx],
            y=self.y[idx],
            policy=self.policy_id[idx] - 1,
            n_bins=self.n_bins,
            n_policies=self.n_policies,
        )

    def eval_labels(self, idx) -> np.ndarray:
        """Ground-truth default labels for evaluation, hidden ones included.

        Returns -1 where a rejected row has no ground truth.
        """
        idx = np.asarray(idx)
        y = self.y[idx].copy()
        if self._hidden_y is not None:
            rej = self.r[idx] == 1
            y[rej] = self._hidden_y[idx][rej]
        return y

    def with_hidden_labels(self, hidden) -> "Dataset":
        hidden = None if hidden is None else np.asarray(hidden, dtype=np.int64)
        return replace(self, _hidden_y=hidden)

    def hidden_labels(self) -> Optional[np.ndarray]:
        """Raw copy of the hidden label column, for serialization only."""
        return None if self._hidden_y is None else self._hidden_y.copy()


def dataset_from_table(table: RawTable) -> Dataset:
    """Wrap a table that already carries r (and y on approved rows)."""
    if table.r is None:
        raise ProtocolError("table has no rejection labels")
    r = table.r.astype(np.int64)
    if table.y_raw is None:
        y = np.where(r == 0, -1, -1)
        if np.any(r == 0):
            raise ProtocolError("approved rows need default labels")
    else:
        y = np.where(r == 0, table.y_raw, -1).astype(np.int64)
    pid = np.ones(table.n, dtype=np.int64) if table.policy_id is None else table.policy_id.astype(np.int64)
    return Dataset(x=table.rows.copy(), r=r, y=y, policy_id=pid, column_names=table.column_names)


def _n_subset(epsilon: float, d: int) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004
    return max(1, math.ceil(epsilon * d - 1e-9))


def generate_synthetic_rejection(table: RawTable, epsilon: float, seed: int):
    """Synthesize MNAR rejection labels on fully labelled data.

    1. A random third of the rows (initial samples) and ceil(epsilon * d)
       random features fit a logistic-regression policy on the default
       label.
    2. The policy scores the other two thirds (main samples).
    3. The 3/4 of main samples with the largest predicted default
       probability are rejected (r = 1).
    4. The remaining 1/4 are approved (r = 0).

    Initial samples are discarded. Rejected rows keep their true label as a
    hidden evaluation label. Returns (Dataset, SynthPolicy).
    """
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if table.y_raw is None:
        raise ProtocolError("synthetic rejection needs ground-truth default labels on every row")
    rng = np.random.default_rng(seed)
    n, d = table.n, table.d
    perm = rng.permutation(n)
    n_init = n // 3
    init_idx, main_idx = perm[:n_init], perm[n_init:]
    feats = tuple(sorted(int(i) for i in rng.choice(d, size=_n_subset(epsilon, d), replace=False)))

    x_init = table.rows[init_idx][:, list(feats)]
    mean = x_init.mean(axis=0)
    scale = x_init.std(axis=0)
    scale[scale == 0] = 1.0
    coef, intercept = fit_logistic((x_init - mean) / scale, table.y_raw[init_idx])
    policy = SynthPolicy(feats, coef, intercept, float(epsilon), mean, scale, int(seed))

    x_main = table.rows[main_idx]
    score = policy.score(x_main)
    n_main = len(main_idx)
    n_rej = int(round(0.75 * n_main))
    order = np.argsort(-score, kind="stable")
    r = np.zeros(n_main, dtype=np.int64)
    r[order[:n_rej]] = 1
    y_true = table.y_raw[main_idx].astype(np.int64)
    ds = Dataset(
        x=x_main.copy(),
        r=r,
        y=np.where(r == 0, y_true, -1),
        policy_id=np.ones(n_main, dtype=np.int64),
        _hidden_y=np.where(r == 1, y_true, -1),
        column_names=table.column_names,
        policies=(policy,),
    )
    return ds, policy


def assign_splits(dataset: Dataset, seed: int, mode: str = "approval-rejection") -> Dataset:
    """Split approved rows 60/20/20 into train/val/test.

    In ``approval-rejection`` mode every rejected row is tagged test; in
    ``approval-only`` mode rejected rows are kept out of test and tagged
    train (they still only contribute features and r).
    """
    if mode not in ("approval-rejection", "approval-only"):
        raise ValueError(f"unknown split mode {mode!r}")
    approved = np.flatnonzero(dataset.r == 0)
    if len(approved) < 5:
        raise ProtocolError(f"need at least 5 approved rows to split, got {len(approved)}")
    rng = np.random.default_rng(seed)
    approved = approved[rng.permutation(len(approved))]
    n_tr = int(round(0.6 * len(approved)))
    n_va = int(round(0.2 * len(approved)))
    split = np.empty(dataset.n, dtype=np.int64)
    split[approved[:n_tr]] = SPLIT_CODES["train"]
    split[approved[n_tr : n_tr + n_va]] = SPLIT_CODES["val"]
    split[approved[n_tr + n_va :]] = SPLIT_CODES["test"]
    rejected = dataset.r == 1
    split[rejected] = SPLIT_CODES["test" if mode == "approval-rejection" else "train"]
    return replace(dataset, split=split)


def split_equal(table: RawTable, parts: int, seed: int) -> List[RawTable]:
    """Shuffle rows and cut them into ``parts`` (near) equal subsets."""
    perm = np.random.default_rng(seed).permutation(table.n)
    return [table.take(np.sort(chunk)) for chunk in np.array_split(perm, parts)]


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    hidden = None
    if all(p.has_hidden_labels for p in parts):
        hidden = np.concatenate([p._hidden_y for p in parts])
    return Dataset(
        x=np.vstack([p.x for p in parts]),
        r=np.concatenate([p.r for p in parts]),
        y=np.concatenate([p.y for p in parts]),
        policy_id=np.concatenate([p.policy_id for p in parts]),
        _hidden_y=hidden,
        column_names=parts[0].column_names,
        policies=tuple(pol for p in parts for pol in p.policies),
    )


def compose_multi_policy(subsets: Sequence[Tuple[RawTable, float, int]]) -> Dataset:
    """One synthetic policy per subset, tagged 1..M and concatenated."""
    if not subsets:
        raise ValueError("need at least one subset")
    if len(subsets) == 1:
        warnings.warn("compose_multi_policy called with a single subset; M=1", stacklevel=2)
    parts = []
    for m, (table, eps, seed) in enumerate(subsets, start=1):
        ds, _ = generate_synthetic_rejection(table, eps, seed)
        parts.append(replace(ds, policy_id=np.full(ds.n, m, dtype=np.int64)))
    return concat_datasets(parts)


def group_summary(table: RawTable, fields: Sequence[str], group_key: str = "r"):
    """Mean of each requested field per value of the group key.

    Returns ``{"approved": {...}, "rejected": {...}}`` for the r key, or a
    dict keyed by the raw group value otherwise. Empty groups map each
    field to None.
    """
    key = {"r": table.r, "policy": table.policy_id, "y": table.y_raw}.get(group_key)
    if key is None:
        raise ProtocolError(f"table has no {group_key!r} column to group by")
    cols = []
    for f in fields:
        if f not in table.column_names:
            raise SchemaError(f"unknown field {f!r}")
        cols.append(table.column_names.index(f))
    if group_key == "r":
        groups = {"approved": 0, "rejected": 1}
    else:
        groups = {str(int(g)): int(g) for g in np.unique(key)}
    out = {}
    for label, g in groups.items():
        mask = key == g
        if not mask.any():
            out[label] = {f: None for f in fields}
            continue
        out[label] = {f: float(table.rows[mask, c].mean()) for f, c in zip(fields, cols)}
    return out


def make_credit_table(
    n: int, d: int, noise: float = 1.0, seed: int = 0, base_rate: float = 0.12, signal: float = 1.5
) -> RawTable:
    """Synthetic fully-labelled credit data from a logistic default model.

    Features are correlated Gaussians. The default logit is a fixed random
    linear score with standard deviation ``signal`` plus Gaussian noise of
    scale ``noise``; the intercept is set so that the mean default
    probability is ``base_rate``.
    """
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(d, d)) / np.sqrt(d)
    cov = 0.5 * np.eye(d) + 0.5 * mix @ mix.T
    x = rng.multivariate_normal(np.zeros(d), cov, size=n, method="cholesky")
    w = rng.normal(size=d)
    w *= signal / np.sqrt(w @ cov @ w)
    score = x @ w + noise * rng.normal(size=n)
    from .nncore import sigmoid

    lo, hi = -20.0 - score.max(), 20.0 - score.min()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if sigmoid(score + mid).mean() < base_rate:
            lo = mid
        else:
            hi = mid
    p = sigmoid(score + 0.5 * (lo + hi))
    y = (rng.uniform(size=n) < p).astype(np.int64)
    return RawTable(rows=x, column_names=tuple(f"x{i}" for i in range(d)), y_raw=y)


# -- on-disk dataset layout --------------------------------------------------
#
# dataset.csv      features (raw, repr floats) + r, y (blank if rejected), policy, split
# hidden.csv       row,y for rejected rows with ground truth (evaluation only)
# discretizer.json fitted bin edges


def write_dataset(ds: Dataset, directory, dmap: Optional[DiscretizationMap] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(ds.column_names) or [f"x{i}" for i in range(ds.d)]
    with open(directory / "dataset.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["r", "y", "policy", "split"])
        split = ds.split if ds.split is not None else np.full(ds.n, -1)
        for i in range(ds.n):
            w.writerow(
                [repr(float(v)) for v in ds.x[i]]
                + [int(ds.r[i]), "" if ds.y[i] < 0 else int(ds.y[i]), int(ds.policy_id[i])]
                + [SPLITS[split[i]] if split[i] >= 0 else ""]
            )
    hidden = ds.hidden_labels()
    if hidden is not None:
        with open(directory / "hidden.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "y"])
            for i in np.flatnonzero((ds.r == 1) & (hidden >= 0)):
                w.writerow([int(i), int(hidden[i])])
    if dmap is not None:
        (directory / "discretizer.json").write_text(json.dumps(dmap.to_json(), sort_keys=True) + "\n")


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    with open(directory / "dataset.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n_feat = len(header) - 4
    x = np.array([[float(v) for v in row[:n_feat]] for row in rows], dtype=np.float64).reshape(len(rows), n_feat)
    r = np.array([int(row[n_feat]) for row in rows], dtype=np.int64)
    y = np.array([int(row[n_feat + 1]) if row[n_feat + 1] != "" else -1 for row in rows], dtype=np.int64)
    pid = np.array([int(row[n_feat + 2]) for row in rows], dtype=np.int64)
    tags = [row[n_feat + 3] for row in rows]
    split = None
    if tags and all(t in SPLIT_CODES for t in tags):
        split = np.array([SPLIT_CODES[t] for t in tags], dtype=np.int64)
    hidden = None
    if (directory / "hidden.csv").exists():
        hidden = np.full(len(rows), -1, dtype=np.int64)
        with open(directory / "hidden.csv", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                hidden[int(row[0])] = int(row[1])
    ds = Dataset(x=x, r=r, y=y, policy_id=pid, _hidden_y=hidden, split=split, column_names=tuple(header[:n_feat]))
    if (directory / "discretizer.json").exists():
        dmap = DiscretizationMap.from_json(json.loads((directory / "discretizer.json").read_text()))
        ds = ds.discretize(dmap)
    return ds
