"""RMT-Net / RMT-Net++ and the baseline learners.

All networks start from a shared per-feature embedding table. The
reject-aware network runs one rejection tower per policy and a default
tower whose hidden layers receive each rejection tower's hidden layer,
scaled by a scalar gate driven by that tower's rejection probability:

    p_m(j) = relu(p_m(j-1) W_Rm(j) + b_Rm(j))            j < t
    p_m(t) = sigmoid(p_m(t-1) W_Rm(t) + b_Rm(t))
    g_m(j) = sigmoid(alpha_m(j) p_m(t) + beta_m(j))
    q(j)   = relu(q(j-1) W_D(j) + b_D(j)) + sum_m g_m(j) p_m(j)
    q(t)   = sigmoid(q(t-1) W_D(t) + b_D(t))

with p_m(0) = q(0) = the flattened embedding. With M = 1 this is the
single-policy RMT-Net. Losses use standard binary cross-entropy
(label * log(prob) + ...), the default loss is masked to approved rows and

    L = (1 - eta) * L1 / M + eta * L2.

Gradients are derived by hand; ``tests/test_gradients.py`` checks them
against central differences.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import Dataset, ProtocolError, TrainView
from .metrics import UndefinedMetricError, ks
from .nncore import Adam, bce_with_logits, glorot_uniform, sigmoid

logger = logging.getLogger(__name__)

MODEL_KINDS = ("lr", "mlp", "st", "ips", "rmtnet", "rmtnetpp")


@dataclass
class ModelConfig:
    k: int = 4
    hidden: int = 16
    t: int = 2
    eta: float = 0.3
    learning_rate: float = 1e-3
    epochs: int = 500
    patience: int = 10
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    M: int = 1
    share_gradient_through_gate: bool = True
    ra_all_rows: bool = False  # ablation: every rejection head sees every row
    st_base: str = "mlp"
    st_rounds: int = 5
    st_add_fraction: float = 0.02
    ips_w_max: float = 20.0

    def __post_init__(self):
        if self.t < 2:
            raise ValueError("t counts the output layer and must be >= 2")
        if not (0.0 < self.eta < 1.0) and self.eta != 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.M < 1 or self.k < 1 or self.hidden < 1:
            raise ValueError("M, k and hidden must be positive")
        if self.st_base not in ("lr", "mlp"):
            raise ValueError("st_base must be 'lr' or 'mlp'")

    def replace(self, **kw) -> "ModelConfig":
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)

    @classmethod
    def from_dict(cls, obj) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


@dataclass
class Prediction:
    default_prob: np.ndarray
    rejection_prob: Optional[np.ndarray] = None  # (n, M)


@dataclass
class TrainingLog:
    epochs: List[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ks: float = -math.inf

    def to_dict(self):
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "best_val_ks": self.best_val_ks}


class Embedding:
    """Offsets of each feature's block inside one stacked embedding table."""

    def __init__(self, n_bins):
        self.n_bins = np.asarray(n_bins, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.n_bins)[:-1]]).astype(np.int64)
        self.total = int(self.n_bins.sum())

    def init_table(self, rng, k):
        return np.vstack([glorot_uniform(rng, int(nb), k) for nb in self.n_bins])

    def rows(self, bins) -> np.ndarray:
        bins = np.asarray(bins, dtype=np.int64)
        if bins.ndim != 2 or bins.shape[1] != len(self.n_bins):
            raise ValueError(f"expected (n, {len(self.n_bins)}) bin matrix, got {bins.shape}")
        if np.any(bins < 0) or np.any(bins >= self.n_bins):
            raise ValueError("bin index outside the fitted discretizer range")
        return bins + self.offsets


def _scatter_rows(table_shape, idx, grad_rows) -> np.ndarray:
    """Sum per-lookup gradients back into the embedding table."""
    out = np.zeros(table_shape)
    k = table_shape[1]
    flat_idx = idx.reshape(-1)
    g = grad_rows.reshape(-1, k)
    for c in range(k):
        out[:, c] = np.bincount(flat_idx, weights=g[:, c], minlength=table_shape[0])
    return out


class _Net:
    """Shared fit/predict plumbing; subclasses define params and gradients."""

    kind = "base"

    def __init__(self, config: ModelConfig, n_bins):
        self.config = config
        self.embedding = Embedding(n_bins)
        self.params: Dict[str, np.ndarray] = {}
        self.log = TrainingLog()

    def predict_default(self, bins) -> np.ndarray:
        return self.predict(bins).default_prob

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load(self, arrays: Dict[str, np.ndarray]) -> None:
        for k in self.params:
            if arrays[k].shape != self.params[k].shape:
                raise ValueError(f"snapshot array {k} has shape {arrays[k].shape}")
            self.params[k] = np.array(arrays[k], dtype=np.float64)

    def gate_params(self):
        raise TypeError(f"{self.kind} has no gates")

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "M": self.config.M,
            "n_bins": [int(v) for v in self.embedding.n_bins],
            "config": asdict(self.config),
        }


# -- feed-forward baselines --------------------------------------------------


class FeedForwardNet(_Net):
    """Embedding followed by ``n_hidden`` relu layers and a sigmoid output.

    ``n_hidden = 0`` is logistic regression on the embedded features; the
    MLP baseline uses the default tower's topology (t - 1 hidden layers).
    """

    def __init__(self, config: ModelConfig, n_bins, n_hidden: int, kind: str = "mlp"):
        super().__init__(config, n_bins)
        self.kind = kind
        self.n_hidden = n_hidden
        rng = np.random.default_rng(config.seed)
        d = len(self.embedding.n_bins)
        self.params["emb"] = self.embedding.init_table(rng, config.k)
        widths = [d * config.k] + [config.hidden] * n_hidden + [1]
        for j in range(1, len(widths)):
            self.params[f"W{j}"] = glorot_uniform(rng, widths[j - 1], widths[j])
            self.params[f"b{j}"] = np.zeros(widths[j])

    @property
    def n_layers(self):
        return self.n_hidden + 1

    def meta(self) -> dict:
        meta = super().meta()
        meta["n_hidden"] = self.n_hidden
        return meta

    def _forward(self, bins):
        idx = self.embedding.rows(bins)
        a = self.params["emb"][idx].reshape(len(idx), -1)
        acts, pres = [a], []
        for j in range(1, self.n_layers):
            z = a @ self.params[f"W{j}"] + self.params[f"b{j}"]
            a = np.maximum(z, 0.0)
            pres.append(z)
            acts.append(a)
        L = self.n_layers
        logit = (a @ self.params[f"W{L}"] + self.params[f"b{L}"])[:, 0]
        return idx, acts, pres, logit

    def predict(self, bins) -> Prediction:
        return Prediction(sigmoid(self._forward(bins)[3]))

    def loss_and_grads(self, bins, y, weight=None, scale=1.0, need_grads=True):
        """Weighted BCE sum of the default output against y."""
        idx, acts, pres, logit = self._forward(bins)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(len(y)) if weight is None else np.asarray(weight, dtype=np.float64)
        loss = float(np.sum(w * bce_with_logits(logit, y)))
        if not need_grads:
            return loss, None
        grads = {}
        dz = (scale * w * (sigmoid(logit) - y))[:, None]
        for j in range(self.n_layers, 0, -1):
            grads[f"W{j}"] = acts[j - 1].T @ dz
            grads[f"b{j}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{j}"].T
            if j > 1:
                dz = da * (pres[j - 2] > 0)
        grads["emb"] = _scatter_rows(self.params["emb"].shape, idx, da)
        return loss, grads


# -- reject-aware multi-task network -----------------------------------------


class RMTNet(_Net):
    """Reject-aware multi-task network with ``config.M`` rejection towers.

    ``kind="rmtnet"`` forces a single tower and ignores policy ids, which is
    the single-policy model; ``kind="rmtnetpp"`` uses one tower per policy.
    """

    def __init__(self, config: ModelConfig, n_bins, kind: str = "rmtnetpp"):
        if kind == "rmtnet" and config.M != 1:
            config = config.replace(M=1)
        super().__init__(config, n_bins)
        self.kind = kind
        c = config
        rng = np.random.default_rng(c.seed)
        d = len(self.embedding.n_bins)
        self.params["emb"] = self.embedding.init_table(rng, c.k)
        widths = [d * c.k] + [c.hidden] * (c.t - 1) + [1]
        for m in range(c.M):
            for j in range(1, c.t + 1):
                self.params[f"ra{m}.W{j}"] = glorot_uniform(rng, widths[j - 1], widths[j])
                self.params[f"ra{m}.b{j}"] = np.zeros(widths[j])
        for j in range(1, c.t + 1):
            self.params[f"dn.W{j}"] = glorot_uniform(rng, widths[j - 1], widths[j])
            self.params[f"dn.b{j}"] = np.zeros(widths[j])
        self.params["gate.alpha"] = np.zeros((c.M, c.t - 1))
        self.params["gate.beta"] = np.zeros((c.M, c.t - 1))
        self._check_shapes()

    def _check_shapes(self):
        c = self.config
        for m in range(c.M):
            for j in range(1, c.t):
                if self.params[f"ra{m}.W{j}"].shape[1] != self.params[f"dn.W{j}"].shape[1]:
                    raise ValueError(f"rejection and default widths differ at layer {j}")

    def gate_params(self):
        return self.params["gate.alpha"].copy(), self.params["gate.beta"].copy()

    def policy_index(self, policy, n):
        if self.kind == "rmtnet" or policy is None:
            return np.zeros(n, dtype=np.int64)
        policy = np.asarray(policy, dtype=np.int64)
        if np.any(policy < 0) or np.any(policy >= self.config.M):
            raise ValueError(f"policy index outside [0, {self.config.M})")
        return policy

    def _forward(self, bins):
        P = self.params
        t, M = self.config.t, self.config.M
        idx = self.embedding.rows(bins)
        n = len(idx)
        e = P["emb"][idx].reshape(n, -1)

        ra_acts, ra_pres = [], []
        zp = np.empty((n, M))
        for m in range(M):
            a = e
            acts, pres = [e], []
            for j in range(1, t):
                z = a @ P[f"ra{m}.W{j}"] + P[f"ra{m}.b{j}"]
                a = np.maximum(z, 0.0)
                pres.append(z)
                acts.append(a)
            zp[:, m] = (a @ P[f"ra{m}.W{t}"] + P[f"ra{m}.b{t}"])[:, 0]
            ra_acts.append(acts)
            ra_pres.append(pres)
        p = sigmoid(zp)
        g = sigmoid(P["gate.alpha"][None] * p[:, :, None] + P["gate.beta"][None])  # (n, M, t-1)

        q = e
        dn_acts, dn_pres = [e], []
        for j in range(1, t):
            u = q @ P[f"dn.W{j}"] + P[f"dn.b{j}"]
            q = np.maximum(u, 0.0)
            for m in range(M):
                q = q + g[:, m, j - 1, None] * ra_acts[m][j]
            dn_pres.append(u)
            dn_acts.append(q)
        zq = (q @ P[f"dn.W{t}"] + P[f"dn.b{t}"])[:, 0]
        return dict(idx=idx, e=e, ra_acts=ra_acts, ra_pres=ra_pres, zp=zp, p=p, g=g,
                    dn_acts=dn_acts, dn_pres=dn_pres, zq=zq)

    def predict(self, bins) -> Prediction:
        f = self._forward(bins)
        return Prediction(default_prob=sigmoid(f["zq"]), rejection_prob=f["p"])

    def _ra_mask(self, pol, n):
        M = self.config.M
        if self.config.ra_all_rows:
            return np.ones((n, M))
        mask = np.zeros((n, M))
        mask[np.arange(n), pol] = 1.0
        return mask

    def loss_and_grads(self, bins, r, y, policy=None, scale=1.0, need_grads=True):
        """Return (L, L1, L2, grads) summed over the given rows.

        ``y`` is read on approved rows (r == 0) only. Gradients are of
        ``scale * L``.
        """
        c = self.config
        P = self.params
        t, M, eta = c.t, c.M, c.eta
        r = np.asarray(r, dtype=np.float64)
        y = np.asarray(y)
        n = len(r)
        pol = self.policy_index(policy, n)
        approved = r == 0
        if np.any(y[approved] < 0):
            raise ProtocolError("approved rows need default labels")
        f = self._forward(bins)

        ra_mask = self._ra_mask(pol, n)
        l1_terms = bce_with_logits(f["zp"], r[:, None]) * ra_mask
        L1 = float(l1_terms.sum())
        y_app = y[approved].astype(np.float64)
        L2 = float(bce_with_logits(f["zq"][approved], y_app).sum())
        L = (1.0 - eta) * L1 / M + eta * L2
        if not need_grads:
            return L, L1, L2, None

        grads: Dict[str, np.ndarray] = {}
        p, g = f["p"], f["g"]
        dzq = np.zeros(n)
        dzq[approved] = scale * eta * (sigmoid(f["zq"][approved]) - y_app)
        dzp = scale * (1.0 - eta) / M * (p - r[:, None]) * ra_mask

        # default tower, top down
        dq = dzq[:, None]
        grads[f"dn.W{t}"] = f["dn_acts"][t - 1].T @ dq
        grads[f"dn.b{t}"] = dq.sum(axis=0)
        dq = dq @ P[f"dn.W{t}"].T
        dg = np.empty_like(g)
        d_ra_hidden = [[None] * t for _ in range(M)]
        for j in range(t - 1, 0, -1):
            for m in range(M):
                dg[:, m, j - 1] = np.einsum("ij,ij->i", dq, f["ra_acts"][m][j])
                d_ra_hidden[m][j] = g[:, m, j - 1, None] * dq
            du = dq * (f["dn_pres"][j - 1] > 0)
            grads[f"dn.W{j}"] = f["dn_acts"][j - 1].T @ du
            grads[f"dn.b{j}"] = du.sum(axis=0)
            dq = du @ P[f"dn.W{j}"].T
        de = dq

        # gates
        ds = dg * g * (1.0 - g)
        grads["gate.alpha"] = np.einsum("imj,im->mj", ds, p)
        grads["gate.beta"] = ds.sum(axis=0)
        if c.share_gradient_through_gate:
            dp = np.einsum("imj,mj->im", ds, P["gate.alpha"])
            dzp = dzp + dp * p * (1.0 - p)

        # rejection towers
        for m in range(M):
            acts, pres = f["ra_acts"][m], f["ra_pres"][m]
            dz = dzp[:, m, None]
            grads[f"ra{m}.W{t}"] = acts[t - 1].T @ dz
            grads[f"ra{m}.b{t}"] = dz.sum(axis=0)
            da = dz @ P[f"ra{m}.W{t}"].T
            for j in range(t - 1, 0, -1):
                da = da + d_ra_hidden[m][j]
                dz = da * (pres[j - 1] > 0)
                grads[f"ra{m}.W{j}"] = acts[j - 1].T @ dz
                grads[f"ra{m}.b{j}"] = dz.sum(axis=0)
                da = dz @ P[f"ra{m}.W{j}"].T
            de = de + da

        grads["emb"] = _scatter_rows(P["emb"].shape, f["idx"], de)
        return L, L1, L2, grads


# -- training ----------------------------------------------------------------


def _val_ks(model, val: Optional[TrainView]) -> float:
    if val is None or len(val) == 0:
        return math.nan
    try:
        return ks(model.predict_default(val.bins), val.y)
    except UndefinedMetricError:
        return math.nan


def _batches(rng, n, batch_size):
    if batch_size <= 0 or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield np.sort(perm[start : start + batch_size])


def _train_loop(model: _Net, step_fn, n_rows: int, val: Optional[TrainView]):
    """Adam with early stopping on validation KS; keeps the best snapshot.

    ``step_fn(rows, scale)`` returns (logged losses dict, grads).
    """
    c = model.config
    opt = Adam(model.params, lr=c.learning_rate)
    rng = np.random.default_rng(c.seed + 7919)
    log = model.log
    best = model.snapshot()
    since_best = 0
    for epoch in range(c.epochs):
        totals: Dict[str, float] = {}
        for rows in _batches(rng, n_rows, c.batch_size):
            losses, grads = step_fn(rows, 1.0 / len(rows))
            for k, v in losses.items():
                totals[k] = totals.get(k, 0.0) + v
            opt.step(model.params, grads)
        vks = _val_ks(model, val)
        log.epochs.append({"epoch": epoch, **totals, "val_ks": vks})
        if not math.isnan(vks) and vks > log.best_val_ks:
            log.best_val_ks = vks
            log.best_epoch = epoch
            best = model.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= c.patience:
                break
    if log.best_epoch < 0:
        # no usable validation signal: keep the final parameters
        log.best_epoch = len(log.epochs) - 1
        best = model.snapshot()
    model.load(best)
    return model


def _require_approved(view: TrainView):
    if not np.any(view.r == 0):
        raise ProtocolError("no approved training rows")


def _val_view(dataset: Dataset) -> Optional[TrainView]:
    mask = dataset.split_mask("val") & (dataset.r == 0)
    idx = np.flatnonzero(mask)
    return dataset.view(idx) if len(idx) else None


def fit(dataset: Dataset, config: ModelConfig, kind: str = "rmtnet") -> RMTNet:
    """Train RMT-Net (``kind="rmtnet"``) or RMT-Net++ (``"rmtnetpp"``)."""
    view = dataset.train_view()
    _require_approved(view)
    if kind == "rmtnetpp" and config.M != view.n_policies:
        config = config.replace(M=view.n_policies)
    model = RMTNet(config, view.n_bins, kind=kind)

    def step(rows, scale):
        L, L1, L2, grads = model.loss_and_grads(view.bins[rows], view.r[rows], view.y[rows], view.policy[rows], scale)
        return {"L": L, "L1": L1, "L2": L2}, grads

    return _train_loop(model, step, len(view), _val_view(dataset))


def _fit_feedforward(dataset, config, n_hidden, kind, bins=None, y=None, weight=None):
    view = dataset.train_view()
    if bins is None:
        app = view.r == 0
        bins, y = view.bins[app], view.y[app]
    if len(y) == 0:
        raise ProtocolError("no approved training rows")
    model = FeedForwardNet(config, view.n_bins, n_hidden, kind=kind)
    w = None if weight is None else np.asarray(weight, dtype=np.float64)

    def step(rows, scale):
        wr = None if w is None else w[rows]
        if wr is not None:
            scale = 1.0 / wr.sum()
        L, grads = model.loss_and_grads(bins[rows], y[rows], wr, scale)
        return {"L": L}, grads

    return _train_loop(model, step, len(y), _val_view(dataset))


def fit_lr(dataset: Dataset, config: ModelConfig) -> FeedForwardNet:
    return _fit_feedforward(dataset, config, 0, "lr")


def fit_mlp(dataset: Dataset, config: ModelConfig) -> FeedForwardNet:
    return _fit_feedforward(dataset, config, config.t - 1, "mlp")


class SelfTrainingModel:
    """Final base learner of a self-training run plus the labelling trace."""

    kind = "st"

    def __init__(self, model: FeedForwardNet, trace: List[dict]):
        self.model = model
        self.trace = trace
        self.config = model.config
        self.log = model.log
        self.embedding = model.embedding
        self.params = model.params

    def predict(self, bins):
        return self.model.predict(bins)

    def predict_default(self, bins):
        return self.model.predict_default(bins)

    def snapshot(self):
        return self.model.snapshot()

    def load(self, arrays):
        self.model.load(arrays)

    def gate_params(self):
        raise TypeError("st has no gates")

    def meta(self):
        meta = self.model.meta()
        meta["kind"] = "st"
        return meta


def self_training_rounds(score_fn, fit_fn, base_bins, base_y, rej_bins, rounds, add_fraction):
    """Generic self-training loop.

    ``fit_fn(bins, y)`` trains a learner; ``score_fn(model, bins)`` gives
    default probabilities. Each round moves the top ``add_fraction`` of the
    original rejected pool (by predicted default probability) into the
    labelled pool with y = 1. Returns (model, trace).
    """
    pool_bins, pool_y = base_bins, base_y
    remaining = np.arange(len(rej_bins))
    per_round = max(1, int(math.ceil(add_fraction * len(rej_bins)))) if len(rej_bins) else 0
    trace = []
    model = fit_fn(pool_bins, pool_y)
    for rnd in range(rounds):
        if len(remaining) == 0:
            break
        s = score_fn(model, rej_bins[remaining])
        take = np.argsort(-s, kind="stable")[:per_round]
        chosen = remaining[take]
        trace.append({"round": rnd, "added": [int(i) for i in chosen]})
        remaining = np.delete(remaining, take)
        pool_bins = np.vstack([pool_bins, rej_bins[chosen]])
        pool_y = np.concatenate([pool_y, np.ones(len(chosen), dtype=pool_y.dtype)])
        model = fit_fn(pool_bins, pool_y)
    return model, trace


def fit_self_training(dataset: Dataset, config: ModelConfig, rounds=None, add_fraction=None) -> SelfTrainingModel:
    rounds = config.st_rounds if rounds is None else rounds
    add_fraction = config.st_add_fraction if add_fraction is None else add_fraction
    view = dataset.train_view()
    _require_approved(view)
    app = view.r == 0
    n_hidden = 0 if config.st_base == "lr" else config.t - 1

    def fit_fn(bins, y):
        return _fit_feedforward(dataset, config, n_hidden, config.st_base, bins=bins, y=y)

    model, trace = self_training_rounds(
        lambda mdl, b: mdl.predict_default(b),
        fit_fn,
        view.bins[app],
        view.y[app],
        view.bins[~app],
        rounds,
        add_fraction,
    )
    return SelfTrainingModel(model, trace)


def one_hot(bins, n_bins):
    from scipy import sparse

    emb = Embedding(n_bins)
    idx = emb.rows(bins)
    n, d = idx.shape
    rows = np.repeat(np.arange(n), d)
    return sparse.csr_matrix((np.ones(n * d), (rows, idx.reshape(-1))), shape=(n, emb.total))


def fit_propensity(view: TrainView, l2=1e-4):
    """Logistic regression of r on one-hot bins (L-BFGS); returns P(r=1|x) fn."""
    from scipy.optimize import minimize

    X = one_hot(view.bins, view.n_bins)
    r = view.r.astype(np.float64)
    n, p = X.shape

    def objective(theta):
        z = X @ theta[:-1] + theta[-1]
        loss = bce_with_logits(z, r).mean() + 0.5 * l2 * theta[:-1] @ theta[:-1]
        res = (sigmoid(z) - r) / n
        grad = np.empty_like(theta)
        grad[:-1] = X.T @ res + l2 * theta[:-1]
        grad[-1] = res.sum()
        return loss, grad

    sol = minimize(objective, np.zeros(p + 1), jac=True, method="L-BFGS-B", options={"maxiter": 1000})
    theta = sol.x

    def propensity(bins):
        return sigmoid(one_hot(bins, view.n_bins) @ theta[:-1] + theta[-1])

    return propensity


def ips_weights(p_reject, w_max):
    """1 / P(approved | x), clipped to [1, w_max]."""
    p_reject = np.asarray(p_reject, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = 1.0 / (1.0 - p_reject)
    return np.clip(w, 1.0, w_max)


def fit_ips(dataset: Dataset, config: ModelConfig, base: str = "mlp") -> FeedForwardNet:
    """Inverse-propensity weighted baseline (LR or MLP base learner)."""
    view = dataset.train_view()
    _require_approved(view)
    # the propensity model sees features and r of every row, never labels
    propensity = fit_propensity(dataset.view(np.arange(dataset.n)))
    app = view.r == 0
    w = ips_weights(propensity(view.bins[app]), config.ips_w_max)
    n_hidden = 0 if base == "lr" else config.t - 1
    model = _fit_feedforward(dataset, config, n_hidden, "ips", bins=view.bins[app], y=view.y[app], weight=w)
    model.ips_weights = w
    return model


def fit_model(kind: str, dataset: Dataset, config: ModelConfig):
    """Dispatch on model kind; every learner exposes predict/predict_default."""
    if kind == "lr":
        return fit_lr(dataset, config)
    if kind == "mlp":
        return fit_mlp(dataset, config)
    if kind == "st":
        return fit_self_training(dataset, config)
    if kind == "ips":
        return fit_ips(dataset, config)
    if kind in ("rmtnet", "rmtnetpp"):
        return fit(dataset, config, kind=kind)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def build_model(meta: dict):
    """Empty model matching a snapshot's metadata (params to be loaded)."""
    config = ModelConfig.from_dict(meta["config"])
    kind = meta["kind"]
    n_bins = meta["n_bins"]
    if kind in ("rmtnet", "rmtnetpp"):
        return RMTNet(config, n_bins, kind=kind)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r} in snapshot")
    n_hidden = meta.get("n_hidden", 0 if kind == "lr" else config.t - 1)
    if kind == "st":
        return SelfTrainingModel(FeedForwardNet(config, n_bins, n_hidden, kind=config.st_base), [])
    return FeedForwardNet(config, n_bins, n_hidden, kind=kind)
