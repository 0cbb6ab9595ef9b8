"""Small dense-network engine used by every model in the package.

Everything here works on batches: rows are samples, columns are units.
Gradients are written out by hand in the model modules; this file holds
the shared pieces (activations, losses, layers, Adam, gradient checking
and the parameter snapshot container).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Mapping

import numpy as np

PROB_CLIP = 1e-7

SNAPSHOT_MAGIC = b"RMTSNAP"
SNAPSHOT_VERSION = 1


def sigmoid(z):
    """Logistic function, stable for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def relu(z):
    return np.maximum(z, 0.0)


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce(prediction, label):
    """Binary cross-entropy of a probability against a {0,1} label.

    The probability is clipped to [PROB_CLIP, 1 - PROB_CLIP] first, so the
    result is always finite.
    """
    p = np.clip(np.asarray(prediction, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(label, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    if out.ndim == 0:
        return float(out)
    return out


def bce_with_logits(z, label):
    """Cross-entropy of sigmoid(z) against label, computed from the logit.

    Equal to ``bce(sigmoid(z), label)`` wherever the clip is inactive. The
    model losses use this form so the gradient never vanishes on a
    saturated wrong prediction.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    return softplus(z) - y * z


@dataclass
class DenseLayer:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> DenseLayer:
    return DenseLayer(glorot_uniform(rng, n_in, n_out), np.zeros(n_out))


_ACTIVATIONS: Dict[str, Callable] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "none": lambda z: z,
}


def dense_forward(x, layer: DenseLayer, activation: str = "none"):
    """activation(x @ W + b) for a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != layer in-dim {layer.in_dim}")
    try:
        act = _ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(x @ layer.W + layer.b)


class Adam:
    """Adam over a dict of named float64 arrays, updated in place."""

    def __init__(self, params: Mapping[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, params, grads):
    """Functional spelling of ``state.step``; returns the updated params."""
    state.step(params, grads)
    return params


def numerical_gradient(loss_fn: Callable[[], float], params: Dict[str, np.ndarray], step=1e-5):
    """Central differences of ``loss_fn`` w.r.t. every entry of ``params``.

    ``loss_fn`` takes no arguments and must read ``params`` by reference.
    """
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            hi = loss_fn()
            flat[i] = old - step
            lo = loss_fn()
            flat[i] = old
            gflat[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def grad_check(loss_fn, params, analytic: Mapping[str, np.ndarray], step=1e-5, floor=1e-8) -> float:
    """Max relative error between ``analytic`` and central differences.

    Relative error per entry is |a - n| / max(|a|, |n|, floor).
    """
    numeric = numerical_gradient(loss_fn, params, step)
    worst = 0.0
    for name, n in numeric.items():
        a = np.asarray(analytic[name])
        if a.shape != n.shape:
            raise ValueError(f"gradient for {name} has shape {a.shape}, expected {n.shape}")
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


# -- snapshots ---------------------------------------------------------------
#
# Layout: magic (7 bytes) | uint8 version | uint32 LE header length |
# UTF-8 JSON header | float64 LE payloads in header order.
# Header: {"version", "meta", "arrays": [{"name", "shape"}, ...]}.


def save_snapshot(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(dumps_snapshot(arrays, meta))


def dumps_snapshot(arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    header = {
        "version": SNAPSHOT_VERSION,
        "meta": dict(meta or {}),
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [SNAPSHOT_MAGIC, struct.pack("<BI", SNAPSHOT_VERSION, len(hbytes)), hbytes]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def load_snapshot(path):
    with open(path, "rb") as fh:
        return loads_snapshot(fh.read())


def loads_snapshot(blob: bytes):
    """Inverse of ``dumps_snapshot``; returns (arrays, meta)."""
    n = len(SNAPSHOT_MAGIC)
    if blob[:n] != SNAPSHOT_MAGIC:
        raise ValueError("not a parameter snapshot")
    version, hlen = struct.unpack("<BI", blob[n : n + 5])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos = n + 5
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64)
        arrays[entry["name"]] = arr.reshape(shape)
        pos += 8 * size
    if pos != len(blob):
        raise ValueError("trailing bytes in snapshot")
    return arrays, header["meta"]
