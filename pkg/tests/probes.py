"""Random probe points for gradient checks, kept away from relu kinks."""

import numpy as np

from rmtnet.models import FeedForwardNet, ModelConfig, RMTNet

KINK_MARGIN = 1e-3


def _min_abs_preactivation(model, bins):
    f = model._forward(bins)
    if isinstance(f, dict):
        pres = [z for tower in f["ra_pres"] for z in tower] + list(f["dn_pres"])
    else:
        pres = f[2]
    return min((float(np.min(np.abs(z))) for z in pres), default=np.inf)


def rmt_probe(seed, t, M, d=5, k=2, hidden=4, n=12, bins_per_feature=3, eta=0.3, kind="rmtnetpp", tries=200):
    """A randomly initialised network plus a batch whose relu inputs all
    sit at least KINK_MARGIN from zero (resampled otherwise)."""
    rng = np.random.default_rng(seed)
    n_bins = [bins_per_feature] * d
    for _ in range(tries):
        cfg = ModelConfig(k=k, hidden=hidden, t=t, M=M, eta=eta, seed=int(rng.integers(2**31)))
        model = RMTNet(cfg, n_bins, kind=kind)
        for name, v in model.params.items():
            if name.startswith("gate.") or ".b" in name:
                v[...] = rng.normal(scale=0.5, size=v.shape)
        bins = rng.integers(0, bins_per_feature, size=(n, d))
        r = rng.integers(0, 2, n)
        r[:2] = [0, 1]
        y = np.where(r == 0, rng.integers(0, 2, n), -1)
        policy = rng.integers(0, model.config.M, n)
        if _min_abs_preactivation(model, bins) > KINK_MARGIN:
            return model, bins, r, y, policy
    raise RuntimeError("could not find a kink-free probe point")


def ff_probe(seed, n_hidden, d=3, k=2, hidden=4, n=10, bins_per_feature=3, tries=200):
    rng = np.random.default_rng(seed)
    n_bins = [bins_per_feature] * d
    for _ in range(tries):
        cfg = ModelConfig(k=k, hidden=hidden, seed=int(rng.integers(2**31)))
        model = FeedForwardNet(cfg, n_bins, n_hidden)
        for name, v in model.params.items():
            if name.startswith("b"):
                v[...] = rng.normal(scale=0.5, size=v.shape)
        bins = rng.integers(0, bins_per_feature, size=(n, d))
        y = rng.integers(0, 2, n)
        w = rng.uniform(0.5, 3.0, n)
        if _min_abs_preactivation(model, bins) > KINK_MARGIN:
            return model, bins, y, w
    raise RuntimeError("could not find a kink-free probe point")
