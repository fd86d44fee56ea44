"""Approximate weight posteriors and Monte-Carlo predictive statistics.

Three families share one sampling interface: a deep ensemble (uniform over
members), MC dropout (MAP weights plus fresh Bernoulli masks) and a diagonal
Laplace approximation (independent Gaussians around the MAP weights).
"""
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .net import DropoutMask, WeightSet, backward, forward_trace
from .seeding import derive_seed
from .trainer import batch_cross_entropy, softmax, unpack


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple

    tag = "ensemble"

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.params.keys() != first.params.keys() or any(
                a.shape != b.shape for i in first for a, b in zip(first[i], m[i])
            ):
                raise ValueError("ensemble members do not share one architecture")


@dataclass(frozen=True, eq=False)
class MCDropout:
    map_weights: WeightSet
    rates: Mapping[int, float]

    tag = "mcdropout"

    def __post_init__(self):
        object.__setattr__(self, "rates", {int(k): float(v) for k, v in sorted(self.rates.items())})


@dataclass(frozen=True, eq=False)
class DiagonalLaplace:
    map_weights: WeightSet
    variance: WeightSet

    tag = "laplace"

    def __post_init__(self):
        for i, (v, vb) in self.variance.items():
            if np.any(v < 0) or np.any(vb < 0):
                raise ValueError(f"negative variance in layer {i}")
            mw, mb = self.map_weights[i]
            if v.shape != mw.shape or vb.shape != mb.shape:
                raise ValueError(f"variance shape mismatch in layer {i}")


@dataclass(frozen=True, eq=False)
class PosteriorSample:
    weights: WeightSet
    mask: Optional[DropoutMask] = None
    member: Optional[int] = None


def mc_dropout(net, map_weights, rates=None):
    """MC-dropout posterior using the network's own dropout rates unless overridden."""
    base = {i: net.layers[i].rate for i in net.dropout_layers}
    if rates:
        base.update(rates)
    return MCDropout(map_weights, base)


def sample(posterior, seed, net=None):
    """One posterior draw; deterministic in ``seed``. MC dropout needs ``net``."""
    rng = np.random.default_rng(seed)
    if isinstance(posterior, Ensemble):
        m = int(rng.integers(len(posterior.members)))
        return PosteriorSample(posterior.members[m], member=m)
    if isinstance(posterior, MCDropout):
        if net is None:
            raise ValueError("sampling MC dropout masks needs the network")
        return PosteriorSample(posterior.map_weights, DropoutMask.sample(net, rng, rates=posterior.rates))
    if isinstance(posterior, DiagonalLaplace):
        params = {}
        for i, (w, b) in posterior.map_weights.items():
            vw, vb = posterior.variance[i]
            params[i] = (
                w.astype(np.float64) + np.sqrt(vw.astype(np.float64)) * rng.standard_normal(w.shape),
                b.astype(np.float64) + np.sqrt(vb.astype(np.float64)) * rng.standard_normal(b.shape),
            )
        return PosteriorSample(WeightSet(params))
    raise TypeError(f"unknown posterior {type(posterior).__name__}")


def enumerate_members(posterior):
    if not isinstance(posterior, Ensemble):
        raise TypeError("only ensembles can be enumerated")
    return [PosteriorSample(w, member=m) for m, w in enumerate(posterior.members)]


def map_weights(posterior):
    """MAP weights, or None for an ensemble (it has no single mean network)."""
    if isinstance(posterior, Ensemble):
        return None
    return posterior.map_weights


def diagonal_variance(per_example_grads, prior_precision, like):
    """1 / (sum of squared per-example gradients + prior_precision).

    ``per_example_grads`` yields ``{layer: (dW, db)}`` dicts shaped like the
    WeightSet ``like``.
    """
    if prior_precision <= 0:
        raise ValueError("prior_precision must be positive")
    fisher = {i: [np.zeros(w.shape), np.zeros(b.shape)] for i, (w, b) in like.items()}
    for g in per_example_grads:
        for i, (gw, gb) in g.items():
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise FloatingPointError(f"non-finite gradient in layer {i}")
            fisher[i][0] += gw * gw
            fisher[i][1] += gb * gb
    return WeightSet({i: (1.0 / (fw + prior_precision), 1.0 / (fb + prior_precision)) for i, (fw, fb) in fisher.items()})


def _per_example_grads(net, w, X, y):
    params = w.f64
    for n in range(len(X)):
        acts, aux = forward_trace(net, params, X[n:n + 1].astype(np.float64))
        _, dlogits = batch_cross_entropy(acts[-1], y[n:n + 1])
        yield backward(net, params, acts, aux, dlogits, weights=True)[1]


def fit_diagonal_laplace(net, map_w, data, prior_precision=0.1):
    """Diagonal Laplace posterior from the empirical Fisher at ``map_w``.

    Dropout layers, if present, act as identity while accumulating.
    """
    X, y = unpack(data)
    var = diagonal_variance(_per_example_grads(net, map_w, X, y), prior_precision, map_w)
    return DiagonalLaplace(map_w, var)


def draws(posterior, n_samples, seed, net=None, enumerate_ensemble=False):
    """``n_samples`` posterior draws with per-draw seeds ``derive_seed(seed, i)``."""
    if enumerate_ensemble and isinstance(posterior, Ensemble):
        members = enumerate_members(posterior)
        return [members[i % len(members)] for i in range(n_samples)], [None] * n_samples
    seeds = [derive_seed(seed, i) for i in range(n_samples)]
    return [sample(posterior, s, net) for s in seeds], seeds


def predictive_stats(posterior, net, x, n_samples, seed, enumerate_ensemble=False):
    """Monte-Carlo mean and unbiased variance of the softmax output."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    xb = np.asarray(x, dtype=np.float64)[None]
    samples, _ = draws(posterior, n_samples, seed, net, enumerate_ensemble)
    probs = np.stack([softmax(forward_trace(net, s.weights, xb, s.mask)[0][-1][0]) for s in samples])
    mean = probs.mean(axis=0)
    var = probs.var(axis=0, ddof=1) if n_samples > 1 else np.zeros_like(mean)
    return mean.astype(np.float32), var.astype(np.float32)
