"""Sampled relevance distributions and their aggregations.

A RelevanceSet holds N relevance maps for one input, one per posterior draw.
Aggregations reduce it pixelwise: the mean, linear-interpolation percentiles
(alpha=5 gives the Intersection, alpha=95 the Union explanation) and the
exceedance frequency UAI+ on a group-normalized set.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import attribution as attr
from .errors import NormalizationError, ShapeError
from .net import as_batch
from .posterior import Ensemble, MCDropout, draws
from .seeding import derive_seed

NORMALIZATIONS = ("raw", "group", "minmax")


def _frozen(a):
    a = np.array(a, dtype=np.float32)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RelevanceSet:
    """N relevance maps of one input.

    ``seeds[i]`` is the posterior-draw seed of sample i, or -1 when the sample
    came from enumerating ensemble members (then ``members[i]`` says which).
    """

    samples: np.ndarray
    x: Optional[np.ndarray] = None
    method: str = ""
    posterior: str = ""
    class_index: int = -1
    seeds: tuple = ()
    members: tuple = ()
    normalization: str = "raw"

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim < 2 or len(s) < 1:
            raise ShapeError("a relevance set needs at least one map")
        if not np.all(np.isfinite(s)):
            raise FloatingPointError("relevance samples must be finite")
        object.__setattr__(self, "samples", s)
        if self.x is not None:
            object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "seeds", tuple(int(v) for v in self.seeds))
        object.__setattr__(self, "members", tuple(int(v) for v in self.members))
        if self.seeds and len(self.seeds) != len(s):
            raise ValueError("one seed per sample is required")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def n(self):
        return len(self.samples)

    @property
    def shape(self):
        return self.samples.shape[1:]

    def maps(self):
        return [attr.RelevanceMap(m, self.method, self.class_index) for m in self.samples]


@dataclass(frozen=True, eq=False)
class AggregateMap:
    """``kind`` is "mean", "percentile" (param = alpha) or "uai+" (param = epsilon)."""

    values: np.ndarray
    kind: str
    param: Optional[float] = None
    normalization: str = "raw"

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def label(self):
        if self.kind == "percentile":
            return f"uai{self.param:g}"
        if self.kind == "uai+":
            return "uai+"
        return self.kind


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def image_seed(seed, index):
    """Seed of image ``index`` inside a batched sampling run."""
    return derive_seed(seed, "image", index)


def sample_relevances(posterior, net, method, x, class_index, n, seed, enumerate_ensemble=False):
    """N posterior draws of the relevance map of ``x`` for ``class_index``."""
    xb, single = as_batch(net, x)
    if not single:
        raise ShapeError("sample_relevances explains one input; use sample_relevances_many")
    out = _sample_block(posterior, net, method, xb, np.array([class_index]), n, [seed], enumerate_ensemble)
    return out[0]


def sample_relevances_many(posterior, net, method, X, classes, n, seed, enumerate_ensemble=False, chunk=128):
    """One RelevanceSet per row of ``X``; image i uses ``image_seed(seed, i)``.

    Equivalent to calling sample_relevances per image, but batches the work:
    ensemble members are evaluated once per image, dropout masks are stacked.
    """
    X = np.asarray(X, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    if len(X) != len(classes):
        raise ValueError("one class index per image is required")
    seeds = [image_seed(seed, i) for i in range(len(X))]
    return _sample_block(posterior, net, method, X, classes, n, seeds, enumerate_ensemble, chunk)


def _sample_block(posterior, net, method, X, classes, n, seeds, enumerate_ensemble, chunk=128):
    if n < 1:
        raise ValueError("N must be at least 1")
    if np.any(classes < 0) or np.any(classes >= net.num_classes):
        raise IndexError("class index out of range")
    B = len(X)
    plans = [draws(posterior, n, s, net, enumerate_ensemble) for s in seeds]
    out = np.empty((B, n) + attr.spatial_shape(net), dtype=np.float32)

    if isinstance(posterior, Ensemble):
        who = np.array([[d.member for d in p[0]] for p in plans]).reshape(B, n)
        for m, w in enumerate(posterior.members):
            rows = np.flatnonzero((who == m).any(axis=1))
            for s in range(0, len(rows), chunk):
                r = rows[s:s + chunk]
                maps = attr.relevance_batch(method, net, w, X[r], classes[r])
                for k, b in enumerate(r):
                    out[b, who[b] == m] = maps[k]
    elif isinstance(posterior, MCDropout):
        pairs = [(b, i) for b in range(B) for i in range(n)]
        for s in range(0, len(pairs), chunk):
            part = pairs[s:s + chunk]
            ms = [plans[b][0][i].mask for b, i in part]
            mask = ms[0].stack(ms[1:])
            rb = np.array([b for b, _ in part])
            maps = attr.relevance_batch(method, net, posterior.map_weights, X[rb], classes[rb], mask)
            for k, (b, i) in enumerate(part):
                out[b, i] = maps[k]
    else:
        for b in range(B):
            for i, d in enumerate(plans[b][0]):
                out[b, i] = attr.relevance_batch(method, net, d.weights, X[b:b + 1], classes[b], d.mask)[0]

    sets = []
    for b in range(B):
        samples, dseeds = plans[b]
        sets.append(
            RelevanceSet(
                out[b],
                X[b],
                method.name,
                posterior.tag,
                int(classes[b]),
                tuple(-1 if v is None else v for v in dseeds),
                tuple(-1 if d.member is None else d.member for d in samples),
            )
        )
    return sets


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def mean_explanation(rset):
    return AggregateMap(rset.samples.astype(np.float64).mean(axis=0), "mean", None, rset.normalization)


def percentile_f64(samples, alpha):
    """Pixelwise alpha-th percentile with linear interpolation between order statistics."""
    if not 0 <= alpha <= 100:
        raise ValueError(f"percentile {alpha} outside [0, 100]")
    s = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    h = (len(s) - 1) * alpha / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    frac = h - lo
    return s[lo] + frac * (s[hi] - s[lo])


def uai_percentile(rset, alpha):
    return AggregateMap(percentile_f64(rset.samples, alpha), "percentile", float(alpha), rset.normalization)


def group_normalize(rset):
    """Divide every sample by the largest entry over the whole set."""
    top = float(rset.samples.max())
    if not top > 0:
        raise NormalizationError("group normalization needs at least one positive relevance")
    return replace(rset, samples=rset.samples.astype(np.float64) / top, normalization="group")


def uai_plus(rset, eps=0.05, literal=False):
    """Fraction of samples whose relevance exceeds ``eps`` at each pixel.

    ``literal=True`` counts samples below ``eps`` instead.
    """
    if rset.normalization != "group":
        raise NormalizationError("uai_plus needs a group-normalized relevance set")
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    hits = rset.samples < eps if literal else rset.samples > eps
    return AggregateMap(hits.sum(axis=0) / rset.n, "uai+", float(eps), "group")


def minmax_f64(values):
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(v)
    pos = v > 0
    neg = v < 0
    if pos.any():
        out[pos] = v[pos] / v[pos].max()
    if neg.any():
        out[neg] = v[neg] / -v[neg].min()
    return out


def minmax_normalize(amap):
    """Scale positives onto (0, 1] and negatives onto [-1, 0) separately, without shifting."""
    return replace(amap, values=minmax_f64(amap.values), normalization="minmax")
