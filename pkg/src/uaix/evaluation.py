"""Localization metrics against ground-truth object masks, and the comparison harness.

AUC is the Mann-Whitney statistic of object pixels against background pixels
with midranks for ties. Relevance mass accuracy (MA) is the share of positive
relevance that falls inside the object. Both are computed exactly: ranks are
kept as doubled integers and masses as integer multiples of the smallest
float32 step, so the usual identities hold bit for bit.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import attribution as attr
from . import uai
from .errors import NormalizationError, ShapeError
from .posterior import map_weights
from .seeding import rng_for

# float32 values are integer multiples of 2**-149; scaling by 2**149 is exact in float64
_F32_SCALE = 2.0 ** 149


def _as_values(relevance):
    return np.asarray(relevance.values if hasattr(relevance, "values") else relevance)


def check_mask(mask, shape=None):
    m = np.asarray(mask)
    if shape is not None and m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match relevance shape {tuple(shape)}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("object mask must be binary")
    if m.all() or not m.any():
        raise ValueError("object mask needs both object and background pixels")
    return m.astype(bool)


def doubled_midranks(scores):
    """Twice the 1-based midrank of every score (an integer array)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if np.any(np.isnan(s)):
        raise ValueError("scores must not contain NaN")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    n = len(s)
    starts = np.flatnonzero(np.concatenate([[True], ss[1:] != ss[:-1]]))
    ends = np.concatenate([starts[1:], [n]])
    # a tie block occupying sorted positions [i, j) has midrank (i + 1 + j) / 2
    twice = np.repeat(starts + 1 + ends, ends - starts)
    out = np.empty(n, dtype=np.int64)
    out[order] = twice
    return out


def auc_localization(relevance, mask):
    """Probability that an object pixel outranks a background pixel (ties count half)."""
    v = _as_values(relevance)
    m = check_mask(mask, v.shape).ravel()
    P = int(m.sum())
    Q = m.size - P
    u2 = int(doubled_midranks(v)[m].sum()) - P * (P + 1)  # 2 * Mann-Whitney U
    d = 2 * P * Q
    # divide the smaller tail so that auc(s) + auc(-s) == 1 exactly
    if 2 * u2 <= d:
        return u2 / d
    return 1.0 - (d - u2) / d


def _exact_positive_mass(values):
    v = np.asarray(values)
    pos = np.where(v > 0, v, 0)
    if v.dtype == np.float32:
        return sum(int(x) for x in pos.astype(np.float64).ravel() * _F32_SCALE)
    return sum((Fraction(float(x)) for x in pos.ravel()), Fraction(0))


def mass_accuracy(relevance, mask):
    """Positive relevance inside the object over all positive relevance; NaN if there is none."""
    v = _as_values(relevance)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    m = check_mask(mask, v.shape)
    total = _exact_positive_mass(v)
    if total == 0:
        return float("nan")
    return float(Fraction(_exact_positive_mass(np.where(m, v, 0).astype(v.dtype))) / Fraction(total))


def random_relevance(shape, seed, index):
    """Uniform [0, 1) relevance for the random baseline row."""
    return rng_for(seed, "random", index).random(shape).astype(np.float32)


ROW_NAMES = {5.0: "Intersection", 95.0: "Union"}


def row_label(key):
    if key.startswith("uai") and key != "uai+":
        a = float(key[3:])
        return ROW_NAMES.get(a, f"UAI{a:g}")
    return {"random": "Random", "baseline": "Baseline", "average": "Average", "uai+": "UAI+"}[key]


@dataclass
class MetricReport:
    """Per-image AUC and MA for each row; ``absent`` rows could not be computed."""

    rows: dict = field(default_factory=dict)
    absent: tuple = ()
    n_images: int = 0

    def add(self, key, auc, ma):
        self.rows.setdefault(key, ([], []))
        self.rows[key][0].append(auc)
        self.rows[key][1].append(ma)

    def summary(self, key):
        """(AUC mean, AUC sd, MA mean, MA sd, MA images excluded)."""
        auc, ma = (np.asarray(a, dtype=np.float64) for a in self.rows[key])
        ok = ~np.isnan(ma)
        excluded = int((~ok).sum())
        return _mean_sd(auc[~np.isnan(auc)]) + _mean_sd(ma[ok]) + (excluded,)

    def order(self):
        keys = list(self.rows) + list(self.absent)
        fixed = ["random", "baseline", "average"]
        perc = sorted((k for k in keys if k.startswith("uai") and k != "uai+"), key=lambda k: float(k[3:]))
        return [k for k in fixed if k in keys] + perc + [k for k in ["uai+"] if k in keys]

    def to_tsv(self):
        lines = ["method\tlabel\tauc_mean\tauc_sd\tma_mean\tma_sd\tn_images\tma_excluded"]
        for k in self.order():
            if k in self.absent:
                lines.append(f"{k}\t{row_label(k)}\tabsent\tabsent\tabsent\tabsent\t0\t0")
                continue
            am, asd, mm, msd, ex = self.summary(k)
            lines.append(f"{k}\t{row_label(k)}\t{am:.6f}\t{asd:.6f}\t{mm:.6f}\t{msd:.6f}\t{len(self.rows[k][0])}\t{ex}")
        return "\n".join(lines) + "\n"


def _mean_sd(a):
    if len(a) == 0:
        return (math.nan, math.nan)
    return (float(np.mean(a)), float(np.std(a, ddof=1)) if len(a) > 1 else 0.0)


def aggregate_maps(rset, alphas=(5, 95), eps=0.05):
    """Average, each percentile and UAI+ for one RelevanceSet; UAI+ is None without positive mass."""
    out = {"average": uai.mean_explanation(rset).values}
    for a in alphas:
        out[f"uai{float(a):g}"] = uai.uai_percentile(rset, a).values
    try:
        out["uai+"] = uai.uai_plus(uai.group_normalize(rset), eps).values
    except NormalizationError:
        out["uai+"] = None
    return out


def evaluate_suite(posterior, net, method, data, alphas=(5, 95), eps=0.05, n=50, seed=0, enumerate_ensemble=False, sets=None):
    """Score Random, Baseline (MAP attribution), Average, each percentile and UAI+ on every image.

    The explained class is the true label. All aggregations of one image use
    the same sampled RelevanceSet. Pass precomputed ``sets`` to skip sampling.
    """
    X = np.asarray(data.images)
    y = np.asarray(data.labels, dtype=np.int64)
    masks = np.asarray(data.masks)
    if len(X) == 0:
        raise ValueError("evaluation set is empty")
    if sets is None:
        sets = uai.sample_relevances_many(posterior, net, method, X, y, n, seed, enumerate_ensemble)
    mw = map_weights(posterior)
    base = None
    if mw is not None:
        base = attr.relevance_batch(method, net, mw, X.astype(np.float64), y)
    report = MetricReport(absent=() if base is not None else ("baseline",), n_images=len(X))
    shape = attr.spatial_shape(net)
    for i in range(len(X)):
        mask = masks[i]
        rnd = random_relevance(shape, seed, i)
        report.add("random", auc_localization(rnd, mask), mass_accuracy(rnd, mask))
        if base is not None:
            report.add("baseline", auc_localization(base[i], mask), mass_accuracy(base[i], mask))
        for key, values in aggregate_maps(sets[i], alphas, eps).items():
            if values is None:
                report.add(key, math.nan, math.nan)
                continue
            report.add(key, auc_localization(values, mask), mass_accuracy(values, mask))
    return report
