"""End-to-end steps behind the command-line driver.

Every random stream derives from ``cfg.run.seed``: the synthetic data uses it
directly, training uses ``(seed, "trainer")`` and ``(seed, "init")``,
relevance sampling uses ``(seed, "image", i)`` per evaluation image and
clustering uses ``(seed, "spray")``.
"""
import logging
import os
from dataclasses import replace


from . import attribution as attr
from . import evaluation as ev
from . import heatmap, io, spray, uai
from .config import RunConfig
from .errors import ConfigError, NormalizationError
from .net import init_weights, lenet
from .posterior import Ensemble, fit_diagonal_laplace, mc_dropout
from .seeding import derive_seed, rng_for
from .synth import SynthConfig, generate, load_idx
from .trainer import TrainConfig, train, train_ensemble

log = logging.getLogger(__name__)

VARIANTS = ("mcdropout", "ensemble", "laplace")

# demo presets, applied before the config file and --set overrides
SCALES = {
    "tiny": {
        ("data", "train_size"): "300", ("eval", "size"): "12", ("trainer", "epochs"): "1",
        ("posterior", "members"): "2", ("posterior", "member_epochs"): "1", ("uai", "n"): "8",
        ("spray", "n"): "16", ("spray", "max_k"): "6", ("spray", "k_nn"): "4", ("eval", "heatmaps"): "2",
    },
    "small": {
        ("data", "train_size"): "5000", ("eval", "size"): "500", ("trainer", "epochs"): "20",
        ("trainer", "lr_step"): "7", ("posterior", "members"): "10", ("posterior", "member_epochs"): "10",
        ("uai", "n"): "50", ("spray", "n"): "100",
    },
    "paper": {
        ("data", "train_size"): "5000", ("eval", "size"): "10000", ("trainer", "epochs"): "100",
        ("trainer", "lr_step"): "7", ("posterior", "members"): "100", ("posterior", "member_epochs"): "20",
        ("uai", "n"): "100", ("spray", "n"): "100",
    },
}


def scale_config(scale):
    if scale not in SCALES:
        raise ConfigError(f"unknown demo scale {scale!r}; choose from {', '.join(SCALES)}")
    return RunConfig().with_values(SCALES[scale])


def datasets(cfg):
    """(train, evaluation) datasets."""
    d = cfg.data
    if d.source == "synth":
        sc = SynthConfig(
            image_size=d.image_size, channels=d.channels, area_low=d.area_low, area_high=d.area_high, seed=cfg.run.seed
        )
        return generate(sc, d.train_size), generate(sc, cfg.eval.size, start=d.train_size)
    if not (d.idx_images and d.idx_labels and d.idx_test_images and d.idx_test_labels):
        raise ConfigError("data.source = idx needs idx_images, idx_labels, idx_test_images and idx_test_labels")
    train_set = load_idx(d.idx_images, d.idx_labels)
    test_set = load_idx(d.idx_test_images, d.idx_test_labels)
    return train_set.subset(slice(0, d.train_size)), test_set.subset(slice(0, cfg.eval.size))


def build_net(cfg, variant, in_channels=None, image_size=None):
    n = cfg.net
    dropout = n.dropout == "true" or (n.dropout == "auto" and variant == "mcdropout")
    if variant == "mcdropout" and not dropout:
        raise ConfigError("posterior.variant = mcdropout needs net.dropout = auto or true")
    return lenet(
        in_channels=in_channels or cfg.data.channels, image_size=image_size or cfg.data.image_size,
        dropout=dropout, rate2d=n.rate2d, rate1d=n.rate1d,
    )


def train_config(cfg):
    t = cfg.trainer
    return TrainConfig(
        learning_rate=t.learning_rate, momentum=t.momentum, batch_size=t.batch_size, epochs=t.epochs,
        lr_step=t.lr_step, lr_gamma=t.lr_gamma, weight_decay=t.weight_decay,
        holdout_fraction=t.holdout_fraction, seed=derive_seed(cfg.run.seed, "trainer"),
    )


def fit_posterior(cfg, net, train_set, variant):
    """(posterior, history TSV text)."""
    data = (train_set.images, train_set.labels)
    tc = train_config(cfg)
    if variant == "ensemble":
        epochs = cfg.posterior.member_epochs or tc.epochs
        members, hists = train_ensemble(net, data, replace(tc, epochs=epochs), cfg.posterior.members)
        text = "".join(f"# member {m}\n{h.to_tsv()}" for m, h in enumerate(hists))
        return Ensemble(members), text
    w, hist = train(net, init_weights(net, rng_for(cfg.run.seed, "init")), data, tc)
    if variant == "mcdropout":
        return mc_dropout(net, w), hist.to_tsv()
    if variant == "laplace":
        return fit_diagonal_laplace(net, w, data, cfg.posterior.prior_precision), hist.to_tsv()
    raise ConfigError(f"unknown posterior variant {variant!r}")


def method(cfg):
    a = cfg.attribution
    return attr.method_from_name(a.method, lrp_eps=a.lrp_eps, ig_steps=a.ig_steps)


def explain(cfg, posterior, net, data, index, n=None):
    """Sampled relevance maps of evaluation image ``index`` for its label."""
    return uai.sample_relevances(
        posterior, net, method(cfg), data.images[index], int(data.labels[index]), n or cfg.uai.n,
        uai.image_seed(cfg.run.seed, index), cfg.uai.enumerate,
    )


def aggregates(rset, alphas=(), mean=False, plus=False, eps=0.05):
    """Label -> AggregateMap scaled for display (signed maps min-max normalized)."""
    out = {}
    if mean:
        out["average"] = uai.minmax_normalize(uai.mean_explanation(rset))
    for a in alphas:
        amap = uai.uai_percentile(rset, a)
        out[amap.label] = uai.minmax_normalize(amap)
    if plus:
        try:
            out["uai+"] = uai.uai_plus(uai.group_normalize(rset), eps)
        except NormalizationError:
            log.warning("no positive relevance in any sample; UAI+ map skipped")
    return out


def write_heatmaps(maps, prefix, scale=1):
    paths = []
    for label, amap in maps.items():
        path = f"{prefix}_{label}.ppm"
        heatmap.export_heatmap(amap, path, scale=scale)
        paths.append(path)
    return paths


def cluster_report(cfg, rset, prefix, scale=1):
    s = cfg.spray
    res = spray.cluster(rset, k_nn=s.k_nn, pool=s.pool, max_k=s.max_k, seed=derive_seed(cfg.run.seed, "spray"))
    with open(f"{prefix}_spray.tsv", "w") as f:
        f.write(res.report())
    for c in range(res.k):
        heatmap.export_heatmap(uai.minmax_f64(res.means[c]), f"{prefix}_cluster{c}.ppm", scale=scale)
    return res


def evaluate(cfg, posterior, net, data):
    return ev.evaluate_suite(
        posterior, net, method(cfg), data, alphas=cfg.uai.alphas, eps=cfg.uai.eps, n=cfg.uai.n,
        seed=cfg.run.seed, enumerate_ensemble=cfg.uai.enumerate,
    )


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def run_variant(cfg, variant, train_set, test_set, out):
    """Train, evaluate, export heatmaps and cluster for one posterior; returns the MetricReport."""
    os.makedirs(out, exist_ok=True)
    C, H, _ = train_set.images.shape[1:]
    net = build_net(cfg, variant, C, H)
    log.info("%s: training", variant)
    post, hist = fit_posterior(cfg, net, train_set, variant)
    io.save(os.path.join(out, "posterior.uaix"), post, network=net)
    write_text(os.path.join(out, "history.tsv"), hist)
    log.info("%s: evaluating %d images", variant, len(test_set))
    report = evaluate(cfg, post, net, test_set)
    write_text(os.path.join(out, "report.tsv"), report.to_tsv())
    for i in range(min(cfg.eval.heatmaps, len(test_set))):
        rset = explain(cfg, post, net, test_set, i)
        maps = aggregates(rset, cfg.uai.alphas, mean=True, plus=True, eps=cfg.uai.eps)
        write_heatmaps(maps, os.path.join(out, f"image{i}"), cfg.eval.scale)
    for i in range(min(cfg.spray.images, len(test_set))):
        rset = explain(cfg, post, net, test_set, i, n=cfg.spray.n)
        io.save(os.path.join(out, f"image{i}_relevances.uaix"), rset)
        cluster_report(cfg, rset, os.path.join(out, f"image{i}"), cfg.eval.scale)
    return report


def demo(cfg, variants=("mcdropout", "ensemble")):
    """The full desk-scale pipeline for each variant under ``cfg.run.out``."""
    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    # the output directory is left out so runs in different places compare equal
    write_text(os.path.join(out, "config.ini"), cfg.to_ini(skip={("run", "out")}))
    train_set, test_set = datasets(cfg)
    io.save(os.path.join(out, "test.uaix"), test_set)
    reports = {}
    for v in variants:
        reports[v] = run_variant(cfg, v, train_set, test_set, os.path.join(out, v))
    return reports
