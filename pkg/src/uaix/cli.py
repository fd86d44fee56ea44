"""Command-line driver: ``uaix {train,explain,aggregate,cluster,evaluate,demo}``.

Numeric modules are imported only after ``--threads`` has been applied to the
BLAS and numba thread-count variables, so the setting takes effect when the
command runs in a fresh process.
"""
import argparse
import logging
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--seed", type=int, help="global seed (run.seed)")
    common.add_argument("--threads", type=int, help="worker threads (run.threads)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="uaix", description="Uncertainty-aware explanations of Bayesian neural networks.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train a posterior; writes posterior.uaix, history.tsv, test.uaix")

    ex = sub.add_parser("explain", parents=[common], help="sample relevance maps for one image and export heatmaps")
    ex.add_argument("--posterior", required=True)
    ex.add_argument("--data", required=True, help="dataset container (e.g. test.uaix from train)")
    ex.add_argument("--index", type=int, default=0)

    ag = sub.add_parser("aggregate", parents=[common], help="heatmaps from a saved relevance set")
    ag.add_argument("--relevances", required=True)

    for sp in (ex, ag):
        sp.add_argument("--alpha", type=float, action="append", help="percentile aggregate (repeatable)")
        sp.add_argument("--mean", action="store_true", help="average aggregate")
        sp.add_argument("--plus", action="store_true", help="UAI+ aggregate")

    cl = sub.add_parser("cluster", parents=[common], help="SpRAy clustering of a saved relevance set")
    cl.add_argument("--relevances", required=True)

    evp = sub.add_parser("evaluate", parents=[common], help="localization report for a saved posterior")
    evp.add_argument("--posterior", required=True)
    evp.add_argument("--data", required=True)

    de = sub.add_parser("demo", parents=[common], help="full pipeline for MC dropout and an ensemble")
    de.add_argument("--scale", default="tiny", choices=("tiny", "small", "paper"))
    de.add_argument("--variants", default="mcdropout,ensemble", help="comma-separated posterior variants")
    return p


def _config(args):
    from .config import load_config
    from .pipeline import scale_config

    base = scale_config(args.scale) if args.command == "demo" else None
    cli = [f"run.{k}={getattr(args, k)}" for k in ("out", "seed", "threads") if getattr(args, k) is not None]
    return load_config(args.config, list(args.set) + cli, base=base)


def _requested(args, cfg):
    """(alphas, mean, plus) for explain/aggregate; all configured aggregates if none is named."""
    if args.alpha is None and not args.mean and not args.plus:
        return cfg.uai.alphas, True, True
    return tuple(args.alpha or ()), args.mean, args.plus


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def run(args):
    cfg = _config(args)
    if cfg.run.threads > 0:
        try:
            import numba

            numba.set_num_threads(min(cfg.run.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    from . import io, pipeline

    out = cfg.run.out
    os.makedirs(out, exist_ok=True)
    if args.command == "demo":
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        reports = pipeline.demo(cfg, variants)
        for v, rep in reports.items():
            print(f"== {v}")
            print(rep.to_tsv(), end="")
        return
    if args.command == "train":
        train_set, test_set = pipeline.datasets(cfg)
        variant = cfg.posterior.variant
        C, H, _ = train_set.images.shape[1:]
        net = pipeline.build_net(cfg, variant, C, H)
        post, hist = pipeline.fit_posterior(cfg, net, train_set, variant)
        io.save(os.path.join(out, "posterior.uaix"), post, network=net)
        io.save(os.path.join(out, "test.uaix"), test_set)
        pipeline.write_text(os.path.join(out, "history.tsv"), hist)
        print(os.path.join(out, "posterior.uaix"))
        return
    if args.command in ("explain", "evaluate"):
        post = io.load(args.posterior)
        net = io.load_network(args.posterior)
        if net is None:
            raise ValueError(f"{args.posterior} does not record its network")
        data = io.load(args.data)
    if args.command == "evaluate":
        if data.masks is None:
            raise ValueError(f"{args.data} has no object masks to evaluate against")
        rep = pipeline.evaluate(cfg, post, net, data)
        pipeline.write_text(os.path.join(out, "report.tsv"), rep.to_tsv())
        print(rep.to_tsv(), end="")
        return
    if args.command == "explain":
        if not 0 <= args.index < len(data):
            raise IndexError(f"--index {args.index} outside the {len(data)} images of {args.data}")
        rset = pipeline.explain(cfg, post, net, data, args.index)
        prefix = os.path.join(out, f"image{args.index}")
        io.save(prefix + "_relevances.uaix", rset)
    else:
        rset = io.load(args.relevances)
        prefix = os.path.join(out, _stem(args.relevances))
    if args.command == "cluster":
        res = pipeline.cluster_report(cfg, rset, prefix, cfg.eval.scale)
        print(res.report(), end="")
        return
    alphas, mean, plus = _requested(args, cfg)
    maps = pipeline.aggregates(rset, alphas, mean, plus, cfg.uai.eps)
    for path in pipeline.write_heatmaps(maps, prefix, cfg.eval.scale):
        print(path)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads > 0:
        for var in THREAD_VARS:
            os.environ.setdefault(var, str(args.threads))
    from .errors import UaixError

    try:
        run(args)
    except (UaixError, OSError, ValueError, IndexError, KeyError) as e:
        print(f"uaix: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
