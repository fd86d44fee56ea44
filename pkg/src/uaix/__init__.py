"""Uncertainty-aware explanations for Bayesian neural networks.

Sample relevance maps from a weight posterior, aggregate them into percentile
(Intersection / Union), mean and UAI+ maps, cluster them with SpRAy and score
their localization against object masks.

Submodules load on first attribute access, so ``import uaix`` stays cheap.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "net": ("Network", "WeightSet", "DropoutMask", "lenet", "mlp", "init_weights", "forward", "grad_input"),
    "trainer": ("TrainConfig", "TrainHistory", "train", "train_ensemble", "evaluate"),
    "posterior": ("Ensemble", "MCDropout", "DiagonalLaplace", "mc_dropout", "fit_diagonal_laplace", "sample"),
    "attribution": (
        "Gradient", "AbsGradient", "InputTimesGradient", "LrpEpsilon", "IntegratedGradients", "attribute",
    ),
    "uai": (
        "RelevanceSet", "AggregateMap", "sample_relevances", "sample_relevances_many", "mean_explanation",
        "uai_percentile", "group_normalize", "uai_plus", "minmax_normalize",
    ),
    "spray": ("SpectralResult", "cluster", "eigengap_select", "laplacian_spectrum", "knn_affinity"),
    "evaluation": ("MetricReport", "auc_localization", "mass_accuracy", "evaluate_suite"),
    "synth": ("SynthConfig", "Dataset", "generate", "load_idx"),
    "io": ("save", "load", "read_container", "write_container"),
    "heatmap": ("export_heatmap",),
    "config": ("RunConfig", "load_config"),
    "seeding": ("derive_seed", "rng_for"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
_SUBMODULES = set(_EXPORTS) | {"errors", "pipeline", "cli"}

__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        return getattr(importlib.import_module(f".{_WHERE[name]}", __name__), name)
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_WHERE) | _SUBMODULES)
