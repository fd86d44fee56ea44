"""Relevance attribution for one network instance.

Every method maps (network, weights, optional dropout mask, input, class) to a
relevance map with the input's spatial shape. For (C, H, W) inputs the channel
axis is summed at the very end.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import ShapeError
from .net import (
    AvgPool2d,
    Conv2d,
    Dense,
    Dropout,
    DropoutMask,
    Flatten,
    MaxPool2d,
    ReLU,
    as_batch,
    forward_trace,
    grad_input_f64,
)


@dataclass(frozen=True)
class Gradient:
    name = "gradient"


@dataclass(frozen=True)
class AbsGradient:
    name = "absgradient"


@dataclass(frozen=True)
class InputTimesGradient:
    name = "ixg"


@dataclass(frozen=True)
class LrpEpsilon:
    eps: float = 0.01
    name = "lrp-eps"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("LRP epsilon must be positive")


@dataclass(frozen=True, eq=False)
class IntegratedGradients:
    baseline: Optional[np.ndarray] = None  # None means the zero tensor
    steps: int = 64
    name = "ig"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("IG needs at least one step")


METHODS = {
    "gradient": Gradient,
    "absgradient": AbsGradient,
    "ixg": InputTimesGradient,
    "lrp-eps": LrpEpsilon,
    "ig": IntegratedGradients,
}


def method_from_name(name, lrp_eps=0.01, ig_steps=64, baseline=None):
    if name not in METHODS:
        raise ValueError(f"unknown attribution method {name!r}; choose from {sorted(METHODS)}")
    if name == "lrp-eps":
        return LrpEpsilon(lrp_eps)
    if name == "ig":
        return IntegratedGradients(baseline, ig_steps)
    return METHODS[name]()


def method_params(method):
    if isinstance(method, LrpEpsilon):
        return {"eps": method.eps}
    if isinstance(method, IntegratedGradients):
        return {"steps": method.steps, "baseline": "zero" if method.baseline is None else "custom"}
    return {}


@dataclass(frozen=True, eq=False)
class RelevanceMap:
    values: np.ndarray
    method: str
    class_index: int


# ---------------------------------------------------------------------------
# batched float64 implementations; rows of ``xb`` may carry their own masks
# ---------------------------------------------------------------------------


def _stabilize(z, eps):
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def lrp_epsilon_f64(net, w, xb, class_index, eps, mask=None):
    """Epsilon-rule relevance propagated from the chosen logit down to the input."""
    acts, aux = forward_trace(net, w, xb, mask)
    params = w.f64 if hasattr(w, "f64") else w
    B = len(xb)
    R = np.zeros((B, net.num_classes))
    idx = np.broadcast_to(np.asarray(class_index), (B,))
    R[np.arange(B), idx] = acts[-1][np.arange(B), idx]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a, z = acts[i], acts[i + 1]
        if isinstance(layer, Dense):
            R = a * ((R / _stabilize(z, eps)) @ params[i][0].T)
        elif isinstance(layer, Conv2d):
            s = R / _stabilize(z, eps)
            R = a * K.conv2d_backward_input(s, params[i][0], a.shape, layer.stride, layer.pad)
        elif isinstance(layer, AvgPool2d):
            s = R / _stabilize(z, eps)
            R = a * K.avgpool_backward(s, a.shape, layer.kernel, layer.step)
        elif isinstance(layer, MaxPool2d):
            R = K.maxpool_backward(R, aux[i], a.shape, layer.kernel, layer.step)
        elif isinstance(layer, Flatten):
            R = R.reshape(a.shape)
        elif isinstance(layer, (ReLU, Dropout)):
            pass
        else:
            raise ShapeError(f"LRP does not support {type(layer).__name__}", i)
    return R


def integrated_gradients_f64(net, w, xb, class_index, baseline=None, steps=64, mask=None, chunk=256):
    """(x - baseline) times the midpoint-rule average of gradients along the path."""
    if baseline is None:
        baseline = np.zeros(net.input_shape)
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != net.input_shape:
        raise ShapeError(f"baseline shape {baseline.shape} does not match input {net.input_shape}")
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    alphas = alphas.reshape((-1,) + (1,) * len(net.input_shape))
    idx = np.broadcast_to(np.asarray(class_index), (len(xb),))
    out = np.empty_like(xb)
    for n in range(len(xb)):
        m = None
        if mask is not None:
            m = DropoutMask({i: (a[n] if a.shape != net.shapes[i] else a) for i, a in mask.masks.items()})
        diff = xb[n] - baseline
        total = np.zeros(net.input_shape)
        for s in range(0, steps, chunk):
            path = baseline + alphas[s:s + chunk] * diff
            total += grad_input_f64(net, w, path, idx[n], m).sum(axis=0)
        out[n] = diff * (total / steps)
    return out


def relevance_f64(method, net, w, xb, class_index, mask=None):
    """Relevance before channel reduction, shape (batch, *input_shape)."""
    if isinstance(method, LrpEpsilon):
        return lrp_epsilon_f64(net, w, xb, class_index, method.eps, mask)
    if isinstance(method, IntegratedGradients):
        return integrated_gradients_f64(net, w, xb, class_index, method.baseline, method.steps, mask)
    g = grad_input_f64(net, w, xb, class_index, mask)
    if isinstance(method, Gradient):
        return g
    if isinstance(method, AbsGradient):
        return np.abs(g)
    if isinstance(method, InputTimesGradient):
        return xb * g
    raise TypeError(f"unknown attribution method {method!r}")


def reduce_channels(net, r):
    """Sum the channel axis of batched (C, H, W) relevance; flat inputs pass through."""
    return r.sum(axis=1) if len(net.input_shape) == 3 else r


def spatial_shape(net):
    return net.input_shape[1:] if len(net.input_shape) == 3 else net.input_shape


def relevance_batch(method, net, w, xb, class_index, mask=None):
    r = reduce_channels(net, relevance_f64(method, net, w, xb, class_index, mask)).astype(np.float32)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError(f"{method.name} produced non-finite relevance")
    return r


def attribute(method, net, sample, x, class_index):
    """Relevance map of ``sample`` (a PosteriorSample) for one input."""
    if not 0 <= class_index < net.num_classes:
        raise IndexError(f"class index {class_index} out of range")
    xb, single = as_batch(net, x)
    if not single:
        raise ShapeError("attribute explains one input at a time; use relevance_batch for batches")
    r = relevance_batch(method, net, sample.weights, xb, class_index, sample.mask)[0]
    return RelevanceMap(r, method.name, class_index)


def gradient(net, sample, x, class_index):
    return attribute(Gradient(), net, sample, x, class_index)


def input_times_gradient(net, sample, x, class_index):
    return attribute(InputTimesGradient(), net, sample, x, class_index)


def lrp_epsilon(net, sample, x, class_index, eps):
    return attribute(LrpEpsilon(eps), net, sample, x, class_index)


def integrated_gradients(net, sample, x, class_index, baseline=None, steps=64):
    return attribute(IntegratedGradients(baseline, steps), net, sample, x, class_index)
