"""Feedforward network core: layer specs, weight sets, forward and backward passes.

A :class:`Network` only describes topology. Concrete weights live in a separate
:class:`WeightSet`, so one topology can be evaluated under many posterior draws.
Inputs are channel-first (C, H, W) for image networks and flat (d,) for dense
ones; every function also accepts a leading batch axis.

Values are stored as float32. Arithmetic inside a pass runs in float64 and the
results are truncated back to float32 on the way out.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from . import _kernels as K
from .errors import ShapeError


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def out_shape(self, shape, index):
        if shape != (self.in_features,):
            raise ShapeError(f"Dense expects input ({self.in_features},), got {shape}", index)
        return (self.out_features,)

    def param_shapes(self):
        return (self.in_features, self.out_features), (self.out_features,)


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0

    def out_shape(self, shape, index):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"Conv2d expects ({self.in_channels}, H, W), got {shape}", index)
        h = K.out_size(shape[1], self.kernel, self.stride, self.pad)
        w = K.out_size(shape[2], self.kernel, self.stride, self.pad)
        if h < 1 or w < 1:
            raise ShapeError(f"kernel {self.kernel} does not fit input {shape}", index)
        return (self.out_channels, h, w)

    def param_shapes(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel), (self.out_channels,)


@dataclass(frozen=True)
class ReLU:
    def out_shape(self, shape, index):
        return shape

    def param_shapes(self):
        return None


@dataclass(frozen=True)
class _Pool:
    kernel: int
    stride: int = 0  # 0 means "same as kernel"

    @property
    def step(self):
        return self.stride or self.kernel

    def out_shape(self, shape, index):
        if len(shape) != 3:
            raise ShapeError(f"{type(self).__name__} expects (C, H, W), got {shape}", index)
        h = K.out_size(shape[1], self.kernel, self.step)
        w = K.out_size(shape[2], self.kernel, self.step)
        if h < 1 or w < 1:
            raise ShapeError(f"pool {self.kernel} does not fit input {shape}", index)
        return (shape[0], h, w)

    def param_shapes(self):
        return None


@dataclass(frozen=True)
class AvgPool2d(_Pool):
    pass


@dataclass(frozen=True)
class MaxPool2d(_Pool):
    pass


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, shape, index):
        return (int(np.prod(shape)),)

    def param_shapes(self):
        return None


@dataclass(frozen=True)
class Dropout:
    """Dropout placeholder. ``spatial`` drops whole channels (2-d dropout)."""

    rate: float
    placement: str = ""
    spatial: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")

    def out_shape(self, shape, index):
        if self.spatial and len(shape) != 3:
            raise ShapeError(f"spatial dropout expects (C, H, W), got {shape}", index)
        return shape

    def param_shapes(self):
        return None


LAYER_KINDS = {c.__name__: c for c in (Dense, Conv2d, ReLU, AvgPool2d, MaxPool2d, Flatten, Dropout)}


def layer_to_dict(layer):
    d = {"kind": type(layer).__name__}
    d.update(layer.__dict__)
    return d


def layer_from_dict(d):
    d = dict(d)
    return LAYER_KINDS[d.pop("kind")](**d)


@dataclass(frozen=True)
class Network:
    layers: tuple
    input_shape: tuple
    num_classes: int
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(tuple(layer.out_shape(shapes[-1], i)))
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                f"network output {shapes[-1]} does not match num_classes={self.num_classes}",
                len(self.layers) - 1,
            )
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def parametric(self):
        return [i for i, layer in enumerate(self.layers) if layer.param_shapes() is not None]

    @property
    def dropout_layers(self):
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Dropout)]

    def to_dict(self):
        return {
            "layers": [layer_to_dict(layer) for layer in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(layer_from_dict(x) for x in d["layers"]), tuple(d["input_shape"]), d["num_classes"])


# ---------------------------------------------------------------------------
# weights and masks
# ---------------------------------------------------------------------------


def _frozen32(a):
    a = np.array(a, dtype=np.float32, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Weight and bias arrays keyed by the index of their layer in the network."""

    params: Mapping[int, tuple]

    def __post_init__(self):
        frozen = {int(i): (_frozen32(w), _frozen32(b)) for i, (w, b) in sorted(self.params.items())}
        object.__setattr__(self, "params", frozen)

    def __getitem__(self, i):
        return self.params[i]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    @cached_property
    def f64(self):
        return {i: (w.astype(np.float64), b.astype(np.float64)) for i, (w, b) in self.params.items()}

    def map(self, fn):
        """Apply ``fn`` to every array, keeping the layer structure."""
        return WeightSet({i: (fn(w), fn(b)) for i, (w, b) in self.params.items()})

    def named_arrays(self):
        for i, (w, b) in self.params.items():
            yield f"layer{i}/weight", w
            yield f"layer{i}/bias", b

    def bit_equal(self, other):
        if self.params.keys() != other.params.keys():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for i in self.params
            for a, b in zip(self.params[i], other.params[i])
        )

    def check(self, net):
        expected = set(net.parametric)
        if set(self.params) != expected:
            raise ShapeError(f"weights cover layers {sorted(self.params)}, network needs {sorted(expected)}")
        for i in net.parametric:
            ws, bs = net.layers[i].param_shapes()
            w, b = self.params[i]
            if w.shape != ws or b.shape != bs:
                raise ShapeError(f"weight shapes {w.shape}/{b.shape}, expected {ws}/{bs}", i)


def init_weights(net, rng):
    """He-style uniform fan-in initialisation with zero biases."""
    params = {}
    for i in net.parametric:
        ws, bs = net.layers[i].param_shapes()
        fan_in = ws[0] if isinstance(net.layers[i], Dense) else int(np.prod(ws[1:]))
        bound = np.sqrt(6.0 / fan_in)
        params[i] = (rng.uniform(-bound, bound, size=ws), np.zeros(bs))
    return WeightSet(params)


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """Explicit dropout masks keyed by layer index.

    Entries are 0 for dropped units and 1/(1-rate) for kept ones. Each array has
    the layer's activation shape, optionally with a leading batch axis.
    """

    masks: Mapping[int, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "masks", {int(i): _frozen32(m) for i, m in sorted(self.masks.items())})

    def __getitem__(self, i):
        return self.masks[i]

    def __contains__(self, i):
        return i in self.masks

    @classmethod
    def sample(cls, net, rng, batch=None, rates=None):
        """Draw a fresh Bernoulli mask for every dropout layer.

        ``rates`` optionally overrides the per-layer rates stored in the network.
        """
        masks = {}
        for i in net.dropout_layers:
            layer = net.layers[i]
            rate = layer.rate if rates is None else rates.get(i, layer.rate)
            shape = net.shapes[i]
            draw_shape = (shape[0], 1, 1) if layer.spatial else shape
            if batch is not None:
                draw_shape = (batch,) + draw_shape
            keep = rng.random(draw_shape) >= rate
            m = keep * np.float32(1.0 / (1.0 - rate))
            full = shape if batch is None else (batch,) + shape
            masks[i] = np.broadcast_to(m, full)
        return cls(masks)

    @classmethod
    def keep_all(cls, net, rates=None):
        masks = {}
        for i in net.dropout_layers:
            rate = net.layers[i].rate if rates is None else rates[i]
            masks[i] = np.full(net.shapes[i], 1.0 / (1.0 - rate), dtype=np.float32)
        return cls(masks)

    def stack(self, others):
        """Combine single-example masks into one batched mask (self first)."""
        allm = [self] + list(others)
        return DropoutMask({i: np.stack([m.masks[i] for m in allm]) for i in self.masks})


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _params(w):
    return w.f64 if isinstance(w, WeightSet) else w


def as_batch(net, x):
    """Return ``(batch, single)``: a float64 batch and whether x was one example."""
    x = np.asarray(x)
    if x.shape == net.input_shape:
        return x[None].astype(np.float64), True
    if x.shape[1:] == net.input_shape:
        return x.astype(np.float64), False
    raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}", 0)


def forward_trace(net, w, xb, mask=None):
    """Run a batch forward and keep every intermediate activation.

    Returns ``(acts, aux)`` where ``acts[i]`` is the float64 input of layer i,
    ``acts[-1]`` the logits, and ``aux`` holds max-pool winner indices.
    """
    params = _params(w)
    acts = [xb]
    aux = {}
    a = xb
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            W, b = params[i]
            a = a @ W + b
        elif isinstance(layer, Conv2d):
            W, b = params[i]
            a = K.conv2d_forward(a, W, b, layer.stride, layer.pad)
        elif isinstance(layer, ReLU):
            a = np.maximum(a, 0.0)
        elif isinstance(layer, AvgPool2d):
            a = K.avgpool_forward(a, layer.kernel, layer.step)
        elif isinstance(layer, MaxPool2d):
            a, aux[i] = K.maxpool_forward(a, layer.kernel, layer.step)
        elif isinstance(layer, Flatten):
            a = a.reshape(a.shape[0], -1)
        elif isinstance(layer, Dropout):
            if mask is not None:
                if i not in mask:
                    raise ShapeError("mask has no entry for this dropout layer", i)
                m = mask[i]
                if m.shape != a.shape[1:] and m.shape != a.shape:
                    raise ShapeError(f"mask shape {m.shape} does not match activation {a.shape[1:]}", i)
                a = a * m
        else:  # pragma: no cover
            raise ShapeError(f"unsupported layer {layer!r}", i)
        acts.append(a)
    return acts, aux


def backward(net, w, acts, aux, grad_out, mask=None, weights=False):
    """Backpropagate ``grad_out`` (batch, k) through a recorded trace.

    Returns the float64 input gradient and, with ``weights=True``, a dict of
    per-layer ``(dW, db)`` summed over the batch.
    """
    params = _params(w)
    g = np.asarray(grad_out, dtype=np.float64)
    wgrads = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a = acts[i]
        if isinstance(layer, Dense):
            W, _ = params[i]
            if weights:
                wgrads[i] = (a.T @ g, g.sum(axis=0))
            g = g @ W.T
        elif isinstance(layer, Conv2d):
            W, _ = params[i]
            if weights:
                dW = K.conv2d_backward_weight(a, g, layer.kernel, layer.stride, layer.pad)
                wgrads[i] = (dW, g.sum(axis=(0, 2, 3)))
            g = K.conv2d_backward_input(g, W, a.shape, layer.stride, layer.pad)
        elif isinstance(layer, ReLU):
            # derivative at exactly 0 is taken as 0
            g = g * (a > 0.0)
        elif isinstance(layer, AvgPool2d):
            g = K.avgpool_backward(g, a.shape, layer.kernel, layer.step)
        elif isinstance(layer, MaxPool2d):
            g = K.maxpool_backward(g, aux[i], a.shape, layer.kernel, layer.step)
        elif isinstance(layer, Flatten):
            g = g.reshape(a.shape)
        elif isinstance(layer, Dropout):
            if mask is not None:
                g = g * mask[i]
    return (g, wgrads) if weights else g


def _check_mask(net, mask):
    if mask is not None and not net.dropout_layers:
        raise ShapeError("a dropout mask was given but the network has no dropout layers")


def forward(net, w, x, mask=None):
    """Logits of ``net`` under weights ``w``; dropout acts as identity without a mask."""
    _check_mask(net, mask)
    xb, single = as_batch(net, x)
    out = forward_trace(net, w, xb, mask)[0][-1].astype(np.float32)
    return out[0] if single else out


def _onehot(class_index, batch, k):
    idx = np.broadcast_to(np.asarray(class_index), (batch,))
    if np.any(idx < 0) or np.any(idx >= k):
        raise IndexError(f"class index {class_index} out of range for {k} classes")
    g = np.zeros((batch, k))
    g[np.arange(batch), idx] = 1.0
    return g


def grad_input_f64(net, w, xb, class_index, mask=None):
    acts, aux = forward_trace(net, w, xb, mask)
    return backward(net, w, acts, aux, _onehot(class_index, len(xb), net.num_classes), mask)


def grad_input(net, w, x, class_index, mask=None):
    """Exact gradient of logit ``class_index`` with respect to the input."""
    _check_mask(net, mask)
    xb, single = as_batch(net, x)
    g = grad_input_f64(net, w, xb, class_index, mask).astype(np.float32)
    return g[0] if single else g


def grad_weights(net, w, x, loss_grad, mask=None):
    """Weight gradients for an upstream gradient on the logits.

    ``loss_grad`` has shape (k,) for one example or (batch, k); batch
    contributions are summed.
    """
    _check_mask(net, mask)
    xb, single = as_batch(net, x)
    lg = np.asarray(loss_grad, dtype=np.float64).reshape(len(xb), net.num_classes)
    acts, aux = forward_trace(net, w, xb, mask)
    _, wg = backward(net, w, acts, aux, lg, mask, weights=True)
    return WeightSet(wg)


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


def lenet(in_channels=3, image_size=28, num_classes=10, dropout=False, rate2d=0.25, rate1d=0.5):
    """LeNet-style conv net; ``dropout`` inserts one 2-d dropout layer after the
    second pooling layer and 1-d dropout after both hidden dense layers."""
    s = ((image_size - 4) // 2 - 4) // 2
    layers = [Conv2d(in_channels, 6, 5), ReLU(), AvgPool2d(2)]
    layers += [Conv2d(6, 16, 5), ReLU(), AvgPool2d(2)]
    if dropout:
        layers.append(Dropout(rate2d, "pool2", spatial=True))
    layers += [Flatten(), Dense(16 * s * s, 120), ReLU()]
    if dropout:
        layers.append(Dropout(rate1d, "fc1"))
    layers += [Dense(120, 84), ReLU()]
    if dropout:
        layers.append(Dropout(rate1d, "fc2"))
    layers.append(Dense(84, num_classes))
    return Network(tuple(layers), (in_channels, image_size, image_size), num_classes)


def mlp(sizes, dropout=0.0):
    """Dense ReLU network with layer widths ``sizes`` (input first, classes last)."""
    layers = []
    for j, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b))
        if j < len(sizes) - 2:
            layers.append(ReLU())
            if dropout:
                layers.append(Dropout(dropout, f"hidden{j}"))
    return Network(tuple(layers), (sizes[0],), sizes[-1])
