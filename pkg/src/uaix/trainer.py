"""MAP training: mini-batch SGD with momentum, cross-entropy, step decay.

The optional L2 ``weight_decay`` term plays the role of a Gaussian log-prior on
the weights; with ``weight_decay=0`` training is plain maximum likelihood.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TrainingDiverged
from .net import DropoutMask, WeightSet, backward, forward_trace, init_weights
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    lr_step: int = 7
    lr_gamma: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.lr_step < 1 or self.epochs < 0:
            raise ValueError("batch_size and lr_step must be positive, epochs non-negative")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    reverted_to_init: bool = False

    def to_tsv(self):
        rows = ["epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
        for e in range(len(self.train_loss)):
            rows.append(
                f"{e}\t{self.lr[e]:.6g}\t{self.train_loss[e]:.6f}\t{self.train_acc[e]:.6f}"
                f"\t{self.val_loss[e]:.6f}\t{self.val_acc[e]:.6f}"
            )
        return "\n".join(rows) + "\n"


def cross_entropy(logits, label):
    """-log softmax(logits)[label] with max-subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError("cross_entropy needs a vector of at least 2 logits")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range for {z.shape[0]} classes")
    z = z - z.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def batch_cross_entropy(logits, labels):
    """Per-example losses and d(loss)/d(logits) for a batch."""
    p = softmax(logits)
    idx = np.arange(len(labels))
    losses = -np.log(np.maximum(p[idx, labels], 1e-300))
    grad = p.copy()
    grad[idx, labels] -= 1.0
    return losses, grad


def learning_rate_at(cfg, epoch):
    """Learning rate used during (0-based) ``epoch`` under step decay."""
    return cfg.learning_rate * cfg.lr_gamma ** (epoch // cfg.lr_step)


def unpack(data):
    if hasattr(data, "images"):
        return np.asarray(data.images), np.asarray(data.labels, dtype=np.int64)
    X, y = data
    return np.asarray(X), np.asarray(y, dtype=np.int64)


def split_holdout(n, fraction):
    """Indices of the training part and the held-out tail."""
    n_hold = int(n * fraction)
    return np.arange(n - n_hold), np.arange(n - n_hold, n)


def loss_and_gradients(net, params, xb, yb, weight_decay=0.0, mask=None):
    """Mean cross-entropy over the batch and its gradient dict ``{layer: (dW, db)}``."""
    acts, aux = forward_trace(net, params, xb, mask)
    losses, dlogits = batch_cross_entropy(acts[-1], yb)
    _, grads = backward(net, params, acts, aux, dlogits / len(yb), mask, weights=True)
    if weight_decay:
        grads = {i: (gw + weight_decay * params[i][0], gb + weight_decay * params[i][1]) for i, (gw, gb) in grads.items()}
    return float(losses.mean()), grads, acts[-1]


def predict_logits(net, w, X, batch=256, mask=None):
    out = []
    for s in range(0, len(X), batch):
        out.append(forward_trace(net, w, np.asarray(X[s:s + batch], dtype=np.float64), mask)[0][-1])
    return np.concatenate(out) if out else np.zeros((0, net.num_classes))


def evaluate(net, w, X, y):
    """(mean loss, accuracy) in inference mode."""
    if len(X) == 0:
        return float("nan"), float("nan")
    logits = predict_logits(net, w, X)
    losses, _ = batch_cross_entropy(logits, y)
    return float(losses.mean()), float((logits.argmax(axis=1) == y).mean())


def train(net, init, data, cfg):
    """Train ``net`` from ``init``; returns ``(WeightSet, TrainHistory)``.

    The last ``holdout_fraction`` of ``data`` is held out for validation. The
    run is fully determined by ``cfg.seed``: shuffling and dropout masks come
    from per-epoch and per-step streams. If training ends with lower training
    accuracy than the initial weights had, the initial weights are returned.
    """
    X, y = unpack(data)
    if len(X) == 0:
        raise ValueError("training set is empty")
    init.check(net)
    tr, ho = split_holdout(len(X), cfg.holdout_fraction)
    if cfg.batch_size > len(tr):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training split size {len(tr)}")
    hist = TrainHistory()
    if cfg.epochs == 0:
        return init, hist

    params = {i: [w.copy(), b.copy()] for i, (w, b) in init.f64.items()}
    velocity = {i: [np.zeros_like(w), np.zeros_like(b)] for i, (w, b) in params.items()}
    has_dropout = bool(net.dropout_layers)

    for epoch in range(cfg.epochs):
        lr = learning_rate_at(cfg, epoch)
        order = tr[rng_for(cfg.seed, "shuffle", epoch).permutation(len(tr))]
        loss_sum = 0.0
        correct = 0
        for step, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            xb = X[idx].astype(np.float64)
            yb = y[idx]
            mask = None
            if has_dropout:
                mask = DropoutMask.sample(net, rng_for(cfg.seed, "dropout", epoch, step), batch=len(idx))
            loss, grads, logits = loss_and_gradients(net, params, xb, yb, cfg.weight_decay, mask)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, step, loss)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
            for i, (gw, gb) in grads.items():
                v = velocity[i]
                v[0] = cfg.momentum * v[0] + gw
                v[1] = cfg.momentum * v[1] + gb
                params[i][0] -= lr * v[0]
                params[i][1] -= lr * v[1]
        vl, va = evaluate(net, params, X[ho], y[ho])
        hist.train_loss.append(loss_sum / len(tr))
        hist.train_acc.append(correct / len(tr))
        hist.val_loss.append(vl)
        hist.val_acc.append(va)
        hist.lr.append(lr)
        log.info("epoch %d lr %.3g loss %.4f acc %.4f val_acc %.4f", epoch, lr, hist.train_loss[-1], hist.train_acc[-1], va)

    final = WeightSet({i: (w, b) for i, (w, b) in params.items()})
    _, acc_final = evaluate(net, final, X[tr], y[tr])
    _, acc_init = evaluate(net, init, X[tr], y[tr])
    if acc_final < acc_init:
        log.warning("training lowered accuracy (%.4f < %.4f); keeping initial weights", acc_final, acc_init)
        hist.reverted_to_init = True
        return init, hist
    return final, hist


def train_ensemble(net, data, cfg, members):
    """Independently initialised and shuffled members; member m uses a seed
    derived from ``(cfg.seed, "member", m)``."""
    out = []
    hists = []
    for m in range(members):
        seed = derive_seed(cfg.seed, "member", m)
        w0 = init_weights(net, np.random.default_rng(seed))
        w, h = train(net, w0, data, replace(cfg, seed=seed))
        out.append(w)
        hists.append(h)
    return out, hists
