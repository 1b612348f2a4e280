"""Supervised classification training for KAN networks.

Reverse-mode gradients chain node aggregation, layer normalization, and the
per-edge spline/silu activations; parameters are updated with Adam, one
mini-batch per iteration, batches drawn by seeded shuffling with a reshuffle
at every epoch boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregators import aggregate_batch_backward
from .network import ConfigError, ForwardTrace, Network, forward, adherence_counts
from .splines import silu_grad

HEAD_SOFTMAX = "softmax"          # widths [.., C], cross-entropy over C logits
HEAD_SCALAR_INDEX = "scalar-index"  # widths [.., 1], squared error on the label index


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite; the run is reported as failed."""

    def __init__(self, iteration, message):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    trace_adherence: bool = False

    def validate(self):
        # lr = 0 is legal: it must leave parameters bit-identical
        if self.iterations < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError(f"invalid training config: {self}")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """Standard Adam update with bias correction; params updated in place."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


def softmax_cross_entropy(logits, label):
    """Stabilized -log softmax(logits)[label]; returns (loss, d_logits).

    Accepts one sample (1-D logits, int label) or a batch (2-D logits, label
    vector); batch losses are per-sample, not averaged.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[np.newaxis, :]
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ValueError(f"label out of range for {z.shape[1]} logits")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    softmax = expz / expz.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    losses = np.log(expz.sum(axis=1)) - shifted[rows, labels]
    d = softmax.copy()
    d[rows, labels] -= 1.0
    if single:
        return float(losses[0]), d[0]
    return losses, d


def squared_error_on_index(logits, label):
    """Strict-replication loss for the 1-logit head: (logit - label)^2."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[np.newaxis, :]
    if z.shape[1] != 1:
        raise ValueError("scalar-index loss needs exactly one logit")
    labels = np.atleast_1d(np.asarray(label, dtype=np.float64))
    diff = z[:, 0] - labels
    losses = diff * diff
    d = (2.0 * diff)[:, np.newaxis]
    if single:
        return float(losses[0]), d[0]
    return losses, d


def backward(net: Network, trace: ForwardTrace, d_logits: np.ndarray):
    """Gradients of the batch-mean loss for every trainable parameter.

    d_logits holds per-sample loss gradients, one row per traced sample; the
    result is ordered exactly like net.parameters(). Raises on a trace that
    was not produced by this network.
    """
    if trace.network is not net:
        raise ValueError("trace was produced by a different network")
    d_logits = np.asarray(d_logits, dtype=np.float64)
    if d_logits.ndim == 1:
        d_logits = d_logits[np.newaxis, :]
    batch = trace.batch_size
    if d_logits.shape != (batch, net.n_out):
        raise ValueError(
            f"d_logits shape {d_logits.shape} does not match trace "
            f"({batch}, {net.n_out})")

    # scale once so every accumulated parameter gradient is the batch mean
    d_out = d_logits / batch
    layer_grads = [None] * len(net.layers)
    ln_grads = {}
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        ln = net.layer_norms[l] if l < len(net.layers) - 1 else None
        if ln is not None:
            zhat = trace.ln_zhat[l]
            inv_std = trace.ln_inv_std[l]
            ln_grads[l] = ((d_out * zhat).sum(axis=0), d_out.sum(axis=0))
            g = d_out * ln.gain
            d_node = inv_std * (g - g.mean(axis=-1, keepdims=True)
                                - zhat * (g * zhat).mean(axis=-1, keepdims=True))
        else:
            d_node = d_out
        d_edge = aggregate_batch_backward(trace.edge_outputs[l], layer.aggregator,
                                          d_node)
        x = trace.inputs[l]
        d_w_base = np.einsum("bqp,bp->qp", d_edge, trace.silu_x[l])
        d_w_spline = np.einsum("bqp,bqp->qp", d_edge, trace.spline_vals[l])
        d_coeffs = np.einsum("bqp,bpi->qpi", d_edge, trace.basis[l]) \
            * layer.w_spline[:, :, np.newaxis]
        layer_grads[l] = (d_coeffs, d_w_base, d_w_spline)
        if l > 0:
            dspline = np.einsum("bpi,qpi->bqp", trace.basis_deriv[l], layer.coeffs)
            d_x = (d_edge * (layer.w_base[np.newaxis] * silu_grad(x)[:, np.newaxis, :]
                             + layer.w_spline[np.newaxis] * dspline)).sum(axis=1)
            d_out = d_x

    grads = []
    for g3 in layer_grads:
        grads += list(g3)
    for l in range(len(net.layer_norms)):
        if net.layer_norms[l] is not None:
            grads += list(ln_grads[l])
    return grads


@dataclass
class TrainResult:
    loss_curve: list
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    head: str
    adherence: list | None = None            # per hidden layer, pooled over the run
    adherence_series: list | None = None     # per iteration, per hidden layer
    iterations: int = 0


def _head_mode(net: Network, n_classes: int) -> str:
    if net.n_out == n_classes:
        return HEAD_SOFTMAX
    if net.n_out == 1:
        return HEAD_SCALAR_INDEX
    raise ConfigError(
        f"network output width {net.n_out} matches neither the class count "
        f"{n_classes} nor the 1-logit scalar head")


def predict(net: Network, features, n_classes: int):
    """Class predictions; argmax for the softmax head, rounded and clipped
    logit for the 1-logit head."""
    logits = forward(net, features)
    if net.n_out == 1:
        return np.clip(np.rint(logits[:, 0]), 0, n_classes - 1).astype(np.int64)
    return logits.argmax(axis=1)


def evaluate(net: Network, features, labels, n_classes: int | None = None) -> float:
    """Fraction of samples whose prediction equals the label."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return float((predict(net, features, n_classes) == labels).mean())


def train(net: Network, data, cfg: TrainConfig) -> TrainResult:
    """Train in place for cfg.iterations mini-batch Adam steps.

    Deterministic given (network init, cfg.seed, data). Raises
    TrainingDiverged as soon as the batch loss stops being finite.
    """
    cfg.validate()
    if data.n_features != net.n_in:
        raise ConfigError(
            f"dataset has {data.n_features} features, network expects {net.n_in}")
    head = _head_mode(net, data.n_classes)
    loss_fn = (softmax_cross_entropy if head == HEAD_SOFTMAX
               else squared_error_on_index)

    x_train, y_train = data.features[data.train_idx], data.labels[data.train_idx]
    n_train = len(y_train)
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    state = adam_init(params)

    losses = []
    inside = total = None
    series = [] if cfg.trace_adherence else None
    order = rng.permutation(n_train)
    cursor = 0
    for it in range(cfg.iterations):
        if cursor >= n_train:
            order = rng.permutation(n_train)
            cursor = 0
        batch_idx = order[cursor: cursor + cfg.batch_size]
        cursor += cfg.batch_size

        logits, trace = forward(net, x_train[batch_idx], trace=True)
        if not np.all(np.isfinite(logits)):
            raise TrainingDiverged(it, f"non-finite logits at iteration {it}")
        per_sample, d_logits = loss_fn(logits, y_train[batch_idx])
        loss = float(per_sample.mean())
        if not np.isfinite(loss):
            raise TrainingDiverged(it, f"non-finite loss at iteration {it}")
        losses.append(loss)

        if cfg.trace_adherence and len(net.layers) > 1:
            i, n = adherence_counts(trace, net.config.range_lo, net.config.range_hi)
            if inside is None:
                inside, total = i.copy(), n.copy()
            else:
                inside += i
                total += n
            series.append((i / n).tolist())

        grads = backward(net, trace, d_logits)
        adam_step(params, grads, state, cfg)

    if any(not np.all(np.isfinite(p)) for p in params):
        raise TrainingDiverged(cfg.iterations - 1, "non-finite parameters after update")

    val_acc = (evaluate(net, data.features[data.val_idx], data.labels[data.val_idx],
                        data.n_classes) if len(data.val_idx) else float("nan"))
    return TrainResult(
        loss_curve=losses,
        train_accuracy=evaluate(net, x_train, y_train, data.n_classes),
        val_accuracy=val_acc,
        test_accuracy=evaluate(net, data.features[data.test_idx],
                               data.labels[data.test_idx], data.n_classes),
        head=head,
        adherence=None if inside is None else (inside / total).tolist(),
        adherence_series=series,
        iterations=cfg.iterations,
    )
