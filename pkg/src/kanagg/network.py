"""KAN assembly: edge-activation layers, node aggregation, optional layer norm.

A network with widths [n_in, h_1, ..., n_out] has one layer per width
transition. Layer l holds an (n_out x n_in) matrix of edge activations that
all share one knot grid, plus that layer's aggregator. When layer_norm is
enabled, hidden node vectors (never the raw inputs or the final logits) are
normalized before feeding the next layer's splines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .aggregators import Aggregator, aggregate_batch
from .splines import (EdgeActivation, KnotGrid, basis_matrix, make_grid,
                      sigmoid)

LAYER_NORM_EPS = 1e-5
CHECKPOINT_FORMAT = "kanagg-checkpoint/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple
    aggregators: tuple
    layer_norm: bool = False
    grid_size: int = 3
    degree: int = 3
    range_lo: float = -1.0
    range_hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        aggs = tuple(a if isinstance(a, Aggregator) else Aggregator(a)
                     for a in self.aggregators)
        object.__setattr__(self, "aggregators", aggs)

    def validate(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be >= 2 entries, all >= 1: {self.widths}")
        if len(self.aggregators) != len(self.widths) - 1:
            raise ConfigError(
                f"need {len(self.widths) - 1} aggregators for widths {self.widths}, "
                f"got {len(self.aggregators)}")


@dataclass
class KANLayer:
    """All edges of one width transition, stored stacked for vectorized math."""

    coeffs: np.ndarray    # (n_out, n_in, n_basis)
    w_base: np.ndarray    # (n_out, n_in)
    w_spline: np.ndarray  # (n_out, n_in)
    grid: KnotGrid
    aggregator: Aggregator

    @property
    def n_in(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[0]

    def edge(self, q: int, p: int) -> EdgeActivation:
        """Read-only view of edge (q, p) as a standalone activation."""
        return EdgeActivation(self.coeffs[q, p], float(self.w_base[q, p]),
                              float(self.w_spline[q, p]), self.grid)


@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    eps: float = LAYER_NORM_EPS


@dataclass
class Network:
    config: NetworkConfig
    layers: list
    layer_norms: list  # one entry per hidden transition; None when disabled

    @property
    def n_in(self) -> int:
        return self.config.widths[0]

    @property
    def n_out(self) -> int:
        return self.config.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in deterministic order."""
        params = []
        for layer in self.layers:
            params += [layer.coeffs, layer.w_base, layer.w_spline]
        for ln in self.layer_norms:
            if ln is not None:
                params += [ln.gain, ln.bias]
        return params


@dataclass
class ForwardTrace:
    """Per-layer intermediates of one traced forward pass.

    edge_outputs[l]  (B, n_out, n_in)  pre-aggregation edge activations
    node_values[l]   (B, n_out)        post-aggregation
    normed_values[l] (B, n_out)        post-layer-norm (inputs to next splines;
                                       equals node_values when norm is off)
    The remaining fields cache what the backward pass reuses.
    """

    network: Network
    inputs: list = field(default_factory=list)
    basis: list = field(default_factory=list)
    basis_deriv: list = field(default_factory=list)
    silu_x: list = field(default_factory=list)
    spline_vals: list = field(default_factory=list)
    edge_outputs: list = field(default_factory=list)
    node_values: list = field(default_factory=list)
    normed_values: list = field(default_factory=list)
    ln_zhat: list = field(default_factory=list)
    ln_inv_std: list = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]

    def hidden_values(self) -> list[np.ndarray]:
        """Post-normalization hidden node values, one array per hidden layer."""
        return self.normed_values[:-1]


def build_network(config: NetworkConfig) -> Network:
    """Deterministically initialize a network from its config seed.

    coeffs ~ Normal(0, 0.1), w_base = w_spline = 1, layer-norm gain/bias = 1/0.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    grid = make_grid(config.range_lo, config.range_hi, config.grid_size, config.degree)
    layers = []
    for n_in, n_out, agg in zip(config.widths[:-1], config.widths[1:],
                                config.aggregators):
        layers.append(KANLayer(
            coeffs=rng.normal(0.0, 0.1, size=(n_out, n_in, grid.n_basis)),
            w_base=np.ones((n_out, n_in)),
            w_spline=np.ones((n_out, n_in)),
            grid=grid,
            aggregator=agg,
        ))
    layer_norms = []
    for width in config.widths[1:-1]:
        if config.layer_norm:
            layer_norms.append(LayerNormParams(np.ones(width), np.zeros(width)))
        else:
            layer_norms.append(None)
    return Network(config=config, layers=layers, layer_norms=layer_norms)


def layer_norm(v: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """(v - mean) / sqrt(popvar + eps) * gain + bias over the last axis."""
    if np.asarray(v).size == 0:
        raise ValueError("layer_norm input must be non-empty")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    v = np.asarray(v, dtype=np.float64)
    mean = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    return (v - mean) / np.sqrt(var + eps) * gain + bias


def _layer_forward(layer: KANLayer, x: np.ndarray):
    """Edge activations for a batch: returns the backward-pass intermediates."""
    vals, derivs = basis_matrix(x, layer.grid)      # (B, n_in, n_basis)
    spline_vals = np.einsum("bpi,qpi->bqp", vals, layer.coeffs)
    silu_x = x * sigmoid(x)
    edge_out = (layer.w_base[np.newaxis] * silu_x[:, np.newaxis, :]
                + layer.w_spline[np.newaxis] * spline_vals)
    return vals, derivs, silu_x, spline_vals, edge_out


def forward(net: Network, x, trace: bool = False):
    """Run the network on one sample (1-D) or a batch (2-D).

    Returns logits, or (logits, ForwardTrace) when trace=True. Tracing does
    not change the computation, only what is retained.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ValueError(f"input shape {x.shape} does not match n_in={net.n_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")

    t = ForwardTrace(network=net) if trace else None
    n_layers = len(net.layers)
    for l, layer in enumerate(net.layers):
        vals, derivs, silu_x, spline_vals, edge_out = _layer_forward(layer, x)
        node = aggregate_batch(edge_out, layer.aggregator)
        ln = net.layer_norms[l] if l < n_layers - 1 else None
        if ln is not None:
            mean = node.mean(axis=-1, keepdims=True)
            var = node.var(axis=-1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + ln.eps)
            zhat = (node - mean) * inv_std
            out = zhat * ln.gain + ln.bias
        else:
            zhat = inv_std = None
            out = node
        if t is not None:
            t.inputs.append(x)
            t.basis.append(vals)
            t.basis_deriv.append(derivs)
            t.silu_x.append(silu_x)
            t.spline_vals.append(spline_vals)
            t.edge_outputs.append(edge_out)
            t.node_values.append(node)
            t.normed_values.append(out)
            t.ln_zhat.append(zhat)
            t.ln_inv_std.append(inv_std)
        x = out

    logits = x[0] if single else x
    return (logits, t) if trace else logits


def mean_to_scaled_sum(net: Network) -> Network:
    """Sum-aggregated twin with every edge function divided by its layer fan-in.

    Scales w_base and w_spline by 1/n_in per layer, which divides each whole
    edge activation by the fan-in; the mean-aggregated original and this
    sum-aggregated copy then compute identical outputs.
    """
    cfg = net.config
    new_cfg = NetworkConfig(
        widths=cfg.widths,
        aggregators=tuple(Aggregator.SUM if a is Aggregator.MEAN else a
                          for a in cfg.aggregators),
        layer_norm=cfg.layer_norm, grid_size=cfg.grid_size, degree=cfg.degree,
        range_lo=cfg.range_lo, range_hi=cfg.range_hi, seed=cfg.seed)
    twin = build_network(new_cfg)
    for src, dst in zip(net.layers, twin.layers):
        scale = 1.0 / src.n_in if src.aggregator is Aggregator.MEAN else 1.0
        dst.coeffs[...] = src.coeffs
        dst.w_base[...] = src.w_base * scale
        dst.w_spline[...] = src.w_spline * scale
    for src, dst in zip(net.layer_norms, twin.layer_norms):
        if src is not None:
            dst.gain[...] = src.gain
            dst.bias[...] = src.bias
    return twin


def range_adherence(traces, lo: float, hi: float) -> np.ndarray:
    """Fraction of hidden-node values inside [lo, hi], pooled over all traces.

    Values are the post-normalization node outputs, i.e. the actual inputs to
    the next layer's splines. Boundaries are inclusive. Returns one fraction
    per hidden layer.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    n_hidden = len(traces[0].normed_values) - 1
    if n_hidden < 1:
        raise ValueError("network has no hidden layers to measure")
    inside = np.zeros(n_hidden, dtype=np.int64)
    total = np.zeros(n_hidden, dtype=np.int64)
    for t in traces:
        i, n = adherence_counts(t, lo, hi)
        inside += i
        total += n
    return inside / total


def adherence_counts(trace: ForwardTrace, lo: float, hi: float):
    """(inside, total) value counts per hidden layer for one trace."""
    hidden = trace.hidden_values()
    inside = np.array([int(((v >= lo) & (v <= hi)).sum()) for v in hidden])
    total = np.array([v.size for v in hidden])
    return inside, total


def save_checkpoint(net: Network, path):
    """Write a self-describing JSON checkpoint (lossless float round-trip)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "widths": list(net.config.widths),
            "aggregators": [a.value for a in net.config.aggregators],
            "layer_norm": net.config.layer_norm,
            "grid_size": net.config.grid_size,
            "degree": net.config.degree,
            "range_lo": net.config.range_lo,
            "range_hi": net.config.range_hi,
            "seed": net.config.seed,
        },
        "layers": [{
            "coeffs": layer.coeffs.tolist(),
            "w_base": layer.w_base.tolist(),
            "w_spline": layer.w_spline.tolist(),
        } for layer in net.layers],
        "layer_norms": [None if ln is None else {
            "gain": ln.gain.tolist(), "bias": ln.bias.tolist(), "eps": ln.eps,
        } for ln in net.layer_norms],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> Network:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a kanagg checkpoint: {doc.get('format')!r}")
    net = build_network(NetworkConfig(**doc["config"]))
    for layer, saved in zip(net.layers, doc["layers"]):
        layer.coeffs[...] = np.asarray(saved["coeffs"])
        layer.w_base[...] = np.asarray(saved["w_base"])
        layer.w_spline[...] = np.asarray(saved["w_spline"])
    for i, saved in enumerate(doc["layer_norms"]):
        if saved is not None:
            net.layer_norms[i].gain[...] = np.asarray(saved["gain"])
            net.layer_norms[i].bias[...] = np.asarray(saved["bias"])
            net.layer_norms[i].eps = saved["eps"]
    return net
