"""Mesh-graph neural field surrogate with MC-dropout uncertainty.

Node features are the normalized node coordinates followed by the min-max
scaled inputs. An encoder MLP lifts them to ``hidden_width`` channels, then
``message_passing_layers`` rounds of

    m_i = sum_{j in N(i)} phi(h_i, h_j, e_ij)
    h_i <- psi(h_i, m_i)

are applied (``phi`` and ``psi`` are one-hidden-layer perceptrons), followed
by a linear head. Dropout acts on every hidden ReLU activation. Gradients are
computed by hand-written reverse-mode accumulation in float64.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, FitError, StructuralError
from .gp import GpModel, GpSearch, PredictiveGaussian
from . import gp as gpmod
from .sampling import InputSpace

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MC_BLOCK = 64


@dataclass(frozen=True, eq=False)
class MeshGraph:
    coords: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_features: np.ndarray
    _recv_matrix: Any = field(repr=False, default=None)
    _send_matrix: Any = field(repr=False, default=None)

    @classmethod
    def from_mesh(cls, nodes, edges) -> "MeshGraph":
        """Build the directed graph (both directions of every undirected edge).

        Coordinates are min-max normalized per axis. Edge features are the
        coordinate difference ``x_j - x_i`` and its Euclidean length.
        """
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        if nodes.shape[0] == 1 and nodes.shape[1] > 1:
            nodes = nodes.T
        lo, hi = nodes.min(axis=0), nodes.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        coords = (nodes - lo) / span
        p = coords.shape[0]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= p):
            raise StructuralError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise StructuralError("self-loops are not allowed")
        pairs = np.unique(np.vstack([edges, edges[:, ::-1]]), axis=0)
        receivers, senders = pairs[:, 0], pairs[:, 1]
        diff = coords[senders] - coords[receivers]
        feats = np.column_stack([diff, np.linalg.norm(diff, axis=1)])
        e = len(pairs)
        ones = np.ones(e)
        recv = sparse.csr_matrix((ones, (receivers, np.arange(e))), shape=(p, e))
        send = sparse.csr_matrix((ones, (senders, np.arange(e))), shape=(p, e))
        return cls(coords, senders, receivers, feats, recv, send)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_edges(self) -> int:
        return self.senders.size

    def permuted(self, perm) -> "MeshGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        edges = np.column_stack([inv[self.receivers], inv[self.senders]])
        g = MeshGraph.from_mesh(self.coords[perm], edges)
        return g


def _scatter(matrix, values: np.ndarray) -> np.ndarray:
    """``out[b, i] = sum_e matrix[i, e] * values[b, e]`` for ``values`` of shape (B, E, H)."""
    b, e, h = values.shape
    flat = values.transpose(1, 0, 2).reshape(e, b * h)
    out = matrix @ flat
    return np.asarray(out).reshape(matrix.shape[0], b, h).transpose(1, 0, 2)


@dataclass(frozen=True)
class NetworkConfig:
    message_passing_layers: int = 4
    hidden_width: int = 64
    encoder_layers: int = 2
    dropout_rate: float = 0.05
    lr_initial: float = 1e-3
    lr_final: float = 5e-4
    max_epochs_initial: int = 3000
    max_epochs_refit: int = 300
    patience: int = 20
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ConfigurationError("dropout_rate must lie in [0, 0.5]")
        if self.hidden_width <= 0 or self.encoder_layers <= 0:
            raise ConfigurationError("widths and encoder depth must be positive")
        if self.message_passing_layers < 0:
            raise ConfigurationError("message_passing_layers must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkConfig":
        return cls(**d)


def _layout(config: NetworkConfig, d_in: int, d_edge: int, n_fields: int) -> dict[str, tuple[slice, tuple]]:
    h = config.hidden_width
    shapes: list[tuple[str, tuple]] = []
    fan = d_in
    for k in range(config.encoder_layers):
        shapes += [(f"enc{k}.W", (fan, h)), (f"enc{k}.b", (h,))]
        fan = h
    for l in range(config.message_passing_layers):
        shapes += [
            (f"mp{l}.phi1.W", (2 * h + d_edge, h)), (f"mp{l}.phi1.b", (h,)),
            (f"mp{l}.phi2.W", (h, h)), (f"mp{l}.phi2.b", (h,)),
            (f"mp{l}.psi1.W", (2 * h, h)), (f"mp{l}.psi1.b", (h,)),
            (f"mp{l}.psi2.W", (h, h)), (f"mp{l}.psi2.b", (h,)),
        ]
    shapes += [("head.W", (h, n_fields)), ("head.b", (n_fields,))]
    layout = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        layout[name] = (slice(offset, offset + size), shape)
        offset += size
    return layout


@dataclass(eq=False)
class NeuralFieldModel:
    """Trainable network plus input/target normalization."""

    config: NetworkConfig
    params: np.ndarray
    n_inputs: int
    n_fields: int
    n_nodes: int
    d_geo: int
    input_lo: np.ndarray
    input_hi: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @property
    def d_edge(self) -> int:
        return self.d_geo + 1

    @property
    def layout(self):
        return _layout(self.config, self.d_geo + self.n_inputs, self.d_edge, self.n_fields)

    @property
    def n_params(self) -> int:
        return self.params.size

    def views(self, params=None) -> dict[str, np.ndarray]:
        params = self.params if params is None else params
        return {k: params[s].reshape(shape) for k, (s, shape) in self.layout.items()}

    def copy(self) -> "NeuralFieldModel":
        return NeuralFieldModel(
            self.config, self.params.copy(), self.n_inputs, self.n_fields, self.n_nodes,
            self.d_geo, self.input_lo.copy(), self.input_hi.copy(),
            self.target_mean.copy(), self.target_std.copy(),
        )

    def scale_inputs(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.n_inputs:
            raise StructuralError(f"expected {self.n_inputs} inputs, got {xi.shape[1]}")
        return (xi - self.input_lo) / (self.input_hi - self.input_lo)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "n_inputs": self.n_inputs,
            "n_fields": self.n_fields,
            "n_nodes": self.n_nodes,
            "d_geo": self.d_geo,
            "input_lo": self.input_lo.tolist(),
            "input_hi": self.input_hi.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NeuralFieldModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('format_version')}")
        model = cls(
            NetworkConfig.from_dict(d["config"]),
            np.asarray(d["params"], dtype=float),
            int(d["n_inputs"]), int(d["n_fields"]), int(d["n_nodes"]), int(d["d_geo"]),
            np.asarray(d["input_lo"], dtype=float), np.asarray(d["input_hi"], dtype=float),
            np.asarray(d["target_mean"], dtype=float), np.asarray(d["target_std"], dtype=float),
        )
        if model.params.size != sum(s.stop - s.start for s, _ in model.layout.values()):
            raise ValueError("parameter count does not match the configuration")
        return model


def init_model(
    config: NetworkConfig,
    graph: MeshGraph,
    inputs,
    fields,
    seed: int | None = None,
) -> NeuralFieldModel:
    """Fresh He-initialized network (zero output head) with normalization from the data.

    ``inputs`` has shape ``(N, d)``; ``fields`` has shape ``(N, p, F)``.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 2:
        fields = fields[..., None]
    if fields.shape[1] != graph.n_nodes:
        raise StructuralError("field node count does not match the graph")
    lo, hi = inputs.min(axis=0), inputs.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    mean = fields.mean(axis=(0, 1))
    std = fields.std(axis=(0, 1))
    std = np.where(std > 0, std, 1.0)
    n_fields = fields.shape[2]
    d_geo = graph.coords.shape[1]
    layout = _layout(config, d_geo + inputs.shape[1], d_geo + 1, n_fields)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = np.zeros(sum(s.stop - s.start for s, _ in layout.values()))
    for name, (s, shape) in layout.items():
        # the output head starts at zero: an untrained network predicts the target mean
        if name.endswith(".W") and not name.startswith("head"):
            gain = 1.0 if name.endswith(("phi2.W", "psi2.W")) else 2.0
            params[s] = rng.normal(0.0, math.sqrt(gain / shape[0]), size=shape).ravel()
    return NeuralFieldModel(config, params, inputs.shape[1], n_fields, graph.n_nodes, d_geo, lo, hi, mean, std)


def _masks_from(rng, shapes, rate):
    keep = 1.0 - rate
    return [(rng.random(shape, dtype=np.float32) < keep) * (1.0 / keep) for shape in shapes]


def _mask_shapes(model: NeuralFieldModel, graph: MeshGraph, batch: int):
    h = model.config.hidden_width
    p, e = graph.n_nodes, graph.n_edges
    shapes = [(batch, p, h)] * model.config.encoder_layers
    for _ in range(model.config.message_passing_layers):
        shapes += [(batch, e, h), (batch, p, h)]
    return shapes


def _check_graph(model: NeuralFieldModel, graph: MeshGraph) -> None:
    if graph.n_nodes != model.n_nodes or graph.coords.shape[1] != model.d_geo:
        raise StructuralError("graph does not match the mesh the model was built for")


def _lin(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``x @ W`` over the last axis as one 2D product."""
    return (x.reshape(-1, x.shape[-1]) @ W).reshape(x.shape[:-1] + (W.shape[1],))


def _wsum(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``sum over leading axes of outer(x, d)``."""
    return x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1])


def _degree(graph: MeshGraph) -> np.ndarray:
    return np.bincount(graph.receivers, minlength=graph.n_nodes).astype(float)[:, None]


def _forward(model, graph, xs, params=None, masks=None, cache=False):
    """Standardized outputs ``(B, p, F)`` for min-max scaled inputs ``xs`` ``(B, d)``.

    The edge network's output layer is applied after the sum over incoming
    edges, which is the same map because it is affine.
    """
    w = model.views(params)
    cfg = model.config
    hw = cfg.hidden_width
    dg = graph.coords.shape[1]
    tape = [] if cache else None
    mi = iter(masks) if masks is not None else None
    h = None
    for k in range(cfg.encoder_layers):
        W, bias = w[f"enc{k}.W"], w[f"enc{k}.b"]
        if k == 0:
            # node features are (coords || inputs); split the first product
            a = (graph.coords @ W[:dg])[None] + (xs @ W[dg:])[:, None, :] + bias
        else:
            a = _lin(h, W) + bias
        mask = next(mi) if mi is not None else None
        out = np.maximum(a, 0.0)
        if mask is not None:
            out *= mask
        if cache:
            tape.append(("enc", k, h, a, mask))
        h = out
    if cfg.message_passing_layers:
        deg = _degree(graph)
        recv, send = graph.receivers, graph.senders
    for l in range(cfg.message_passing_layers):
        W1 = w[f"mp{l}.phi1.W"]
        a1 = (_lin(h, W1[:hw])[:, recv] + _lin(h, W1[hw : 2 * hw])[:, send]
              + graph.edge_features @ W1[2 * hw :] + w[f"mp{l}.phi1.b"])
        m1 = next(mi) if mi is not None else None
        q = np.maximum(a1, 0.0)
        if m1 is not None:
            q *= m1
        qs = _scatter(graph._recv_matrix, q)
        agg = _lin(qs, w[f"mp{l}.phi2.W"]) + deg * w[f"mp{l}.phi2.b"]
        P1 = w[f"mp{l}.psi1.W"]
        a2 = _lin(h, P1[:hw]) + _lin(agg, P1[hw:]) + w[f"mp{l}.psi1.b"]
        m2 = next(mi) if mi is not None else None
        r = np.maximum(a2, 0.0)
        if m2 is not None:
            r *= m2
        if cache:
            tape.append(("mp", l, h, a1, m1, qs, agg, a2, m2, r))
        h = _lin(r, w[f"mp{l}.psi2.W"]) + w[f"mp{l}.psi2.b"]
    out = _lin(h, w["head.W"]) + w["head.b"]
    if cache:
        tape.append(("head", h, xs))
        return out, tape
    return out


def _backward(model, graph, tape, dout, params=None) -> np.ndarray:
    """Gradient of ``sum(dout * out)`` with respect to the flat parameter vector."""
    w = model.views(params)
    grad = np.zeros(model.n_params)
    g = model.views(grad)
    hw = model.config.hidden_width
    dg = graph.coords.shape[1]
    _, h, xs = tape[-1]
    g["head.W"][...] = _wsum(h, dout)
    g["head.b"][...] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    dh = _lin(dout, w["head.W"].T)
    if model.config.message_passing_layers:
        deg = _degree(graph)
    for entry in reversed(tape[:-1]):
        if entry[0] == "mp":
            _, l, hin, a1, m1, qs, agg, a2, m2, r = entry
            g[f"mp{l}.psi2.W"][...] = _wsum(r, dh)
            g[f"mp{l}.psi2.b"][...] = dh.reshape(-1, hw).sum(axis=0)
            da2 = _lin(dh, w[f"mp{l}.psi2.W"].T) * (a2 > 0)
            if m2 is not None:
                da2 *= m2
            P1 = w[f"mp{l}.psi1.W"]
            g[f"mp{l}.psi1.W"][:hw] = _wsum(hin, da2)
            g[f"mp{l}.psi1.W"][hw:] = _wsum(agg, da2)
            g[f"mp{l}.psi1.b"][...] = da2.reshape(-1, hw).sum(axis=0)
            dh_prev = _lin(da2, P1[:hw].T)
            dagg = _lin(da2, P1[hw:].T)
            g[f"mp{l}.phi2.W"][...] = _wsum(qs, dagg)
            g[f"mp{l}.phi2.b"][...] = (dagg * deg).reshape(-1, hw).sum(axis=0)
            dq = _lin(dagg, w[f"mp{l}.phi2.W"].T)[:, graph.receivers]
            da1 = dq * (a1 > 0)
            if m1 is not None:
                da1 *= m1
            W1 = w[f"mp{l}.phi1.W"]
            dr = _scatter(graph._recv_matrix, da1)
            ds = _scatter(graph._send_matrix, da1)
            g[f"mp{l}.phi1.W"][:hw] = _wsum(hin, dr)
            g[f"mp{l}.phi1.W"][hw : 2 * hw] = _wsum(hin, ds)
            g[f"mp{l}.phi1.W"][2 * hw :] = graph.edge_features.T @ da1.sum(axis=0)
            g[f"mp{l}.phi1.b"][...] = da1.reshape(-1, hw).sum(axis=0)
            dh_prev += _lin(dr, W1[:hw].T) + _lin(ds, W1[hw : 2 * hw].T)
            dh = dh_prev
        else:
            _, k, inp, a, mask = entry
            da = dh * (a > 0)
            if mask is not None:
                da *= mask
            W = w[f"enc{k}.W"]
            g[f"enc{k}.b"][...] = da.reshape(-1, hw).sum(axis=0)
            if k == 0:
                g[f"enc{k}.W"][:dg] = graph.coords.T @ da.sum(axis=0)
                g[f"enc{k}.W"][dg:] = xs.T @ da.sum(axis=1)
            else:
                g[f"enc{k}.W"][...] = _wsum(inp, da)
                dh = _lin(da, W.T)
    return grad


def preactivations(model, graph, xi, params=None) -> list[np.ndarray]:
    """All ReLU pre-activations of a deterministic pass (for gradient checks)."""
    xs = model.scale_inputs(xi)
    _, tape = _forward(model, graph, xs, params, cache=True)
    out = []
    for entry in tape[:-1]:
        if entry[0] == "enc":
            out.append(entry[3])
        else:
            out += [entry[3], entry[7]]
    return out


def loss_and_grad(model, graph, xi, targets, params=None, masks=None):
    """Mean squared error on standardized targets and its parameter gradient."""
    xs = model.scale_inputs(xi)
    y = (np.asarray(targets, dtype=float).reshape(xs.shape[0], graph.n_nodes, -1) - model.target_mean) / model.target_std
    out, tape = _forward(model, graph, xs, params, masks, cache=True)
    diff = out - y
    loss = float(np.mean(diff**2))
    grad = _backward(model, graph, tape, 2.0 * diff / diff.size, params)
    return loss, grad


def forward(model: NeuralFieldModel, graph: MeshGraph, xi, mode="deterministic", seed: int | None = None) -> np.ndarray:
    """Field values ``(p, F)`` for one input or ``(m, p, F)`` for a batch.

    ``mode="dropout"`` draws Bernoulli masks (scaled by ``1/(1-rate)``) from a
    generator seeded with ``seed``.
    """
    _check_graph(model, graph)
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    xs = model.scale_inputs(xi)
    masks = None
    if mode == "dropout":
        rng = np.random.default_rng(seed)
        masks = _masks_from(rng, _mask_shapes(model, graph, xs.shape[0]), model.config.dropout_rate)
    elif mode != "deterministic":
        raise ConfigurationError(f"unknown forward mode {mode!r}")
    out = _forward(model, graph, xs, masks=masks) * model.target_std + model.target_mean
    return out[0] if single else out


@dataclass
class TrainResult:
    model: NeuralFieldModel
    history: list[tuple[int, float, float]]
    best_epoch: int
    diverged: bool = False


def train(
    model: NeuralFieldModel,
    graph: MeshGraph,
    inputs,
    fields,
    val_inputs=None,
    val_fields=None,
    max_epochs: int | None = None,
    seed: int | None = None,
) -> TrainResult:
    """Adam with exponential learning-rate decay and early stopping.

    Training starts from ``model.params`` (warm start) and returns a new model
    holding the parameters with the best validation RMSE (standardized
    units). ``history`` rows are ``(epoch, train_rmse, val_rmse)`` where the
    training RMSE is measured with dropout active.
    """
    _check_graph(model, graph)
    cfg = model.config
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.asarray(fields, dtype=float).reshape(X.shape[0], graph.n_nodes, -1)
    if X.shape[0] < 2:
        raise FitError("need at least two training snapshots")
    have_val = val_inputs is not None and len(val_inputs) > 0
    if have_val:
        Xv = np.atleast_2d(np.asarray(val_inputs, dtype=float))
        Yv = (np.asarray(val_fields, dtype=float).reshape(Xv.shape[0], graph.n_nodes, -1) - model.target_mean) / model.target_std
    epochs = cfg.max_epochs_initial if max_epochs is None else max_epochs
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = model.params.copy()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = X.shape[0]
    bs = cfg.batch_size or n
    best = (np.inf, params.copy(), 0)
    history = []
    wait = 0
    diverged = False
    for epoch in range(epochs):
        lr = cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** (epoch / max(epochs - 1, 1))
        order = rng.permutation(n)
        sq, count = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            masks = None
            if cfg.dropout_rate > 0:
                masks = _masks_from(rng, _mask_shapes(model, graph, len(idx)), cfg.dropout_rate)
            loss, grad = loss_and_grad(model, graph, X[idx], Y[idx], params, masks)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                diverged = True
                break
            step += 1
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad**2
            mhat = m / (1 - beta1**step)
            vhat = v / (1 - beta2**step)
            params = params - lr * mhat / (np.sqrt(vhat) + eps)
            sq += loss * len(idx)
            count += len(idx)
        if diverged:
            logger.warning("non-finite loss at epoch %d; keeping last finite checkpoint", epoch)
            break
        train_rmse = math.sqrt(sq / count)
        if have_val:
            out = _forward(model, graph, model.scale_inputs(Xv), params)
            monitor = float(np.sqrt(np.mean((out - Yv) ** 2)))
        else:
            monitor = train_rmse
        history.append((epoch, train_rmse, monitor))
        if monitor < best[0]:
            best = (monitor, params.copy(), epoch)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    trained = model.copy()
    trained.params = best[1] if np.isfinite(best[0]) else model.params.copy()
    return TrainResult(trained, history, best[2], diverged)


def _mc_scalars(model, graph, xs_raw, weights, n_samples, seed) -> np.ndarray:
    """Integrated MC-dropout scalars ``(m, n_samples)``.

    Sample block ``j`` of input ``k`` draws its masks from
    ``SeedSequence([seed, k, j])``, so results do not depend on batching.
    """
    rate = model.config.dropout_rate
    if rate <= 0:
        raise ConfigurationError("MC dropout needs dropout_rate > 0")
    _check_graph(model, graph)
    w = np.asarray(weights, dtype=float).reshape(graph.n_nodes, model.n_fields)
    # fold de-standardization into the functional
    w_std = w * model.target_std
    offset = float(np.sum(w * model.target_mean))
    xs = model.scale_inputs(xs_raw)
    m = xs.shape[0]
    n_blocks = -(-n_samples // MC_BLOCK)
    jobs = [(k, j) for k in range(m) for j in range(n_blocks)]
    out = np.empty((m, n_blocks * MC_BLOCK))
    per_call = max(1, 512 // MC_BLOCK)
    for start in range(0, len(jobs), per_call):
        chunk = jobs[start : start + per_call]
        shapes = _mask_shapes(model, graph, len(chunk) * MC_BLOCK)
        masks = [np.empty(s) for s in shapes]
        for c, (k, j) in enumerate(chunk):
            rng = np.random.default_rng(np.random.SeedSequence([seed, k, j]))
            block = _masks_from(rng, _mask_shapes(model, graph, MC_BLOCK), rate)
            for buf, blk in zip(masks, block):
                buf[c * MC_BLOCK : (c + 1) * MC_BLOCK] = blk
        batch_x = np.repeat(xs[[k for k, _ in chunk]], MC_BLOCK, axis=0)
        y = _forward(model, graph, batch_x, masks=masks)
        vals = y.reshape(y.shape[0], -1) @ w_std.ravel() + offset
        for c, (k, j) in enumerate(chunk):
            out[k, j * MC_BLOCK : (j + 1) * MC_BLOCK] = vals[c * MC_BLOCK : (c + 1) * MC_BLOCK]
    return out[:, :n_samples]


def mc_dropout_scalar(model, graph, xi, weights, n_samples: int = 10000, seed: int = 0) -> PredictiveGaussian:
    """Sample mean and variance of an integrated scalar under MC dropout."""
    vals = _mc_scalars(model, graph, np.atleast_2d(xi), weights, n_samples, seed)[0]
    return PredictiveGaussian(float(vals.mean()), float(vals.var(ddof=1)))


@dataclass(frozen=True, eq=False)
class UncertaintySurrogate:
    """GP stand-ins for the MC-dropout scalar mean and standard deviation."""

    mean_gp: GpModel
    std_gp: GpModel

    def predict(self, x) -> PredictiveGaussian:
        mean = self.mean_gp.predict(x).mean
        std = np.maximum(self.std_gp.predict(x).mean, 0.0)
        return PredictiveGaussian(mean, std**2)

    def to_dict(self) -> dict:
        return {"mean_gp": self.mean_gp.to_dict(), "std_gp": self.std_gp.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintySurrogate":
        return cls(GpModel.from_dict(d["mean_gp"]), GpModel.from_dict(d["std_gp"]))


def build_uncertainty_surrogates(
    model: NeuralFieldModel,
    graph: MeshGraph,
    space: InputSpace,
    weights,
    probe_count: int = 1000,
    n_samples: int = 500,
    seed: int = 0,
    search: GpSearch = GpSearch(),
) -> UncertaintySurrogate:
    """Fit GPs to MC-dropout means and standard deviations at quasi-random probes.

    Probes are normalized inputs distributed like the input space (a
    digitally shifted Sobol set seeded with ``seed``).
    """
    if probe_count < 20:
        raise ConfigurationError("probe_count must be at least 20")
    z = space.probe_points(probe_count, seed)
    vals = _mc_scalars(model, graph, z, weights, n_samples, seed)
    means = vals.mean(axis=1)
    stds = vals.std(axis=1, ddof=1)
    mean_gp = gpmod.fit(z, means, search)
    std_gp = gpmod.fit(z, stds, search)
    return UncertaintySurrogate(mean_gp, std_gp)


def save_checkpoint(model: NeuralFieldModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.to_dict()))
    return path


def load_checkpoint(path) -> NeuralFieldModel:
    return NeuralFieldModel.from_dict(json.loads(Path(path).read_text()))


def write_loss_history(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_rmse", "validation_rmse"])
        for row in history:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
    return path
