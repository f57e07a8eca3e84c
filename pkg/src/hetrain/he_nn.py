"""Encrypted-simulation training of square-activation dense networks.

Per batch: feedforward every sample, take the transposes of the packed
weights (the transition), backpropagate, apply SGD on the ciphertexts and
hand the model to the client for repacking, which restores the level budget.

Learning rate and batch averaging are folded into the plaintext mask of the
loss gradient, so the final weight update is a pure subtraction and costs no
level.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import packed_linalg as pl
from .packed_linalg import Layout, PackedMatrix
from .reference import EpochRecord, TrainingMetrics, batches, epoch_order, init_params
from .slot_engine import (
    DepthBudgetError,
    EngineContext,
    SlotRegister,
    add,
    constant,
    decrypt,
    encode,
    encrypt,
    mul,
    resize,
    sub,
)


class StateError(RuntimeError):
    """Backward pass requested without a forward cache."""


@dataclass
class Hyper:
    learning_rate: float = 0.1
    batch_size: int = 20
    epochs: int = 400


@dataclass
class DenseLayer:
    weights: PackedMatrix
    bias: SlotRegister
    in_dim: int
    out_dim: int

    @property
    def register_length(self) -> int:
        return self.weights.register_length


@dataclass
class LayerCache:
    input: SlotRegister
    preactivation: SlotRegister
    shifted: list | None = None  # rotated inputs from the diagonal matvec


@dataclass
class NetworkState:
    layers: list
    hyper: Hyper
    layout: Layout
    dims: tuple
    padded_dims: tuple
    experimental_ragged: bool = False

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def dense_params(self) -> list:
        """Unpadded ``[(A, b), ...]`` as the client would see after decryption."""
        out = []
        for layer in self.layers:
            A = pl.operator_of(layer.weights)[: layer.out_dim, : layer.in_dim]
            out.append((A, layer.bias.slots[: layer.out_dim].copy()))
        return out


@dataclass
class BatchResult:
    loss: float
    predictions: list
    grads: list
    counters: object
    min_level_reached: int


def padded_dims(dims, layout: Layout, experimental_ragged: bool = False) -> tuple:
    """Zero-pad hidden/output widths so every diagonal layer has M | N.

    Left to right: a contracting layer rounds its output up to a divisor of
    its (padded) input, an expanding one rounds up to a multiple.
    """
    dims = tuple(int(d) for d in dims)
    if layout is Layout.ROW or experimental_ragged:
        return dims
    out = [dims[0]]
    for d in dims[1:]:
        p = out[-1]
        if d <= p:
            out.append(next(k for k in range(d, p + 1) if p % k == 0))
        else:
            out.append(pl.padded_size(d, p))
    return tuple(out)


def build_network(params, layout: Layout, ctx: EngineContext, hyper: Hyper | None = None,
                  experimental_ragged: bool = False) -> NetworkState:
    layout = Layout(layout)
    dims = tuple([params[0][0].shape[1]] + [A.shape[0] for A, _ in params])
    pdims = padded_dims(dims, layout, experimental_ragged)
    layers = []
    for (A, b), p_in, p_out in zip(params, pdims[:-1], pdims[1:]):
        # stepping only exists for the tall form; expanding layers stay plain diagonal
        lay = Layout.DIAGONAL if layout is Layout.STEPPED and p_in < p_out else layout
        W = pl.pack_operator(A, lay, ctx, padded=(p_in, p_out),
                             experimental_ragged=experimental_ragged)
        bias = encrypt(encode(b, W.register_length), ctx)
        layers.append(DenseLayer(W, bias, A.shape[1], A.shape[0]))
    return NetworkState(layers, hyper or Hyper(), layout, dims, pdims, experimental_ragged)


def init_network(dims, layout, init_std: float, seed: int, ctx: EngineContext,
                 hyper: Hyper | None = None, experimental_ragged: bool = False) -> NetworkState:
    return build_network(init_params(dims, init_std, seed), Layout(layout), ctx, hyper,
                         experimental_ragged)


# ---------------------------------------------------------------------------
# layer primitives

def square_forward(u: SlotRegister, ctx: EngineContext) -> SlotRegister:
    return mul(u, u, ctx)


def dense_forward(layer: DenseLayer, x: SlotRegister, ctx: EngineContext):
    """``W x + b``; returns the pre-activation and the cache for backward."""
    if len(x) != layer.register_length:
        x = resize(x, layer.register_length)
    W = layer.weights
    if W.layout is Layout.ROW:
        u = add(pl.matvec_row(W, x, None, ctx), layer.bias, ctx)
        return u, LayerCache(x, u)
    shifted = None if W.layout is Layout.STEPPED else []
    u = add(pl.matvec_diag(W, x, ctx, keep=shifted), layer.bias, ctx)
    return u, LayerCache(x, u, shifted)


def mse_loss_grad(pred: SlotRegister, label: SlotRegister, out_dim: int, ctx: EngineContext,
                  scale: float = 1.0):
    """Loss ``mean((pred - label)^2)`` over the first ``out_dim`` slots, and its
    masked gradient ``(pred - label) * scale``.

    The loss value is what the client reads after decryption; the gradient
    stays encrypted.
    """
    if len(pred) != len(label):
        raise pl.DimensionError(f"prediction length {len(pred)} != label length {len(label)}")
    if label.is_cipher:
        raise pl.LayoutError("labels are expected as plaintext")
    diff = pred.slots[:out_dim] - label.slots[:out_dim]
    loss = float(np.mean(diff * diff))
    mask = encode(np.full(out_dim, scale), len(pred))
    delta = mul(sub(pred, label, ctx), mask, ctx)
    return loss, delta


def dense_backward(layer: DenseLayer, cache: LayerCache | None, delta_out: SlotRegister,
                   ctx: EngineContext, transposed: PackedMatrix | None = None):
    """Backward through ``square(W x + b)``.

    ``delta_out`` is the gradient w.r.t. the layer's activated output. Returns
    ``(delta_in, grad, grad_bias)``; ``delta_in`` is ``None`` unless the
    transposed weights are supplied.
    """
    if cache is None:
        raise StateError("dense_backward called before dense_forward")
    L = layer.register_length
    if len(delta_out) != L:
        delta_out = resize(delta_out, L)
    u = cache.preactivation
    act = add(u, u, ctx)  # 2u without spending a level
    g = mul(delta_out, act, ctx)
    W = layer.weights
    if W.layout is Layout.ROW:
        grad = pl.grad_outer_row(delta_out, cache.input, W.shape, ctx, scale=act)
    else:
        grad = pl.grad_outer_diag(g, cache.input, W.shape, ctx, W.layout, shifted=cache.shifted)
    delta_in = pl.matvec(transposed, g, ctx) if transposed is not None else None
    return delta_in, grad, g


def _check_same_layout(a: PackedMatrix, b: PackedMatrix) -> None:
    if a.layout is not b.layout or a.shape != b.shape or len(a.parts) != len(b.parts):
        raise pl.LayoutError("gradient packing does not match the weight packing")


def add_packed(a: PackedMatrix, b: PackedMatrix, ctx: EngineContext) -> PackedMatrix:
    _check_same_layout(a, b)
    return a.with_parts(add(x, y, ctx) for x, y in zip(a.parts, b.parts))


def sgd_update(layer: DenseLayer, grad: PackedMatrix, grad_bias: SlotRegister,
               lr: float | None, ctx: EngineContext) -> DenseLayer:
    """``W -= lr * grad`` part by part on the server.

    ``lr=None`` means the gradients already carry the step size.
    """
    _check_same_layout(layer.weights, grad)
    if lr is not None:
        step = constant(lr, layer.register_length)
        grad = grad.with_parts(mul(p, step, ctx) for p in grad.parts)
        grad_bias = mul(grad_bias, step, ctx)
    weights = layer.weights.with_parts(sub(w, g, ctx) for w, g in zip(layer.weights.parts, grad.parts))
    return replace(layer, weights=weights, bias=sub(layer.bias, grad_bias, ctx))


def _refresh(r: SlotRegister, ctx: EngineContext) -> SlotRegister:
    return encrypt(decrypt(r), ctx) if r.is_cipher else r


def repack(net: NetworkState, ctx: EngineContext) -> NetworkState:
    """Client round trip: decrypt and re-encrypt every parameter at full level."""
    layers = [replace(l, weights=l.weights.with_parts(_refresh(p, ctx) for p in l.weights.parts),
                      bias=_refresh(l.bias, ctx))
              for l in net.layers]
    return replace(net, layers=layers)


# ---------------------------------------------------------------------------
# network passes

def network_forward(net: NetworkState, x: SlotRegister, ctx: EngineContext, *, track: bool = False):
    caches = []
    for l, layer in enumerate(net.layers):
        with _maybe(ctx, track, "FF", f"dense{l}"):
            u, cache = dense_forward(layer, x, ctx)
        with _maybe(ctx, track, "FF", f"square{l}"):
            x = square_forward(u, ctx)
        caches.append(cache)
    return x, caches


def transition(net: NetworkState, ctx: EngineContext, *, input_grad: bool = False,
               track: bool = False) -> list:
    """Transposed weights for every layer whose input gradient is needed."""
    out = []
    for l, layer in enumerate(net.layers):
        if l == 0 and not input_grad:
            out.append(None)
            continue
        with _maybe(ctx, track, "Transition", f"dense{l}"):
            out.append(pl.transpose(layer.weights, ctx,
                                    experimental_ragged=net.experimental_ragged))
    return out


def sample_step(net: NetworkState, transposed: list, x_values, y_values, ctx: EngineContext,
                scale: float, *, track: bool = False):
    """Forward + backward for one sample; returns loss, prediction, grads."""
    L0 = net.layers[0].register_length
    x = encrypt(encode(x_values, L0), ctx)
    pred, caches = network_forward(net, x, ctx, track=track)
    label = encode(y_values, len(pred))
    with _maybe(ctx, track, "Loss", "mse"):
        loss, delta = mse_loss_grad(pred, label, net.out_dim, ctx, scale)
    grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        with _maybe(ctx, track, "BP", f"dense{l}"):
            delta, grad, grad_bias = dense_backward(net.layers[l], caches[l], delta, ctx, transposed[l])
        grads[l] = (grad, grad_bias)
    return loss, pred.slots[: net.out_dim].copy(), grads


def train_batch(net: NetworkState, X, Y, ctx: EngineContext, *, threads: int = 1,
                input_grad: bool = False, key: tuple = (), track: bool = False,
                do_repack: bool = True):
    """One SGD step over a batch. Returns ``(new_net, BatchResult)``."""
    before = ctx.counters.snapshot()
    scale = net.hyper.learning_rate / len(X)
    transposed = transition(net, ctx, input_grad=input_grad, track=track)

    def run(i):
        return sample_step(net, transposed, X[i], Y[i], ctx.spawn(*key, i), scale, track=track)

    if threads > 1 and len(X) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(X))))
    else:
        results = [run(i) for i in range(len(X))]

    # fixed-order reduction keeps results independent of the worker count
    grads = results[0][2]
    for _, _, g in results[1:]:
        grads = [(add_packed(a, ga, ctx), add(b, gb, ctx)) for (a, b), (ga, gb) in zip(grads, g)]
    layers = []
    for l, (layer, (g, gb)) in enumerate(zip(net.layers, grads)):
        with _maybe(ctx, track, "Update", f"dense{l}"):
            layers.append(sgd_update(layer, g, gb, None, ctx))
    updated = replace(net, layers=layers)
    min_level = min(min(l.weights.levels + [l.bias.level]) for l in layers)
    if do_repack:
        updated = repack(updated, ctx)
    result = BatchResult(
        loss=float(np.mean([r[0] for r in results])),
        predictions=[r[1] for r in results],
        grads=grads,
        counters=ctx.counters.snapshot() - before,
        min_level_reached=min_level,
    )
    return updated, result


def evaluate(net: NetworkState, X, Y, ctx: EngineContext, *, threads: int = 1,
             key: tuple = ()) -> tuple[float, float]:
    """Encrypted inference over ``X``; counters of ``ctx`` are not touched."""
    if len(X) == 0:
        return float("nan"), float("nan")
    L0 = net.layers[0].register_length

    def run(i):
        c = ctx.spawn(*key, i, fresh_counters=True)
        pred, _ = network_forward(net, encrypt(encode(X[i], L0), c), c)
        return decrypt(pred).slots[: net.out_dim]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            P = np.array(list(pool.map(run, range(len(X)))))
    else:
        P = np.array([run(i) for i in range(len(X))])
    loss = float(np.mean(np.mean((P - Y) ** 2, axis=1)))
    acc = float(np.mean(P.argmax(axis=1) == np.asarray(Y).argmax(axis=1)))
    return loss, acc


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 20
    threads: int = 1
    seed: int = 0
    start_epoch: int = 0
    repack: bool = True
    on_epoch: object = None
    on_batch: object = None
    timings: dict = field(default_factory=dict)


def train(net: NetworkState, dataset, ctx: EngineContext, config: TrainConfig):
    """Shuffle, step every batch, repack, evaluate. Returns ``(net, TrainingMetrics)``."""
    if len(dataset.train_idx) == 0:
        raise ValueError("empty training set")
    Xtr, Ytr = dataset.subset(dataset.train_idx)
    Xte, Yte = dataset.subset(dataset.test_idx)
    metrics = TrainingMetrics()
    for epoch in range(config.start_epoch, config.start_epoch + config.epochs):
        order = epoch_order(dataset.train_idx, config.seed, epoch)
        for b, idx in enumerate(batches(order, config.batch_size)):
            X, Y = dataset.subset(idx)
            try:
                net, _ = train_batch(net, X, Y, ctx, threads=config.threads,
                                     key=(epoch, b), do_repack=config.repack)
            except DepthBudgetError as err:
                raise DepthBudgetError(f"epoch {epoch + 1}, batch {b + 1}: {err}") from err
            if config.on_batch is not None:
                config.on_batch(epoch, b, net)
        eval_ctx = ctx.spawn(1 << 30, epoch)
        tr = evaluate(net, Xtr, Ytr, eval_ctx, threads=config.threads, key=(0,))
        te = evaluate(net, Xte, Yte, eval_ctx, threads=config.threads, key=(1,))
        snap = ctx.counters.snapshot()
        record = EpochRecord(epoch + 1, tr[0], te[0], tr[1], te[1], snap.mults, snap.rotations,
                             ctx.counters.min_level if ctx.counters.min_level is not None
                             else ctx.level_budget)
        metrics.epochs.append(record)
        if config.on_epoch is not None:
            config.on_epoch(record, net)
    return net, metrics


class _maybe:
    """``ctx.track`` when enabled, otherwise a no-op."""

    def __init__(self, ctx, enabled, phase, label):
        self._cm = ctx.track(phase, label) if enabled else None

    def __enter__(self):
        if self._cm is not None:
            self._cm.__enter__()

    def __exit__(self, *exc):
        if self._cm is not None:
            return self._cm.__exit__(*exc)
        return False


def timed_step(net: NetworkState, x, y, ctx: EngineContext, repeats: int = 5) -> float:
    """Median wall time of a batch-1 training step."""
    times = []
    for r in range(repeats):
        t0 = time.perf_counter()
        train_batch(net, np.asarray([x]), np.asarray([y]), ctx, key=(r,))
        times.append(time.perf_counter() - t0)
    return float(np.median(times))
