"""Minimal deterministic CNN engine: layer definitions, forward/backward,
masked SGD training and evaluation.

All activations are rank-4 arrays of shape (n, c, h, w); linear layers see
flattened inputs of shape (n, f, 1, 1). Pruned weight positions (mask False)
read as zero in the forward pass and receive zero gradient, so they stay
exactly zero through any amount of training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConvSpec:
    ic: int
    oc: int
    k: int
    stride: int = 1
    pad: int = 0

    def out_dim(self, i: int) -> int:
        o = (i + 2 * self.pad - self.k) // self.stride + 1
        if o < 1:
            raise ValueError(f"conv produces empty output for input {i}: {self}")
        return o


@dataclass(frozen=True)
class Conv:
    spec: ConvSpec


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    k: int
    stride: int


@dataclass(frozen=True)
class ResidualAddFrom:
    layer_index: int


@dataclass(frozen=True)
class Flatten:
    pass


LayerDef = Conv | Linear | ReLU | MaxPool | ResidualAddFrom | Flatten


def is_trainable(layer: LayerDef) -> bool:
    return isinstance(layer, (Conv, Linear))


@dataclass
class ModelGraph:
    """Ordered layer stack plus per-trainable-layer weights and keep-masks.

    weights[i] has shape (oc, ic, k, k) for Conv layers and
    (out_features, in_features) for Linear layers; masks[i] is boolean with
    the same shape. Masked positions hold exactly 0.0.
    """

    layers: list[LayerDef]
    weights: dict[int, np.ndarray] = field(default_factory=dict)
    masks: dict[int, np.ndarray] = field(default_factory=dict)
    rng_seed: int = 0

    def trainable_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if is_trainable(l)]

    def clone(self) -> "ModelGraph":
        return ModelGraph(
            layers=list(self.layers),
            weights={i: w.copy() for i, w in self.weights.items()},
            masks={i: m.copy() for i, m in self.masks.items()},
            rng_seed=self.rng_seed,
        )

    def apply_masks(self) -> None:
        """Force every pruned position to exactly zero."""
        for i, m in self.masks.items():
            self.weights[i][~m] = 0.0

    def sparsity(self) -> float:
        total = sum(m.size for m in self.masks.values())
        pruned = sum(int((~m).sum()) for m in self.masks.values())
        return pruned / total if total else 0.0

    def output_shapes(self, in_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
        """Per-layer output (c, h, w), checking the chain is consistent."""
        shapes = []
        c, h, w = in_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                s = layer.spec
                if c != s.ic:
                    raise ValueError(f"layer {i}: expected {s.ic} channels, got {c}")
                c, h, w = s.oc, s.out_dim(h), s.out_dim(w)
            elif isinstance(layer, Linear):
                if c * h * w != layer.in_features:
                    raise ValueError(
                        f"layer {i}: linear expects {layer.in_features} features, got {c * h * w}"
                    )
                c, h, w = layer.out_features, 1, 1
            elif isinstance(layer, MaxPool):
                c, h, w = c, (h - layer.k) // layer.stride + 1, (w - layer.k) // layer.stride + 1
            elif isinstance(layer, Flatten):
                c, h, w = c * h * w, 1, 1
            elif isinstance(layer, ResidualAddFrom):
                src = shapes[layer.layer_index]
                if src != (c, h, w):
                    raise ValueError(
                        f"layer {i}: residual source shape {src} != current {(c, h, w)}"
                    )
            shapes.append((c, h, w))
        return shapes


@dataclass
class TrainConfig:
    lr0: float = 0.1
    lr_decay_per_epoch: float = 0.05
    batch_size: int = 128
    epochs: int = 3
    rng_seed: int = 0

    def lr_at(self, epoch: int) -> float:
        lr = self.lr0 * (1.0 - self.lr_decay_per_epoch) ** epoch
        assert lr > 0.0
        return lr


@dataclass
class Dataset:
    x: np.ndarray  # (N, c, h, w), float
    y: np.ndarray  # (N,), int labels

    def __len__(self) -> int:
        return self.x.shape[0]


# ---------------------------------------------------------------------------
# initialization


def xavier_init(model: ModelGraph, seed: int) -> ModelGraph:
    """Xavier-uniform init of every trainable layer, deterministic per seed."""
    rng = np.random.default_rng(seed)
    model.rng_seed = seed
    for i in model.trainable_indices():
        layer = model.layers[i]
        if isinstance(layer, Conv):
            s = layer.spec
            fan_in, fan_out = s.ic * s.k * s.k, s.oc * s.k * s.k
            shape = (s.oc, s.ic, s.k, s.k)
        else:
            fan_in, fan_out = layer.in_features, layer.out_features
            shape = (layer.out_features, layer.in_features)
        if fan_in == 0 or fan_out == 0:
            raise ValueError(f"layer {i}: zero fan ({fan_in}, {fan_out})")
        b = np.sqrt(6.0 / (fan_in + fan_out))
        model.weights[i] = rng.uniform(-b, b, size=shape).astype(np.float32)
        if i not in model.masks:
            model.masks[i] = np.ones(shape, dtype=bool)
    model.apply_masks()
    return model


# ---------------------------------------------------------------------------
# forward


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c * k * k, oh * ow), dtype=x.dtype)
    idx = 0
    for ci in range(c):
        for ki in range(k):
            for kj in range(k):
                patch = x[:, ci, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                cols[:, idx, :] = patch.reshape(n, -1)
                idx += 1
    return cols, oh, ow


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    idx = 0
    for ci in range(c):
        for ki in range(k):
            for kj in range(k):
                patch = dcols[:, idx, :].reshape(n, oh, ow)
                dx[:, ci, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += patch
                idx += 1
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


def forward(model: ModelGraph, batch: np.ndarray):
    """Run the stack; returns (logits of shape (n, classes, 1, 1), cache)."""
    if batch.ndim != 4:
        raise ValueError(f"batch must be rank 4, got shape {batch.shape}")
    x = batch
    caches = []   # per-layer backward context
    outputs = []  # per-layer output, needed by residual sources
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Conv):
            s = layer.spec
            if x.shape[1] != s.ic:
                raise ValueError(f"layer {i}: expected {s.ic} channels, got {x.shape[1]}")
            w = np.where(model.masks[i], model.weights[i], 0.0)
            cols, oh, ow = _im2col(x, s.k, s.stride, s.pad)
            w2 = w.reshape(s.oc, -1)
            out = np.einsum("of,nfp->nop", w2, cols, optimize=True)
            x_new = out.reshape(x.shape[0], s.oc, oh, ow)
            caches.append(("conv", x.shape, cols))
        elif isinstance(layer, Linear):
            f = x.reshape(x.shape[0], -1)
            if f.shape[1] != layer.in_features:
                raise ValueError(
                    f"layer {i}: linear expects {layer.in_features} features, got {f.shape[1]}"
                )
            w = np.where(model.masks[i], model.weights[i], 0.0)
            x_new = (f @ w.T)[:, :, None, None]
            caches.append(("linear", f, x.shape))
        elif isinstance(layer, ReLU):
            x_new = np.maximum(x, 0.0)
            caches.append(("relu", x > 0.0))
        elif isinstance(layer, MaxPool):
            k, st = layer.k, layer.stride
            n, c, h, w_ = x.shape
            oh, ow = (h - k) // st + 1, (w_ - k) // st + 1
            wins = np.empty((n, c, oh, ow, k * k), dtype=x.dtype)
            for ki in range(k):
                for kj in range(k):
                    wins[..., ki * k + kj] = x[:, :, ki : ki + st * oh : st, kj : kj + st * ow : st]
            amax = wins.argmax(axis=-1)  # first max wins ties
            x_new = np.take_along_axis(wins, amax[..., None], axis=-1)[..., 0]
            caches.append(("maxpool", x.shape, amax))
        elif isinstance(layer, Flatten):
            x_new = x.reshape(x.shape[0], -1, 1, 1)
            caches.append(("flatten", x.shape))
        elif isinstance(layer, ResidualAddFrom):
            src = outputs[layer.layer_index]
            if src.shape != x.shape:
                raise ValueError(
                    f"layer {i}: residual source shape {src.shape} != {x.shape}"
                )
            x_new = x + src
            caches.append(("residual", layer.layer_index))
        else:
            raise TypeError(f"unknown layer {layer!r}")
        outputs.append(x_new)
        x = x_new
    return x, {"caches": caches, "outputs": outputs, "n_layers": len(model.layers)}


def backward(model: ModelGraph, cache, loss_grad: np.ndarray) -> dict[int, np.ndarray]:
    """Backprop loss_grad (same shape as the logits) to per-weight gradients.

    Gradients at pruned positions are forced to exactly zero.
    """
    caches = cache["caches"]
    if len(caches) != len(model.layers):
        raise ValueError("cache does not match model")
    # grad arriving at each layer's output; residuals add extra terms
    pending = [None] * len(model.layers)
    pending[-1] = loss_grad
    grads: dict[int, np.ndarray] = {}
    for i in range(len(model.layers) - 1, -1, -1):
        d_out = pending[i]
        if d_out is None:
            raise ValueError(f"missing output grad at layer {i}")
        layer = model.layers[i]
        entry = caches[i]
        if isinstance(layer, Conv):
            s = layer.spec
            _, x_shape, cols = entry
            n = d_out.shape[0]
            dy = d_out.reshape(n, s.oc, -1)
            dw2 = np.einsum("nop,nfp->of", dy, cols, optimize=True)
            grads[i] = np.where(model.masks[i], dw2.reshape(model.weights[i].shape), 0.0)
            w2 = np.where(model.masks[i], model.weights[i], 0.0).reshape(s.oc, -1)
            dcols = np.einsum("of,nop->nfp", w2, dy, optimize=True)
            d_in = _col2im(dcols, x_shape, s.k, s.stride, s.pad)
        elif isinstance(layer, Linear):
            _, f, x_shape = entry
            dy = d_out.reshape(d_out.shape[0], -1)
            grads[i] = np.where(model.masks[i], dy.T @ f, 0.0)
            w = np.where(model.masks[i], model.weights[i], 0.0)
            d_in = (dy @ w).reshape(x_shape)
        elif isinstance(layer, ReLU):
            d_in = d_out * entry[1]
        elif isinstance(layer, MaxPool):
            _, x_shape, amax = entry
            k, st = layer.k, layer.stride
            n, c, h, w_ = x_shape
            oh, ow = amax.shape[2], amax.shape[3]
            d_in = np.zeros(x_shape, dtype=d_out.dtype)
            ki = amax // k
            kj = amax % k
            oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
            ri = oi[None, None] * st + ki
            rj = oj[None, None] * st + kj
            ni = np.arange(n)[:, None, None, None]
            ci = np.arange(c)[None, :, None, None]
            np.add.at(d_in, (ni, ci, ri, rj), d_out)
        elif isinstance(layer, Flatten):
            d_in = d_out.reshape(entry[1])
        elif isinstance(layer, ResidualAddFrom):
            src = layer.layer_index
            pending[src] = d_out if pending[src] is None else pending[src] + d_out
            d_in = d_out
        if i > 0:
            pending[i - 1] = d_in if pending[i - 1] is None else pending[i - 1] + d_in
    return grads


# ---------------------------------------------------------------------------
# loss / SGD / training


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean CE over the batch; returns (loss, dlogits)."""
    z = logits.reshape(logits.shape[0], -1)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = z.shape[0]
    loss = -np.log(np.maximum(p[np.arange(n), labels], 1e-30)).mean()
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    d /= n
    return loss, d.reshape(logits.shape)


def sgd_step(model: ModelGraph, grads: dict[int, np.ndarray], lr: float) -> ModelGraph:
    for i, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient at layer {i}")
        model.weights[i] -= lr * g
        model.weights[i][~model.masks[i]] = 0.0
    return model


def train(
    model: ModelGraph,
    dataset: Dataset,
    cfg: TrainConfig,
    extra_grad_fn=None,
):
    """Masked SGD for cfg.epochs epochs with per-epoch LR decay.

    extra_grad_fn, if given, maps the weights dict to an additive gradient
    dict (used for group-penalty regularization by the baselines). Returns
    (model, history) where history has one {loss, accuracy} entry per epoch.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = dataset.x[idx], dataset.y[idx]
            logits, cache = forward(model, xb)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch}, step {start}")
            grads = backward(model, cache, dlogits)
            if extra_grad_fn is not None:
                for i, g in extra_grad_fn(model).items():
                    grads[i] = grads[i] + np.where(model.masks[i], g, 0.0)
            sgd_step(model, grads, lr)
            total_loss += loss * len(idx)
            correct += int((logits.reshape(len(idx), -1).argmax(axis=1) == yb).sum())
        history.append({"loss": float(total_loss / n), "accuracy": correct / n})
    return model, history


def evaluate(model: ModelGraph, dataset: Dataset, batch_size: int = 256) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    correct = 0
    for start in range(0, n, batch_size):
        xb = dataset.x[start : start + batch_size]
        yb = dataset.y[start : start + batch_size]
        logits, _ = forward(model, xb)
        pred = logits.reshape(xb.shape[0], -1).argmax(axis=1)
        correct += int((pred == yb).sum())
    return correct / n


def clone_weights(weights: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    return {i: w.copy() for i, w in weights.items()}
