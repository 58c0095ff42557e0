"""Shared helpers: independent oracles used across the test modules."""

import numpy as np

from xbarprune import ModelGraph, forward
import xbarprune.nn_core as nn


def conv_loop_oracle(x, w, stride=1, pad=0):
    """Direct nested-loop convolution, independent of the im2col path."""
    n, ic, h, wd = x.shape
    oc, _, k, _ = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oc, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(ic):
                        for ki in range(k):
                            for kj in range(k):
                                acc += w[o, c, ki, kj] * x[ni, c, i * stride + ki, j * stride + kj]
                    out[ni, o, i, j] = acc
    return out


def as_float64(model: ModelGraph) -> ModelGraph:
    for i in model.trainable_indices():
        model.weights[i] = model.weights[i].astype(np.float64)
    return model


def safe_fd_step(model, x, h=1e-3):
    """Largest step <= h that keeps the central-difference window away from
    the model's ReLU / max-pool kinks for this input."""
    margin = min_relu_margin(model, x)
    return float(np.clip(margin / 50.0, 1e-7, h))


def fd_gradcheck(model, x, y, h=1e-3, rel_tol=1e-4):
    """Central-difference gradient check; returns the max relative error."""
    def loss_fn():
        logits, _ = forward(model, x)
        return nn.softmax_cross_entropy(logits, y)[0]

    logits, cache = forward(model, x)
    _, d = nn.softmax_cross_entropy(logits, y)
    grads = nn.backward(model, cache, d)
    max_rel = 0.0
    for i in model.trainable_indices():
        w = model.weights[i]
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + h
            lp = loss_fn()
            w[idx] = orig - h
            lm = loss_fn()
            w[idx] = orig
            fd = (lp - lm) / (2 * h)
            a = grads[i][idx]
            if abs(a) < 1e-10 and abs(fd) < 1e-10:
                continue
            max_rel = max(max_rel, abs(a - fd) / max(abs(a), abs(fd)))
    return max_rel


def min_relu_margin(model, x):
    """Smallest kink margin: |preactivation| at ReLUs and top-2 gap in every
    max-pool window. Below ~h the finite-difference secant is invalid."""
    from xbarprune.nn_core import MaxPool, ReLU

    _, cache = forward(model, x)
    outs = cache["outputs"]
    margin = np.inf
    for i, layer in enumerate(model.layers):
        inp = outs[i - 1] if i > 0 else x
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(inp).min()))
        elif isinstance(layer, MaxPool):
            k, st = layer.k, layer.stride
            n, c, h, w = inp.shape
            oh, ow = (h - k) // st + 1, (w - k) // st + 1
            for oi in range(oh):
                for oj in range(ow):
                    win = inp[:, :, oi * st : oi * st + k, oj * st : oj * st + k]
                    flat = np.sort(win.reshape(n, c, -1), axis=-1)
                    margin = min(margin, float((flat[..., -1] - flat[..., -2]).min()))
    return margin


def brute_force_weight_xbars(keep, s):
    """Band-by-band live-segment enumeration with explicit loops."""
    rows, cols = keep.shape
    live_rows = [r for r in range(rows) if any(keep[r, c] for c in range(cols))]
    live_cols = [c for c in range(cols) if any(keep[r, c] for r in range(rows))]
    if not live_rows or not live_cols:
        return 0
    total = 0
    for start in range(0, len(live_rows), s):
        band = live_rows[start : start + s]
        segs = 0
        for c in live_cols:
            if any(keep[r, c] for r in band):
                segs += 1
        total += -(-segs // s)
    return total


def brute_force_saved_cells(keep, s):
    """Per-tile saved rows/cols/cells by direct enumeration; returns a dict
    keyed by (band_row, band_col)."""
    rows, cols = keep.shape
    out = {}
    for a in range(-(-rows // s)):
        for b in range(-(-cols // s)):
            r0, r1 = a * s, min((a + 1) * s, rows)
            c0, c1 = b * s, min((b + 1) * s, cols)
            saved_r = sum(
                1 for r in range(r0, r1) if not any(keep[r, c] for c in range(c0, c1))
            )
            saved_c = sum(
                1 for c in range(c0, c1) if not any(keep[r, c] for r in range(r0, r1))
            )
            tr, tc = r1 - r0, c1 - c0
            out[(a, b)] = (saved_r, saved_c, saved_r * tc + saved_c * tr - saved_r * saved_c)
    return out
