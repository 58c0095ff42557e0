"""Group scoring and the iterative prune-rewind loops.

The main loop prunes before training: train briefly, prune the lowest-scored
weight groups network-wide, check accuracy, undo and refine the granularity
on a drop (filter -> channel -> index), then rewind surviving weights to
their initialization and repeat. Unstructured (lottery-ticket style) and
column/block group baselines share the same machinery with a fixed
granularity.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .nn_core import (
    Conv,
    Dataset,
    Linear,
    ModelGraph,
    TrainConfig,
    clone_weights,
    evaluate,
    train,
    xavier_init,
)


class Granularity(enum.Enum):
    FILTER = "filter"
    CHANNEL = "channel"
    INDEX = "index"
    UNSTRUCTURED = "unstructured"
    COLUMN_GROUP = "column_group"
    BLOCK_GROUP = "block_group"


REFINEMENT_CHAIN = [Granularity.FILTER, Granularity.CHANNEL, Granularity.INDEX]


@dataclass
class Group:
    layer: int
    gidx: int
    score: float
    size: int                 # kept members only
    members: tuple            # index tuple addressing the weight tensor


@dataclass
class PruneConfig:
    p: float = 0.25
    epochs_per_iter: int = 3          # E
    final_epochs: int = 20            # F, deployment-phase retrain
    max_iter: int = 30
    acc_slack: float = 0.002          # 0.2 percentage points
    block_shape: tuple[int, int] = (2, 2)
    group_penalty: float = 0.0        # optional group-lasso-style penalty
    xbar_size: int = 128
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class PruneState:
    w_initial: dict[int, np.ndarray]
    granularity: Granularity
    iteration: int = 0
    baseline_accuracy: float = 0.0
    snapshot: tuple | None = None     # (masks, weights) before the last step
    shortfall: int = 0                # kept-weight shortfall of the last step
    history: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# group enumeration


def _matrix_view(arr: np.ndarray) -> np.ndarray:
    """2-D crossbar view (rows = input index, cols = filter) sharing memory."""
    if arr.ndim == 4:
        return arr.reshape(arr.shape[0], -1).T
    return arr.T


def _layer_groups(
    layer_idx: int,
    w: np.ndarray,
    mask: np.ndarray,
    granularity: Granularity,
    cfg: PruneConfig,
) -> list[Group]:
    absw = np.abs(w)
    groups: list[Group] = []

    def add(gidx, sel):
        kept = mask[sel]
        size = int(kept.sum())
        if size == 0:
            return
        score = float(absw[sel][kept].mean())
        groups.append(Group(layer_idx, gidx, score, size, sel))

    if granularity in (Granularity.FILTER, Granularity.COLUMN_GROUP):
        for oc in range(w.shape[0]):
            add(oc, np.s_[oc])
    elif granularity == Granularity.CHANNEL:
        # linear layers act as conv with K=1: a channel is one (out, in) weight
        for oc in range(w.shape[0]):
            for ic in range(w.shape[1]):
                add(oc * w.shape[1] + ic, np.s_[oc, ic])
    elif granularity == Granularity.INDEX:
        # one group per matrix row per column band of the crossbar grid
        s = cfg.xbar_size
        n_oc = w.shape[0]
        n_bands = -(-n_oc // s)
        if w.ndim == 4:
            _, ic_n, k, _ = w.shape
            for ic in range(ic_n):
                for ki in range(k):
                    for kj in range(k):
                        row = ic * k * k + ki * k + kj
                        for b in range(n_bands):
                            add(
                                row * n_bands + b,
                                np.s_[b * s : (b + 1) * s, ic, ki, kj],
                            )
        else:
            for ic in range(w.shape[1]):
                for b in range(n_bands):
                    add(ic * n_bands + b, np.s_[b * s : (b + 1) * s, ic])
    elif granularity == Granularity.UNSTRUCTURED:
        flat_kept = np.flatnonzero(mask)
        for j in flat_kept:
            idx = np.unravel_index(j, w.shape)
            groups.append(Group(layer_idx, int(j), float(absw[idx]), 1, idx))
    elif granularity == Granularity.BLOCK_GROUP:
        bh, bw = cfg.block_shape
        mv, av = _matrix_view(mask), _matrix_view(absw)
        rows, cols = mv.shape
        gidx = 0
        for r0 in range(0, rows, bh):
            for c0 in range(0, cols, bw):
                sub = mv[r0 : r0 + bh, c0 : c0 + bw]
                size = int(sub.sum())
                if size:
                    score = float(av[r0 : r0 + bh, c0 : c0 + bw][sub].mean())
                    groups.append(
                        Group(layer_idx, gidx, score, size, ("block", r0, c0, bh, bw))
                    )
                gidx += 1
    else:
        raise ValueError(f"unknown granularity {granularity}")
    return groups


def group_scores(model: ModelGraph, granularity: Granularity, cfg: PruneConfig) -> list[Group]:
    """All groups with >= 1 kept member, network-wide."""
    groups: list[Group] = []
    for i in model.trainable_indices():
        groups.extend(_layer_groups(i, model.weights[i], model.masks[i], granularity, cfg))
    if not groups:
        raise ValueError("no kept weights anywhere (degenerate model)")
    return groups


def _is_block(members) -> bool:
    return isinstance(members, tuple) and len(members) == 5 and members[0] == "block"


def _apply_group(model: ModelGraph, g: Group) -> None:
    mask = model.masks[g.layer]
    if _is_block(g.members):
        _, r0, c0, bh, bw = g.members
        _matrix_view(mask)[r0 : r0 + bh, c0 : c0 + bw] = False
    else:
        mask[g.members] = False
    model.weights[g.layer][~mask] = 0.0


# ---------------------------------------------------------------------------
# single pruning step


def prune_step(state: PruneState, model: ModelGraph, cfg: PruneConfig) -> PruneState:
    """Prune the lowest-scored groups until ~p of the kept weights are gone.

    Groups are ranked ascending by (score, layer, gidx). The selected prefix
    is the smallest one reaching p * kept_weights, except that the boundary
    group is dropped when its overshoot exceeds the shortfall without it
    (never dropping the first group). The pre-step masks+weights snapshot is
    recorded for undo.
    """
    if not (0.0 < cfg.p < 1.0):
        raise ValueError(f"p out of range: {cfg.p}")
    groups = group_scores(model, state.granularity, cfg)
    groups.sort(key=lambda g: (g.score, g.layer, g.gidx))
    kept_total = sum(int(m.sum()) for m in model.masks.values())
    target = cfg.p * kept_total

    # a layer must keep at least one live group, or the network stops being
    # runnable and the crossbar mapper rejects it
    layer_kept = {i: int(m.sum()) for i, m in model.masks.items()}
    chosen: list[Group] = []
    cum = 0
    for g in groups:
        if cum >= target:
            break
        if layer_kept[g.layer] - g.size <= 0:
            continue
        if chosen and (cum + g.size - target) > (target - cum):
            break  # overshoot guard: closer to the target without this group
        chosen.append(g)
        cum += g.size
        layer_kept[g.layer] -= g.size
    if not chosen:
        raise ValueError("no prunable group")

    state.snapshot = (
        {i: m.copy() for i, m in model.masks.items()},
        clone_weights(model.weights),
    )
    for g in chosen:
        _apply_group(model, g)
    state.shortfall = max(0, int(np.ceil(target - cum)))
    state.iteration += 1
    return state


def rewind(state: PruneState, model: ModelGraph) -> ModelGraph:
    """Reset every kept weight to its archived initialization value."""
    if not state.w_initial:
        raise ValueError("no archived initial weights")
    for i in model.trainable_indices():
        model.weights[i] = np.where(model.masks[i], state.w_initial[i], 0.0)
    return model


def undo_last(state: PruneState, model: ModelGraph) -> tuple[PruneState, ModelGraph]:
    """Restore masks and weights to the pre-step snapshot (single depth)."""
    if state.snapshot is None:
        raise ValueError("no snapshot to undo")
    masks, weights = state.snapshot
    model.masks = {i: m.copy() for i, m in masks.items()}
    model.weights = clone_weights(weights)
    state.snapshot = None
    return state, model


# ---------------------------------------------------------------------------
# full loops


def _group_penalty_grads(model: ModelGraph, granularity: Granularity, cfg: PruneConfig):
    """d/dw of lambda * sum_g sqrt(sum_{w in g} w^2); zero groups untouched."""
    lam = cfg.group_penalty
    grads = {}
    for i in model.trainable_indices():
        w = model.weights[i]
        g = np.zeros_like(w)
        gv = _matrix_view(g)
        wv = _matrix_view(w)
        for grp in _layer_groups(i, w, model.masks[i], granularity, cfg):
            if _is_block(grp.members):
                _, r0, c0, bh, bw = grp.members
                sub = wv[r0 : r0 + bh, c0 : c0 + bw]
                norm = np.sqrt((sub * sub).sum())
                if norm > 1e-12:
                    gv[r0 : r0 + bh, c0 : c0 + bw] = lam * sub / norm
                continue
            sub = w[grp.members]
            norm = np.sqrt((sub * sub).sum())
            if norm > 1e-12:
                g[grp.members] = lam * sub / norm
        grads[i] = g
    return grads


def _run_loop(
    model: ModelGraph,
    dataset: Dataset,
    test_set: Dataset,
    cfg: PruneConfig,
    start_granularity: Granularity,
    refine: bool,
) -> tuple[ModelGraph, PruneState]:
    """Shared iterative prune loop. refine=True walks filter->channel->index
    on accuracy drops; refine=False stops at the first drop.

    Every pruning step is validated lottery-ticket style: the surviving
    weights are rewound to their initial values and retrained on the same
    E-epoch schedule, and the step is undone when that retrain accuracy falls
    below baseline minus the slack. Undo restores the pre-step masks together
    with the trained weights they were scored on, so the finer-granularity
    retry ranks the same magnitudes.
    """
    state = PruneState(
        w_initial=clone_weights(model.weights),
        granularity=start_granularity,
    )

    # baseline: train the unpruned model from w_initial on the same schedule;
    # this run also supplies the magnitudes the first pruning step ranks
    tcfg = replace(cfg.train, epochs=cfg.epochs_per_iter)
    model, _ = train(model, dataset, tcfg)
    state.baseline_accuracy = evaluate(model, test_set)

    extra = None
    if cfg.group_penalty > 0.0:
        extra = lambda m: _group_penalty_grads(m, start_granularity, cfg)

    itr = 0
    while itr < cfg.max_iter:
        prune_step(state, model, cfg)
        rewind(state, model)
        model, _ = train(model, dataset, tcfg, extra_grad_fn=extra)
        acc = evaluate(model, test_set)
        entry = {
            "iteration": state.iteration,
            "granularity": state.granularity.value,
            "sparsity": model.sparsity(),
            "accuracy": acc,
            "action": "kept",
        }
        if acc < state.baseline_accuracy - cfg.acc_slack:
            undo_last(state, model)
            entry["action"] = "undone"
            entry["sparsity"] = model.sparsity()
            state.history.append(entry)
            if not refine:
                break
            pos = REFINEMENT_CHAIN.index(state.granularity)
            if pos == len(REFINEMENT_CHAIN) - 1:
                break
            state.granularity = REFINEMENT_CHAIN[pos + 1]
        else:
            state.history.append(entry)
        itr += 1

    rewind(state, model)
    return model, state


def run_realprune(
    model: ModelGraph, dataset: Dataset, test_set: Dataset, cfg: PruneConfig
) -> tuple[ModelGraph, PruneState]:
    """Coarse-to-fine crossbar-aware loop: filter -> channel -> index."""
    return _run_loop(model, dataset, test_set, cfg, Granularity.FILTER, refine=True)


def run_ltp(
    model: ModelGraph, dataset: Dataset, test_set: Dataset, cfg: PruneConfig
) -> tuple[ModelGraph, PruneState]:
    """Unstructured lottery-ticket baseline; stops at the first drop."""
    return _run_loop(model, dataset, test_set, cfg, Granularity.UNSTRUCTURED, refine=False)


def run_group_baseline(
    model: ModelGraph,
    dataset: Dataset,
    test_set: Dataset,
    cfg: PruneConfig,
    granularity: Granularity,
) -> tuple[ModelGraph, PruneState]:
    """Column-group (CAP-style) or block-group baseline at fixed granularity."""
    if granularity not in (Granularity.COLUMN_GROUP, Granularity.BLOCK_GROUP):
        raise ValueError(f"not a group baseline granularity: {granularity}")
    return _run_loop(model, dataset, test_set, cfg, granularity, refine=False)


# ---------------------------------------------------------------------------
# mask checkpoints


CHECKPOINT_VERSION = 1


def model_hash(model: ModelGraph) -> str:
    h = hashlib.sha256()
    h.update(repr(model.layers).encode())
    h.update(str(model.rng_seed).encode())
    return h.hexdigest()[:16]


def save_checkpoint(path, model: ModelGraph, state: PruneState, extra: dict | None = None):
    """Versioned JSON record of masks + provenance; enough to rebuild the
    pruned model (via xavier_init on the recorded seed) with no dataset."""
    masks = {}
    for i, m in model.masks.items():
        masks[str(i)] = {
            "shape": list(m.shape),
            "keep_bits": base64.b64encode(np.packbits(m.ravel())).decode(),
        }
    doc = {
        "version": CHECKPOINT_VERSION,
        "model_hash": model_hash(model),
        "rng_seed": model.rng_seed,
        "masks": masks,
        "granularity_history": [h["granularity"] for h in state.history],
        "accuracy_log": [h["accuracy"] for h in state.history],
        "baseline_accuracy": state.baseline_accuracy,
        "sparsity": model.sparsity(),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc


def load_checkpoint(path, model: ModelGraph) -> ModelGraph:
    """Apply a saved mask checkpoint to a freshly built model; re-inits
    weights from the recorded seed and rewinds kept weights to w_initial."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc['version']}")
    xavier_init(model, doc["rng_seed"])
    if doc["model_hash"] != model_hash(model):
        raise ValueError("checkpoint does not match this model architecture")
    for key, rec in doc["masks"].items():
        i = int(key)
        bits = np.unpackbits(
            np.frombuffer(base64.b64decode(rec["keep_bits"]), dtype=np.uint8)
        )
        m = bits[: int(np.prod(rec["shape"]))].astype(bool).reshape(rec["shape"])
        model.masks[i] = m
    model.apply_masks()
    return model
