"""Mapping of layer weights onto fixed-size crossbars and the accounting of
what pruning actually saves.

A trainable layer's weights are viewed as a 2-D matrix with one column per
filter (output feature) and one row per input index (ic, ki, kj). Cells are
only saved when an entire crossbar row or column is zero; crossbar counts
come from a two-stage compaction: drop globally dead rows/columns, then pack
surviving column segments per row band.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .nn_core import Conv, Linear, ModelGraph, is_trainable


@dataclass(frozen=True)
class CrossbarConfig:
    xbar_size: int = 128
    xbars_per_tile: int = 96
    tiles: int = 256
    freq_hz: float = 1e7
    tile_area_mm2: float = 0.37   # metadata only
    tile_power_w: float = 0.33    # metadata only
    bits: int = 16                # metadata only

    @property
    def total_xbars(self) -> int:
        return self.tiles * self.xbars_per_tile


@dataclass
class LayerMatrix:
    """2-D crossbar-facing view of a layer: rows = ic*k*k (or in_features),
    cols = oc (or out_features). row_of(ic, ki, kj) = ic*k*k + ki*k + kj."""

    values: np.ndarray  # (rows, cols)
    keep: np.ndarray    # bool, same shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def layer_to_matrix(weights: np.ndarray, mask: np.ndarray) -> LayerMatrix:
    """Conv weights (oc, ic, k, k) or linear weights (out, in) -> LayerMatrix."""
    if weights.ndim == 4:
        oc = weights.shape[0]
        return LayerMatrix(weights.reshape(oc, -1).T.copy(), mask.reshape(oc, -1).T.copy())
    if weights.ndim == 2:
        return LayerMatrix(weights.T.copy(), mask.T.copy())
    raise ValueError(f"not a trainable layer weight tensor: ndim={weights.ndim}")


def matrix_to_layer(matrix: LayerMatrix, shape: tuple) -> np.ndarray:
    """Inverse of layer_to_matrix for the value part (round-trip exact)."""
    return matrix.values.T.reshape(shape).copy()


@dataclass
class CrossbarSavings:
    band_row: int
    band_col: int
    tile_rows: int
    tile_cols: int
    saved_rows: int
    saved_cols: int
    saved_cells: int


@dataclass
class LayerFootprint:
    name: str
    rows: int = 0
    cols: int = 0
    live_rows: int = 0
    live_cols: int = 0
    out_dim: int = 1
    xbars_unpruned: int = 0
    xbars_pruned: int = 0
    act_cells_unpruned: int = 0
    act_cells_pruned: int = 0
    act_xbars_unpruned: int = 0
    act_xbars_pruned: int = 0


@dataclass
class SavingsReport:
    layers: list[LayerFootprint] = field(default_factory=list)
    weight_xbars_unpruned: int = 0
    weight_xbars_pruned: int = 0
    act_xbars_unpruned: int = 0
    act_xbars_pruned: int = 0
    over_budget: bool = False

    @property
    def total_unpruned(self) -> int:
        return self.weight_xbars_unpruned + self.act_xbars_unpruned

    @property
    def total_pruned(self) -> int:
        return self.weight_xbars_pruned + self.act_xbars_pruned

    @property
    def savings_fraction(self) -> float:
        if self.total_unpruned == 0:
            return 0.0
        return 1.0 - self.total_pruned / self.total_unpruned

    def to_json(self) -> str:
        d = {
            "weight_xbars_unpruned": self.weight_xbars_unpruned,
            "weight_xbars_pruned": self.weight_xbars_pruned,
            "act_xbars_unpruned": self.act_xbars_unpruned,
            "act_xbars_pruned": self.act_xbars_pruned,
            "total_unpruned": self.total_unpruned,
            "total_pruned": self.total_pruned,
            "savings_fraction": self.savings_fraction,
            "over_budget": self.over_budget,
            "layers": [asdict(l) for l in self.layers],
        }
        return json.dumps(d, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = [
            "layer", "rows", "cols", "live_rows", "live_cols",
            "xbars_unpruned", "xbars_pruned", "act_cells_unpruned", "act_cells_pruned",
        ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for l in self.layers:
                w.writerow([
                    l.name, l.rows, l.cols, l.live_rows, l.live_cols,
                    l.xbars_unpruned, l.xbars_pruned,
                    l.act_cells_unpruned, l.act_cells_pruned,
                ])


def saved_rows_cols(matrix: LayerMatrix, cfg: CrossbarConfig) -> list[CrossbarSavings]:
    """Per-crossbar saved rows/columns/cells under the all-zero rule.

    Within each S x S tile a row is saved iff every entry of that row in the
    tile's column range is pruned; symmetrically for columns. saved_cells
    follows inclusion-exclusion so shared corner cells are not double counted.
    """
    s = cfg.xbar_size
    out = []
    keep = matrix.keep
    for a in range(math.ceil(matrix.rows / s)):
        for b in range(math.ceil(matrix.cols / s)):
            sub = keep[a * s : (a + 1) * s, b * s : (b + 1) * s]
            tr, tc = sub.shape
            r = int((~sub.any(axis=1)).sum())
            c = int((~sub.any(axis=0)).sum())
            out.append(CrossbarSavings(a, b, tr, tc, r, c, r * tc + c * tr - r * c))
    return out


def weight_xbars(matrix: LayerMatrix, cfg: CrossbarConfig) -> int:
    """Crossbars needed after two-stage compaction.

    Stage 1 drops rows/columns with no kept entry anywhere (dead input index /
    vanished filter). Stage 2 partitions surviving rows into bands of S and,
    per band, packs the column segments that have at least one kept entry in
    that band; each band needs ceil(live_segments / S) crossbars.
    """
    s = cfg.xbar_size
    keep = matrix.keep
    if keep.size == 0 or not keep.any():
        return 0
    k2 = keep[keep.any(axis=1)][:, keep.any(axis=0)]
    total = 0
    for a in range(math.ceil(k2.shape[0] / s)):
        band = k2[a * s : (a + 1) * s]
        segments = int(band.any(axis=0).sum())
        total += math.ceil(segments / s)
    return total


def activation_cells(
    live_oc: int, out_dim: int, cfg: CrossbarConfig, in_flight: int = 1
) -> tuple[int, int]:
    """Cells and crossbars for storing a layer's output activations.

    Only fully pruned filters (dead matrix columns) shrink this; channel- or
    index-level pruning leaves every output channel nonzero.
    """
    cells = live_oc * out_dim * out_dim * in_flight
    return cells, math.ceil(cells / (cfg.xbar_size * cfg.xbar_size))


def model_footprint(
    model: ModelGraph,
    cfg: CrossbarConfig,
    in_shape: tuple[int, int, int],
    in_flight: int = 1,
) -> SavingsReport:
    """Weight + activation crossbar totals, pruned vs unpruned, per layer."""
    shapes = model.output_shapes(in_shape)
    report = SavingsReport()
    for i in model.trainable_indices():
        layer = model.layers[i]
        w, m = model.weights[i], model.masks[i]
        if not m.any():
            raise ValueError(f"layer {i}: fully pruned (no live output)")
        mat = layer_to_matrix(w, m)
        full = LayerMatrix(mat.values, np.ones_like(mat.keep))
        out_dim = shapes[i][1] if isinstance(layer, Conv) else 1
        live_cols = int(mat.keep.any(axis=0).sum())
        au_cells, au_x = activation_cells(mat.cols, out_dim, cfg, in_flight)
        ap_cells, ap_x = activation_cells(live_cols, out_dim, cfg, in_flight)
        fp = LayerFootprint(
            name=f"L{i}:{'conv' if isinstance(layer, Conv) else 'linear'}",
            rows=mat.rows,
            cols=mat.cols,
            live_rows=int(mat.keep.any(axis=1).sum()),
            live_cols=live_cols,
            out_dim=out_dim,
            xbars_unpruned=weight_xbars(full, cfg),
            xbars_pruned=weight_xbars(mat, cfg),
            act_cells_unpruned=au_cells,
            act_cells_pruned=ap_cells,
            act_xbars_unpruned=au_x,
            act_xbars_pruned=ap_x,
        )
        report.layers.append(fp)
        report.weight_xbars_unpruned += fp.xbars_unpruned
        report.weight_xbars_pruned += fp.xbars_pruned
        report.act_xbars_unpruned += fp.act_xbars_unpruned
        report.act_xbars_pruned += fp.act_xbars_pruned
    report.over_budget = report.total_unpruned > cfg.total_xbars
    return report
