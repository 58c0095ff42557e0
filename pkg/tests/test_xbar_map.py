import numpy as np
import pytest

import xbarprune as xp
from xbarprune import (
    Conv,
    ConvSpec,
    CrossbarConfig,
    Flatten,
    LayerMatrix,
    Linear,
    ModelGraph,
    ReLU,
)
from xbarprune.xbar_map import layer_to_matrix, matrix_to_layer, model_footprint

from util import brute_force_saved_cells, brute_force_weight_xbars


CFG128 = CrossbarConfig()
CFG4 = CrossbarConfig(xbar_size=4)


def random_matrix(rng, rows, cols, density):
    keep = rng.random((rows, cols)) < density
    return LayerMatrix(rng.normal(size=(rows, cols)), keep)


class TestLayerToMatrix:
    def test_conv_dims(self):
        w = np.zeros((64, 3, 3, 3))
        m = layer_to_matrix(w, np.ones_like(w, dtype=bool))
        assert (m.rows, m.cols) == (27, 64)

    def test_1x1_round_trip(self):
        w = np.array([[[[3.5]]]])
        m = layer_to_matrix(w, np.ones_like(w, dtype=bool))
        assert m.values.shape == (1, 1)
        assert np.array_equal(matrix_to_layer(m, w.shape), w)

    def test_index_formula(self):
        # entry (row_of(ic, ki, kj), oc) == weight[oc, ic, ki, kj], all positions
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 2, 2, 2))
        m = layer_to_matrix(w, np.ones_like(w, dtype=bool))
        k = 2
        for oc in range(3):
            for ic in range(2):
                for ki in range(k):
                    for kj in range(k):
                        row = ic * k * k + ki * k + kj
                        assert m.values[row, oc] == w[oc, ic, ki, kj]

    def test_round_trip_exact(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(5, 4, 3, 3))
        m = layer_to_matrix(w, np.ones_like(w, dtype=bool))
        assert np.array_equal(matrix_to_layer(m, w.shape), w)

    def test_linear_as_k1_conv(self):
        w = np.arange(12.0).reshape(3, 4)  # (out, in)
        m = layer_to_matrix(w, np.ones_like(w, dtype=bool))
        assert (m.rows, m.cols) == (4, 3)
        assert m.values[1, 2] == w[2, 1]

    def test_non_trainable_rejected(self):
        with pytest.raises(ValueError):
            layer_to_matrix(np.zeros((2, 2, 2)), np.ones((2, 2, 2), dtype=bool))


class TestSavedRowsCols:
    def test_permutation_75pct_saves_nothing(self):
        keep = np.eye(4, dtype=bool)  # one kept entry per row and column
        m = LayerMatrix(np.ones((4, 4)), keep)
        [s] = xp.saved_rows_cols(m, CFG4)
        assert (s.saved_rows, s.saved_cols, s.saved_cells) == (0, 0, 0)

    def test_permutation_128_99_2pct_saves_nothing(self):
        rng = np.random.default_rng(5)
        perm = rng.permutation(128)
        keep = np.zeros((128, 128), dtype=bool)
        keep[np.arange(128), perm] = True
        assert 1 - keep.mean() == pytest.approx(0.992, abs=1e-3)
        [s] = xp.saved_rows_cols(LayerMatrix(np.ones((128, 128)), keep), CFG128)
        assert s.saved_cells == 0

    def test_one_dead_column(self):
        keep = np.ones((4, 4), dtype=bool)
        keep[:, 2] = False
        [s] = xp.saved_rows_cols(LayerMatrix(np.ones((4, 4)), keep), CFG4)
        assert (s.saved_rows, s.saved_cols, s.saved_cells) == (0, 1, 4)

    def test_inclusion_exclusion(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            rows, cols = rng.integers(1, 30, size=2)
            m = random_matrix(rng, rows, cols, rng.uniform(0.05, 0.9))
            for s in xp.saved_rows_cols(m, CFG4):
                assert s.saved_cells == (
                    s.saved_rows * s.tile_cols
                    + s.saved_cols * s.tile_rows
                    - s.saved_rows * s.saved_cols
                )
                assert 0 <= s.saved_cells <= s.tile_rows * s.tile_cols

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            rows, cols = rng.integers(1, 40, size=2)
            m = random_matrix(rng, rows, cols, rng.uniform(0.02, 1.0))
            ref = brute_force_saved_cells(m.keep, 4)
            for s in xp.saved_rows_cols(m, CFG4):
                assert ref[(s.band_row, s.band_col)] == (
                    s.saved_rows, s.saved_cols, s.saved_cells)


class TestWeightXbars:
    def test_unpruned_small_fits_one(self):
        m = LayerMatrix(np.ones((27, 64)), np.ones((27, 64), dtype=bool))
        assert xp.weight_xbars(m, CFG128) == 1

    def test_dead_columns_compact(self):
        keep = np.ones((27, 256), dtype=bool)
        keep[:, 64:] = False
        m = LayerMatrix(np.ones((27, 256)), keep)
        assert xp.weight_xbars(m, CFG128) == 1
        full = LayerMatrix(m.values, np.ones_like(keep))
        assert xp.weight_xbars(full, CFG128) == 2

    def test_block_diagonal_bands(self):
        keep = np.zeros((256, 256), dtype=bool)
        keep[:128, :128] = True
        keep[128:, 128:] = True
        m = LayerMatrix(np.ones((256, 256)), keep)
        assert xp.weight_xbars(m, CFG128) == 2
        assert xp.weight_xbars(LayerMatrix(m.values, np.ones_like(keep)), CFG128) == 4

    def test_unpruned_closed_form(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            rows, cols = rng.integers(1, 300, size=2)
            keep = np.ones((rows, cols), dtype=bool)
            m = LayerMatrix(np.ones((rows, cols)), keep)
            expected = -(-rows // 128) * (-(-cols // 128))
            assert xp.weight_xbars(m, CFG128) == expected

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            rows, cols = rng.integers(1, 120, size=2)
            s = int(rng.choice([4, 16, 32]))
            m = random_matrix(rng, rows, cols, rng.uniform(0.01, 1.0))
            cfg = CrossbarConfig(xbar_size=s)
            assert xp.weight_xbars(m, cfg) == brute_force_weight_xbars(m.keep, s)

    def test_monotone_in_pruning(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = random_matrix(rng, 60, 60, 0.6)
            before = xp.weight_xbars(m, CFG4)
            cells_before = sum(s.saved_cells for s in xp.saved_rows_cols(m, CFG4))
            extra = rng.random((60, 60)) < 0.2
            m2 = LayerMatrix(m.values, m.keep & ~extra)
            assert xp.weight_xbars(m2, CFG4) <= before
            cells_after = sum(s.saved_cells for s in xp.saved_rows_cols(m2, CFG4))
            assert cells_after >= cells_before


class TestActivationCells:
    def test_unpruned_arithmetic(self):
        cells, xbars = xp.activation_cells(64, 32, CFG128, in_flight=1)
        assert (cells, xbars) == (65536, 4)

    def test_half_filters_pruned(self):
        cells, xbars = xp.activation_cells(32, 32, CFG128, in_flight=1)
        assert (cells, xbars) == (32768, 2)

    def test_channel_pruning_leaves_activations(self):
        # channel-wise-only mask: no filter fully pruned -> live columns = oc
        w = np.ones((4, 3, 3, 3))
        mask = np.ones_like(w, dtype=bool)
        mask[:, 1] = False  # one channel of every filter
        m = layer_to_matrix(w, mask)
        live = int(m.keep.any(axis=0).sum())
        assert live == 4
        assert xp.activation_cells(live, 8, CFG128) == xp.activation_cells(4, 8, CFG128)


class TestModelFootprint:
    def _model(self):
        m = ModelGraph(layers=[
            Conv(ConvSpec(1, 8, 3, pad=1)), ReLU(), Flatten(),
            Linear(8 * 64, 10),
        ])
        return xp.xavier_init(m, 0)

    def test_unpruned_zero_savings(self):
        r = model_footprint(self._model(), CFG128, (1, 8, 8))
        assert r.savings_fraction == 0.0

    def test_every_second_filter_pruned(self):
        m = self._model()
        m.masks[0][1::2] = False
        m.apply_masks()
        r = model_footprint(m, CFG128, (1, 8, 8))
        conv = r.layers[0]
        # still a single crossbar for weights, activation cells halved
        assert conv.xbars_unpruned == conv.xbars_pruned == 1
        assert conv.act_cells_pruned == conv.act_cells_unpruned // 2

    def test_all_pruned_rejected(self):
        m = self._model()
        m.masks[0][:] = False
        with pytest.raises(ValueError):
            model_footprint(m, CFG128, (1, 8, 8))

    def test_csv_and_json(self, tmp_path):
        import json
        r = model_footprint(self._model(), CFG128, (1, 8, 8))
        doc = json.loads(r.to_json())
        assert doc["savings_fraction"] == 0.0
        p = tmp_path / "savings.csv"
        r.write_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0].startswith("layer,rows,cols")
        assert len(lines) == 3


def test_filter_pruning_exact_saved_cols():
    # single-crossbar layer: pruning m whole filters -> saved_cols == m
    w = np.ones((10, 2, 3, 3))
    mask = np.ones_like(w, dtype=bool)
    mask[[1, 4, 7]] = False
    m = layer_to_matrix(w, mask)
    [s] = xp.saved_rows_cols(m, CFG128)
    assert s.saved_cols == 3
    assert int(m.keep.any(axis=0).sum()) == 7
