"""Occupancy-grid encoding and the shared part embedding."""

import numpy as np
import pytest

from lanegap.grid import (
    CELLS_PER_PART,
    EmbeddingParams,
    N_PARTS,
    cell_index,
    context_indices,
    embed,
    embed_indices,
    encode_grid,
    sequence_indices,
)

from conftest import make_ctx


# ---------------------------------------------------------------------------
# cell indexing

@pytest.mark.parametrize("distance,expect", [
    (0.0, 0),
    (9.999, 0),
    (10.0, 1),
    (25.0, 2),
    (99.999, 9),
    (100.0, -1),      # boundary distances fall outside the covered range
    (105.0, -1),
    (float("inf"), -1),
    (float("nan"), -1),
    (-1.0, -1),
])
def test_cell_index(distance, expect):
    assert cell_index(distance) == expect


# ---------------------------------------------------------------------------
# grid encoding

class TestEncodeGrid:

    def test_pv_at_25m(self):
        g = encode_grid(make_ctx(d_pv=25.0))
        expect = np.zeros(10)
        expect[2] = 1.0
        assert np.array_equal(g.g_pv, expect)
        assert not g.g_rv.any() and not g.g_plv.any() and not g.g_pfv.any()

    def test_plv_beyond_range(self):
        g = encode_grid(make_ctx(d_plv=105.0))
        assert not g.cells.any()

    def test_all_absent(self):
        g = encode_grid(make_ctx())
        assert g.cells.shape == (4, 10)
        assert not g.cells.any()

    def test_parts_fill_fixed_order(self):
        g = encode_grid(make_ctx(d_pv=5.0, d_rv=15.0, d_plv=25.0, d_pfv=35.0))
        assert list(g.indices()) == [0, 1, 2, 3]
        assert g.bit_rows() == [
            "1000000000", "0100000000", "0010000000", "0001000000"]

    def test_at_most_one_hot_per_part(self, rng):
        for _ in range(200):
            d = rng.uniform(0.0, 140.0, size=4)
            ctx = make_ctx(d_pv=d[0], d_rv=d[1], d_plv=d[2], d_pfv=d[3])
            g = encode_grid(ctx)
            for row in g.cells:
                assert row.sum() in (0.0, 1.0)
                assert set(np.unique(row)) <= {0.0, 1.0}

    def test_translation_consistency(self):
        a = make_ctx(ego_pos=0.0, d_pv=42.0, d_rv=17.0)
        b = make_ctx(ego_pos=5000.0, d_pv=42.0, d_rv=17.0)
        assert np.array_equal(encode_grid(a).cells, encode_grid(b).cells)

    def test_cell_recovers_distance_within_5m(self, rng):
        for _ in range(200):
            d = float(rng.uniform(0.0, 99.999))
            k = cell_index(d)
            center = 10.0 * k + 5.0
            assert abs(center - d) <= 5.0

    def test_sequence_indices_shape(self):
        ctxs = [make_ctx(d_pv=5.0), make_ctx(d_rv=95.0), make_ctx()]
        idx = sequence_indices(ctxs)
        assert idx.shape == (3, 4)
        assert idx.tolist() == [[0, -1, -1, -1], [-1, 9, -1, -1],
                                [-1, -1, -1, -1]]


# ---------------------------------------------------------------------------
# embedding

def toy_params(rng, embed_dim=3):
    return EmbeddingParams(
        weights=rng.normal(size=(embed_dim, CELLS_PER_PART)),
        bias=rng.normal(size=embed_dim))


class TestEmbed:

    def test_zero_grid_gives_tiled_bias(self, rng):
        p = toy_params(rng)
        out = embed(encode_grid(make_ctx()), p)
        assert np.array_equal(out, np.tile(p.bias, N_PARTS))

    def test_one_hot_selects_weight_column(self, rng):
        p = toy_params(rng)
        out = embed(encode_grid(make_ctx(d_plv=47.0)), p)
        part = out[2 * p.embed_dim:3 * p.embed_dim]
        assert np.allclose(part, p.weights[:, 4] + p.bias, atol=1e-15)

    def test_zero_params_give_zero(self):
        p = EmbeddingParams(weights=np.zeros((3, 10)), bias=np.zeros(3))
        out = embed(encode_grid(make_ctx(d_pv=10.0, d_pfv=90.0)), p)
        assert np.array_equal(out, np.zeros(12))

    def test_linearity_over_disjoint_cells(self, rng):
        p = toy_params(rng)
        g1 = encode_grid(make_ctx(d_pv=12.0))
        g2 = encode_grid(make_ctx(d_pv=57.0))
        zero = embed(encode_grid(make_ctx()), p)
        combined = g1.cells + g2.cells  # two cells in the pv part
        direct = (combined @ p.weights.T
                  + p.bias).reshape(-1)
        assert np.allclose(embed(g1, p) + embed(g2, p) - zero, direct,
                           atol=1e-12)

    def test_embed_indices_matches_dense_path(self, rng):
        p = toy_params(rng, embed_dim=5)
        for _ in range(50):
            d = rng.uniform(0.0, 130.0, size=4)
            ctx = make_ctx(d_pv=d[0], d_rv=d[1], d_plv=d[2], d_pfv=d[3])
            dense = embed(encode_grid(ctx), p)
            sparse = embed_indices(context_indices(ctx), p)
            assert np.allclose(dense, sparse, atol=1e-15)

    def test_embed_indices_batched_shapes(self, rng):
        p = toy_params(rng, embed_dim=2)
        idx = np.array([[[0, -1, 3, 9]], [[-1, -1, -1, -1]]])
        out = embed_indices(idx, p)
        assert out.shape == (2, 1, 8)
        assert np.allclose(out[1, 0], np.tile(p.bias, 4))
