"""Occupancy-grid encoding of neighbor contexts and its learned embedding.

A context becomes four binary parts, one per role in the fixed order
[pv, rv, plv, pfv].  Each part covers 100 m in ten 10 m cells indexed by
floor(distance / 10); distances at or beyond 100 m and absent neighbors
leave a part empty.  The embedding applies one shared affine map to every
part and concatenates the results, so an empty part embeds to the bias.
"""

from dataclasses import dataclass

import numpy as np

CELL_LENGTH_M = 10.0
CELLS_PER_PART = 10
PART_ORDER = ("pv", "rv", "plv", "pfv")
N_PARTS = len(PART_ORDER)
DEFAULT_EMBED_DIM = 16


@dataclass(frozen=True)
class OccupancyGrid:
    """Four binary occupancy vectors, rows ordered [pv, rv, plv, pfv]."""

    cells: np.ndarray  # (4, 10) float64, at most one 1 per row

    @property
    def g_pv(self):
        return self.cells[0]

    @property
    def g_rv(self):
        return self.cells[1]

    @property
    def g_plv(self):
        return self.cells[2]

    @property
    def g_pfv(self):
        return self.cells[3]

    def indices(self) -> np.ndarray:
        """Cell index per part, -1 for an empty part."""
        out = np.full(N_PARTS, -1, dtype=np.int64)
        for p in range(N_PARTS):
            hits = np.nonzero(self.cells[p])[0]
            if hits.size:
                out[p] = hits[0]
        return out

    def bit_rows(self) -> list:
        """Debug view: one '0100000000'-style string per part."""
        return ["".join("1" if v else "0" for v in row) for row in self.cells]


def cell_index(distance: float) -> int:
    """Cell for an absolute distance; -1 when outside the covered 100 m."""
    if not np.isfinite(distance) or distance < 0.0:
        return -1
    if distance >= CELL_LENGTH_M * CELLS_PER_PART:
        return -1
    return int(distance // CELL_LENGTH_M)


def context_indices(ctx) -> np.ndarray:
    """Cell index per part for a context, -1 for empty parts."""
    return np.array([cell_index(d) for d in ctx.distances], dtype=np.int64)


def encode_grid(ctx) -> OccupancyGrid:
    """Encode a neighbor context as an occupancy grid."""
    cells = np.zeros((N_PARTS, CELLS_PER_PART))
    for p, d in enumerate(ctx.distances):
        c = cell_index(d)
        if c >= 0:
            cells[p, c] = 1.0
    return OccupancyGrid(cells=cells)


def sequence_indices(contexts) -> np.ndarray:
    """(T, 4) cell indices for a context sequence (model input form)."""
    return np.array([context_indices(c) for c in contexts], dtype=np.int64)


@dataclass
class EmbeddingParams:
    """Shared affine map applied to each grid part before concatenation."""

    weights: np.ndarray  # (embed_dim, CELLS_PER_PART)
    bias: np.ndarray     # (embed_dim,)

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def output_dim(self) -> int:
        return N_PARTS * self.embed_dim


def embed(grid: OccupancyGrid, p: EmbeddingParams) -> np.ndarray:
    """Concatenate the shared affine map of each part: (4 * embed_dim,)."""
    parts = grid.cells @ p.weights.T + p.bias  # (4, embed_dim)
    return parts.reshape(-1)


def embed_indices(indices: np.ndarray, p: EmbeddingParams) -> np.ndarray:
    """Embed (..., 4) cell indices; exploits the one-hot structure.

    Empty parts (-1) embed to the bias alone.
    """
    base = np.broadcast_to(p.bias, indices.shape + (p.embed_dim,)).copy()
    occupied = indices >= 0
    if occupied.any():
        base[occupied] += p.weights.T[indices[occupied]]
    return base.reshape(indices.shape[:-1] + (p.output_dim,))
