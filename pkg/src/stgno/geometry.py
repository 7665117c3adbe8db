"""Fixed-radius graphs over 2-D spot coordinates and the positional kernel.

Positions are plain (n, 2) float64 arrays of slide-local coordinates.
Graph construction buckets points into a uniform grid of cell side equal
to the radius, so only the 3x3 cell neighborhood of each point is
scanned: expected cost O(n * k) instead of O(n^2). Membership uses the
squared-distance comparison d2 <= radius**2.

Edges are directed and stored both ways, sorted by (src, dst), with no
self loops and no duplicates. Edge attributes are (dx, dy, distance)
taken dst minus src. A built graph is immutable by convention and safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, NormalizationError, ParameterError


def as_positions(obj) -> np.ndarray:
    pos = np.ascontiguousarray(obj, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DimensionError(f"positions must be (n, 2), got {pos.shape}")
    if not np.isfinite(pos).all():
        raise ParameterError("positions contain non-finite coordinates")
    return pos


@dataclass(eq=False)
class RadiusGraph:
    """All ordered point pairs within ``radius``, plus their geometry."""

    num_nodes: int
    edges: np.ndarray      # (m, 2) int64, directed both ways, sorted
    edge_attr: np.ndarray  # (m, 3) float64: dx, dy, euclidean distance
    radius: float

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]


def build_radius_graph(points, radius: float) -> RadiusGraph:
    """Connect every ordered pair (i, j), i != j, with ||p_i - p_j|| <= radius."""
    pos = as_positions(points)
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    n = pos.shape[0]
    r2 = radius * radius

    cells: dict[tuple[int, int], list[int]] = {}
    keys = np.floor(pos / radius).astype(np.int64)
    for i in range(n):
        cells.setdefault((keys[i, 0], keys[i, 1]), []).append(i)

    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    for i in range(n):
        cx, cy = keys[i]
        cand: list[int] = []
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                cand.extend(cells.get((cx + ox, cy + oy), ()))
        cand_arr = np.array(cand, dtype=np.int64)
        diff = pos[cand_arr] - pos[i]
        near = cand_arr[(diff[:, 0] ** 2 + diff[:, 1] ** 2 <= r2) & (cand_arr != i)]
        near.sort()
        srcs.append(np.full(near.size, i, dtype=np.int64))
        dsts.append(near)

    if srcs:
        edges = np.stack([np.concatenate(srcs), np.concatenate(dsts)], axis=1)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
    return RadiusGraph(num_nodes=n, edges=edges,
                       edge_attr=edge_attributes(pos, edges), radius=float(radius))


def edge_attributes(points, edges) -> np.ndarray:
    """Per edge: (x_dst - x_src, y_dst - y_src, euclidean distance)."""
    pos = as_positions(points)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= pos.shape[0]):
        raise IndexError(f"edge endpoint out of range [0, {pos.shape[0]})")
    delta = pos[edges[:, 1]] - pos[edges[:, 0]]
    dist = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)
    return np.column_stack([delta, dist])


@dataclass(eq=False)
class KernelWeights:
    """Sparse weights w(dst, src) aligned with an edge list (+ self entries)."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray


def gaussian_kernel_weights(points, edges, bandwidth: float, *,
                            include_self: bool = True,
                            row_normalize: bool = True) -> KernelWeights:
    """Positional weights w(i, j) = exp(-d(i, j)^2 / (2 bandwidth^2)).

    Weights live on the given edge support; with ``include_self`` each
    node also gets w(i, i) = 1. With ``row_normalize`` every node's
    incoming weights are divided by their sum, which is guaranteed
    positive when the self weight is present.
    """
    pos = as_positions(points)
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = pos.shape[0]
    attr = edge_attributes(pos, edges)
    w = np.exp(-(attr[:, 2] ** 2) / (2.0 * bandwidth * bandwidth))
    src, dst = edges[:, 0], edges[:, 1]
    if include_self:
        loop = np.arange(n, dtype=np.int64)
        src = np.concatenate([src, loop])
        dst = np.concatenate([dst, loop])
        w = np.concatenate([w, np.ones(n)])
    if row_normalize:
        sums = np.bincount(dst, weights=w, minlength=n)
        if (sums <= 0.0).any():
            bad = int(np.nonzero(sums <= 0.0)[0][0])
            raise NormalizationError(
                f"node {bad} has zero total kernel weight; "
                "enable include_self or drop row_normalize")
        w = w / sums[dst]
    return KernelWeights(num_nodes=n, src=src, dst=dst, weights=w)


def apply_kernel(tape: ad.Tape, weights: KernelWeights, node_features: ad.Value) -> ad.Value:
    """out_i = sum_j w(i, j) x_j over the sparse support.

    Differentiable with respect to the node features; the weights are
    constants.
    """
    if node_features.data.shape[0] != weights.num_nodes:
        raise DimensionError(
            f"features have {node_features.data.shape[0]} rows for "
            f"{weights.num_nodes} nodes")
    return ad.coo_matmul(tape, node_features, weights.src, weights.dst,
                         weights.weights, weights.num_nodes)


def degree_stats(graph: RadiusGraph) -> dict[str, float]:
    """Median / mean / min / max in-degree, for radius diagnostics."""
    deg = np.bincount(graph.edges[:, 1], minlength=graph.num_nodes) \
        if graph.num_edges else np.zeros(graph.num_nodes, dtype=np.int64)
    return {
        "median": float(np.median(deg)) if graph.num_nodes else 0.0,
        "mean": float(deg.mean()) if graph.num_nodes else 0.0,
        "min": int(deg.min()) if graph.num_nodes else 0,
        "max": int(deg.max()) if graph.num_nodes else 0,
    }
