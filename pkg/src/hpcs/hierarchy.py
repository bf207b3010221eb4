"""Multi-scale point hierarchy: recursive grid sampling, parent maps, exact kNN.

Scale 0 is the input point set; each coarser scale snaps the previous one to
a lattice of pitch epsilon and deduplicates. Cell keys are integer triples,
so encoder and decoder construct bit-identical hierarchies from the same
positions and epsilons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

RATIO_BAND = 0.2          # accept n_r/n_{r-1} within +-20% of the target
BISECT_BUDGET = 40


@dataclass
class ScaleLevel:
    """One hierarchy scale.

    ``parent_of_finer`` maps each point of the next finer scale to its cell
    representative here; it is None for scale 0.
    """

    r: int
    positions: np.ndarray                 # (n_r, 3) float64
    grid_size: float | None = None        # epsilon^r, None at r=0
    parent_of_finer: np.ndarray | None = None  # (n_{r-1},) int64

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass
class KnnIndex:
    """Exact k-nearest-neighbor structure for one scale."""

    indices: np.ndarray    # (n, k) int64, distance-sorted, ties by lower index
    offsets: np.ndarray    # (n, k, 3) neighbor - query
    k: int
    include_self: bool = False

    @property
    def flat_indices(self) -> np.ndarray:
        return self.indices.reshape(-1)

    @property
    def flat_offsets(self) -> np.ndarray:
        return self.offsets.reshape(-1, 3)


def grid_downsample(points: np.ndarray, epsilon: float) -> ScaleLevel:
    """Snap points to a lattice of pitch epsilon and deduplicate cells.

    Cells follow round-half-up snapping: cell = floor(p/eps + 0.5). Output
    positions are cell * eps in lexicographic cell order; the parent map
    assigns every input point to its cell representative.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ParameterError(f"points must be (n,3), got {points.shape}")
    if points.shape[0] < 1:
        raise ParameterError("need at least one point")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    cells = np.floor(points / epsilon + 0.5).astype(np.int64)
    uniq, parent = np.unique(cells, axis=0, return_inverse=True)
    return ScaleLevel(
        r=-1,  # caller assigns
        positions=uniq.astype(np.float64) * epsilon,
        grid_size=float(epsilon),
        parent_of_finer=parent.astype(np.int64).reshape(-1),
    )


def _ratio_for(points: np.ndarray, epsilon: float) -> float:
    cells = np.floor(points / epsilon + 0.5).astype(np.int64)
    n_coarse = np.unique(cells, axis=0).shape[0]
    return n_coarse / points.shape[0]


def select_epsilon(points: np.ndarray, target_ratio: float,
                   budget: int = BISECT_BUDGET) -> float:
    """Bisect (in log space) for an epsilon hitting the target count ratio.

    Stops as soon as the achieved ratio is within the +-20% band; otherwise
    exhausts the budget and returns the closest-achieved epsilon.
    """
    points = np.asarray(points, dtype=np.float64)
    span = points.max(axis=0) - points.min(axis=0)
    extent = float(np.max(span))
    if extent == 0.0:
        return 1.0  # all points coincide; any pitch collapses them
    lo, hi = extent * 1e-6, extent * 8.0
    best_eps, best_gap = hi, float("inf")
    lo_band = target_ratio * (1.0 - RATIO_BAND)
    hi_band = target_ratio * (1.0 + RATIO_BAND)
    for _ in range(budget):
        mid = float(np.sqrt(lo * hi))
        ratio = _ratio_for(points, mid)
        gap = abs(ratio - target_ratio)
        if gap < best_gap:
            best_gap, best_eps = gap, mid
        if lo_band <= ratio <= hi_band:
            return mid
        if ratio > target_ratio:
            lo = mid   # too many cells survived; coarsen
        else:
            hi = mid
    return best_eps


def build_hierarchy(positions: np.ndarray, num_scales: int,
                    target_ratio: float,
                    epsilons: list[float] | None = None) -> list[ScaleLevel]:
    """Build the multi-scale hierarchy.

    When ``epsilons`` is given (decode side), the transmitted pitches are
    used verbatim; otherwise each scale's pitch is found by bisection
    against ``target_ratio``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if num_scales < 1:
        raise ParameterError("need at least one scale")
    if epsilons is None and not (0.0 < target_ratio < 1.0):
        raise ParameterError(f"target ratio must be in (0,1), got {target_ratio}")
    levels = [ScaleLevel(r=0, positions=positions.copy())]
    for r in range(1, num_scales):
        prev = levels[-1]
        if prev.count <= 1:
            warnings.warn(
                f"degenerate hierarchy: scale {r - 1} has {prev.count} point(s); "
                f"clamping to {r} scale(s)")
            break
        if epsilons is not None:
            eps = float(epsilons[r - 1])
        else:
            eps = select_epsilon(prev.positions, target_ratio)
            eps = float(np.float32(eps))  # transmitted as f32; build with what we send
        level = grid_downsample(prev.positions, eps)
        level.r = r
        levels.append(level)
    return levels


def knn(scale: ScaleLevel, k: int, include_self: bool = False) -> KnnIndex:
    """Exact Euclidean kNN inside one scale.

    Neighbors are sorted by (distance, index); the query itself is excluded
    unless ``include_self``. A single-point scale falls back to
    self-inclusion so aggregation stays defined.
    """
    pts = scale.positions
    n = pts.shape[0]
    if k < 1:
        raise ParameterError("k must be >= 1")
    if n == 1 and not include_self:
        include_self = True
    avail = n if include_self else n - 1
    if k > avail:
        raise ParameterError(f"k={k} exceeds available neighbors ({avail})")
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    if not include_self:
        np.fill_diagonal(d2, np.inf)
    # lexsort: primary key distance, secondary key index for tie-breaks
    cols = np.broadcast_to(np.arange(n), (n, n))
    order = np.lexsort((cols, d2), axis=1)
    idx = order[:, :k].astype(np.int64)
    offs = pts[idx] - pts[:, None, :]
    return KnnIndex(indices=idx, offsets=offs, k=k, include_self=include_self)
