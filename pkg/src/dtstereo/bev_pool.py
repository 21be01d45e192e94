"""Voxel pooling of lifted image features into a BEV grid.

Two kernels with the same arithmetic contract:

* ``pool_v1`` materializes the point features ``depth_probs[p, b] * context[p, :]``
  in a float64 buffer (chunked over pixels) and then scatters that buffer.
  The product of two float32 values is exact in float64, so both kernels do
  the same arithmetic and differ only in memory traffic.
* ``pool_v2`` never builds the buffer; each point gathers its depth mass and
  context row and accumulates the product straight into the target cell.

Accumulation is float64 in both. ``mode="deterministic"`` visits points in a
canonical order derived from cell index and data values, so results are
bit-identical under any permutation of the input rows. ``mode="parallel"``
splits pixels across numba threads with private grids that are summed at the
end; results then agree with deterministic mode to rounding.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import CameraModel, RigidTransform, backproject
from .io import read_grid, write_grid

# the system TBB is often too old for numba; skip it unless the user chose a layer
if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

OUT_OF_GRID = -1
MODES = ("deterministic", "parallel")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    cell_size: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs nx, ny >= 1")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @classmethod
    def centered(cls, nx, ny, cell_size, center=(0.0, 0.0)) -> GridSpec:
        return cls(nx, ny, cell_size, (center[0] - nx * cell_size / 2, center[1] - ny * cell_size / 2))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny


@dataclass
class BevGrid:
    spec: GridSpec
    values: np.ndarray  # nx x ny x C
    stats: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class PoolInputs:
    depth_probs: np.ndarray  # P x B
    context: np.ndarray  # P x C
    point_cells: np.ndarray  # P x B flat cell ids, OUT_OF_GRID outside

    def __post_init__(self):
        self.depth_probs = np.ascontiguousarray(self.depth_probs, dtype=np.float32)
        self.context = np.ascontiguousarray(self.context, dtype=np.float32)
        self.point_cells = np.ascontiguousarray(self.point_cells, dtype=np.int64)
        P, B = self.depth_probs.shape
        if self.context.ndim != 2 or self.context.shape[0] != P:
            raise ValueError(f"context must be P x C with P={P}, got {self.context.shape}")
        if self.point_cells.shape != (P, B):
            raise ValueError(f"point_cells must be {(P, B)}, got {self.point_cells.shape}")
        if np.any(self.depth_probs.sum(axis=1, dtype=np.float64) > 1 + 1e-5):
            raise ValueError("depth_probs rows must sum to at most 1")

    @classmethod
    def load(cls, depth_path, context_path, cells_path) -> PoolInputs:
        d = read_grid(depth_path)
        c = read_grid(context_path)
        cells = read_grid(cells_path)
        P = d.shape[0] * d.shape[1]
        return cls(d.reshape(P, -1), c.reshape(P, -1), np.rint(cells.reshape(P, -1)).astype(np.int64))

    def save(self, depth_path, context_path, cells_path, height: int | None = None) -> None:
        P = self.depth_probs.shape[0]
        H = height or 1
        write_grid(depth_path, self.depth_probs.reshape(H, P // H, -1))
        write_grid(context_path, self.context.reshape(H, P // H, -1))
        write_grid(cells_path, self.point_cells.astype(np.float32).reshape(H, P // H, -1))


def points_to_cells(xy, spec: GridSpec) -> np.ndarray:
    """Flat cell id ``ix * ny + iy`` for each ``(..., >=2)`` point; sentinel outside."""
    xy = np.asarray(xy, dtype=np.float64)
    ix = np.floor((xy[..., 0] - spec.origin[0]) / spec.cell_size)
    iy = np.floor((xy[..., 1] - spec.origin[1]) / spec.cell_size)
    ok = np.isfinite(ix) & np.isfinite(iy) & (ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
    ix = np.where(ok, ix, 0).astype(np.int64)
    iy = np.where(ok, iy, 0).astype(np.int64)
    return np.where(ok, ix * spec.ny + iy, OUT_OF_GRID)


def lift_points(cam: CameraModel, bins, target_pose: RigidTransform) -> np.ndarray:
    """Pseudo-points for every (pixel, bin) in the target frame, shape ``P x B x 3``."""
    K = cam.intrinsics
    v, u = np.meshgrid(np.arange(K.height, dtype=float), np.arange(K.width, dtype=float), indexing="ij")
    bins = np.asarray(bins, dtype=np.float64)
    pts = backproject(u.reshape(-1, 1), v.reshape(-1, 1), bins[None, :], K)
    to_target = target_pose.inverse() @ cam.pose
    return to_target.apply(pts)


def compute_point_cells(cam: CameraModel, bins, grid: GridSpec, target_pose: RigidTransform) -> np.ndarray:
    return points_to_cells(lift_points(cam, bins, target_pose), grid)


# kernels -------------------------------------------------------------------


@numba.njit(cache=True)
def _v2_ordered(probs, ctx, pix, bins_, cells, out):
    C = ctx.shape[1]
    for k in range(pix.shape[0]):
        p = pix[k]
        b = bins_[k]
        w = np.float64(probs[p, b])
        cell = cells[k]
        for c in range(C):
            out[cell, c] += w * np.float64(ctx[p, c])


@numba.njit(cache=True)
def _v2_block(probs, ctx, cells, start, stop, out):
    B = probs.shape[1]
    C = ctx.shape[1]
    for p in range(start, stop):
        for b in range(B):
            cell = cells[p, b]
            if cell < 0:
                continue
            w = np.float64(probs[p, b])
            if w == 0.0:
                continue
            for c in range(C):
                out[cell, c] += w * np.float64(ctx[p, c])


@numba.njit(parallel=True, cache=True)
def _v2_parallel(probs, ctx, cells, n_cells, n_workers):
    P = probs.shape[0]
    C = ctx.shape[1]
    private = np.zeros((n_workers, n_cells, C))
    step = (P + n_workers - 1) // n_workers
    for t in numba.prange(n_workers):
        start = t * step
        stop = min(P, start + step)
        _v2_block(probs, ctx, cells, start, stop, private[t])
    return private.sum(axis=0)


@numba.njit(cache=True)
def _materialize(probs, ctx, start, stop, buf):
    B = probs.shape[1]
    C = ctx.shape[1]
    for p in range(start, stop):
        for b in range(B):
            w = probs[p, b]
            for c in range(C):
                buf[p - start, b, c] = np.float64(w) * np.float64(ctx[p, c])


@numba.njit(cache=True)
def _scatter_block(buf, cells, start, stop, out):
    B = buf.shape[1]
    C = buf.shape[2]
    for p in range(start, stop):
        for b in range(B):
            cell = cells[p, b]
            if cell < 0:
                continue
            for c in range(C):
                out[cell, c] += buf[p - start, b, c]


@numba.njit(parallel=True, cache=True)
def _v1_parallel(probs, ctx, cells, n_cells, n_workers, chunk):
    P, B = probs.shape
    C = ctx.shape[1]
    private = np.zeros((n_workers, n_cells, C))
    step = (P + n_workers - 1) // n_workers
    for t in numba.prange(n_workers):
        lo = t * step
        hi = min(P, lo + step)
        buf = np.empty((chunk, B, C))
        for start in range(lo, hi, chunk):
            stop = min(hi, start + chunk)
            _materialize(probs, ctx, start, stop, buf)
            _scatter_block(buf, cells, start, stop, private[t])
    return private.sum(axis=0)


@numba.njit(cache=True)
def _v1_ordered(buf, pix_local, bins_, cells, out):
    C = buf.shape[2]
    for k in range(pix_local.shape[0]):
        p = pix_local[k]
        b = bins_[k]
        cell = cells[k]
        for c in range(C):
            out[cell, c] += buf[p, b, c]


def canonical_order(inputs: PoolInputs):
    """In-grid points sorted by (cell, mass, context row rank).

    Points sharing a key contribute identical values, so the accumulation order
    does not depend on how the input rows were permuted.
    """
    cells = inputs.point_cells
    P, B = cells.shape
    ctx = inputs.context
    # rank pixels lexicographically by their context rows
    row_rank = np.empty(P, dtype=np.int64)
    if P:
        order = np.lexsort(ctx.T[::-1]) if ctx.shape[1] else np.arange(P)
        row_rank[order] = np.arange(P)
    pix, bins_ = np.nonzero(cells >= 0)
    flat_cells = cells[pix, bins_]
    mass = inputs.depth_probs[pix, bins_]
    idx = np.lexsort((row_rank[pix], mass, flat_cells))
    return pix[idx], bins_[idx], flat_cells[idx]


def _check(inputs: PoolInputs, grid: GridSpec, mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cells = inputs.point_cells
    if cells.size and cells.max() >= grid.n_cells:
        raise ValueError("point_cells index beyond the grid")
    return int(np.count_nonzero(cells < 0))


def _workers(n_threads):
    return max(1, int(n_threads or numba.get_num_threads()))


def pool_v1(inputs: PoolInputs, grid: GridSpec, mode: str = "deterministic", chunk: int = 2048,
            n_threads: int | None = None) -> BevGrid:
    """Materialize point features (per pixel chunk), then scatter-add them."""
    dropped = _check(inputs, grid, mode)
    P, B = inputs.depth_probs.shape
    C = inputs.context.shape[1]
    if mode == "parallel":
        out = _v1_parallel(inputs.depth_probs, inputs.context, inputs.point_cells, grid.n_cells,
                           _workers(n_threads), max(1, min(chunk, P)))
    else:
        out = np.zeros((grid.n_cells, C))
        pix, bins_, cells = canonical_order(inputs)
        # walk the canonical order, materializing the pixels it touches chunk by chunk
        buf = np.empty((P, B, C)) if P * B * C <= 1 << 25 else None
        if buf is not None:
            _materialize(inputs.depth_probs, inputs.context, 0, P, buf)
            _v1_ordered(buf, pix, bins_, cells, out)
        else:
            step = max(1, (1 << 24) // max(B * C, 1))
            for start in range(0, pix.size, step):
                sl = slice(start, start + step)
                uniq, local = np.unique(pix[sl], return_inverse=True)
                sub = np.empty((uniq.size, B, C))
                _materialize(inputs.depth_probs[uniq], inputs.context[uniq], 0, uniq.size, sub)
                _v1_ordered(sub, local.astype(np.int64), bins_[sl], cells[sl], out)
    return BevGrid(grid, out.reshape(grid.nx, grid.ny, C), {"dropped": dropped, "mode": mode, "variant": "v1"})


def pool_v2(inputs: PoolInputs, grid: GridSpec, mode: str = "deterministic",
            n_threads: int | None = None) -> BevGrid:
    """Fused gather-multiply-accumulate; no P x B x C intermediate."""
    dropped = _check(inputs, grid, mode)
    C = inputs.context.shape[1]
    if mode == "parallel":
        out = _v2_parallel(inputs.depth_probs, inputs.context, inputs.point_cells, grid.n_cells, _workers(n_threads))
    else:
        out = np.zeros((grid.n_cells, C))
        pix, bins_, cells = canonical_order(inputs)
        _v2_ordered(inputs.depth_probs, inputs.context, pix, bins_, cells, out)
    return BevGrid(grid, out.reshape(grid.nx, grid.ny, C), {"dropped": dropped, "mode": mode, "variant": "v2"})


def pool_naive(inputs: PoolInputs, grid: GridSpec) -> np.ndarray:
    """Plain serial triple loop, the reference the kernels are checked against."""
    P, B = inputs.depth_probs.shape
    C = inputs.context.shape[1]
    out = np.zeros((grid.n_cells, C))
    for p in range(P):
        for b in range(B):
            cell = int(inputs.point_cells[p, b])
            if cell < 0:
                continue
            w = float(inputs.depth_probs[p, b])
            for c in range(C):
                out[cell, c] += w * float(inputs.context[p, c])
    return out.reshape(grid.nx, grid.ny, C)


class VoxelPooling(BaseEstimator, TransformerMixin):
    """Transformer wrapper: ``transform(PoolInputs) -> BevGrid``."""

    def __init__(self, nx=64, ny=64, cell_size=1.0, origin=(0.0, 0.0), variant="v2", mode="deterministic"):
        self.nx = nx
        self.ny = ny
        self.cell_size = cell_size
        self.origin = origin
        self.variant = variant
        self.mode = mode

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.cell_size, tuple(self.origin))

    def fit(self, X=None, y=None):
        if self.variant not in ("v1", "v2"):
            raise ValueError("variant must be 'v1' or 'v2'")
        self.grid_ = self.grid
        return self

    def transform(self, X: PoolInputs) -> BevGrid:
        fn = pool_v1 if self.variant == "v1" else pool_v2
        return fn(X, self.grid, self.mode)


# benchmark ---------------------------------------------------------------

BENCH_FIELDS = ["variant", "P", "B", "C", "nx", "ny", "median_ns", "p90_ns"]


def random_inputs(P, B, C, grid: GridSpec, seed=0, out_fraction=0.05) -> PoolInputs:
    rng = np.random.default_rng(seed)
    probs = rng.random((P, B), dtype=np.float32)
    probs /= probs.sum(axis=1, keepdims=True, dtype=np.float32) * np.float32(1.0001)
    ctx = rng.standard_normal((P, C), dtype=np.float32)
    cells = rng.integers(0, grid.n_cells, size=(P, B), dtype=np.int64)
    if out_fraction > 0:
        cells[rng.random((P, B)) < out_fraction] = OUT_OF_GRID
    return PoolInputs(probs, ctx, cells)


def _time(fn, repeats, warmup):
    for _ in range(warmup):
        fn()
    times = np.empty(repeats, dtype=np.int64)
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times[i] = time.perf_counter_ns() - t0
    return int(np.median(times)), int(np.percentile(times, 90))


def bench_pool(sizes, repeats: int = 30, warmup: int = 2, mode: str = "parallel", seed: int = 0,
               n_threads: int | None = None):
    """Warm up, then time ``repeats`` runs of each variant per size.

    ``sizes`` holds ``(P, B, C, GridSpec)`` tuples. Returns dict rows keyed by
    ``BENCH_FIELDS``.
    """
    if not sizes:
        raise ValueError("sizes must be nonempty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for P, B, C, grid in sizes:
        inputs = random_inputs(P, B, C, grid, seed)
        for name, fn in (("v1", pool_v1), ("v2", pool_v2)):
            med, p90 = _time(lambda: fn(inputs, grid, mode, n_threads=n_threads), repeats, warmup)
            rows.append({"variant": name, "P": P, "B": B, "C": C, "nx": grid.nx, "ny": grid.ny,
                         "median_ns": med, "p90_ns": p90})
    return rows


def save_grid(path, grid: BevGrid) -> None:
    write_grid(Path(path), grid.values.astype(np.float32))
