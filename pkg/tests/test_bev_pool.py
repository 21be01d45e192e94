import numpy as np
import pytest
from sklearn.base import clone

from dtstereo.bev_pool import (
    BENCH_FIELDS,
    OUT_OF_GRID,
    GridSpec,
    PoolInputs,
    VoxelPooling,
    bench_pool,
    compute_point_cells,
    points_to_cells,
    pool_naive,
    pool_v1,
    pool_v2,
    random_inputs,
)
from dtstereo.geometry import CameraIntrinsics, CameraModel, RigidTransform

GRID = GridSpec(4, 3, 0.5, (-1.0, 2.0))


def close(a, b, rtol=1e-5):
    """Per-cell relative agreement; near-empty cells compared against the output scale."""
    scale = max(np.abs(b).max(), 1e-30)
    return np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(b), 1e-3 * scale))


# --- binning ------------------------------------------------------------------


def test_point_at_origin_is_first_cell():
    assert points_to_cells(np.array([[-1.0, 2.0]]), GRID)[0] == 0


def test_floor_rule():
    xy = np.array([[-1.0 + 0.5 * 2.5, 2.0 + 0.5 * 0.5]])
    assert points_to_cells(xy, GRID)[0] == 2 * GRID.ny + 0


@pytest.mark.parametrize("xy", [[-1.01, 2.0], [1.0, 2.0], [0.0, 3.5], [0.0, 1.99], [np.nan, 2.5]])
def test_outside_is_sentinel(xy):
    assert points_to_cells(np.array([xy]), GRID)[0] == OUT_OF_GRID


def test_compute_point_cells_matches_manual_projection():
    K = CameraIntrinsics(10.0, 10.0, 2.0, 1.5, 4, 3)
    # camera looking along world +x from height 1
    R = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    cam = CameraModel(K, RigidTransform(R, [0.0, 0.0, 1.0]))
    grid = GridSpec(20, 20, 1.0, (0.0, -10.0))
    bins = np.array([2.5, 7.5])
    cells = compute_point_cells(cam, bins, grid, RigidTransform.identity())
    assert cells.shape == (12, 2)
    # centre column u=2: x = depth, y = 0
    p = 1 * 4 + 2
    assert cells[p, 0] == 2 * 20 + 10
    assert cells[p, 1] == 7 * 20 + 10


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(0, 3, 1.0)
    with pytest.raises(ValueError):
        GridSpec(3, 3, 0.0)


def test_pool_inputs_validation():
    with pytest.raises(ValueError):
        PoolInputs(np.ones((3, 2)) * 0.4, np.ones((2, 5)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PoolInputs(np.ones((3, 2)) * 0.4, np.ones((3, 5)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PoolInputs(np.ones((3, 2)) * 0.9, np.ones((3, 5)), np.zeros((3, 2)))


# --- kernels: hand examples -------------------------------------------------------


POOLS = [
    ("v1-det", lambda i, g: pool_v1(i, g, "deterministic").values),
    ("v1-par", lambda i, g: pool_v1(i, g, "parallel", chunk=2).values),
    ("v2-det", lambda i, g: pool_v2(i, g, "deterministic").values),
    ("v2-par", lambda i, g: pool_v2(i, g, "parallel").values),
    ("naive", pool_naive),
]


@pytest.mark.parametrize("name, pool", POOLS)
def test_single_point(name, pool):
    inputs = PoolInputs(np.array([[1.0]]), np.array([[1.0, 2.0, 3.0]]), np.array([[0]]))
    out = pool(inputs, GRID)
    assert np.array_equal(out[0, 0], [1.0, 2.0, 3.0])
    out[0, 0] = 0
    assert not out.any()


@pytest.mark.parametrize("name, pool", POOLS)
def test_zero_mass(name, pool):
    inputs = PoolInputs(np.array([[0.0]]), np.array([[1.0, 2.0, 3.0]]), np.array([[5]]))
    assert not pool(inputs, GRID).any()


@pytest.mark.parametrize("name, pool", POOLS)
def test_three_point_hand_oracle(name, pool):
    probs = np.array([[0.5, 0.25], [0.75, 0.0]])
    ctx = np.array([[2.0, -1.0], [4.0, 8.0]])
    cells = np.array([[7, 7], [7, OUT_OF_GRID]])
    out = pool(PoolInputs(probs, ctx, cells), GRID).reshape(-1, 2)
    # 0.5*(2,-1) + 0.25*(2,-1) + 0.75*(4,8)
    assert np.allclose(out[7], [4.5, 5.25])
    out[7] = 0
    assert not out.any()


@pytest.mark.parametrize("name, pool", POOLS)
def test_empty_input(name, pool):
    inputs = PoolInputs(np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64))
    out = pool(inputs, GRID)
    assert out.shape == (4, 3, 3) and not out.any()


def test_dropped_points_are_counted():
    inputs = random_inputs(200, 4, 3, GRID, seed=1, out_fraction=0.3)
    n_out = int((inputs.point_cells < 0).sum())
    assert pool_v1(inputs, GRID).stats["dropped"] == n_out
    assert pool_v2(inputs, GRID).stats["dropped"] == n_out


def test_bad_mode_and_cell_index():
    inputs = random_inputs(10, 2, 2, GRID)
    with pytest.raises(ValueError):
        pool_v2(inputs, GRID, mode="fast")
    inputs.point_cells[0, 0] = GRID.n_cells
    with pytest.raises(ValueError):
        pool_v1(inputs, GRID)


# --- kernels: properties ----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_variants_match_naive(seed):
    g = GridSpec(16, 16, 1.0)
    inputs = random_inputs(300, 8, 6, g, seed=seed)
    ref = pool_naive(inputs, g)
    for mode in ("deterministic", "parallel"):
        assert close(pool_v1(inputs, g, mode).values, ref)
        assert close(pool_v2(inputs, g, mode).values, ref)


def test_v1_chunking_does_not_matter():
    g = GridSpec(8, 8, 1.0)
    inputs = random_inputs(500, 6, 4, g, seed=3)
    ref = pool_v1(inputs, g, "parallel", chunk=2048).values
    for chunk in (1, 7, 64):
        assert close(pool_v1(inputs, g, "parallel", chunk=chunk).values, ref)


def test_deterministic_mode_is_permutation_invariant_bitwise():
    g = GridSpec(8, 8, 1.0)
    inputs = random_inputs(2000, 8, 5, g, seed=4)
    perm = np.random.default_rng(0).permutation(2000)
    shuffled = PoolInputs(inputs.depth_probs[perm], inputs.context[perm], inputs.point_cells[perm])
    for fn in (pool_v1, pool_v2):
        assert np.array_equal(fn(inputs, g).values, fn(shuffled, g).values)


def test_v1_and_v2_bitwise_equal_in_deterministic_mode():
    g = GridSpec(8, 8, 1.0)
    inputs = random_inputs(1000, 8, 5, g, seed=5)
    assert np.array_equal(pool_v1(inputs, g).values, pool_v2(inputs, g).values)


def test_parallel_matches_deterministic():
    g = GridSpec(32, 32, 1.0)
    inputs = random_inputs(5000, 16, 8, g, seed=6)
    for fn in (pool_v1, pool_v2):
        for n in (1, 2, 4):
            assert close(fn(inputs, g, "parallel", n_threads=n).values, fn(inputs, g).values)


def test_repeat_runs_bit_identical():
    g = GridSpec(16, 16, 1.0)
    inputs = random_inputs(3000, 8, 8, g, seed=7)
    for fn in (pool_v1, pool_v2):
        assert np.array_equal(fn(inputs, g).values, fn(inputs, g).values)


def test_mass_conservation():
    g = GridSpec(16, 16, 1.0)
    inputs = random_inputs(2000, 8, 6, g, seed=8)
    inside = inputs.point_cells >= 0
    mass = (inputs.depth_probs.astype(np.float64) * inside).sum(axis=1)
    expect = float(mass @ inputs.context.astype(np.float64).sum(axis=1))
    for fn in (pool_v1, pool_v2):
        total = fn(inputs, g).values.sum()
        assert total == pytest.approx(expect, rel=1e-5)


def test_linearity_exact_in_deterministic_mode():
    g = GridSpec(16, 16, 1.0)
    inputs = random_inputs(1000, 8, 4, g, seed=9)
    scaled = PoolInputs(inputs.depth_probs, inputs.context * np.float32(2.0), inputs.point_cells)
    for fn in (pool_v1, pool_v2):
        assert np.array_equal(fn(scaled, g).values, 2.0 * fn(inputs, g).values)


# --- io, estimator, bench ---------------------------------------------------------------


def test_pool_inputs_save_load(tmp_path):
    inputs = random_inputs(60, 4, 3, GRID, seed=2)
    paths = [tmp_path / n for n in ("d.bin", "c.bin", "cells.bin")]
    inputs.save(*paths, height=6)
    back = PoolInputs.load(*paths)
    assert np.array_equal(back.depth_probs, inputs.depth_probs)
    assert np.array_equal(back.context, inputs.context)
    assert np.array_equal(back.point_cells, inputs.point_cells)


def test_voxel_pooling_estimator():
    est = VoxelPooling(nx=4, ny=3, cell_size=0.5, origin=(-1.0, 2.0), variant="v1")
    assert clone(est).get_params() == est.get_params()
    inputs = random_inputs(50, 4, 3, GRID, seed=3)
    out = est.fit().transform(inputs)
    assert np.array_equal(out.values, pool_v1(inputs, GRID).values)
    with pytest.raises(ValueError):
        VoxelPooling(variant="v3").fit()


def test_bench_rows():
    rows = bench_pool([(100, 4, 4, GridSpec(8, 8, 1.0))], repeats=3, warmup=1)
    assert [r["variant"] for r in rows] == ["v1", "v2"]
    assert all(list(r) == BENCH_FIELDS for r in rows)
    assert all(r["p90_ns"] >= r["median_ns"] > 0 for r in rows)
    with pytest.raises(ValueError):
        bench_pool([])
