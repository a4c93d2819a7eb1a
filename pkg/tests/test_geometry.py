"""Half-space partition and cover geometry."""

import math

import numpy as np
import pytest

from narrowforge.errors import (
    DuplicatePoints,
    NarrowforgeError,
    ResourceLimit,
)
from narrowforge.geometry import (
    HalfSpace,
    Polytope,
    ball_cover_cut,
    cut_partition,
    estimate_volume,
    separating_direction,
)


def _sampled_diameter(points, n_pairs=10_000, seed=0):
    rng = np.random.default_rng(seed)
    m = points.shape[0]
    if m < 2:
        return 0.0
    i = rng.integers(0, m, n_pairs)
    j = rng.integers(0, m, n_pairs)
    return float(np.max(np.linalg.norm(points[i] - points[j], axis=1)))


def test_halfspace_sides():
    h = HalfSpace(a=np.array([1.0, -1.0]), b=0.25)
    X = np.array([[0.0, 0.0], [0.0, 0.5], [1.0, 0.0]])
    assert h.contains(X).tolist() == [True, False, True]
    g = h.flipped()
    assert g.contains(X).tolist() == [False, True, False]
    with pytest.raises(NarrowforgeError):
        HalfSpace(a=np.zeros(2), b=1.0)


def test_polytope_membership_and_bbox():
    cube = Polytope.unit_cube(2)
    assert cube.contains(np.array([0.5, 0.5]))[0]
    assert not cube.contains(np.array([1.5, 0.5]))[0]
    lo, hi = cube.bbox()
    assert np.allclose(lo, [0, 0]) and np.allclose(hi, [1, 1])
    center, radius = cube.chebyshev_center()
    assert np.allclose(center, [0.5, 0.5], atol=1e-8)
    assert radius == pytest.approx(0.5, abs=1e-8)
    empty = cube.with_halfspace(HalfSpace(a=np.array([1.0, 0.0]), b=-2.0))
    assert empty.is_empty()
    assert not cube.is_empty()


def test_polytope_sampling_stays_inside():
    tri = Polytope.unit_cube(2).with_halfspace(
        HalfSpace(a=np.array([-1.0, -1.0]), b=0.8)
    )
    rng = np.random.default_rng(3)
    S = tri.sample(500, rng)
    assert S.shape == (500, 2)
    assert np.all(tri.contains(S))


def test_partition_coarse_1d_is_single_cell():
    halfspaces, cells = cut_partition(1, 1.1)
    assert len(halfspaces) == 1
    assert len(cells) == 1
    # the lone cut keeps nothing of [0,1], so cell 1 is the whole interval
    h = halfspaces[0]
    assert not h.contains(np.array([[0.0], [0.5], [1.0]])).any()
    grid = np.linspace(0, 1, 101)[:, None]
    assert np.all(cells[0].region.contains(grid))


def test_partition_1d_fine():
    delta = 0.3
    halfspaces, cells = cut_partition(1, delta)
    grid = np.linspace(0, 1, 2001)[:, None]
    owners = np.stack([c.region.contains(grid) for c in cells])
    assert np.all(owners.any(axis=0))
    for c in cells:
        pts = grid[c.region.contains(grid)]
        assert pts.max() - pts.min() <= delta + 1e-12


@pytest.mark.parametrize("dx,delta", [(2, 0.75), (3, 0.6)])
def test_partition_cells_small_disjoint_covering(dx, delta):
    halfspaces, cells = cut_partition(dx, delta, seed=11)
    assert halfspaces[-1].b == -2.0
    rng = np.random.default_rng(5)
    # cover/disjointness: every cube point lands in exactly one cell
    X = rng.random((4000, dx))
    counts = np.zeros(len(X), dtype=int)
    for c in cells:
        counts += c.region.contains(X, tol=0.0).astype(int)
    assert np.all(counts >= 1)
    assert np.mean(counts == 1) > 0.995
    # diameters certified by sampled pairs
    vol_total = 0.0
    for c in cells:
        S = c.region.sample(400, rng)
        assert S.shape[0] > 0
        assert _sampled_diameter(S) <= delta + 1e-9
        assert c.diameter_bound <= delta + 1e-9
        vol_total += estimate_volume(c.region, 4000, seed=17)[0]
    assert vol_total == pytest.approx(1.0, abs=0.01)


def test_partition_respects_cell_budget():
    with pytest.raises(ResourceLimit):
        cut_partition(2, 0.3, seed=0, max_cells=10)


def test_partition_rejects_bad_arguments():
    with pytest.raises(NarrowforgeError):
        cut_partition(4, 0.5)
    with pytest.raises(NarrowforgeError):
        cut_partition(2, 0.0)


def test_ball_cover_cut_trivial_when_cap_exceeds_ball():
    assert ball_cover_cut(np.zeros(2), 1.0, 1.2) == []


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_ball_cover_cut_caps_small_and_residual_shrinks(dim):
    D, delta = 1.0, 0.5
    caps = ball_cover_cut(np.zeros(dim), D, delta)
    assert caps
    rng = np.random.default_rng(7)
    X = rng.normal(size=(100_000, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X *= (D / 2) * rng.random((len(X), 1)) ** (1.0 / dim)
    uncovered = np.ones(len(X), dtype=bool)
    for h in caps:
        removed = h.value(X) < 0.0
        uncovered &= ~removed
        P = X[removed][:2000]
        assert _sampled_diameter(P) <= delta + 1e-9
    resid = X[uncovered]
    assert resid.shape[0] > 0
    shrunk = D - delta * delta / (4.0 * D)
    assert np.max(np.linalg.norm(resid, axis=1)) <= shrunk / 2 + 1e-9


def test_ball_cover_cut_offcenter():
    center = np.array([0.3, -0.2])
    caps = ball_cover_cut(center, 0.8, 0.5)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(20_000, 2))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X = center + 0.4 * rng.random((len(X), 1)) ** 0.5 * X
    for h in caps:
        P = X[h.value(X) < 0.0][:2000]
        assert _sampled_diameter(P) <= 0.5 + 1e-9


def test_estimate_volume_basics():
    cube = Polytope.unit_cube(3)
    est, half = estimate_volume(cube, 2000, seed=1)
    assert est == 1.0 and half == 0.0
    halfcube = cube.with_halfspace(HalfSpace(a=np.array([-1.0, 0, 0]), b=0.5))
    est, half = estimate_volume(halfcube, 50_000, seed=2)
    assert abs(est - 0.5) <= 2 * half + 0.01


def test_separating_direction_gap_and_duplicates():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = separating_direction(pts, seed=4)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    vals = np.sort(pts @ a)
    assert np.min(np.diff(vals)) >= 2.0 ** -20
    with pytest.raises(DuplicatePoints):
        separating_direction(np.array([[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]]))


def test_separating_direction_many_points():
    rng = np.random.default_rng(12)
    pts = rng.random((40, 3))
    a = separating_direction(pts, seed=1)
    vals = np.sort(pts @ a)
    assert np.min(np.diff(vals)) > 0
