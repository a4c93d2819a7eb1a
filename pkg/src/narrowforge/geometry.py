"""Half-space geometry for the cube partition.

Everything here works with closed half-spaces {x : a.x + b >= 0}.  A
partition of the unit cube into small-diameter cells is produced by a
sequence of half-space cuts: cell i is what the i-th cut removes from the
region the first i-1 cuts kept.  Cell diameters are certified with rigorous
LP support-width bounds during construction and re-checked by sampling in
the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DegenerateSplit,
    DuplicatePoints,
    NarrowforgeError,
    NonConvergent,
    ResourceLimit,
    RetryExhausted,
)

__all__ = [
    "HalfSpace",
    "Polytope",
    "PartitionCell",
    "ball_cover_cut",
    "cut_partition",
    "estimate_volume",
    "separating_direction",
]

SEPARATION_ETA = 2.0 ** -20


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Closed half-space {x : a.x + b >= 0}."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        if not np.any(a != 0.0):
            raise NarrowforgeError("half-space normal must be nonzero")
        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.a + self.b

    def contains(self, X: np.ndarray) -> np.ndarray:
        return self.value(X) >= 0.0

    def flipped(self) -> "HalfSpace":
        return HalfSpace(a=-self.a, b=-self.b)


@dataclass(frozen=True, eq=False)
class Polytope:
    """Intersection of half-spaces, {x : A x + c >= 0} row-wise."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if A.shape[0] != c.shape[0]:
            raise NarrowforgeError("constraint matrix and offsets disagree")
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "c", _freeze(c))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def unit_cube(cls, n: int) -> "Polytope":
        A = np.vstack([np.eye(n), -np.eye(n)])
        c = np.concatenate([np.zeros(n), np.ones(n)])
        return cls(A=A, c=c)

    @classmethod
    def from_halfspaces(cls, halfspaces, dim: int | None = None) -> "Polytope":
        hs = list(halfspaces)
        if not hs:
            if dim is None:
                raise NarrowforgeError("empty half-space list needs a dimension")
            return cls(A=np.zeros((0, dim)), c=np.zeros(0))
        A = np.vstack([h.a for h in hs])
        c = np.array([h.b for h in hs])
        return cls(A=A, c=c)

    def halfspaces(self) -> list[HalfSpace]:
        return [HalfSpace(a=self.A[i], b=self.c[i]) for i in range(self.A.shape[0])]

    def with_halfspace(self, h: HalfSpace) -> "Polytope":
        return Polytope(A=np.vstack([self.A, h.a[None, :]]), c=np.append(self.c, h.b))

    def contains(self, X: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        vals = X @ self.A.T + self.c
        return np.all(vals >= -tol, axis=1)

    # ---- LP helpers -------------------------------------------------

    def _lp(self, objective: np.ndarray):
        res = linprog(
            objective,
            A_ub=-self.A,
            b_ub=self.c,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res

    def support_min(self, direction: np.ndarray):
        """(min value of direction.x over the polytope, argmin) or None."""
        res = self._lp(np.asarray(direction, dtype=np.float64))
        if res.status != 0:
            return None
        return float(res.fun), np.asarray(res.x)

    def is_empty(self) -> bool:
        res = self._lp(np.zeros(self.dim))
        return res.status == 2

    def bbox(self):
        """Axis-aligned bounding box, or None when empty/unbounded."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            down = self.support_min(e)
            up = self.support_min(-e)
            if down is None or up is None:
                return None
            lo[i] = down[0]
            hi[i] = -up[0]
        return lo, hi

    def chebyshev_center(self):
        """(center, radius) of the largest inscribed ball, or None."""
        norms = np.linalg.norm(self.A, axis=1)
        n = self.dim
        obj = np.zeros(n + 1)
        obj[-1] = -1.0
        A_ub = np.hstack([-self.A, norms[:, None]])
        res = linprog(
            obj,
            A_ub=A_ub,
            b_ub=self.c,
            bounds=[(None, None)] * n + [(0, None)],
            method="highs",
        )
        if res.status != 0:
            return None
        return np.asarray(res.x[:n]), float(res.x[n])

    def sample(self, n: int, rng: np.random.Generator, box=None, max_factor: int = 4000):
        """Uniform samples via rejection from the bounding box.

        Returns an (m, dim) array with m <= n; m can fall short when the
        region is very thin inside its box.
        """
        if box is None:
            box = self.bbox()
        if box is None:
            return np.zeros((0, self.dim))
        lo, hi = box
        span = np.maximum(hi - lo, 0.0)
        out = []
        got = 0
        chunk = max(4 * n, 1000)
        drawn = 0
        while got < n and drawn < max_factor * n:
            X = lo + span * rng.random((chunk, self.dim))
            drawn += chunk
            mask = self.contains(X)
            hits = X[mask]
            if hits.shape[0]:
                out.append(hits)
                got += hits.shape[0]
        if not out:
            return np.zeros((0, self.dim))
        return np.vstack(out)[:n]


@dataclass(frozen=True, eq=False)
class PartitionCell:
    """Cell i of a sequential cut: kept by cuts 1..i-1, removed by cut i."""

    index: int
    region: Polytope
    diameter_bound: float


# ---------------------------------------------------------------------------
# ball cover cut
# ---------------------------------------------------------------------------


def _circle_net(n_dirs: int) -> np.ndarray:
    ang = 2.0 * math.pi * np.arange(n_dirs) / n_dirs
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _latlong_grid(h: float) -> np.ndarray:
    thetas = np.linspace(0.0, math.pi, max(int(math.pi / h) + 2, 4))
    pts = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    for th in thetas[1:-1]:
        r = math.sin(th)
        m = max(int(2.0 * math.pi * r / h) + 1, 4)
        ph = 2.0 * math.pi * np.arange(m) / m
        pts.append(
            np.stack([r * np.cos(ph), r * np.sin(ph), np.full(m, math.cos(th))], axis=1)
        )
    return np.vstack([p if p.ndim == 2 else p[None, :] for p in pts])


def _sphere_net(psi: float, max_rounds: int = 14) -> np.ndarray:
    """Directions whose angular-psi caps cover the 2-sphere, certified
    against a fine reference grid with a triangle-inequality margin."""
    target = 0.8 * psi
    n = max(int((2.8 / target) ** 2), 16)
    h = min(0.05 * psi, 0.08)
    grid = _latlong_grid(h)
    for _ in range(max_rounds):
        net = _fibonacci_sphere(n)
        cos_gap = np.max(grid @ net.T, axis=1)
        worst = float(np.arccos(np.clip(np.min(cos_gap), -1.0, 1.0)))
        # grid covering radius <= 0.75 h, so full cover holds at
        # worst + 0.75 h; require that below psi
        if worst + 0.75 * h <= psi:
            return net
        n = int(n * 1.5) + 8
    raise NonConvergent("sphere cover net did not certify")


def ball_cover_cut(center: np.ndarray, diameter: float, delta: float):
    """Half-spaces that shave every boundary cap of a ball.

    Each removed cap {y in ball : u.(y-center) < -r} has chord diameter
    exactly delta; what survives all cuts sits in a concentric ball of
    diameter at most diameter - delta^2 / (4 diameter).
    """
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    n = center.shape[0]
    if delta <= 0.0:
        raise NarrowforgeError("cap size must be positive")
    if delta >= diameter:
        return []
    r = math.sqrt(diameter * diameter - delta * delta) / 2.0
    gamma = diameter / 2.0 - r
    rho1 = diameter / 2.0 - gamma / 2.0
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        psi = math.acos(min(r / rho1, 1.0))
        n_dirs = max(int(math.ceil(2.0 * math.pi / (1.9 * psi))) + 1, 4)
        dirs = _circle_net(n_dirs)
    elif n == 3:
        psi = math.acos(min(r / rho1, 1.0))
        dirs = _sphere_net(psi)
    else:
        raise NarrowforgeError("ball cover cut supports dimensions 1..3")
    out = []
    for d in dirs:
        u = -d
        out.append(HalfSpace(a=u, b=r - float(u @ center)))
    return out


# ---------------------------------------------------------------------------
# cut partition
# ---------------------------------------------------------------------------


class _VertexRegion:
    """Convex region tracked by its vertex set; cuts clip it in place.

    Vertex tracking makes support minima, centroids and exact diameters
    cheap, which keeps the partition loop free of LP calls.
    """

    def __init__(self, verts: np.ndarray):
        self.verts = np.asarray(verts, dtype=np.float64)
        self._edge_cache = None

    @property
    def dim(self) -> int:
        return self.verts.shape[1]

    def empty(self) -> bool:
        return self.verts.shape[0] == 0

    def diameter(self) -> float:
        return self.diameter_pair()[0]

    def diameter_pair(self):
        """(diameter, endpoint p, endpoint q) over the vertex set."""
        V = self.verts
        if V.shape[0] < 2:
            z = np.zeros(self.dim)
            return 0.0, z, z
        d2 = np.sum((V[:, None, :] - V[None, :, :]) ** 2, axis=-1)
        i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
        return float(math.sqrt(d2[i, j])), V[i], V[j]

    def centroid(self) -> np.ndarray:
        return self.verts.mean(axis=0)

    def argmin_vertex(self, direction: np.ndarray):
        vals = self.verts @ direction
        i = int(np.argmin(vals))
        return float(vals[i]), self.verts[i]

    def _edges(self):
        if self._edge_cache is not None:
            return self._edge_cache
        self._edge_cache = self._compute_edges()
        return self._edge_cache

    def _compute_edges(self):
        V = self.verts
        n = self.dim
        m = V.shape[0]
        if n == 1 or m < 3:
            return [(i, j) for i in range(m) for j in range(i + 1, m)]
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull = ConvexHull(V)
        except QhullError:
            try:
                hull = ConvexHull(V, qhull_options="QJ")
            except QhullError:
                return [(i, j) for i in range(m) for j in range(i + 1, m)]
        edges = set()
        if n == 2:
            order = hull.vertices
            for k in range(len(order)):
                i, j = int(order[k]), int(order[(k + 1) % len(order)])
                edges.add((min(i, j), max(i, j)))
        else:
            for simplex in hull.simplices:
                for p in range(3):
                    i, j = int(simplex[p]), int(simplex[(p + 1) % 3])
                    edges.add((min(i, j), max(i, j)))
        return list(edges)

    def pruned(self) -> "_VertexRegion":
        """Drop interior points accumulated by clipping."""
        V = self.verts
        if self.dim == 1 or V.shape[0] < self.dim + 2:
            return self
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull = ConvexHull(V)
        except QhullError:
            return self
        return _VertexRegion(V[np.sort(hull.vertices)])

    def clipped(self, a: np.ndarray, b: float) -> "_VertexRegion":
        """Region intersected with {x : a.x + b >= 0}."""
        V = self.verts
        if V.shape[0] == 0:
            return _VertexRegion(V)
        vals = V @ a + b
        scale = max(float(np.max(np.abs(vals))), 1.0)
        tol = 1e-12 * scale
        keep = vals >= -tol
        if np.all(keep):
            return _VertexRegion(V.copy())
        if not np.any(keep):
            return _VertexRegion(np.zeros((0, self.dim)))
        pts = [V[keep]]
        crossings = []
        for i, j in self._edges():
            vi, vj = vals[i], vals[j]
            if (vi > tol and vj < -tol) or (vi < -tol and vj > tol):
                t = vi / (vi - vj)
                crossings.append(V[i] + t * (V[j] - V[i]))
        if crossings:
            pts.append(np.asarray(crossings))
        return _VertexRegion(_dedupe_rows(np.vstack(pts)))


def _dedupe_rows(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if V.shape[0] < 2:
        return V
    key = np.round(V / tol).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    return V[np.sort(idx)]


def _cube_vertices(n: int) -> np.ndarray:
    grid = np.indices((2,) * n).reshape(n, -1).T
    return grid.astype(np.float64)


def _cut_partition_1d(delta: float, max_cells: int):
    step = 0.93 * delta
    m = int(math.ceil(1.0 / step))
    if m + 1 > max_cells:
        raise ResourceLimit(f"partition would need {m + 1} cells")
    cube = Polytope.unit_cube(1)
    halfspaces = []
    cells = []
    region = cube
    for i in range(m):
        t = min((i + 1) * step, 1.5) if i < m - 1 else 2.0
        h = HalfSpace(a=np.array([1.0]), b=-t)
        halfspaces.append(h)
        cell_poly = region.with_halfspace(h.flipped())
        cells.append(PartitionCell(index=i, region=cell_poly, diameter_bound=step))
        region = region.with_halfspace(h)
    return halfspaces, cells


def cut_partition(dx: int, delta: float, seed: int = 0, max_cells: int = 4096):
    """Sequential half-space cuts splitting [0,1]^dx into cells of diameter
    at most delta.

    Returns (halfspaces, cells).  Cell i is region_(i-1) minus half-space i;
    the final half-space empties the cube, so the cells partition it.
    """
    if dx < 1 or dx > 3:
        raise NarrowforgeError("partition supports dx in 1..3")
    if delta <= 0.0:
        raise NarrowforgeError("cell diameter bound must be positive")
    diag = math.sqrt(dx)
    margin = 0.93
    if dx == 1:
        if delta >= 1.0:
            h = HalfSpace(a=np.array([1.0]), b=-2.0)
            cell = PartitionCell(
                index=0, region=Polytope.unit_cube(1), diameter_bound=1.0
            )
            return [h], [cell]
        return _cut_partition_1d(delta, max_cells)
    rng = np.random.default_rng(seed)
    poly = Polytope.unit_cube(dx)
    region = _VertexRegion(_cube_vertices(dx))
    halfspaces: list[HalfSpace] = []
    cells: list[PartitionCell] = []
    target = margin * delta
    if delta >= diag:
        h = HalfSpace(a=np.eye(dx)[0], b=-2.0)
        return [h], [PartitionCell(index=0, region=poly, diameter_bound=diag)]
    stuck = 0
    while True:
        if len(cells) >= max_cells:
            raise ResourceLimit(f"partition exceeded {max_cells} cells")
        if region.empty() or region.diameter() <= target:
            break
        if len(cells) % 24 == 23:
            region = region.pruned()
        center = region.centroid()
        obj = rng.normal(size=dx)
        obj /= np.linalg.norm(obj)
        _, vertex = region.argmin_vertex(obj)
        # point the bite at a corner: centroid-to-vertex directions carve
        # fat simplices, axis-ish directions carve unbounded-diameter slabs
        u = center - vertex
        nu = np.linalg.norm(u)
        u = obj if nu < 1e-9 else u / nu
        mu, _ = region.argmin_vertex(u)
        top = float(u @ center)

        def bite_diam(t: float) -> float:
            return region.clipped(-u, mu + t).diameter()

        # geometric bracket then bisection on the largest admissible offset
        t_lo, t_hi = 0.0, None
        t = min(0.5 * target, max(top - mu, 1e-6))
        for _ in range(24):
            if bite_diam(t) <= target:
                t_lo = t
                break
            t_hi = t
            t *= 0.5
            if t < 1e-7 * target:
                break
        if t_lo > 0.0 and t_hi is None:
            t = t_lo * 1.6
            for _ in range(24):
                if bite_diam(t) <= target:
                    t_lo = t
                    t *= 1.6
                    if t > 4.0 * diag:
                        break
                else:
                    t_hi = t
                    break
        if t_lo == 0.0:
            # even a sliver violates the bound: direction unusable, retry
            # with a fresh objective
            stuck += 1
            if stuck > 50:
                raise RetryExhausted("no usable bite direction found")
            continue
        stuck = 0
        if t_hi is not None:
            for _ in range(12):
                mid = 0.5 * (t_lo + t_hi)
                if bite_diam(mid) <= target:
                    t_lo = mid
                else:
                    t_hi = mid
        t_star = t_lo
        h = HalfSpace(a=u, b=-(mu + t_star))
        cells.append(
            PartitionCell(
                index=len(cells),
                region=poly.with_halfspace(h.flipped()),
                diameter_bound=bite_diam(t_star),
            )
        )
        halfspaces.append(h)
        poly = poly.with_halfspace(h)
        region = region.clipped(u, -(mu + t_star))
    # terminal cut: empties the cube, the remaining region is the last cell
    h = HalfSpace(a=np.eye(dx)[0], b=-2.0)
    halfspaces.append(h)
    cells.append(
        PartitionCell(
            index=len(cells), region=poly, diameter_bound=region.diameter()
        )
    )
    return halfspaces, cells


# ---------------------------------------------------------------------------
# volume and separation
# ---------------------------------------------------------------------------


def estimate_volume(region, n_samples: int = 20000, seed: int = 0):
    """Monte-Carlo volume of a region relative to the unit cube.

    region: Polytope (its dim fixes the cube) or (dim, mask(X)) pair.
    Returns (estimate, half_width_95).
    """
    if isinstance(region, Polytope):
        dim = region.dim
        mask_fn = region.contains
    else:
        dim, mask_fn = region
    rng = np.random.default_rng(seed)
    X = rng.random((n_samples, dim))
    hits = int(np.count_nonzero(mask_fn(X)))
    p = hits / n_samples
    half = 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / n_samples)
    return p, half


def separating_direction(points: np.ndarray, seed: int = 0, max_tries: int = 256):
    """Unit vector a with pairwise distinct, well separated a.v_i.

    The gap demanded is 2^-20 times the coordinate spread of the points.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    k, n = P.shape
    if k >= 2:
        diffs = P[:, None, :] - P[None, :, :]
        iu = np.triu_indices(k, 1)
        gaps = np.abs(diffs[iu]).max(axis=1)
        scale = max(float((np.max(P, axis=0) - np.min(P, axis=0)).max()), 1e-12)
        if np.any(gaps <= 1e-12 * scale):
            raise DuplicatePoints("point set contains (near) duplicates")
    else:
        scale = 1.0
    rng = np.random.default_rng(seed)
    if k == 1:
        a = rng.normal(size=n)
        return a / np.linalg.norm(a)
    need = SEPARATION_ETA * scale
    for _ in range(max_tries):
        a = rng.normal(size=n)
        norm = np.linalg.norm(a)
        if norm < 1e-12:
            continue
        a = a / norm
        vals = P @ a
        order = np.sort(vals)
        if np.min(np.diff(order)) >= need:
            return a
    raise RetryExhausted("no separating direction met the gap requirement")
