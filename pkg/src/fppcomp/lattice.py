"""Geometry of Z^d: boxes, norms, cylinders, shells and sphere coverings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np

BOUNDARY_TOL = 1e-9

Site = tuple[int, ...]


def neighbors(x: Sequence[int]) -> list[Site]:
    """The 2d nearest neighbours of ``x``: +e_k then -e_k for each axis k."""
    x = tuple(int(c) for c in x)
    out = []
    for k in range(len(x)):
        for step in (1, -1):
            y = list(x)
            y[k] += step
            out.append(tuple(y))
    return out


def canonical_edge(a: Sequence[int], b: Sequence[int]) -> tuple[Site, Site]:
    a, b = tuple(int(c) for c in a), tuple(int(c) for c in b)
    if sum(abs(p - q) for p, q in zip(a, b)) != 1:
        raise ValueError(f"{a} and {b} are not nearest neighbours")
    return (a, b) if a < b else (b, a)


def edge_axis(a: Site, b: Site) -> int:
    for k, (p, q) in enumerate(zip(a, b)):
        if p != q:
            return k
    raise ValueError("degenerate edge")


class Box:
    """Finite rectangular window ``lo <= x <= hi`` of Z^d.

    Sites are addressed by a flat index into a grid padded by one layer on
    every side, so that ``i +/- stride[k]`` is always a valid index and the
    padding layer acts as a wall.  Flat order is lexicographic order.
    """

    def __init__(self, lo: Sequence[int], hi: Sequence[int]):
        lo = tuple(int(v) for v in lo)
        hi = tuple(int(v) for v in hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must be non-empty and of equal length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("empty box")
        self.lo, self.hi = lo, hi
        self.d = len(lo)
        self.shape = tuple(h - l + 1 for l, h in zip(lo, hi))
        self.padded_shape = tuple(s + 2 for s in self.shape)
        strides = []
        acc = 1
        for s in reversed(self.padded_shape):
            strides.append(acc)
            acc *= s
        self.strides = tuple(reversed(strides))
        self.padded_size = acc

    @classmethod
    def centered(cls, radius: int, d: int) -> "Box":
        """The box {x : ||x||_inf <= radius}."""
        if radius < 0:
            raise ValueError("radius must be non-negative")
        return cls((-radius,) * d, (radius,) * d)

    @property
    def radius(self) -> int | None:
        if all(l == -h for l, h in zip(self.lo, self.hi)) and len(set(self.hi)) == 1:
            return self.hi[0]
        return None

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def __eq__(self, other):
        return isinstance(other, Box) and self.lo == other.lo and self.hi == other.hi

    def __hash__(self):
        return hash((self.lo, self.hi))

    def __repr__(self):
        return f"Box(lo={self.lo}, hi={self.hi})"

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(l <= c <= h for c, l, h in zip(x, self.lo, self.hi))

    def index(self, x: Sequence[int]) -> int:
        if not self.contains(x):
            raise ValueError(f"{tuple(x)} outside {self!r}")
        return sum((c - l + 1) * s for c, l, s in zip(x, self.lo, self.strides))

    def site(self, i: int) -> Site:
        out = []
        for s, l in zip(self.strides, self.lo):
            q, i = divmod(i, s)
            out.append(q - 1 + l)
        return tuple(out)

    def on_frame(self, x: Sequence[int]) -> bool:
        return any(c == l or c == h for c, l, h in zip(x, self.lo, self.hi))

    def inscribed_radius(self, center: Sequence[int] | None = None) -> int:
        """Largest r with the l_inf ball of radius r around center inside the box."""
        center = center or (0,) * self.d
        return min(min(c - l, h - c) for c, l, h in zip(center, self.lo, self.hi))

    @cached_property
    def inside(self) -> np.ndarray:
        """Flat boolean mask over padded indices: True on genuine box sites."""
        m = np.zeros(self.padded_shape, dtype=bool)
        m[(slice(1, -1),) * self.d] = True
        return m.ravel()

    @cached_property
    def frame(self) -> np.ndarray:
        m = np.zeros(self.padded_shape, dtype=bool)
        inner = (slice(1, -1),) * self.d
        sub = np.zeros(self.shape, dtype=bool)
        for k in range(self.d):
            idx = [slice(None)] * self.d
            idx[k] = 0
            sub[tuple(idx)] = True
            idx[k] = -1
            sub[tuple(idx)] = True
        m[inner] = sub
        return m.ravel()

    @cached_property
    def padded_coords(self) -> np.ndarray:
        """(padded_size, d) integer coordinates of every padded index."""
        axes = [np.arange(l - 1, h + 2) for l, h in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def site_indices(self) -> np.ndarray:
        """Padded flat indices of the genuine sites, in lexicographic order."""
        return np.flatnonzero(self.inside)

    def to_grid(self, flat: np.ndarray) -> np.ndarray:
        """Reshape a padded flat array to the unpadded box grid."""
        return flat.reshape(self.padded_shape)[(slice(1, -1),) * self.d]

    def sites(self) -> Iterable[Site]:
        return product(*[range(l, h + 1) for l, h in zip(self.lo, self.hi)])


# ---------------------------------------------------------------------------
# Norms


@dataclass(frozen=True)
class Norm:
    """A norm on R^d, evaluated along the last axis.

    ``lower``/``upper`` bound the norm on the Euclidean unit sphere of R^d
    and are used by the covering construction.
    """

    name: str
    p: float

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if self.p == 2:
            r = np.sqrt(np.sum(x * x, axis=-1))
        elif self.p == 1:
            r = np.sum(np.abs(x), axis=-1)
        else:
            r = np.max(np.abs(x), axis=-1)
        return float(r) if np.ndim(r) == 0 else r

    def bounds(self, d: int) -> tuple[float, float]:
        if self.p == 2:
            return 1.0, 1.0
        if self.p == 1:
            return 1.0, math.sqrt(d)
        return 1.0 / math.sqrt(d), 1.0


L1 = Norm("l1", 1)
L2 = Norm("l2", 2)
LINF = Norm("linf", math.inf)
NORMS = {"l1": L1, "l2": L2, "linf": LINF}


def direction_gap(x, y, norm=L2) -> float:
    """|x/|x| - y/|y|| in the given norm."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = norm(x), norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("direction of the zero vector is undefined")
    return float(norm(x / nx - y / ny))


# ---------------------------------------------------------------------------
# Cylinders


@dataclass(frozen=True)
class CylinderSpec:
    """Cylinder of radius ``radius`` around the ray/line through ``base`` along ``direction``.

    ``height=inf`` with ``two_sided=False`` is the half-infinite cylinder,
    ``two_sided=True`` drops the axial constraints entirely.
    """

    base: tuple[float, ...]
    direction: tuple[float, ...]
    radius: float
    height: float = math.inf
    two_sided: bool = False

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=float)
        if len(self.base) != len(u):
            raise ValueError("base and direction dimensions differ")
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("direction must be a Euclidean unit vector")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if not self.height > 0:
            raise ValueError("height must be > 0")

    @classmethod
    def half(cls, direction, radius, base=None) -> "CylinderSpec":
        d = len(direction)
        return cls(tuple(base or (0.0,) * d), tuple(direction), float(radius))

    @classmethod
    def full(cls, direction, radius) -> "CylinderSpec":
        d = len(direction)
        return cls((0.0,) * d, tuple(direction), float(radius), two_sided=True)


def _axial_and_perp(points: np.ndarray, c: CylinderSpec) -> tuple[np.ndarray, np.ndarray]:
    v = points - np.asarray(c.base, dtype=float)
    u = np.asarray(c.direction, dtype=float)
    a = v @ u
    perp = np.linalg.norm(v - a[..., None] * u, axis=-1)
    return a, perp


def cylinder_mask(points, c: CylinderSpec, tol: float = BOUNDARY_TOL) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, perp = _axial_and_perp(pts, c)
    ok = perp <= c.radius + tol
    if not c.two_sided:
        ok &= a >= -tol
        if math.isfinite(c.height):
            ok &= a <= c.height + tol
    return ok


def cylinder_contains(y, c: CylinderSpec) -> bool:
    return bool(cylinder_mask(y, c)[0])


# ---------------------------------------------------------------------------
# Shells


@dataclass(frozen=True)
class ShellSpec:
    """Directions ``A`` (unit vectors of ``norm``) enlarged by ``phi``, radii in [r, r_outer]."""

    directions: tuple[tuple[float, ...], ...]
    r: float
    r_outer: float
    phi: float = 0.0
    norm: Norm = L2

    def __post_init__(self):
        if not 0 < self.r < self.r_outer:
            raise ValueError("need 0 < r < r_outer")
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if not self.directions:
            raise ValueError("empty direction set")
        norms = self.norm(np.asarray(self.directions, dtype=float))
        if np.any(np.abs(np.atleast_1d(norms) - 1.0) > 1e-9):
            raise ValueError("directions must be unit vectors of the shell norm")

    def enlarge(self, phi: float) -> "ShellSpec":
        """The shell with direction set A + phi (enlargements add up)."""
        return ShellSpec(self.directions, self.r, self.r_outer, self.phi + phi, self.norm)

    def contains(self, x) -> np.ndarray | bool:
        pts = np.asarray(x, dtype=float)
        scalar = pts.ndim == 1
        pts = np.atleast_2d(pts)
        rad = np.atleast_1d(self.norm(pts))
        ok = (rad >= self.r - BOUNDARY_TOL) & (rad <= self.r_outer + BOUNDARY_TOL)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = pts / rad[:, None]
        dirs = np.asarray(self.directions, dtype=float)
        gaps = self.norm(unit[:, None, :] - dirs[None, :, :])
        ok &= np.atleast_2d(gaps).min(axis=1) <= self.phi + BOUNDARY_TOL
        return bool(ok[0]) if scalar else ok

    def sites(self) -> list[Site]:
        d = len(self.directions[0])
        lo, up = self.norm.bounds(d)
        # ||x||_2 <= r_outer / lower
        reach = int(math.ceil(self.r_outer / lo)) + 1
        axis = np.arange(-reach, reach + 1)
        pts = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
        keep = self.contains(pts)
        return [tuple(int(c) for c in p) for p in pts[keep]]


# ---------------------------------------------------------------------------
# Sphere coverings


@dataclass
class SphereCover:
    centers: np.ndarray
    epsilon: float
    norm: Norm
    constant: float
    method: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.centers)

    def __iter__(self):
        return iter(self.centers)


def _euclidean_cover(delta: float, d: int) -> tuple[np.ndarray, str]:
    if d == 1:
        return np.array([[1.0], [-1.0]]), "points"
    if d == 2:
        # spacing 2pi/n leaves every point within chord 2 sin(pi/(2n)) of a center
        n = max(2, math.ceil(math.pi / (2 * math.asin(min(delta, 2.0) / 2))))
        ang = 2 * math.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), "equiangular"
    # grid of spacing g on each face of [-1,1]^d, then radial projection:
    # |proj(p) - v| <= 2 |p - v/|v|_inf|_2 <= g sqrt(d-1)
    g = delta / math.sqrt(d - 1)
    m = max(1, math.ceil(2.0 / g))
    ticks = np.linspace(-1.0, 1.0, m + 1)
    pts = []
    for k in range(d):
        for sgn in (1.0, -1.0):
            grids = np.meshgrid(*([ticks] * (d - 1)), indexing="ij")
            face = np.stack([gr.ravel() for gr in grids], axis=1)
            full = np.insert(face, k, sgn, axis=1)
            pts.append(full)
    pts = np.unique(np.round(np.concatenate(pts), 12), axis=0)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True), "cube-grid"


def sphere_cover(epsilon: float, norm: Norm = L2, d: int = 2) -> SphereCover:
    """Unit vectors of ``norm`` whose epsilon-balls cover the unit sphere.

    The constant reported in ``SphereCover.constant`` is the ratio
    count / (1 + 1/epsilon)^(d-1) achieved by this construction.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if d == 1:
        centers = np.array([[1.0], [-1.0]])
        return SphereCover(centers, epsilon, norm, 2.0, "points")
    lower, upper = norm.bounds(d)
    delta = epsilon if norm.p == 2 else epsilon * lower / (2 * upper)
    dirs, method = _euclidean_cover(delta, d)
    centers = dirs / np.atleast_1d(norm(dirs))[:, None]
    const = len(centers) / (1 + 1 / epsilon) ** (d - 1)
    return SphereCover(centers, epsilon, norm, const, method, {"euclidean_radius": delta})


def cover_radius(cover: SphereCover, samples: np.ndarray) -> float:
    """Largest distance (in the cover's norm) from a sample to its nearest center."""
    from scipy.spatial import cKDTree

    tree = cKDTree(cover.centers)
    dist, _ = tree.query(samples, k=1, p=cover.norm.p)
    return float(np.max(dist))


def random_unit_vectors(n: int, d: int, rng: np.random.Generator, norm: Norm = L2) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.atleast_1d(norm(g))[:, None]
