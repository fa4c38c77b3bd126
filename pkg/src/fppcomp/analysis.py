"""Observables of a competition snapshot: shadows, shade radius, densities,
sphere traces, fluctuation gaps and power-law fits.

"Infinity" is always the box frame.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, stats
from scipy.spatial import ConvexHull

from .competition import CompetitionTrace
from .lattice import Box, L2, Norm, sphere_cover

SCHEMA_VERSION = 1


class UnanswerableQuery(ValueError):
    """The box is too small to decide the query."""


@dataclass(frozen=True)
class Snapshot:
    """eta^1(t) and eta^2(t) as box-grid masks."""

    box: Box
    eta1: np.ndarray
    eta2: np.ndarray
    t: float = math.nan

    def __post_init__(self):
        if self.eta1.shape != self.box.shape or self.eta2.shape != self.box.shape:
            raise ValueError("mask shape does not match the box")
        if np.any(self.eta1 & self.eta2):
            raise ValueError("a site cannot hold both species")

    @classmethod
    def of(cls, trace: CompetitionTrace, t: float) -> "Snapshot":
        if t < 0:
            raise ValueError("t must be >= 0")
        m1, m2 = trace.masks(t)
        return cls(trace.box, m1, m2, float(t))

    @classmethod
    def from_sites(cls, box: Box, eta1, eta2, t: float = math.nan) -> "Snapshot":
        return cls(box, _site_mask(box, eta1), _site_mask(box, eta2), t)

    @property
    def occupied(self) -> np.ndarray:
        return self.eta1 | self.eta2

    def touches_frame(self) -> bool:
        return bool(np.any(self.occupied & self.box.to_grid(self.box.frame)))


def _site_mask(box: Box, sites) -> np.ndarray:
    m = np.zeros(box.shape, dtype=bool)
    sites = list(sites)
    if sites:
        idx = np.asarray(sites, dtype=np.int64) - np.asarray(box.lo)
        m[tuple(idx.T)] = True
    return m


def grid_coords(box: Box) -> np.ndarray:
    """(..., d) array of the site coordinates of the box grid."""
    axes = [np.arange(l, h + 1) for l, h in zip(box.lo, box.hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def border(occupied: np.ndarray) -> np.ndarray:
    """Occupied sites with an unoccupied neighbour (outside the box counts as empty)."""
    padded = np.pad(occupied, 1, constant_values=False)
    interior = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(occupied.ndim, 1))
    return occupied & ~interior[(slice(1, -1),) * occupied.ndim]


def blocking_set(snap: Snapshot) -> np.ndarray:
    return border(snap.occupied) & snap.eta2


# ---------------------------------------------------------------------------
# Shadows


@dataclass(frozen=True)
class ShadowQuery:
    direction: tuple[float, ...]
    t: float
    R: float
    box: Box

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if not self.R > 0:
            raise ValueError("R must be > 0")
        if self.t < 0:
            raise ValueError("t must be >= 0")


class _Cylinders:
    """Half-cylinders {<y, u> >= 0, |y - <y, u> u| <= R} over one box."""

    TOL = 1e-9

    def __init__(self, box: Box):
        self.box = box
        self.coords = grid_coords(box).astype(float)
        frame = box.to_grid(box.frame)
        self.frame = frame

    def axes(self, u: np.ndarray):
        along = self.coords @ u
        perp = np.linalg.norm(self.coords - along[..., None] * u, axis=-1)
        return along >= -self.TOL, perp

    def mask(self, u: np.ndarray, R: float, axes=None) -> np.ndarray:
        ahead, perp = axes if axes is not None else self.axes(u)
        return ahead & (perp <= R + self.TOL)


def _shadow_on(cyl: np.ndarray, frame: np.ndarray, block: np.ndarray, snap: Snapshot) -> bool:
    exits = cyl & frame
    if not exits.any():
        raise UnanswerableQuery("cylinder does not reach the box frame")
    if np.any(exits & snap.occupied):
        raise UnanswerableQuery("occupied set touches the frame inside the cylinder")
    weak = cyl & snap.eta1
    if not weak.any():
        return True  # no path starts in the cylinder
    free = cyl & ~block
    labels, _ = ndimage.label(free, structure=ndimage.generate_binary_structure(free.ndim, 1))
    escape = np.unique(labels[exits & free])
    escape = escape[escape > 0]
    return not np.isin(labels[weak], escape).any()


def shadow(snap: Snapshot, q: ShadowQuery) -> bool:
    """Whether the strong border separates every weak site of Cyl_+(u, R) from the frame."""
    if q.box != snap.box:
        raise ValueError("query and snapshot live on different boxes")
    cyls = _Cylinders(snap.box)
    u = np.asarray(q.direction, dtype=float)
    return _shadow_on(cyls.mask(u, q.R), cyls.frame, blocking_set(snap), snap)


@dataclass
class ShadeReport:
    t: float
    R_t: float
    directions_tested: int
    witness_direction: tuple[float, ...] | None
    cover_epsilon: float
    unanswerable: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def default_cover_epsilon(R: float, t_outer: float) -> float:
    """Cover resolution (R / 2 t_outer)^2 tied to the shadow width, capped at 1."""
    return min(1.0, (R / (2.0 * t_outer)) ** 2)


def shade_radius(snap: Snapshot, cover_epsilon: float, r_grid: Sequence[float]) -> ShadeReport:
    """Largest r in ``r_grid`` for which some covered direction casts a shadow.

    Shadow(u, r) implies Shadow(u, r') for r' <= r, so each direction is
    bisected over the part of the grid above the current best.
    """
    r_grid = [float(r) for r in r_grid]
    if any(b <= a for a, b in zip(r_grid, r_grid[1:])):
        raise ValueError("r_grid must be increasing")
    if snap.box.d < 2:
        raise ValueError("shadows need d >= 2")
    cover = sphere_cover(cover_epsilon, L2, snap.box.d)
    cyls = _Cylinders(snap.box)
    block = blocking_set(snap)
    best_k = -1
    witness = None
    skipped = 0
    if snap.eta2.any():
        for u in cover.centers:
            axes = cyls.axes(u)
            lo, hi = best_k + 1, len(r_grid) - 1
            found = -1
            while lo <= hi:
                mid = (lo + hi) // 2
                try:
                    ok = _shadow_on(cyls.mask(u, r_grid[mid], axes), cyls.frame, block, snap)
                except UnanswerableQuery:
                    skipped += 1
                    ok = False
                if ok:
                    found = mid
                    lo = mid + 1
                else:
                    hi = mid - 1
            if found > best_k:
                best_k = found
                witness = tuple(float(v) for v in u)
    return ShadeReport(
        snap.t,
        r_grid[best_k] if best_k >= 0 else 0.0,
        len(cover.centers),
        witness,
        float(cover_epsilon),
        skipped,
    )


# ---------------------------------------------------------------------------
# Densities and sphere traces


def _norm_values(norm, pts: np.ndarray) -> np.ndarray:
    return np.asarray(norm(pts), dtype=float)


@dataclass
class DensityCurve:
    t: np.ndarray
    density: np.ndarray
    clipped: np.ndarray
    norm_name: str
    counts: np.ndarray = field(default=None)
    ball_sizes: np.ndarray = field(default=None)

    def usable(self) -> tuple[np.ndarray, np.ndarray]:
        keep = ~self.clipped
        return self.t[keep], self.density[keep]

    def rows(self) -> list[dict]:
        return [
            {"t": float(t), "density": float(r), "count": int(c), "ball": int(b), "clipped": bool(k)}
            for t, r, c, b, k in zip(self.t, self.density, self.counts, self.ball_sizes, self.clipped)
        ]


def density_curve(strong: np.ndarray, box: Box, norm, t_grid: Sequence[float], center=None) -> DensityCurve:
    """|strong ∩ B(t)| / |B(t)| for balls of ``norm`` around ``center``.

    ``strong`` is a box-grid mask (for example eta^2(infinity)).  Radii whose
    ball reaches the box frame are flagged as clipped.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    c = np.zeros(box.d) if center is None else np.asarray(center, dtype=float)
    r = _norm_values(norm, grid_coords(box) - c)
    frame_r = r[box.to_grid(box.frame)].min()
    rs = r.ravel()
    order = np.argsort(rs, kind="stable")
    sorted_r = rs[order]
    strong_cum = np.concatenate([[0], np.cumsum(strong.ravel()[order])])
    n_ball = np.searchsorted(sorted_r, t_grid, side="right")
    counts = strong_cum[n_ball]
    with np.errstate(invalid="ignore", divide="ignore"):
        dens = np.where(n_ball > 0, counts / np.maximum(n_ball, 1), 0.0)
    return DensityCurve(
        t_grid,
        dens,
        t_grid >= frame_r,
        getattr(norm, "name", str(norm)),
        counts.astype(np.int64),
        n_ball.astype(np.int64),
    )


def trace_density_curve(trace: CompetitionTrace, norm, t_grid, center=None) -> DensityCurve:
    if not trace.outcome.complete:
        raise ValueError("density needs a trace run to box exhaustion")
    _, m2 = trace.final_masks()
    return density_curve(m2, trace.box, norm, t_grid, center)


def _cell_diameter(centers: np.ndarray) -> float:
    if len(centers) == 0:
        return 0.0
    corners = (centers[:, None, :] + np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])).reshape(-1, 2)
    try:
        pts = corners[ConvexHull(corners).vertices]
    except Exception:  # degenerate hull: fall back to all corners
        pts = np.unique(corners, axis=0)
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def sphere_trace_diameter(strong: np.ndarray, box: Box, shape_norm, t: float, center=None) -> float:
    """Euclidean diameter of the strong unit cells lying on the sphere of radius t.

    The sphere is discretised as the shell |‖x‖ - t| <= w, with w half the
    largest norm of a cell diagonal.
    """
    if box.d != 2:
        raise ValueError("sphere traces are planar")
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    w = 0.5 * float(np.max(_norm_values(shape_norm, np.array([[1.0, 1.0], [1.0, -1.0]]))))
    pts = grid_coords(box)[strong].astype(float)
    if len(pts) == 0:
        return 0.0
    r = _norm_values(shape_norm, pts - c)
    return _cell_diameter(pts[np.abs(r - t) <= w])


# ---------------------------------------------------------------------------
# Shape sandwich


@dataclass
class FluctuationGap:
    t: float
    inner_defect: float
    outer_excess: float
    norm_name: str

    @property
    def worst(self) -> float:
        return max(self.inner_defect, self.outer_excess)


def fluctuation_gap(occupied: np.ndarray, box: Box, shape_norm, t: float, center=None) -> FluctuationGap:
    """How far eta(t) sits from the norm ball of radius t, on each side."""
    c = np.zeros(box.d) if center is None else np.asarray(center, dtype=float)
    r = _norm_values(shape_norm, grid_coords(box) - c)
    frame = box.to_grid(box.frame)
    if np.any(occupied & frame):
        raise ValueError("snapshot touches the box frame")
    if t >= r[frame].min():
        raise ValueError("ball of radius t reaches the box frame")
    empty = ~occupied
    inner = float(np.max(t - r[empty], initial=0.0))
    outer = float(np.max(r[occupied] - t, initial=0.0))
    return FluctuationGap(float(t), max(inner, 0.0), max(outer, 0.0), getattr(shape_norm, "name", str(shape_norm)))


# ---------------------------------------------------------------------------
# Fits


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    stderr: float
    intercept: float
    used: int
    dropped_zero: int


def fit_exponent(curve, values=None) -> ExponentFit:
    """Least-squares slope of log(value) against log(t).

    Pass a ``DensityCurve`` (clipped points are ignored) or two sequences.
    Non-positive values are dropped and counted.
    """
    if isinstance(curve, DensityCurve):
        t, v = curve.usable()
    else:
        t, v = np.asarray(curve, dtype=float), np.asarray(values, dtype=float)
    keep = (v > 0) & (t > 0)
    dropped = int(np.count_nonzero(~keep & (t > 0)))
    if np.count_nonzero(keep) < 3:
        raise ValueError("need at least 3 usable points")
    x, y = np.log(t[keep]), np.log(v[keep])
    if np.ptp(y) == 0.0:
        return ExponentFit(0.0, 0.0, float(y[0]), int(keep.sum()), dropped)
    res = stats.linregress(x, y)
    return ExponentFit(float(res.slope), float(res.stderr), float(res.intercept), int(keep.sum()), dropped)


# ---------------------------------------------------------------------------
# Reports


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def summary_json(doc: dict) -> str:
    return json.dumps({"schema": SCHEMA_VERSION, **doc}, indent=2, sort_keys=True) + "\n"
