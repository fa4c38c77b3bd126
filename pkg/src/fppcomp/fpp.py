"""Single-type first-passage percolation on a box of Z^d."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from .lattice import Box, CylinderSpec, L2, cylinder_mask, neighbors, sphere_cover
from . import _kernels
from .passage import EdgeSeedField, PassageLaw, derive_seed

INF = math.inf


@lru_cache(maxsize=6)
def _base_weight_arrays(box: Box, field: EdgeSeedField, law: PassageLaw, stream: int):
    """Per-axis base weights of the edge {i, i + stride_k}, indexed by padded index i."""
    coords = box.padded_coords
    out = []
    for k in range(box.d):
        w = law.base_quantile(field.uniforms(coords, k, stream))
        out.append(w)
    return tuple(out)


def race(
    box: Box,
    field: EdgeSeedField,
    sources: Sequence[tuple[Sequence[int], int]],
    laws: dict,
    *,
    t_max: float | None = None,
    stop_on_frame: bool = False,
    abandon_weak: bool = False,
    targets: Sequence[Sequence[int]] = (),
):
    """Run the compiled growth race.

    ``sources`` lists (site, species) in claim order; ``laws`` maps a species
    (1 or 2) to its (law, stream).  Returns the raw kernel tuple.
    """
    keys = np.zeros(3, dtype=np.uint64)
    kind = np.zeros(3, dtype=np.int64)
    atom = np.zeros(3)
    p1 = np.zeros(3)
    p2 = np.zeros(3)
    div = np.zeros(3, dtype=np.bool_)
    scale = np.ones(3)
    for sp, (law, stream) in laws.items():
        keys[sp] = field._stream_key(stream)
        kind[sp], atom[sp], p1[sp], p2[sp], div[sp], scale[sp] = law.kernel_params
    return _kernels.race(
        box.inside.view(np.uint8),
        box.frame.view(np.uint8),
        np.array(box.strides, dtype=np.int64),
        np.array(box.lo, dtype=np.int64),
        np.array([box.index(x) for x, _ in sources], dtype=np.int64),
        np.array([sp for _, sp in sources], dtype=np.int8),
        keys,
        kind,
        atom,
        p1,
        p2,
        div,
        scale,
        -1 if field.mirror_axis is None else field.mirror_axis,
        INF if t_max is None else float(t_max),
        stop_on_frame,
        abandon_weak,
        np.array([box.index(x) for x in targets], dtype=np.int64),
    )


@dataclass
class FppField:
    """Travel times from ``source`` inside ``box`` (``inf`` where unreached).

    ``base`` holds the raw path sums and ``time = law.to_time(base)``.
    Arrays are indexed by the box's padded flat index.
    """

    source: tuple[int, ...]
    law: PassageLaw
    box: Box
    seed_field: EdgeSeedField
    stream: int
    t_max: float | None
    base: np.ndarray
    time: np.ndarray
    parent: np.ndarray
    order: np.ndarray
    boundary_clipped: bool

    def time_of(self, y: Sequence[int]) -> float:
        if not self.box.contains(y):
            return INF
        return float(self.time[self.box.index(y)])

    def reached(self) -> list[tuple[int, ...]]:
        return [self.box.site(int(i)) for i in self.order]

    def ball(self, t: float) -> set[tuple[int, ...]]:
        """B^source(t) restricted to the box."""
        idx = np.flatnonzero(self.time <= t)
        return {self.box.site(int(i)) for i in idx}

    def ball_mask(self, t: float) -> np.ndarray:
        return self.box.to_grid(self.time <= t)

    def certificate_violations(self) -> list[tuple[int, ...]]:
        """Sites where the shortest-path recurrence fails exactly."""
        w = _base_weight_arrays(self.box, self.seed_field, self.law, self.stream)
        bad = []
        inside = self.box.inside
        done = np.isfinite(self.base)
        src = self.box.index(self.source)
        for i in self.order.tolist():
            b = self.base[i]
            if i == src:
                if b != 0.0:
                    bad.append(self.box.site(i))
                continue
            p = int(self.parent[i])
            step = p - i
            k = next(k for k, s in enumerate(self.box.strides) if abs(step) == s)
            lower = min(i, p)
            if b != self.base[p] + w[k][lower] or self.time[i] != self.law.to_time(b):
                bad.append(self.box.site(i))
                continue
            # optimality against every finalized neighbour
            for kk, s in enumerate(self.box.strides):
                for j, lo in ((i + s, i), (i - s, i - s)):
                    if inside[j] and done[j] and self.base[j] + w[kk][lo] < b:
                        bad.append(self.box.site(i))
                        break
        return bad


def grow_ball(
    source: Sequence[int],
    law: PassageLaw,
    field: EdgeSeedField,
    box: Box,
    t_max: float | None = None,
    *,
    stream: int = 0,
    targets: Sequence[Sequence[int]] | None = None,
) -> FppField:
    """Dijkstra from ``source`` with edge times drawn lazily from ``field``.

    Paths never leave ``box``.  With ``t_max`` the growth stops once every
    site with time <= t_max is final; with ``targets`` it stops as soon as
    all targets are final.
    """
    source = tuple(int(c) for c in source)
    if not box.contains(source):
        raise ValueError(f"source {source} outside {box!r}")
    _, time, base, parent, order, *_ = race(
        box, field, [(source, 1)], {1: (law, stream)}, t_max=t_max, targets=targets or ()
    )
    clipped = bool(np.any(box.frame[order])) if len(order) else False
    return FppField(source, law, box, field, stream, t_max, base, time, parent, order, clipped)


def travel_time(f: FppField, y: Sequence[int]) -> float:
    return f.time_of(y)


# ---------------------------------------------------------------------------
# Restricted crossings


def _nearest_site(points: np.ndarray, target: np.ndarray) -> tuple[int, ...]:
    dist = np.linalg.norm(points - target, axis=1)
    best = dist.min()
    # ties (up to rounding of the distance) go to the lexicographically smallest point
    cand = points[dist <= best + 1e-12]
    cand = sorted(tuple(int(c) for c in p) for p in cand)
    return cand[0]


def cylinder_sites(c: CylinderSpec) -> np.ndarray:
    """Integer points of a finite cylinder, lexicographically sorted."""
    if not math.isfinite(c.height) or c.two_sided:
        raise ValueError("crossing needs a finite one-sided cylinder")
    z = np.asarray(c.base, dtype=float)
    u = np.asarray(c.direction, dtype=float)
    ends = np.stack([z, z + c.height * u])
    lo = np.floor(ends.min(axis=0) - c.radius).astype(int)
    hi = np.ceil(ends.max(axis=0) + c.radius).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return pts[cylinder_mask(pts, c)]


def _restricted_dijkstra(sites, source, target, weight, conv) -> float:
    best = {source: 0.0}
    done = set()
    heap = [(conv(0.0), source, 0.0)]
    while heap:
        t, x, b = heapq.heappop(heap)
        if x in done:
            continue
        done.add(x)
        if x == target:
            return t
        for y in neighbors(x):
            if y in sites and y not in done:
                nb = b + weight(x, y)
                if nb < best.get(y, INF):
                    best[y] = nb
                    heapq.heappush(heap, (conv(nb), y, nb))
    return INF


def restricted_travel_time(
    sites: set[tuple[int, ...]],
    source: tuple[int, ...],
    target: tuple[int, ...],
    law: PassageLaw,
    field: EdgeSeedField,
    stream: int = 0,
) -> float:
    """Dijkstra from source to target using only edges with both ends in ``sites``."""
    cache: dict = {}

    def base_weight(a, b):
        lower, axis = (a, edge_axis_of(a, b)) if a < b else (b, edge_axis_of(a, b))
        key = (lower, axis)
        if key not in cache:
            u = field.uniforms(np.array([lower]), axis, stream)
            cache[key] = float(law.base_quantile(u)[0])
        return cache[key]

    return _restricted_dijkstra(sites, tuple(source), tuple(target), base_weight, law.time_converter())


def weighted_travel_time(
    weights: dict, source: Sequence[int], target: Sequence[int], sites: set | None = None
) -> float:
    """Travel time for explicit edge times ``{frozenset({a, b}): t}``; missing edges are absent."""
    if sites is None:
        sites = {tuple(x) for e in weights for x in e}

    def weight(a, b):
        return weights.get(frozenset((a, b)), INF)

    return _restricted_dijkstra(sites, tuple(source), tuple(target), weight, float)


def edge_axis_of(a, b) -> int:
    for k, (p, q) in enumerate(zip(a, b)):
        if p != q:
            return k
    raise ValueError("degenerate edge")


def cylinder_endpoints(c: CylinderSpec) -> tuple[tuple[int, ...], tuple[int, ...], np.ndarray]:
    pts = cylinder_sites(c)
    if len(pts) == 0:
        raise ValueError("cylinder contains no integer points")
    z = np.asarray(c.base, dtype=float)
    top = z + c.height * np.asarray(c.direction, dtype=float)
    return _nearest_site(pts, z), _nearest_site(pts, top), pts


def cylinder_crossing_time(
    z: Sequence[float],
    direction: Sequence[float],
    h: float,
    r: float,
    law: PassageLaw,
    field: EdgeSeedField,
    stream: int = 0,
) -> float:
    """Minimal time from the integer point nearest z to the one nearest z + h x,
    using only edges inside Cyl_z(x, r, h)."""
    c = CylinderSpec(tuple(float(v) for v in z), tuple(float(v) for v in direction), float(r), float(h))
    s0, sf, pts = cylinder_endpoints(c)
    sites = {tuple(int(v) for v in p) for p in pts}
    return restricted_travel_time(sites, s0, sf, law, field, stream)


# ---------------------------------------------------------------------------
# Time constants and shapes


def _target(direction: np.ndarray, n: float) -> tuple[int, ...]:
    return tuple(int(v) for v in np.rint(n * direction))


@dataclass
class TimeConstant:
    direction: tuple[float, ...]
    mu_hat: float
    ci_halfwidth: float
    per_replica: list[float]
    ladder_means: list[float]
    discarded: int


def _tconf(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return INF
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))


def _replica_times(law, directions, ladder, seed, stream, margin):
    """Travel times from 0 to round(n u) for each direction u and ladder rung n."""
    d = directions.shape[1]
    targets = {(j, n): _target(u, n) for j, u in enumerate(directions) for n in ladder}
    reach = max(max(abs(c) for c in t) for t in targets.values())
    box = Box.centered(reach + margin, d)
    f = grow_ball((0,) * d, law, EdgeSeedField(seed), box, stream=stream, targets=list(set(targets.values())))
    return {key: f.time_of(t) for key, t in targets.items()}


def _margin(ladder) -> int:
    return max(10, int(math.ceil(0.1 * max(ladder))))


def _estimates(law, directions, ladder, replicas, base_seed, stream, margin):
    directions = np.asarray(directions, dtype=float)
    ladder = [float(n) for n in ladder]
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly increasing")
    margin = _margin(ladder) if margin is None else margin
    seeds = [derive_seed(base_seed, r) for r in range(replicas)]
    runs = [_replica_times(law, directions, ladder, s, stream, margin) for s in seeds]
    out = []
    for j, u in enumerate(directions):
        per_rung = {}
        for n in ladder:
            length = float(np.linalg.norm(_target(u, n)))
            vals = [run[(j, n)] / length for run in runs if math.isfinite(run[(j, n)])]
            per_rung[n] = vals
        top = np.array(per_rung[ladder[-1]])
        out.append(
            TimeConstant(
                tuple(float(v) for v in u),
                float(np.mean(top)) if len(top) else INF,
                _tconf(top),
                top.tolist(),
                [float(np.mean(per_rung[n])) if per_rung[n] else INF for n in ladder],
                replicas - len(top),
            )
        )
    return out, seeds


def estimate_time_constant(
    law: PassageLaw,
    direction: Sequence[float],
    ladder: Sequence[float],
    replicas: int,
    base_seed: int = 0,
    *,
    stream: int = 0,
    margin: int | None = None,
) -> TimeConstant:
    """Mean over replicas of T(0, round(n u)) / |round(n u)|_2 at the largest rung n."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    res, _ = _estimates(law, u[None, :], ladder, replicas, base_seed, stream, margin)
    return res[0]


@dataclass
class ShapeEstimate:
    law: PassageLaw
    directions: np.ndarray
    mu_hat: np.ndarray
    ci_halfwidth: np.ndarray
    ladder: list[float]
    replicas: int
    seeds: list[int] = field(default_factory=list)
    per_replica: np.ndarray | None = None
    cover_epsilon: float | None = None

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=float)
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.ci_halfwidth = np.asarray(self.ci_halfwidth, dtype=float)
        if np.any(~(self.mu_hat > 0)):
            raise ValueError("time constants must be positive")
        self._angles = None
        if self.directions.shape[1] == 2:
            ang = np.arctan2(self.directions[:, 1], self.directions[:, 0])
            order = np.argsort(ang)
            self._angles = (ang[order], self.mu_hat[order])

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    def mu_of(self, x, method: str = "nearest") -> np.ndarray:
        """Time constant in the Euclidean direction of each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if method == "interpolate":
            if self._angles is None:
                raise ValueError("interpolation is only implemented for d = 2")
            ang, mu = self._angles
            q = np.arctan2(x[:, 1], x[:, 0])
            return np.interp(q, ang, mu, period=2 * math.pi)
        nrm = np.linalg.norm(x, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = x / nrm[:, None]
        k = np.argmax(np.nan_to_num(unit) @ self.directions.T, axis=1)
        return self.mu_hat[k]

    def norm(self, x, method: str = "nearest"):
        """||x||_2 * mu_hat(direction of x); positively homogeneous."""
        arr = np.asarray(x, dtype=float)
        flat = arr.reshape(-1, self.d)
        r = np.linalg.norm(flat, axis=1) * self.mu_of(flat, method)
        r = r.reshape(arr.shape[:-1])
        return float(r) if r.ndim == 0 else r

    def as_norm(self, method: str = "nearest"):
        return _ShapeNorm(self, method)

    def in_ball(self, x, t: float, method: str = "nearest"):
        return self.norm(x, method) <= t

    def to_dict(self) -> dict:
        return {
            "law": self.law.to_config(),
            "directions": self.directions.tolist(),
            "mu_hat": self.mu_hat.tolist(),
            "ci_halfwidth": self.ci_halfwidth.tolist(),
            "ladder": list(self.ladder),
            "replicas": self.replicas,
            "seeds": list(self.seeds),
            "cover_epsilon": self.cover_epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ShapeEstimate":
        return cls(
            PassageLaw.from_config(doc["law"]),
            doc["directions"],
            doc["mu_hat"],
            doc["ci_halfwidth"],
            doc["ladder"],
            doc["replicas"],
            doc.get("seeds", []),
            cover_epsilon=doc.get("cover_epsilon"),
        )


@dataclass(frozen=True)
class _ShapeNorm:
    shape: ShapeEstimate
    method: str

    @property
    def name(self) -> str:
        return f"shape[{self.shape.law}]"

    def __call__(self, x):
        return self.shape.norm(x, self.method)


def estimate_shape(
    law: PassageLaw,
    epsilon_cover: float | None,
    ladder: Sequence[float],
    replicas: int,
    base_seed: int = 0,
    *,
    d: int = 2,
    directions: Sequence[Sequence[float]] | None = None,
    stream: int = 0,
    margin: int | None = None,
) -> ShapeEstimate:
    """Directional time constants over a Euclidean sphere cover.

    All directions of one replica share one growth from the origin.
    """
    if directions is None:
        directions = sphere_cover(epsilon_cover, L2, d).centers
    dirs = np.asarray(directions, dtype=float)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    res, seeds = _estimates(law, dirs, ladder, replicas, base_seed, stream, margin)
    return ShapeEstimate(
        law,
        dirs,
        [r.mu_hat for r in res],
        [r.ci_halfwidth for r in res],
        sorted(float(n) for n in ladder),
        replicas,
        seeds,
        np.array([r.per_replica for r in res]),
        epsilon_cover,
    )
