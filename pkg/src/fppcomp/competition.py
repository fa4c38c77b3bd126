"""Two-species first-passage competition, built event by event.

One priority queue holds tentative infections (time, species rank, target,
parent).  Popping an entry claims the target if nobody owns it yet.  Exact
ties between the species go to species 2 (rank 0), then to the
lexicographically smaller site, and are counted.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .fpp import FppField, _base_weight_arrays, race
from .lattice import Box
from .passage import CouplingMode, EdgeSeedField, PassageLaw, check_ordered_family, validate_assumptions

INF = math.inf

STOP_RULES = ("exhausted", "t_max", "boundary")


@dataclass(frozen=True)
class CompetitionConfig:
    box: Box
    s1: tuple[int, ...]
    s2: tuple[int, ...]
    law1: PassageLaw
    law2: PassageLaw
    mode: CouplingMode = CouplingMode.SHARED
    master_seed: int = 0
    stop: str = "exhausted"
    t_max: float | None = None
    keep_log: bool = True
    abandon_if_weak_dies: bool = False
    mirror_axis: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "s1", tuple(int(c) for c in self.s1))
        object.__setattr__(self, "s2", tuple(int(c) for c in self.s2))
        if self.s1 == self.s2:
            raise ValueError("sources must be distinct")
        if not (self.box.contains(self.s1) and self.box.contains(self.s2)):
            raise ValueError("both sources must lie in the box")
        if self.stop not in STOP_RULES:
            raise ValueError(f"stop must be one of {STOP_RULES}")
        if self.stop == "t_max" and self.t_max is None:
            raise ValueError("stop='t_max' needs t_max")

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def seed_field(self) -> EdgeSeedField:
        return EdgeSeedField(self.master_seed, self.mirror_axis)

    def to_dict(self) -> dict:
        return {
            "box": {"lo": list(self.box.lo), "hi": list(self.box.hi)},
            "s1": list(self.s1),
            "s2": list(self.s2),
            "law1": self.law1.to_config(),
            "law2": self.law2.to_config(),
            "mode": self.mode.value,
            "master_seed": self.master_seed,
            "stop": self.stop,
            "t_max": self.t_max,
            "mirror_axis": self.mirror_axis,
        }

    @classmethod
    def from_dict(cls, doc: dict, **overrides) -> "CompetitionConfig":
        box = doc["box"]
        if isinstance(box, dict):
            box = Box(box["lo"], box["hi"])
        else:
            box = Box.centered(int(box), int(doc.get("d", 2)))
        kw = dict(
            box=box,
            s1=tuple(doc["s1"]),
            s2=tuple(doc["s2"]),
            law1=PassageLaw.from_config(doc["law1"]),
            law2=PassageLaw.from_config(doc["law2"]),
            mode=CouplingMode(doc.get("mode", "shared")),
            master_seed=int(doc.get("master_seed", 0)),
            stop=doc.get("stop", "exhausted"),
            t_max=doc.get("t_max"),
            mirror_axis=doc.get("mirror_axis"),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class GrowthOutcome:
    g1_proxy: bool
    g2_proxy: bool
    final_counts: tuple[int, int]
    boundary_clipped: bool
    complete: bool

    @property
    def coex_proxy(self) -> bool:
        return self.g1_proxy and self.g2_proxy


@dataclass
class CompetitionTrace:
    """Per-site claims of one run; arrays are indexed by padded flat index."""

    config: CompetitionConfig
    species: np.ndarray
    claim_time: np.ndarray
    base: np.ndarray
    parent: np.ndarray | None
    order: np.ndarray | None
    tie_count: int
    outcome: GrowthOutcome

    @property
    def box(self) -> Box:
        return self.config.box

    @property
    def has_log(self) -> bool:
        return self.order is not None

    def _need_log(self):
        if self.order is None:
            raise ValueError("trace was built with keep_log=False")

    @property
    def event_times(self) -> np.ndarray:
        self._need_log()
        return self.claim_time[self.order]

    def species_at(self, x: Sequence[int]) -> int:
        return int(self.species[self.box.index(x)])

    def time_at(self, x: Sequence[int]) -> float:
        return float(self.claim_time[self.box.index(x)])

    def masks(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Box-grid boolean masks of eta^1(t) and eta^2(t)."""
        ok = self.claim_time <= t
        m1 = self.box.to_grid(ok & (self.species == 1))
        m2 = self.box.to_grid(ok & (self.species == 2))
        return m1, m2

    def final_masks(self) -> tuple[np.ndarray, np.ndarray]:
        return self.masks(INF)

    def with_claim_time(self, x: Sequence[int], t: float) -> "CompetitionTrace":
        """Copy with one claim time replaced (for negative controls)."""
        ct = self.claim_time.copy()
        ct[self.box.index(x)] = t
        return replace(self, claim_time=ct)

    # export ---------------------------------------------------------------

    def header(self) -> dict:
        return {
            "format": "fppcomp-trace",
            "version": __version__,
            "config": self.config.to_dict(),
            "tie_count": self.tie_count,
        }

    def iter_events(self) -> Iterable[tuple[float, tuple, int, tuple | None]]:
        """(T_n, site, species, parent) in claim order."""
        self._need_log()
        box = self.box
        for i in self.order.tolist():
            p = int(self.parent[i])
            yield (
                float(self.claim_time[i]),
                box.site(i),
                int(self.species[i]),
                box.site(p) if p >= 0 else None,
            )

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        buf.write(json.dumps(self.header(), sort_keys=True) + "\n")
        for t, x, sp, par in self.iter_events():
            rec = {"t": repr(t), "site": list(x), "species": sp, "parent": None if par is None else list(par)}
            buf.write(json.dumps(rec, sort_keys=True) + "\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


def read_jsonl(text: str) -> tuple[dict, list[tuple[float, tuple, int, tuple | None]]]:
    lines = text.splitlines()
    header = json.loads(lines[0])
    events = []
    for line in lines[1:]:
        rec = json.loads(line)
        par = rec["parent"]
        events.append((float(rec["t"]), tuple(rec["site"]), rec["species"], None if par is None else tuple(par)))
    return header, events


def _species_weights(cfg: CompetitionConfig):
    field_ = cfg.seed_field
    w1 = _base_weight_arrays(cfg.box, field_, cfg.law1, cfg.mode.stream(1))
    w2 = _base_weight_arrays(cfg.box, field_, cfg.law2, cfg.mode.stream(2))
    return w1, w2


def run_competition(cfg: CompetitionConfig) -> CompetitionTrace:
    """Build the competition trace for ``cfg``.

    Species 1 is the slow (weak) infection and species 2 the fast one; the
    construction itself does not depend on which is which.
    """
    box = cfg.box
    species, claim, base, parent, order, ties, reached, complete, abandoned = race(
        box,
        cfg.seed_field,
        [(cfg.s2, 2), (cfg.s1, 1)],
        {1: (cfg.law1, cfg.mode.stream(1)), 2: (cfg.law2, cfg.mode.stream(2))},
        t_max=cfg.t_max if cfg.stop == "t_max" else None,
        stop_on_frame=cfg.stop == "boundary",
        abandon_weak=cfg.abandon_if_weak_dies,
    )
    counts = (int(np.count_nonzero(species == 1)), int(np.count_nonzero(species == 2)))
    outcome = GrowthOutcome(
        bool(reached[1]),
        bool(reached[2]),
        counts,
        bool(reached[1] or reached[2]),
        bool(complete),
    )
    if not cfg.keep_log:
        parent = order = None
    return CompetitionTrace(cfg, species, claim, base, parent, order, int(ties), outcome)


def snapshot(trace: CompetitionTrace, t: float) -> tuple[set, set]:
    """(eta^1(t), eta^2(t)) as sets of sites; right-continuous in t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    box = trace.box
    ok = trace.claim_time <= t
    s1 = {box.site(int(i)) for i in np.flatnonzero(ok & (trace.species == 1))}
    s2 = {box.site(int(i)) for i in np.flatnonzero(ok & (trace.species == 2))}
    return s1, s2


def trace_violations(trace: CompetitionTrace) -> list[str]:
    """Exact structural checks of a trace (empty list when sound)."""
    cfg = trace.config
    box = trace.box
    problems = []
    times = trace.event_times
    if np.any(np.diff(times) < 0):
        problems.append("event times decrease")
    if len(set(trace.order.tolist())) != len(trace.order):
        problems.append("a site is claimed twice")
    w = (None,) + _species_weights(cfg)
    laws = (None, cfg.law1, cfg.law2)
    srcs = {box.index(cfg.s1): 1, box.index(cfg.s2): 2}
    for i in trace.order.tolist():
        sp = int(trace.species[i])
        if i in srcs:
            if srcs[i] != sp or trace.claim_time[i] != 0.0:
                problems.append(f"source {box.site(i)} mis-claimed")
            continue
        p = int(trace.parent[i])
        if trace.species[p] != sp:
            problems.append(f"{box.site(i)} infected across species")
            continue
        k = next(k for k, s in enumerate(box.strides) if abs(i - p) == s)
        b = trace.base[p] + w[sp][k][min(i, p)]
        if b != trace.base[i] or laws[sp].to_time(b) != trace.claim_time[i]:
            problems.append(f"{box.site(i)} breaks the parent recurrence")
    return problems


# ---------------------------------------------------------------------------
# Couplings


@dataclass
class CouplingReport:
    passed: bool
    violation: dict | None = None
    checked_sites: int = 0

    def __bool__(self):
        return self.passed


def coupling_check(trace: CompetitionTrace, fpp1: FppField, fpp2: FppField) -> CouplingReport:
    """Check eta^1(t) in B1(t), eta^2(t) in B2(t) and B1(t) in eta(t) for all t.

    Inclusions between right-continuous monotone sets reduce to per-site
    comparisons of entrance times; the first violated time is reported.
    """
    cfg = trace.config
    if fpp1.box != cfg.box or fpp2.box != cfg.box:
        raise ValueError("box mismatch")
    if fpp1.seed_field.master_seed != cfg.master_seed or fpp2.seed_field.master_seed != cfg.master_seed:
        raise ValueError("seed mismatch")
    if tuple(fpp1.source) != cfg.s1 or tuple(fpp2.source) != cfg.s2:
        raise ValueError("sources do not match the competition")
    if fpp1.t_max is not None or fpp2.t_max is not None:
        raise ValueError("balls must be grown over the whole box")
    ct = trace.claim_time
    sp = trace.species
    box = cfg.box
    found = []
    for label, mask, inner, outer in (
        ("eta1 in B1", sp == 1, ct, fpp1.time),
        ("eta2 in B2", sp == 2, ct, fpp2.time),
        ("B1 in eta", np.isfinite(fpp1.time), fpp1.time, ct),
    ):
        # a site enters the inner set at inner[i]; it must already be in the outer one
        bad = np.flatnonzero(mask & (outer > inner))
        if len(bad):
            i = int(bad[np.argmin(inner[bad])])
            found.append({"inclusion": label, "t": float(inner[i]), "site": box.site(i)})
    if found:
        return CouplingReport(False, min(found, key=lambda v: v["t"]), int(box.size))
    return CouplingReport(True, None, int(box.size))


@dataclass
class TripleRun:
    laws: tuple[PassageLaw, PassageLaw, PassageLaw]
    pr: CompetitionTrace
    qr: CompetitionTrace
    pq: CompetitionTrace


def coupled_triple_run(
    law_p: PassageLaw, law_q: PassageLaw, law_r: PassageLaw, base: CompetitionConfig
) -> TripleRun:
    """Competitions (p, r), (q, r) and (p, q) on one shared seed field.

    Laws are ordered slowest first: law_p >- law_q >- law_r.
    """
    check_ordered_family([law_p, law_q, law_r])
    common = dict(mode=CouplingMode.SHARED, stop="exhausted", t_max=None)
    pr = run_competition(replace(base, law1=law_p, law2=law_r, **common))
    qr = run_competition(replace(base, law1=law_q, law2=law_r, **common))
    pq = run_competition(replace(base, law1=law_p, law2=law_q, **common))
    return TripleRun((law_p, law_q, law_r), pr, qr, pq)


def _included(a: CompetitionTrace, b: CompetitionTrace, sp: int) -> dict | None:
    """First violation of eta^sp_a(t) subset eta^sp_b(t) over all t, if any."""
    mask = a.species == sp
    bad = np.flatnonzero(mask & ((b.species != sp) | (b.claim_time > a.claim_time)))
    if not len(bad):
        return None
    i = int(bad[np.argmin(a.claim_time[bad])])
    return {"t": float(a.claim_time[i]), "site": a.box.site(i)}


def monotonicity_violations(run: TripleRun) -> list[dict]:
    """Set inclusions forced by stochastic order, checked at every time.

    eta^{2,p,q} in eta^{2,p,r}, eta^{1,p,r} in eta^{1,p,q} (varying the fast
    law) and eta^{1,p,r} in eta^{1,q,r}, eta^{2,q,r} in eta^{2,p,r} (varying
    the slow law).
    """
    out = []
    for name, a, b, sp in (
        ("eta2(p,q) in eta2(p,r)", run.pq, run.pr, 2),
        ("eta1(p,r) in eta1(p,q)", run.pr, run.pq, 1),
        ("eta1(p,r) in eta1(q,r)", run.pr, run.qr, 1),
        ("eta2(q,r) in eta2(p,r)", run.qr, run.pr, 2),
    ):
        v = _included(a, b, sp)
        if v is not None:
            v["inclusion"] = name
            out.append(v)
    return out


def assumption_report(cfg: CompetitionConfig):
    return validate_assumptions(cfg.law1, cfg.law2, cfg.d)
