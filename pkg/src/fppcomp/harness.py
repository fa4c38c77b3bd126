"""Experiment orchestration: specs, seeded replicas, conditioning, artifacts."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .analysis import (
    Snapshot,
    UnanswerableQuery,
    density_curve,
    fit_exponent,
    fluctuation_gap,
    rows_to_csv,
    shade_radius,
    summary_json,
)
from .competition import CompetitionConfig, run_competition
from .fpp import ShapeEstimate, estimate_shape
from .lattice import Box
from .passage import CouplingMode, PassageLaw, derive_seed, dominates, validate_assumptions

log = logging.getLogger(__name__)

KINDS = (
    "single-run",
    "coexistence-sweep",
    "density-study",
    "shade-study",
    "shape-study",
    "fluctuation-study",
    "validate",
)
CONDITIONS = ("none", "g1", "coex")
STUDY_MEASURES = {
    "density-study": ("density",),
    "shade-study": ("shade",),
    "fluctuation-study": ("fluct",),
}

EXIT_OK, EXIT_INVALID, EXIT_INSUFFICIENT = 0, 2, 3

DEFAULT_COMPETITION = {
    "d": 2,
    "box": 400,
    "s1": [0, 0],
    "s2": [1, 0],
    "law1": {"family": "exponential", "rate": "1"},
    "law2": {"family": "exponential", "rate": "3/2"},
    "mode": "shared",
    "stop": "exhausted",
}

DEFAULT_PARAMS = {
    "single-run": {"write_trace": True, "list_sites_below": 200},
    "coexistence-sweep": {"axis": "law1", "param": "rate", "values": ["1", "11/10", "6/5"]},
    "shape-study": {"cover_epsilon": 0.4, "ladder": [50, 100, 200], "replicas": 8},
    "study": {
        "min_survivors": 1,
        "t_grid": [50, 70, 100, 140, 200, 280, 380],
        "probe_times": [100, 200, 350],
        "shade_exponent": 0.75,
        "cover_epsilon": 0.1,
        "r_grid": [1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 90, 128, 181, 256, 362],
        "shape": {"cover_epsilon": 0.4, "ladder": [100, 200, 300], "replicas": 8, "base_seed": 1},
    },
}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    competition: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_COMPETITION))
    replicas: int = 1
    base_seed: int = 0
    conditioning: str = "none"
    workers: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"kind must be one of {KINDS}")
        if self.conditioning not in CONDITIONS:
            raise SpecError(f"conditioning must be one of {CONDITIONS}")
        if self.replicas < 1:
            raise SpecError("replicas must be >= 1")
        if self.workers < 1:
            raise SpecError("workers must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            raise SpecError("seed must be an unsigned 64-bit integer")
        merged = copy.deepcopy(DEFAULT_COMPETITION)
        merged.update(self.competition)
        self.competition = merged
        defaults = DEFAULT_PARAMS["study"] if self.kind in STUDY_MEASURES else DEFAULT_PARAMS.get(self.kind, {})
        p = copy.deepcopy(defaults)
        p.update(self.params)
        self.params = p
        try:
            self.base_config(0)
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid competition config: {exc}") from exc

    @property
    def seeds(self) -> list[int]:
        return [derive_seed(self.base_seed, r) for r in range(self.replicas)]

    def base_config(self, seed: int, **overrides) -> CompetitionConfig:
        return CompetitionConfig.from_dict(self.competition, master_seed=seed, **overrides)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "competition": self.competition,
            "replicas": self.replicas,
            "base_seed": self.base_seed,
            "conditioning": self.conditioning,
            "workers": self.workers,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = {"kind", "competition", "replicas", "base_seed", "conditioning", "workers", "params"}
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown spec fields {sorted(extra)}")
        return cls(**doc)

    def content_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("workers")  # scheduling never changes results
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Replica scheduling


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def wilson(k: int, n: int) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return (float(ci.low), float(ci.high))


def _kept(outcome, conditioning: str) -> bool:
    if conditioning == "g1":
        return outcome.g1_proxy
    if conditioning == "coex":
        return outcome.coex_proxy
    return True


# ---------------------------------------------------------------------------
# Coexistence sweeps


def _law_with(law_cfg: dict, param: str, value) -> dict:
    out = dict(law_cfg)
    out[param] = str(value)
    return out


@dataclass
class SweepCell:
    value: str
    replicas: int
    g1: list[bool]
    g2: list[bool]
    coex: list[bool]

    def estimates(self) -> dict:
        n = self.replicas
        out = {"value": self.value, "replicas": n}
        for name, xs in (("g1", self.g1), ("g2", self.g2), ("coex", self.coex)):
            k = int(sum(xs))
            lo, hi = wilson(k, n)
            out[f"p_{name}"] = k / n
            out[f"{name}_lo"] = lo
            out[f"{name}_hi"] = hi
        return out


@dataclass
class SweepResult:
    axis: str
    param: str
    cells: list[SweepCell]
    seeds: list[int]
    shared_seeds: bool
    mode: str
    laws: list[PassageLaw]

    def table(self) -> list[dict]:
        return [c.estimates() for c in self.cells]


def _sweep_one(args):
    cfg_doc, seed = args
    cfg = CompetitionConfig.from_dict(cfg_doc, master_seed=seed, keep_log=False)
    o = run_competition(cfg).outcome
    return o.g1_proxy, o.g2_proxy, o.coex_proxy


def run_sweep(spec: ExperimentSpec) -> SweepResult:
    axis = spec.params["axis"]
    param = spec.params["param"]
    if axis not in ("law1", "law2"):
        raise SpecError("sweep axis must be law1 or law2")
    seeds = spec.seeds
    cells, laws = [], []
    for value in spec.params["values"]:
        doc = copy.deepcopy(spec.competition)
        doc[axis] = _law_with(doc[axis], param, value)
        laws.append(PassageLaw.from_config(doc[axis]))
        res = _map(_sweep_one, [(doc, s) for s in seeds], spec.workers)
        cells.append(
            SweepCell(str(value), len(seeds), [r[0] for r in res], [r[1] for r in res], [r[2] for r in res])
        )
    return SweepResult(axis, param, cells, seeds, True, spec.competition.get("mode", "shared"), laws)


@dataclass
class MonotonicityReport:
    exact: bool
    monotone: bool
    violations: list[dict]
    note: str

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def sweep_monotonicity_report(result: SweepResult) -> MonotonicityReport:
    """Check that P(G1) moves the right way along the sweep axis.

    Cells are put in stochastic order of the swept law, slowest first.  A
    faster species 1 can only help species 1, a faster species 2 can only
    hurt it; under shared seeds this holds replica by replica.
    """
    n = len(result.cells)
    # slowest first: rank by how many other laws dominate it
    idx = sorted(range(n), key=lambda i: sum(dominates(result.laws[j], result.laws[i]) for j in range(n) if j != i))
    ordered = [result.cells[i] for i in idx]
    sign = 1 if result.axis == "law1" else -1
    exact = result.shared_seeds and result.mode == "shared"
    violations = []
    for a, b in zip(ordered, ordered[1:]):
        if exact:
            for r, (x, y) in enumerate(zip(a.g1, b.g1)):
                if (y - x) * sign < 0:
                    violations.append({"from": a.value, "to": b.value, "replica": r})
        else:
            pa, pb = np.mean(a.g1), np.mean(b.g1)
            if (pb - pa) * sign < 0:
                violations.append({"from": a.value, "to": b.value, "p_from": pa, "p_to": pb})
    note = "replica-wise under shared seeds" if exact else "statistical only"
    return MonotonicityReport(exact, not violations, violations, note)


# ---------------------------------------------------------------------------
# Studies on conditioned runs


@dataclass(frozen=True)
class RadialNorm:
    """Shape norm rescaled so that e1 has norm 1 (lattice-radius units)."""

    shape: ShapeEstimate
    method: str = "interpolate"

    @property
    def mu_e1(self) -> float:
        e1 = np.zeros(self.shape.d)
        e1[0] = 1.0
        return float(self.shape.mu_of(e1[None, :], self.method)[0])

    @property
    def name(self) -> str:
        return f"radial[{self.shape.law}]"

    def __call__(self, x):
        return self.shape.norm(x, self.method) / self.mu_e1


def study_shape(spec: ExperimentSpec) -> ShapeEstimate:
    p = spec.params["shape"]
    law1 = PassageLaw.from_config(spec.competition["law1"])
    return estimate_shape(
        law1,
        p["cover_epsilon"],
        p["ladder"],
        p["replicas"],
        base_seed=p.get("base_seed", 0),
        d=int(spec.competition.get("d", 2)),
    )


def measure_trace(trace, radial: RadialNorm, params: dict, measures: Sequence[str]) -> list[dict]:
    """Rows (measure, t, value) for one kept replica; t is in lattice-radius units."""
    rows = []
    box = trace.box
    mu = radial.mu_e1
    if "density" in measures:
        _, m2 = trace.final_masks()
        curve = density_curve(m2, box, radial, params["t_grid"])
        for r in curve.rows():
            rows.append({"measure": "density", "t": r["t"], "value": r["density"], "flag": "clipped" if r["clipped"] else ""})
        try:
            fit = fit_exponent(curve)
            rows.append({"measure": "density_slope", "t": math.nan, "value": fit.slope, "flag": ""})
        except ValueError:
            rows.append({"measure": "density_slope", "t": math.nan, "value": math.nan, "flag": "unfit"})
    for t in params["probe_times"]:
        tau = t * mu
        snap = Snapshot.of(trace, tau)
        if "shade" in measures:
            rep = shade_radius(snap, params["cover_epsilon"], params["r_grid"])
            flag = f"unanswerable={rep.unanswerable}" if rep.unanswerable else ""
            rows.append({"measure": "shade_R", "t": float(t), "value": rep.R_t, "flag": flag})
            rows.append(
                {"measure": "shade_ratio", "t": float(t), "value": rep.R_t / t ** params["shade_exponent"], "flag": flag}
            )
        if "fluct" in measures:
            try:
                g = fluctuation_gap(snap.occupied, box, radial.shape.as_norm(radial.method), tau)
                rows.append({"measure": "fluct_ratio", "t": float(t), "value": g.worst / tau, "flag": ""})
            except ValueError:
                rows.append({"measure": "fluct_ratio", "t": float(t), "value": math.nan, "flag": "clipped"})
    return rows


def _study_one(args):
    spec_doc, index, seed, shape_doc, measures = args
    spec = ExperimentSpec.from_dict(spec_doc)
    cond = spec.conditioning
    cfg = spec.base_config(seed, keep_log=False, abandon_if_weak_dies=cond != "none")
    trace = run_competition(cfg)
    kept = _kept(trace.outcome, cond)
    head = {"replica": index, "seed": seed, "kept": int(kept)}
    if not kept:
        return head, []
    radial = RadialNorm(ShapeEstimate.from_dict(shape_doc))
    return head, measure_trace(trace, radial, spec.params, measures)


@dataclass
class StudyResult:
    shape: ShapeEstimate
    heads: list[dict]
    rows: list[dict]

    @property
    def survivors(self) -> int:
        return sum(h["kept"] for h in self.heads)

    @property
    def discards(self) -> int:
        return len(self.heads) - self.survivors

    def values(self, measure: str, t: float | None = None) -> np.ndarray:
        return np.array(
            [r["value"] for r in self.rows if r["measure"] == measure and (t is None or r["t"] == t)], dtype=float
        )

    def median(self, measure: str, t: float | None = None) -> float:
        v = self.values(measure, t)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if len(v) else math.nan


def run_study(spec: ExperimentSpec, measures: Sequence[str], shape: ShapeEstimate | None = None) -> StudyResult:
    """Run replicas in seed order until ``min_survivors`` are kept or replicas run out."""
    shape = shape or study_shape(spec)
    shape_doc = shape.to_dict()
    target = int(spec.params.get("min_survivors", 1))
    seeds = spec.seeds
    spec_doc = spec.to_dict()
    heads, rows = [], []
    kept = 0
    chunk = max(16, 8 * spec.workers)
    for start in range(0, len(seeds), chunk):
        batch = [(spec_doc, i, seeds[i], shape_doc, tuple(measures)) for i in range(start, min(len(seeds), start + chunk))]
        for head, rs in _map(_study_one, batch, spec.workers):
            heads.append(head)
            kept += head["kept"]
            rows.extend({"replica": head["replica"], **r} for r in rs)
            if kept >= target:
                break
        if kept >= target:
            break
    return StudyResult(shape, heads, rows)


# ---------------------------------------------------------------------------
# Artifacts


def versions() -> dict:
    import numba
    import scipy

    return {
        "fppcomp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class Outcome:
    status: str
    exit_code: int
    summary: dict
    artifacts: dict = field(default_factory=dict)


def _write(out: Path, files: dict[str, str], spec: ExperimentSpec, seeds: list[int]) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(files.items()):
        data = text.encode()
        (out / name).write_bytes(data)
        hashes[name] = _sha(data)
    manifest = {
        "spec": spec.to_dict(),
        "content_hash": spec.content_hash(),
        "seeds": seeds,
        "versions": versions(),
        "artifacts": hashes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return hashes


def _single_run(spec: ExperimentSpec) -> tuple[str, dict, dict, list[int]]:
    seed = spec.seeds[0]
    trace = run_competition(spec.base_config(seed))
    o = trace.outcome
    report = validate_assumptions(trace.config.law1, trace.config.law2, trace.config.d)
    summary = {
        "seed": seed,
        "g1_proxy": o.g1_proxy,
        "g2_proxy": o.g2_proxy,
        "coex_proxy": o.coex_proxy,
        "final_counts": list(o.final_counts),
        "tie_count": trace.tie_count,
        "complete": o.complete,
        "assumptions": report.to_dict(),
    }
    if trace.box.size <= spec.params.get("list_sites_below", 200):
        m1, m2 = trace.final_masks()
        lo = np.asarray(trace.box.lo)
        summary["eta1_final"] = sorted((np.argwhere(m1) + lo).tolist())
        summary["eta2_final"] = sorted((np.argwhere(m2) + lo).tolist())
    files = {}
    if spec.params.get("write_trace", True):
        files["trace.jsonl"] = trace.to_jsonl()
    return "ok", summary, files, [seed]


def _sweep(spec: ExperimentSpec):
    res = run_sweep(spec)
    table = res.table()
    rows = []
    for cell in res.cells:
        for r, seed in enumerate(res.seeds):
            rows.append(
                {"value": cell.value, "replica": r, "seed": seed, "g1": int(cell.g1[r]), "g2": int(cell.g2[r]), "coex": int(cell.coex[r])}
            )
    mono = sweep_monotonicity_report(res)
    summary = {"cells": table, "monotonicity": mono.to_dict()}
    return "ok", summary, {"replicas.csv": rows_to_csv(rows), "cells.csv": rows_to_csv(table)}, res.seeds


def _shape(spec: ExperimentSpec):
    p = spec.params
    law1 = PassageLaw.from_config(spec.competition["law1"])
    shape = estimate_shape(law1, p["cover_epsilon"], p["ladder"], p["replicas"], base_seed=spec.base_seed, d=int(spec.competition.get("d", 2)))
    rows = [
        {"direction": json.dumps(list(map(float, u))), "mu_hat": float(m), "ci_halfwidth": float(c)}
        for u, m, c in zip(shape.directions, shape.mu_hat, shape.ci_halfwidth)
    ]
    return "ok", {"mu_hat_min": float(shape.mu_hat.min()), "mu_hat_max": float(shape.mu_hat.max())}, {
        "shape.csv": rows_to_csv(rows),
        "shape.json": shape.to_json() + "\n",
    }, shape.seeds


def _study(spec: ExperimentSpec):
    measures = STUDY_MEASURES[spec.kind]
    res = run_study(spec, measures)
    target = int(spec.params.get("min_survivors", 1))
    summary = {
        "replicas_run": len(res.heads),
        "survivors": res.survivors,
        "discards": res.discards,
        "conditioning": spec.conditioning,
        "mu_hat_e1": RadialNorm(res.shape).mu_e1,
    }
    if "density" in measures:
        summary["median_density_slope"] = res.median("density_slope")
    for t in spec.params["probe_times"]:
        if "shade" in measures:
            summary[f"median_shade_ratio_t{t}"] = res.median("shade_ratio", float(t))
        if "fluct" in measures:
            summary[f"median_fluct_ratio_t{t}"] = res.median("fluct_ratio", float(t))
    status = "ok" if res.survivors >= max(1, target) else "insufficient survivors"
    files = {"replicas.csv": rows_to_csv(res.heads), "measures.csv": rows_to_csv(res.rows)}
    return status, summary, files, [h["seed"] for h in res.heads]


def _validate(spec: ExperimentSpec):
    cfg = spec.base_config(spec.seeds[0])
    rep = validate_assumptions(cfg.law1, cfg.law2, cfg.d)
    status = "ok" if rep.all_pass else "validation failed"
    return status, {"assumptions": rep.to_dict(), "failures": rep.failures()}, {}, []


RUNNERS = {
    "single-run": _single_run,
    "coexistence-sweep": _sweep,
    "shape-study": _shape,
    "density-study": _study,
    "shade-study": _study,
    "fluctuation-study": _study,
    "validate": _validate,
}


def run_experiment(spec: ExperimentSpec, out: str | Path | None = None) -> Outcome:
    """Run ``spec``; with ``out`` write CSV/JSON artifacts and a manifest there."""
    status, summary, files, seeds = RUNNERS[spec.kind](spec)
    summary = {"kind": spec.kind, "status": status, **summary}
    files["summary.json"] = summary_json(summary)
    code = {"ok": EXIT_OK, "validation failed": EXIT_INVALID, "insufficient survivors": EXIT_INSUFFICIENT}[status]
    hashes = _write(Path(out), files, spec, seeds) if out is not None else {}
    return Outcome(status, code, summary, hashes)


def load_manifest(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text())


def replay(source: str | Path, out: str | Path) -> tuple[bool, dict]:
    """Re-run the experiment recorded in ``source`` into ``out`` and compare artifacts."""
    manifest = load_manifest(source)
    spec = ExperimentSpec.from_dict(manifest["spec"])
    run_experiment(spec, out)
    fresh = load_manifest(out)
    same = fresh["artifacts"] == manifest["artifacts"]
    diff = {k: (manifest["artifacts"].get(k), fresh["artifacts"].get(k)) for k in set(manifest["artifacts"]) | set(fresh["artifacts"]) if manifest["artifacts"].get(k) != fresh["artifacts"].get(k)}
    return same, diff
