import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fppcomp.competition import (
    CompetitionConfig,
    coupled_triple_run,
    coupling_check,
    monotonicity_violations,
    read_jsonl,
    run_competition,
    snapshot,
    trace_violations,
)
from fppcomp.fpp import grow_ball
from fppcomp.lattice import Box
from fppcomp.passage import CouplingMode, EdgeSeedField, PassageLaw

from oracles import base_weights, literal_competition

EXP1 = PassageLaw.exponential("1")
EXP14 = PassageLaw.exponential("1.4")


def config(L=20, seed=0, law1=EXP1, law2=EXP14, **kw):
    return CompetitionConfig(Box.centered(L, 2), (0, 0), (1, 0), law1, law2, master_seed=seed, **kw)


@pytest.mark.parametrize("mode", list(CouplingMode))
def test_one_dimensional_deterministic_race(mode):
    cfg = CompetitionConfig(
        Box.centered(2, 1), (-1,), (1,), PassageLaw.deterministic("1"), PassageLaw.deterministic("0.6"), mode=mode
    )
    trace = run_competition(cfg)
    eta1, eta2 = snapshot(trace, math.inf)
    assert eta1 == {(-1,), (-2,)}
    assert eta2 == {(1,), (0,), (2,)}
    assert trace.species_at((0,)) == 2 and trace.time_at((0,)) == 0.6


def test_mirror_symmetric_sources_give_symmetric_occupation():
    box = Box.centered(15, 2)
    cfg = CompetitionConfig(box, (0, -1), (0, 1), EXP1, EXP1, master_seed=4, mirror_axis=0)
    sp = box.to_grid(run_competition(cfg).species)
    assert np.array_equal(sp, sp[::-1, :])


def test_zero_horizon_keeps_only_sources():
    trace = run_competition(config(stop="t_max", t_max=0.0))
    assert snapshot(trace, 0.0) == ({(0, 0)}, {(1, 0)})
    assert trace.outcome.final_counts == (1, 1)


def test_competition_matches_literal_recursion():
    rng = np.random.default_rng(1)
    pairs = [(EXP1, EXP14), (PassageLaw.deterministic("1"), PassageLaw.deterministic("1/2"))]
    for law1, law2 in pairs:
        for seed in range(40):
            w, h = rng.integers(2, 5), rng.integers(1, 5)
            box = Box((0, 0), (w - 1, h - 1))
            sites = list(box.sites())
            i, j = rng.choice(len(sites), size=2, replace=False)
            cfg = CompetitionConfig(box, sites[i], sites[j], law1, law2, master_seed=seed)
            trace = run_competition(cfg)
            field = cfg.seed_field
            ref = literal_competition(
                box, sites[i], sites[j], law1, law2, base_weights(box, field, law1, 0), base_weights(box, field, law2, 0)
            )
            for x, (sp, t, _) in ref.items():
                assert (trace.species_at(x), trace.time_at(x)) == (sp, t)


class TestSnapshot:
    trace = run_competition(config(L=12, seed=3))

    def test_time_zero(self):
        assert snapshot(self.trace, 0) == ({(0, 0)}, {(1, 0)})

    def test_after_last_event(self):
        last = float(self.trace.event_times[-1])
        e1, e2 = snapshot(self.trace, last + 1)
        assert len(e1) + len(e2) == self.trace.box.size

    def test_piecewise_constant(self):
        times = np.unique(self.trace.event_times)
        for a, b in zip(times[5:25], times[6:26]):
            assert snapshot(self.trace, (a + b) / 2) == snapshot(self.trace, a)

    def test_monotone_and_conserved(self):
        prev = (set(), set())
        for t in np.unique(self.trace.event_times)[::20]:
            e1, e2 = snapshot(self.trace, t)
            assert prev[0] <= e1 and prev[1] <= e2
            assert not e1 & e2 and len(e1) + len(e2) <= self.trace.box.size
            assert len(e1) + len(e2) == int(np.count_nonzero(self.trace.claim_time <= t))
            prev = (e1, e2)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            snapshot(self.trace, -1)


class TestTrace:
    def test_structure_is_sound(self):
        for seed in range(5):
            assert trace_violations(run_competition(config(seed=seed))) == []

    def test_jsonl_round_trip(self):
        trace = run_competition(config(L=6, seed=2))
        header, events = read_jsonl(trace.to_jsonl())
        assert header["config"]["master_seed"] == 2
        assert events == list(trace.iter_events())
        assert trace.digest() == run_competition(config(L=6, seed=2)).digest()

    def test_without_log(self):
        trace = run_competition(config(keep_log=False))
        assert not trace.has_log
        with pytest.raises(ValueError):
            trace.event_times
        assert trace.outcome == run_competition(config()).outcome

    def test_boundary_stop(self):
        trace = run_competition(config(L=30, seed=1, stop="boundary"))
        assert trace.outcome.boundary_clipped and not trace.outcome.complete
        assert trace.outcome.final_counts[0] + trace.outcome.final_counts[1] < trace.box.size

    def test_abandon_agrees_with_full_run(self):
        for seed in range(30):
            full = run_competition(config(L=25, seed=seed, law2=PassageLaw.exponential("3")))
            fast = run_competition(config(L=25, seed=seed, law2=PassageLaw.exponential("3"), abandon_if_weak_dies=True))
            assert fast.outcome.g1_proxy == full.outcome.g1_proxy

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CompetitionConfig(Box.centered(3, 2), (0, 0), (0, 0), EXP1, EXP14)
        with pytest.raises(ValueError):
            CompetitionConfig(Box.centered(3, 2), (0, 0), (9, 0), EXP1, EXP14)
        with pytest.raises(ValueError):
            config(stop="t_max")

    def test_config_dict_round_trip(self):
        cfg = config(seed=17, mirror_axis=1)
        assert CompetitionConfig.from_dict(cfg.to_dict()) == cfg


def test_no_ties_for_continuous_laws():
    claimed = 0
    for seed in range(25):
        trace = run_competition(config(L=100, seed=seed, keep_log=False))
        assert trace.tie_count == 0
        claimed += sum(trace.outcome.final_counts)
    assert claimed >= 10**6


def test_deterministic_laws_produce_counted_ties():
    det = PassageLaw.deterministic("1")
    trace = run_competition(CompetitionConfig(Box.centered(5, 2), (-1, 0), (1, 0), det, det))
    assert trace.tie_count > 0
    assert trace.species_at((0, 0)) == 2


class TestCoupling:
    def balls(self, cfg):
        field = cfg.seed_field
        return (
            grow_ball(cfg.s1, cfg.law1, field, cfg.box),
            grow_ball(cfg.s2, cfg.law2, field, cfg.box),
        )

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**63))
    def test_inclusions_hold(self, seed):
        cfg = config(L=50, seed=seed)
        assert coupling_check(run_competition(cfg), *self.balls(cfg)).passed

    def test_negative_control(self):
        cfg = config(L=20, seed=5)
        trace = run_competition(cfg)
        f1, f2 = self.balls(cfg)
        own = (trace.species == 1) & (trace.claim_time == f1.time) & (trace.claim_time > 0)
        x = cfg.box.site(int(np.flatnonzero(own)[0]))
        bad = trace.with_claim_time(x, trace.time_at(x) + 1e-6)
        rep = coupling_check(bad, f1, f2)
        assert not rep.passed and rep.violation["site"] == x

    def test_rejects_mismatched_inputs(self):
        cfg = config(L=10, seed=1)
        trace = run_competition(cfg)
        f1, f2 = self.balls(cfg)
        other = grow_ball(cfg.s1, cfg.law1, EdgeSeedField(2), cfg.box)
        with pytest.raises(ValueError):
            coupling_check(trace, other, f2)
        with pytest.raises(ValueError):
            coupling_check(trace, f2, f1)


class TestTripleRun:
    def test_exponential_rates(self):
        laws = [PassageLaw.exponential(r) for r in ("1.0", "1.2", "1.5")]
        for seed in range(5):
            base = config(L=60, seed=seed)
            assert monotonicity_violations(coupled_triple_run(*laws, base)) == []

    def test_degenerate_pair_is_identical(self):
        base = config(L=15, seed=2)
        run = coupled_triple_run(EXP1, EXP1, EXP14, base)
        assert np.array_equal(run.pr.species, run.qr.species)
        assert np.array_equal(run.pr.claim_time, run.qr.claim_time)

    def test_deterministic_laws(self):
        laws = [PassageLaw.deterministic(c) for c in ("1", "0.8", "0.5")]
        run = coupled_triple_run(*laws, config(L=10))
        assert monotonicity_violations(run) == []

    def test_forces_shared_mode(self):
        run = coupled_triple_run(EXP1, PassageLaw.exponential("1.2"), EXP14, config(L=8, mode=CouplingMode.INDEPENDENT))
        assert run.pq.config.mode is CouplingMode.SHARED

    def test_rejects_unordered_laws(self):
        with pytest.raises(ValueError):
            coupled_triple_run(EXP14, EXP1, EXP1, config(L=5))

    def test_detects_swapped_traces(self):
        laws = [PassageLaw.exponential(r) for r in ("1.0", "1.2", "1.5")]
        run = coupled_triple_run(*laws, config(L=30, seed=3))
        swapped = replace(run, pq=run.pr, pr=run.pq)
        if not np.array_equal(run.pq.species, run.pr.species):
            assert monotonicity_violations(swapped)
