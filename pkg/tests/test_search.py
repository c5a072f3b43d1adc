import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import desk
from oracles import pareto_front
from rt3.errors import InvalidConfig, NoFeasible
from rt3.patterns import build_model_pattern_set
from rt3.perf import reward
from rt3.search import (
    Evaluator,
    SearchConfig,
    SearchSpace,
    dominates,
    enumerate_action_sequences,
    enumerate_best,
    heuristic_configuration,
    log_points,
    pareto,
    search,
    weakly_dominates_frontier,
)
from rt3.trainer import evaluate_accuracy


class TestSearchConfig:
    @pytest.mark.parametrize("kw", [{"K": 0}, {"K": 4, "m": 3}, {"episodes": 0}, {"batch_size": 0}, {"timing": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(InvalidConfig):
            SearchConfig(**kw)


class TestSpace:
    def test_sizes(self):
        sp = desk.space()
        assert sp.ladder.ratios == pytest.approx((0.6875, 0.625, 0.5), abs=1e-12)
        assert sp.step_sizes() == [3, 4, 3, 4]
        assert sp.n_action_sequences() == 144
        assert sum(1 for _ in enumerate_action_sequences(sp)) == 144

    def test_decode_dedupes_picks(self):
        sp = dataclasses.replace(desk.space(), K=3)
        assert sp.decode([1, 2, 0, 2, 0, 3, 3, 3]) == ((1, (0, 2)), (0, (3,)))

    def test_valid_choices_follow_candidate(self):
        sp = desk.space()
        assert sp.valid_choices(0, []) == 3
        assert sp.valid_choices(1, [2]) == sp.candidates[2].n_patterns
        assert sp.valid_choices(3, [0, 0, 1]) == sp.candidates[1].n_patterns

    def test_heuristic_picks_least_sparse_feasible(self):
        sp = desk.space()
        config = heuristic_configuration(sp, desk.LOOSE_T)
        for (idx, picks), level in zip(config, sp.table):
            chosen = sp.candidates[idx]
            assert sp.perf.latency_at(chosen.sparsity, level) <= desk.LOOSE_T
            for other in sp.candidates:
                if other.sparsity < chosen.sparsity:
                    assert sp.perf.latency_at(other.sparsity, level) > desk.LOOSE_T
            assert picks == (0,)
        with pytest.raises(NoFeasible):
            heuristic_configuration(sp, 1e-6)


class TestEvaluator:
    def test_infeasible_skips_training(self):
        ev = Evaluator(desk.space(), dataclasses.replace(desk.SEARCH, timing=1e-4))
        out = ev(((0, (0,)), (0, (0,))))
        assert not out.feasible
        assert out.accuracies is None and out.a_w is None
        assert ev.n_trained == 0
        assert out.reward == pytest.approx(-1 + out.r_runs, abs=1e-15)

    def test_reward_recomputes_from_fields(self):
        ev = desk.evaluator()
        for config in [((0, (0,)), (2, (1,))), ((1, (3,)), (1, (2,)))]:
            out = ev(config)
            assert reward(out.reward_inputs()) == out.reward
            if out.feasible:
                u = (out.a_w - out.a_m) / (out.a_o - out.a_m)
                expected = u + out.r_runs - (0 if out.cond else out.pen)
                assert out.reward == pytest.approx(expected, abs=1e-12)

    def test_cond_orders_fastest_first(self):
        ev = desk.evaluator()
        for out in list(ev.cache.values()) or [ev(((0, (0,)), (0, (0,))))]:
            if out.accuracies is not None:
                # levels are stored slowest first, so the last one is the fastest
                assert out.cond == (out.accuracies[1] > out.accuracies[0])

    def test_cached(self):
        ev = desk.evaluator()
        a = ev(((2, (0,)), (2, (0,))))
        trained = ev.n_trained
        assert ev(((2, (0,)), (2, (0,)))) is a
        assert ev.n_trained == trained

    def test_all_ones_patterns_keep_backbone_accuracy(self):
        bb, data = desk.backbone()
        dense = build_model_pattern_set(bb, 0.0, 3, 4)
        assert dense.n_patterns == 1
        base = evaluate_accuracy(bb, None, data.x_holdout, data.y_holdout)
        assert evaluate_accuracy(bb, dense, data.x_holdout, data.y_holdout) == base
        sp = desk.space()
        dense_space = SearchSpace(bb, data, sp.table, sp.perf, sp.ladder, [dense], 1)
        cfg = dataclasses.replace(desk.SEARCH, finetune_epochs=0, timing=1.0)
        out = Evaluator(dense_space, cfg)(((0, (0,)), (0, (0,))))
        assert out.accuracies == [base, base]
        assert out.a_w == pytest.approx(out.a_o, abs=1e-15)


class TestSearch:
    def test_same_seed_same_log(self):
        cfg = dataclasses.replace(desk.SEARCH, episodes=60, seed=4)
        a = search(desk.space(), cfg, Evaluator(desk.space(), cfg))
        b = search(desk.space(), cfg, Evaluator(desk.space(), cfg))
        assert [(e.actions, e.reward) for e in a.log] == [(e.actions, e.reward) for e in b.log]

    def test_best_is_best_feasible_logged(self):
        cfg = dataclasses.replace(desk.SEARCH, episodes=80, seed=1)
        res = search(desk.space(), cfg, desk.evaluator())
        assert len(res.log) == 80
        assert res.best.evaluation.feasible
        assert res.best.reward == max(e.reward for e in res.log if e.evaluation.feasible)
        assert res.frontier == pareto(log_points(res.log))

    def test_batches(self):
        cfg = dataclasses.replace(desk.SEARCH, episodes=10, batch_size=4)
        res = search(desk.space(), cfg, desk.evaluator())
        assert len(res.log) == 10
        assert len(res.baseline_history) == 3

    def test_enumeration_is_an_upper_bound(self):
        ev = desk.evaluator()
        best = enumerate_best(desk.space(), ev)
        assert len(ev.cache) <= 144
        res = search(desk.space(), dataclasses.replace(desk.SEARCH, episodes=30), ev)
        assert all(e.reward <= best.reward for e in res.log)

    def test_no_feasible(self):
        cfg = dataclasses.replace(desk.SEARCH, timing=1e-4, episodes=5)
        with pytest.raises(NoFeasible):
            search(desk.space(), cfg)


class TestPareto:
    def test_hand_example(self):
        assert pareto([(0.9, 10), (0.8, 20), (0.85, 5)]) == [(0.8, 20), (0.9, 10)]

    def test_duplicates_collapse(self):
        assert pareto([(0.5, 3), (0.5, 3), (0.5, 3)]) == [(0.5, 3)]

    def test_dominates(self):
        assert dominates((1, 1), (1, 0))
        assert not dominates((1, 1), (1, 1))
        assert not dominates((2, 0), (1, 1))

    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=30))
    @settings(max_examples=300, deadline=None)
    def test_matches_oracle(self, points):
        front = pareto(points)
        assert front == pareto_front(points)
        for p in points:
            assert any(q == p or dominates(q, p) for q in front)

    def test_weak_dominance(self):
        upper = [(0.9, 10), (0.8, 20)]
        assert weakly_dominates_frontier(upper, [(0.85, 9), (0.8, 20)])
        assert not weakly_dominates_frontier(upper, [(0.95, 1)])
        assert weakly_dominates_frontier(upper, [])
