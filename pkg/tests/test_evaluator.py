import numpy as np
import pytest
from scipy import stats

from pathdistill.board import evaluate_accuracy
from pathdistill.config import from_dict, replace
from pathdistill.evaluator import (ablation_driver, kendall_tau, rank_experiment, ranking_paths,
                                   standalone_accuracies, subset_rank_agreement, train_from_scratch)
from pathdistill.search_space import build_space
from pathdistill.trainer import run_search

from conftest import micro_run_dict
from oracles import brute_kendall


class TestKendall:
    def test_examples(self):
        assert kendall_tau([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
        assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
        # one discordant pair of three, no ties
        assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)

    def test_ties_match_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 25))
            x, y = rng.integers(0, 4, n), rng.integers(0, 4, n)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert kendall_tau(x, y) == pytest.approx(stats.kendalltau(x, y).statistic, abs=1e-12)
            assert kendall_tau(x, y) == pytest.approx(brute_kendall(x, y), abs=1e-12)

    def test_floats(self):
        rng = np.random.default_rng(1)
        x, y = rng.random(30), rng.random(30)
        assert kendall_tau(x, y) == pytest.approx(brute_kendall(x, y), abs=1e-12)

    @pytest.mark.parametrize("x,y", [([1, 1, 1], [1, 2, 3]), ([1], [2]), ([1, 2], [1, 2, 3])])
    def test_undefined(self, x, y):
        with pytest.raises(ValueError):
            kendall_tau(x, y)


class TestScratch:
    def test_deterministic_per_seed(self, micro_config, tiny_data):
        space = build_space(micro_config.space)
        sc = replace(micro_config, **{"eval.scratch.steps": 10}).eval.scratch
        a = train_from_scratch(space, (0, 1, 2), tiny_data, sc, 0)
        b = train_from_scratch(space, (0, 1, 2), tiny_data, sc, 0)
        assert a == b

    def test_untrained_is_near_chance(self, micro_config, tiny_data):
        space = build_space(micro_config.space)
        sc = replace(micro_config, **{"eval.scratch.steps": 0}).eval.scratch
        accs = [train_from_scratch(space, (0, 0, 0), tiny_data, sc, s) for s in range(8)]
        assert abs(np.mean(accs) - 0.25) < 0.1

    def test_training_learns(self, micro_config, tiny_data):
        space = build_space(micro_config.space)
        sc = replace(micro_config, **{"eval.scratch.steps": 400}).eval.scratch
        accs = [train_from_scratch(space, p, tiny_data, sc, s) for p in [(0, 1, 1), (0, 0, 0), (2, 2, 2)] for s in (0, 1)]
        # a four-channel net learns slowly and unevenly, so check the average against chance
        assert np.mean(accs) > 0.5

    def test_parallel_matches_serial(self, micro_config, tiny_data):
        space = build_space(micro_config.space)
        paths = [(0, 0, 0), (1, 2, 0), (2, 2, 2)]
        sc = micro_config.eval.scratch
        assert standalone_accuracies(space, paths, tiny_data, sc) == \
            standalone_accuracies(space, paths, tiny_data, sc, n_jobs=2)


class TestRanking:
    def test_enumerates_small_space(self, micro_config):
        assert len(ranking_paths(micro_config)) == 27

    def test_random_distinct_paths(self, micro_config):
        cfg = replace(micro_config, **{"eval.enumerate_cap": 10, "eval.num_paths": 12})
        paths = ranking_paths(cfg)
        assert len(paths) == len(set(paths)) == 12
        assert paths == ranking_paths(cfg)

    def test_too_many_requested(self, micro_config):
        cfg = replace(micro_config, **{"eval.enumerate_cap": 10, "eval.num_paths": 30})
        with pytest.raises(ValueError):
            ranking_paths(cfg)

    def test_injected_truth(self, micro_config, tiny_data):
        search = run_search(micro_config, tiny_data)
        net = search.state.net
        # stand-alone truth set to the supernet's own accuracies must rank perfectly
        own = {p: evaluate_accuracy(net, p, tiny_data.val_x, tiny_data.val_y) for p in ranking_paths(micro_config)}
        rep = rank_experiment(micro_config, tiny_data, standalone=own, search=search)
        assert rep.tau == 1.0
        reversed_truth = {p: -a for p, a in own.items()}
        assert rank_experiment(micro_config, tiny_data, reversed_truth, search).tau == -1.0
        assert len(rep.rows()) == 27 and rep.final_path == search.final_path

    def test_subset_full_is_one(self, micro_config, tiny_data):
        search = run_search(micro_config, tiny_data)
        paths = ranking_paths(micro_config)
        taus = subset_rank_agreement(search, tiny_data, [16, None], seed=0, paths=paths)
        assert taus[-1] == 1.0
        assert -1.0 <= taus[0] <= 1.0


class TestAblation:
    def test_val_subset_rows(self, micro_config, tiny_data):
        cfg = replace(micro_config, **{"board.size": 5})
        rows = ablation_driver(cfg, "board.val_subset", [8, "full"], tiny_data, seeds=(0, 1))
        assert [r["board.val_subset"] for r in rows] == [8, "full"]
        assert rows[-1]["tau"] == 1.0
        assert all(r["runtime_s"] >= 0 for r in rows)

    def test_board_size_rows(self, micro_config, tiny_data):
        truth = {p: float(sum(p)) for p in ranking_paths(micro_config)}
        rows = ablation_driver(micro_config, "board.size", [1, 3], tiny_data, standalone=truth)
        assert [r["board.size"] for r in rows] == [1, 3]
        assert all(-1 <= r["tau"] <= 1 for r in rows)

    def test_unknown_knob(self, micro_config, tiny_data):
        with pytest.raises(ValueError):
            ablation_driver(micro_config, "train.lr0", [0.1], tiny_data, standalone={})
