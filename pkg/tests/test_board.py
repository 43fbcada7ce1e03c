import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathdistill.board import (REJECTED, Board, BoardEntry, BoardError, evaluate_accuracy, final_selection,
                               init_board, try_insert)
from pathdistill.search_space import count_flops, enumerate_paths
from pathdistill.supernet import init_supernet, predict

from oracles import random_insert_sequence


def make_board(*specs, lo=0, hi=None):
    return Board([BoardEntry((i,), a, f) for i, (a, f) in enumerate(specs)], lo, hi)


class TestTryInsert:
    def test_dominating_candidate_replaces_weakest(self):
        board = make_board((0.5, 100), (0.3, 100), (0.9, 50))
        res = try_insert(board, BoardEntry((7,), 0.6, 90))
        assert res.index == 1 and str(res) == "replaced:1"
        assert board.entries[1].path == (7,)

    def test_no_dominated_entry(self):
        # better accuracy but more flops than everything
        board = make_board((0.5, 100), (0.3, 100))
        assert try_insert(board, BoardEntry((7,), 0.99, 101)) is REJECTED
        assert str(REJECTED) == "rejected"

    def test_equal_on_both_axes_qualifies(self):
        board = make_board((0.5, 100))
        assert try_insert(board, BoardEntry((7,), 0.5, 100)).index == 0

    def test_tie_break_highest_flops_then_lowest_index(self):
        board = make_board((0.2, 80), (0.2, 100), (0.2, 100))
        assert try_insert(board, BoardEntry((7,), 0.4, 60)).index == 1

    def test_duplicate_rejected(self):
        board = make_board((0.1, 100), (0.2, 100))
        assert try_insert(board, BoardEntry((1,), 0.9, 10)) is REJECTED

    def test_out_of_bounds_rejected(self):
        board = make_board((0.1, 100), lo=50, hi=150)
        assert try_insert(board, BoardEntry((7,), 0.9, 40)) is REJECTED
        assert try_insert(board, BoardEntry((7,), 0.9, 151)) is REJECTED
        assert try_insert(board, BoardEntry((7,), 0.9, 50)).replaced

    def test_fresh_board_accepts_anything_cheaper(self, micro_space):
        board = init_board(micro_space, 3, 0, None, np.random.default_rng(0))
        top = max(e.flops for e in board.entries)
        cand = next(p for p in enumerate_paths(micro_space)
                    if not board.contains(p) and count_flops(micro_space, p) <= top)
        assert try_insert(board, BoardEntry(cand, 0.0, count_flops(micro_space, cand))).replaced


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_insert_invariants_property(seed):
    random_insert_sequence(np.random.default_rng(seed))


class TestInitBoard:
    def test_distinct_in_range_zero_accuracy(self, micro_space):
        flops = sorted(count_flops(micro_space, p) for p in enumerate_paths(micro_space))
        lo, hi = flops[5], flops[20]
        board = init_board(micro_space, 4, lo, hi, np.random.default_rng(0))
        assert board.size == 4
        assert len({e.path for e in board.entries}) == 4
        assert all(lo <= e.flops <= hi and e.accuracy == 0.0 for e in board.entries)
        assert all(e.flops == count_flops(micro_space, e.path) for e in board.entries)

    def test_seeded(self, micro_space):
        a = init_board(micro_space, 5, 0, None, np.random.default_rng(3))
        b = init_board(micro_space, 5, 0, None, np.random.default_rng(3))
        assert a == b

    @pytest.mark.parametrize("size,lo,hi", [(0, 0, None), (3, 10, 5), (3, 10**12, None), (28, 0, None)])
    def test_errors(self, micro_space, size, lo, hi):
        with pytest.raises(BoardError):
            init_board(micro_space, size, lo, hi, np.random.default_rng(0), max_tries=300)

    def test_whole_space(self, micro_space):
        board = init_board(micro_space, 27, 0, None, np.random.default_rng(0))
        assert {e.path for e in board.entries} == set(enumerate_paths(micro_space))


class TestAccuracy:
    def test_matches_manual_count(self, micro_space, tiny_data):
        net = init_supernet(micro_space, np.random.default_rng(0))
        x, y = tiny_data.val_x, tiny_data.val_y
        preds = predict(net, (0, 1, 2), x)
        acc = evaluate_accuracy(net, (0, 1, 2), x, y, batch_size=7)
        assert acc == np.mean(preds == y)

    def test_binomial_bound_on_untrained_net(self, micro_space, tiny_data):
        # zero weights give constant logits, so argmax is class 0 everywhere
        net = init_supernet(micro_space, np.random.default_rng(0), init_scale=0.0)
        acc = evaluate_accuracy(net, (0, 0, 0), tiny_data.val_x, tiny_data.val_y)
        n = len(tiny_data.val_y)
        assert abs(acc - 0.25) <= 3 * np.sqrt(0.25 * 0.75 / n)

    def test_empty(self, micro_space):
        net = init_supernet(micro_space, np.random.default_rng(0))
        with pytest.raises(BoardError):
            evaluate_accuracy(net, (0, 0, 0), np.zeros((0, 8, 8, 1)), np.zeros(0, dtype=int))


class TestFinalSelection:
    def test_best_accuracy_then_fewest_flops(self, micro_space, tiny_data):
        net = init_supernet(micro_space, np.random.default_rng(0), init_scale=0.0)
        paths = [(0, 0, 0), (1, 1, 1), (2, 2, 2)]
        board = Board([BoardEntry(p, 0.0, count_flops(micro_space, p)) for p in paths])
        # a zero net scores every path identically, so flops decide
        path, accs = final_selection(board, net, tiny_data.val_x, tiny_data.val_y)
        assert len(set(accs)) == 1
        assert path == (2, 2, 2)

    def test_picks_the_max(self, micro_space, tiny_data):
        net = init_supernet(micro_space, np.random.default_rng(0))
        board = init_board(micro_space, 5, 0, None, np.random.default_rng(1))
        path, accs = final_selection(board, net, tiny_data.val_x, tiny_data.val_y)
        k = [e.path for e in board.entries].index(path)
        assert accs[k] == max(accs)
