import collections

import numpy as np
import pytest
from scipy import stats

from pathdistill.numerics import LayerSpec
from pathdistill.search_space import (OperatorSpec, SpaceConfig, SpaceError, StageConfig, build_space, count_flops,
                                      decode, encode, enumerate_paths, fixed_macs, layer_macs, operator_macs,
                                      paper_space_config, sample_in_flops_range, sample_uniform)


def test_operator_parsing_round_trip():
    for name in ["mb3_2", "mb7_6", "res3", "conv1", "conv5", "skip"]:
        assert OperatorSpec.parse(name).name == name


@pytest.mark.parametrize("name", ["mb4_2", "mb3_3", "res5", "conv7", "pool", "mb3"])
def test_operator_invariants(name):
    with pytest.raises(SpaceError):
        OperatorSpec.parse(name)


class TestBuildSpace:
    def test_paper_shaped_block_count(self):
        space = build_space(paper_space_config())
        assert 20 <= space.num_blocks <= 30
        assert max(len(b.operators) for b in space.blocks) == 7

    def test_paper_shaped_path_count(self):
        # skip is barred from the five reshaping lead blocks: 6**5 * 7**15
        space = build_space(paper_space_config())
        assert space.num_paths == 6**5 * 7**15
        assert f"{space.num_paths:.3g}" == "3.69e+16"

    def test_micro_space(self, micro_space):
        assert micro_space.num_paths == 27

    def test_extended_operator_set(self):
        ops = ["mb3_4", "mb3_6", "mb5_4", "mb5_6", "mb7_4", "mb7_6", "skip", "res3"]
        space = build_space(paper_space_config(operators=ops, width_divisor=8, resolution=32))
        assert max(len(b.operators) for b in space.blocks) == 8

    def test_lead_block_skip_removed_on_stride_two(self):
        cfg = SpaceConfig(stages=[StageConfig(8, 2, 2, ["mb3_2", "skip"])])
        space = build_space(cfg)
        assert [len(b.operators) for b in space.blocks] == [1, 2]

    @pytest.mark.parametrize("stage", [
        StageConfig(8, 1, 3, ["mb3_2"]),
        StageConfig(0, 1, 1, ["mb3_2"]),
        StageConfig(8, 1, 1, ["skip"]),
        StageConfig(8, 1, 1, ["mb3_2", "mb3_2"]),
        StageConfig(8, 0, 1, ["mb3_2"]),
    ])
    def test_invalid_configs(self, stage):
        with pytest.raises(SpaceError):
            build_space(SpaceConfig(stages=[stage]))

    def test_deterministic(self):
        assert build_space(SpaceConfig()) == build_space(SpaceConfig())


class TestSampling:
    def test_uniform_path_frequencies(self, micro_space):
        rng = np.random.default_rng(0)
        counts = collections.Counter(sample_uniform(micro_space, rng) for _ in range(27_000))
        assert len(counts) == 27
        assert all(850 <= c <= 1150 for c in counts.values())

    def test_uniform_marginals_chi_square(self):
        space = build_space(SpaceConfig())
        rng = np.random.default_rng(1)
        samples = np.array([sample_uniform(space, rng) for _ in range(10_000)])
        for b, block in enumerate(space.blocks):
            observed = np.bincount(samples[:, b], minlength=len(block.operators))
            assert stats.chisquare(observed).pvalue > 0.01

    def test_seeded_sequence(self, micro_space):
        a = [sample_uniform(micro_space, np.random.default_rng(5)) for _ in range(3)]
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        assert [sample_uniform(micro_space, r1) for _ in range(20)] == [sample_uniform(micro_space, r2) for _ in range(20)]
        assert a[0] == a[1]

    def test_degenerate_space(self):
        space = build_space(SpaceConfig(stages=[StageConfig(8, 3, 1, ["mb3_2"])]))
        rng = np.random.default_rng(0)
        assert {sample_uniform(space, rng) for _ in range(50)} == {(0, 0, 0)}

    def test_flops_range_unconstrained(self, micro_space):
        r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
        for _ in range(10):
            assert sample_in_flops_range(micro_space, r1, 0, None) == sample_uniform(micro_space, r2)

    def test_flops_range_infeasible(self, micro_space):
        with pytest.raises(SpaceError):
            sample_in_flops_range(micro_space, np.random.default_rng(0), 10**12, 10**13, max_tries=50)

    def test_flops_range_hits_filtered_set(self, micro_space):
        paths = enumerate_paths(micro_space)
        flops = sorted({count_flops(micro_space, p) for p in paths})
        # pick a window holding a handful of paths via the enumerate + filter oracle
        lo, hi = flops[1], flops[2]
        allowed = {p for p in paths if lo <= count_flops(micro_space, p) <= hi}
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert sample_in_flops_range(micro_space, rng, lo, hi) in allowed

    def test_flops_range_bad_bounds(self, micro_space):
        with pytest.raises(SpaceError):
            sample_in_flops_range(micro_space, np.random.default_rng(0), 10, 5)


class TestFlops:
    def test_pointwise_conv_hand_count(self):
        assert layer_macs(LayerSpec("conv2d", 1, 1, 4, 8), 8) == 2048

    def test_depthwise_hand_count(self):
        assert layer_macs(LayerSpec("depthwise_conv2d", 3, 1, 8, 8), 8) == 4608

    def test_dense_and_activation(self):
        assert layer_macs(LayerSpec("dense", 1, 1, 16, 4), 1) == 64
        assert layer_macs(LayerSpec("relu"), 8) == 0

    def test_stride_two_conv(self):
        # 4x4 output, 3x3 kernel, 2 -> 5 channels
        assert layer_macs(LayerSpec("conv2d", 3, 2, 2, 5), 8) == 16 * 5 * 2 * 9

    def test_all_skip_is_stem_plus_head(self, micro_space):
        skip = [b.skip_index() for b in micro_space.blocks]
        assert count_flops(micro_space, skip) == fixed_macs(micro_space)

    def test_additive_over_blocks(self, micro_space):
        for p in enumerate_paths(micro_space):
            parts = sum(operator_macs(b, b.operators[i]) for b, i in zip(micro_space.blocks, p))
            assert count_flops(micro_space, p) == fixed_macs(micro_space) + parts

    def test_positive_and_skip_replacement_increases(self):
        space = build_space(SpaceConfig())
        for p in [sample_uniform(space, np.random.default_rng(s)) for s in range(50)]:
            f = count_flops(space, p)
            assert f > 0
            for b, i in enumerate(p):
                block = space.blocks[b]
                if block.operators[i].is_skip:
                    for j, op in enumerate(block.operators):
                        if not op.is_skip:
                            q = p[:b] + (j,) + p[b + 1:]
                            assert count_flops(space, q) > f


class TestEnumerateAndEncode:
    def test_enumerate_micro(self, micro_space):
        paths = enumerate_paths(micro_space)
        assert len(paths) == 27 == len(set(paths))
        assert paths == sorted(paths)

    def test_cap(self, micro_space):
        with pytest.raises(SpaceError):
            enumerate_paths(micro_space, cap=10)

    def test_round_trip(self, micro_space):
        assert encode((0, 2, 1)) == "0-2-1"
        assert decode("0-2-1", micro_space) == (0, 2, 1)
        for p in enumerate_paths(micro_space):
            assert decode(encode(p), micro_space) == p
        assert len({encode(p) for p in enumerate_paths(micro_space)}) == 27

    @pytest.mark.parametrize("text", ["0-9-0", "0-1", "a-b-c", "0--1", "0-1-2-0"])
    def test_decode_errors(self, micro_space, text):
        with pytest.raises(SpaceError):
            decode(text, micro_space)

    def test_empty_space(self):
        space = build_space(SpaceConfig(stages=[]))
        assert decode("", space) == ()
        assert encode(()) == ""
