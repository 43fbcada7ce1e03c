# Build a search space, count its paths and price a few of them in multiply-adds.
import numpy as np

from pathdistill.search_space import (SpaceConfig, build_space, count_flops, describe, encode, paper_space_config,
                                      sample_uniform)

# the ImageNet-shaped layout: five stages of four blocks, seven operators per block
big = build_space(paper_space_config())
print("paper-shaped space:", big.num_blocks, "blocks,", f"{big.num_paths:.3g}", "paths")

# the desk-scale default is what the CLI uses when a config gives no space
space = build_space(SpaceConfig())
print("default space:", space.num_blocks, "blocks,", space.num_paths, "paths")
for b in space.blocks:
    print(f"  block {b.index}: {b.in_channels}->{b.out_channels} stride {b.stride}",
          [op.name for op in b.operators])

rng = np.random.default_rng(0)
for _ in range(4):
    p = sample_uniform(space, rng)
    print(encode(p), f"{count_flops(space, p):>8,d} MACs", describe(space, p))
