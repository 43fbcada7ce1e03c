import numpy as np
import pytest

from pathdistill.config import from_dict
from pathdistill.data import gen_synthetic
from pathdistill.search_space import SpaceConfig, StageConfig, build_space

MICRO_OPS = ["mb3_2", "mb5_2", "skip"]


def micro_space_config(ops=MICRO_OPS, resolution=8, channels=4, head=8, classes=4):
    stage = StageConfig(channels, 1, 1, list(ops))
    return SpaceConfig(resolution=resolution, in_channels=1, classes=classes, stem_channels=channels,
                       stem_stride=1, head_channels=head, stages=[stage, stage, stage])


def micro_run_dict(**train):
    stage = {"channels": 4, "repeat": 1, "stride": 1, "operators": MICRO_OPS}
    return {
        "seed": 0,
        "data": {"synthetic": {"classes": 4, "resolution": 8, "n_train": 256, "n_val": 128, "noise": 0.3,
                               "seed": 1}},
        "space": {"resolution": 8, "classes": 4, "stem_channels": 4, "head_channels": 8,
                  "stages": [stage, stage, stage]},
        "train": {"steps": 12, "lr0": 0.2, "batch_size": 16, "meta_interval": 3, "meta_val_batch": 32, **train},
        "board": {"size": 3, "val_subset": 32},
        "eval": {"batch_size": 64, "scratch": {"steps": 5, "lr0": 0.2, "batch_size": 16, "seeds": [0]}},
    }


@pytest.fixture
def micro_space():
    return build_space(micro_space_config())


@pytest.fixture
def micro_config():
    return from_dict(micro_run_dict())


@pytest.fixture
def tiny_data():
    return gen_synthetic(classes=4, resolution=8, n_train=256, n_val=128, noise=0.3, seed=1)


# acceptance verdicts, printed as one line per criterion at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> bool:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
