# Train a tiny supernet with and without board distillation and compare how well each
# ranks the 27 paths of the space against stand-alone training. Takes a few minutes.
import numpy as np

from pathdistill.config import from_dict, replace
from pathdistill.data import dataset_from_config
from pathdistill.evaluator import rank_experiment, ranking_paths, standalone_accuracies
from pathdistill.search_space import build_space, describe

stage = {"channels": 8, "repeat": 1, "stride": 1, "operators": ["mb3_2", "mb5_2", "skip"]}
cfg = from_dict({
    "data": {"synthetic": {"classes": 4, "resolution": 12, "n_train": 1024, "n_val": 512, "noise": 0.6,
                           "seed": 7, "jitter": 0.5}},
    "space": {"resolution": 12, "classes": 4, "stem_channels": 8, "head_channels": 16,
              "stages": [stage, stage, stage]},
    "train": {"steps": 300, "lr0": 0.2},
    "board": {"size": 5},
    "eval": {"scratch": {"steps": 300, "lr0": 0.2, "seeds": [0]}},
})
ds = dataset_from_config(cfg.data)
space = build_space(cfg.space)

# ground truth: every path trained on its own
truth = standalone_accuracies(space, ranking_paths(cfg, space), ds, cfg.eval.scratch)
best = max(truth, key=truth.get)
print("best stand-alone path:", describe(space, best), f"{truth[best]:.3f}")

for mode in ("spos", "cream"):
    rep = rank_experiment(replace(cfg, **{"train.mode": mode}), ds, standalone=truth)
    print(f"{mode:5s} tau={rep.tau:+.3f} mean supernet acc={rep.mean_supernet_acc:.3f}",
          "picked", describe(space, rep.final_path), f"(stand-alone {truth[rep.final_path]:.3f})")
print("median truth", np.median(list(truth.values())))
