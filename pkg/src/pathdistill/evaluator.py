"""Ground-truth ranking: stand-alone training, Kendall tau-b and ablation sweeps."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from . import rng as rngs
from .board import evaluate_accuracy
from .config import RunConfig, ScratchConfig, replace
from .data import Dataset
from .search_space import PathSpec, SpaceError, SpaceSpec, build_space, encode, enumerate_paths, sample_uniform
from .supernet import apply_path_grads, backward_path, forward_path, init_supernet
from .trainer import SearchResult, TrainingError, lr_schedule, run_search


def kendall_tau(xs, ys) -> float:
    """Tie-corrected Kendall tau-b."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("kendall_tau needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("kendall_tau needs at least two observations")
    iu = np.triu_indices(len(x), k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    prod = dx * dy
    concordant = np.count_nonzero(prod > 0)
    discordant = np.count_nonzero(prod < 0)
    x_only = np.count_nonzero((dx == 0) & (dy != 0))
    y_only = np.count_nonzero((dy == 0) & (dx != 0))
    denom = (concordant + discordant + x_only) * (concordant + discordant + y_only)
    if denom == 0:
        raise ValueError("kendall_tau is undefined when one list is entirely tied")
    return float((concordant - discordant) / np.sqrt(denom))


def train_from_scratch(space: SpaceSpec, path, dataset: Dataset, scratch: ScratchConfig, seed: int,
                       dtype=np.float32, batch_size: int = 256) -> float:
    """Fresh weights for this path only, plain CE SGD, full-val top-1 accuracy."""
    path = space.validate_path(path)
    net = init_supernet(space, rngs.stream(seed, "scratch/init"), dtype=dtype, path=path)
    data_rng = rngs.stream(seed, "scratch/data")
    tx, ty = dataset.train_x.astype(dtype, copy=False), dataset.train_y
    for t in range(scratch.steps):
        idx = data_rng.choice(len(ty), size=min(scratch.batch_size, len(ty)), replace=False)
        logits, caches = forward_path(net, path, tx[idx])
        loss, g = nx.cross_entropy(logits, ty[idx])
        if not np.isfinite(loss):
            raise TrainingError(t, "non-finite loss in stand-alone training")
        apply_path_grads(net, path, backward_path(net, path, caches, g), lr_schedule(t, scratch.steps, scratch.lr0))
    return evaluate_accuracy(net, path, dataset.val_x.astype(dtype, copy=False), dataset.val_y, batch_size)


def _standalone_job(args):
    space, path, dataset, scratch = args
    return float(np.median([train_from_scratch(space, path, dataset, scratch, s) for s in scratch.seeds]))


def standalone_accuracies(space: SpaceSpec, paths, dataset: Dataset, scratch: ScratchConfig,
                          n_jobs: int = 1) -> dict[PathSpec, float]:
    """Median-over-seeds stand-alone accuracy per path; parallel runs merge in path order."""
    paths = [tuple(p) for p in paths]
    jobs = [(space, p, dataset, scratch) for p in paths]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            accs = list(pool.map(_standalone_job, jobs))
    else:
        accs = [_standalone_job(j) for j in jobs]
    return dict(zip(paths, accs))


@dataclass
class RankReport:
    seed: int
    paths: list[PathSpec]
    supernet_acc: list[float]
    standalone_acc: list[float]
    tau: float
    final_path: PathSpec | None = None
    per_seed: list = field(default_factory=list)

    @property
    def mean_supernet_acc(self) -> float:
        return float(np.mean(self.supernet_acc))

    def rows(self) -> list[dict]:
        return [{"path": encode(p), "supernet_acc": s, "standalone_acc": a}
                for p, s, a in zip(self.paths, self.supernet_acc, self.standalone_acc)]


def ranking_paths(config: RunConfig, space: SpaceSpec | None = None) -> list[PathSpec]:
    """Every path when the space is small enough, otherwise ``num_paths`` distinct random ones."""
    space = space or build_space(config.space)
    try:
        return enumerate_paths(space, config.eval.enumerate_cap)
    except SpaceError:
        pass
    n = config.eval.num_paths
    if n > space.num_paths:
        raise ValueError(f"cannot draw {n} distinct paths from a space of {space.num_paths}")
    rng = rngs.stream(config.seed, "rank_paths")
    seen: dict[PathSpec, None] = {}
    while len(seen) < n:
        seen.setdefault(sample_uniform(space, rng))
    return list(seen)


def rank_experiment(config: RunConfig, dataset: Dataset, standalone: dict | None = None,
                    search: SearchResult | None = None, n_jobs: int = 1) -> RankReport:
    """Kendall tau between inherited-weight and stand-alone accuracies."""
    if search is None:
        search = run_search(config, dataset)
    space = search.state.space
    net = search.state.net
    paths = ranking_paths(config, space)
    vx = dataset.val_x.astype(net.dtype, copy=False)
    sup = [evaluate_accuracy(net, p, vx, dataset.val_y, config.eval.batch_size) for p in paths]
    if standalone is None:
        standalone = standalone_accuracies(space, paths, dataset, config.eval.scratch, n_jobs)
    alone = [standalone[p] for p in paths]
    return RankReport(config.seed, paths, sup, alone, kendall_tau(sup, alone), search.final_path)


def rank_over_seeds(config: RunConfig, dataset: Dataset, seeds, standalone: dict | None = None,
                    n_jobs: int = 1) -> tuple[float, list[RankReport]]:
    """Median tau over several search seeds (stand-alone truth computed once)."""
    if standalone is None:
        space = build_space(config.space)
        standalone = standalone_accuracies(space, ranking_paths(config, space), dataset, config.eval.scratch, n_jobs)
    reports = [rank_experiment(replace(config, seed=s), dataset, standalone) for s in seeds]
    return float(np.median([r.tau for r in reports])), reports


def subset_rank_agreement(search: SearchResult, dataset: Dataset, sizes, seed: int, paths=None,
                          batch_size: int = 256) -> list[float]:
    """Tau between accuracies on a validation subset and on the full split, per subset size.

    Ranks the board entries unless ``paths`` is given. Subsets are nested
    prefixes of one seeded shuffle; ``None`` in ``sizes`` means the full split.
    """
    net = search.state.net
    paths = paths if paths is not None else [e.path for e in search.board.entries]
    vx = dataset.val_x.astype(net.dtype, copy=False)
    full = [evaluate_accuracy(net, p, vx, dataset.val_y, batch_size) for p in paths]
    taus = []
    for size in sizes:
        sx, sy = dataset.val_subset(size, seed)
        sub = [evaluate_accuracy(net, p, sx.astype(net.dtype, copy=False), sy, batch_size) for p in paths]
        try:
            taus.append(kendall_tau(sub, full))
        except ValueError:
            taus.append(float("nan"))
    return taus


def ablation_driver(config: RunConfig, knob: str, values, dataset: Dataset, seeds=(0,),
                    standalone: dict | None = None, n_jobs: int = 1) -> list[dict]:
    """One table row per value of ``knob`` ("board.size" or "board.val_subset").

    board.size: median rank tau against stand-alone accuracy over ``seeds``.
    board.val_subset: median tau between subset and full-val board rankings.
    """
    rows = []
    if knob == "board.val_subset":
        searches = {}
        for s in seeds:
            start = time.perf_counter()
            searches[s] = (run_search(replace(config, seed=s), dataset), time.perf_counter() - start)
        for v in values:
            size = None if v in (None, "full") else int(v)
            start = time.perf_counter()
            taus = [subset_rank_agreement(searches[s][0], dataset, [size], seed=s)[0] for s in seeds]
            defined = [t for t in taus if not np.isnan(t)]
            # tau is undefined when every board entry ties on one side
            rows.append({knob: "full" if size is None else size,
                         "tau": float(np.median(defined)) if defined else float("nan"),
                         "taus": taus, "runtime_s": time.perf_counter() - start})
        return rows
    if knob != "board.size":
        raise ValueError(f"unsupported ablation knob {knob!r}")
    if standalone is None:
        space = build_space(config.space)
        standalone = standalone_accuracies(space, ranking_paths(config, space), dataset, config.eval.scratch, n_jobs)
    for v in values:
        start = time.perf_counter()
        tau, reports = rank_over_seeds(replace(config, **{knob: v}), dataset, seeds, standalone)
        rows.append({knob: v, "tau": tau, "taus": [r.tau for r in reports],
                     "hypernet_acc": float(np.mean([r.mean_supernet_acc for r in reports])),
                     "runtime_s": time.perf_counter() - start})
    return rows
