"""Weight-sharing architecture search where prioritized paths distill into sampled ones."""

from .config import RunConfig, from_dict, load_config
from .data import Dataset, gen_synthetic
from .evaluator import kendall_tau, rank_experiment
from .search_space import SpaceConfig, StageConfig, build_space, count_flops, decode, encode
from .trainer import SearchResult, run_search

__version__ = "0.1.0"

__all__ = [
    "Dataset", "RunConfig", "SearchResult", "SpaceConfig", "StageConfig", "build_space", "count_flops", "decode",
    "encode", "from_dict", "gen_synthetic", "kendall_tau", "load_config", "rank_experiment", "run_search",
]
