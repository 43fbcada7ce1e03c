"""Fixed-size board of prioritized paths under selective competition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .search_space import PathSpec, SpaceError, SpaceSpec, count_flops, encode, sample_in_flops_range
from .supernet import Supernet, predict


class BoardError(ValueError):
    pass


@dataclass(frozen=True)
class BoardEntry:
    path: PathSpec
    accuracy: float
    flops: int


@dataclass(frozen=True)
class InsertResult:
    """``index`` is the replaced slot, or None when the candidate was rejected."""

    index: int | None

    @property
    def replaced(self) -> bool:
        return self.index is not None

    def __str__(self):
        return "rejected" if self.index is None else f"replaced:{self.index}"


REJECTED = InsertResult(None)


@dataclass
class Board:
    entries: list[BoardEntry]
    flops_min: int = 0
    flops_max: int | None = None

    @property
    def size(self) -> int:
        return len(self.entries)

    def in_bounds(self, flops: int) -> bool:
        return flops >= self.flops_min and (self.flops_max is None or flops <= self.flops_max)

    def contains(self, path) -> bool:
        return any(e.path == tuple(path) for e in self.entries)

    def summary(self) -> list[dict]:
        return [{"path": encode(e.path), "acc": e.accuracy, "flops": e.flops} for e in self.entries]


def init_board(space: SpaceSpec, size: int, flops_min: int, flops_max, rng: np.random.Generator,
               max_tries: int | None = None) -> Board:
    """``size`` distinct random in-range paths, each starting at accuracy 0."""
    if size < 1:
        raise BoardError("board size must be >= 1")
    if flops_max is not None and flops_min > flops_max:
        raise BoardError("flops_min exceeds flops_max")
    max_tries = max_tries or 200 * size
    seen: dict[PathSpec, None] = {}
    for _ in range(max_tries):
        try:
            path = sample_in_flops_range(space, rng, flops_min, flops_max, max_tries=max_tries)
        except SpaceError as exc:
            raise BoardError(str(exc)) from exc
        seen.setdefault(path)
        if len(seen) == size:
            break
    else:
        raise BoardError(f"could not find {size} distinct paths within the flops range")
    entries = [BoardEntry(p, 0.0, count_flops(space, p)) for p in seen]
    return Board(entries, flops_min, flops_max)


def evaluate_accuracy(net: Supernet, path, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy of ``path`` with inherited weights."""
    if len(labels) == 0:
        raise BoardError("empty validation subset")
    preds = predict(net, path, images, batch_size)
    return float(np.count_nonzero(preds == labels)) / len(labels)


def try_insert(board: Board, candidate: BoardEntry) -> InsertResult:
    """Replace the weakest entry the candidate matches-or-beats on both accuracy and flops."""
    if not board.in_bounds(candidate.flops) or board.contains(candidate.path):
        return REJECTED
    qualified = [
        k for k, e in enumerate(board.entries)
        if candidate.accuracy >= e.accuracy and candidate.flops <= e.flops
    ]
    if not qualified:
        return REJECTED
    target = min(qualified, key=lambda k: (board.entries[k].accuracy, -board.entries[k].flops, k))
    board.entries[target] = candidate
    return InsertResult(target)


def final_selection(board: Board, net: Supernet, images: np.ndarray, labels: np.ndarray,
                    batch_size: int = 256) -> tuple[PathSpec, list[float]]:
    """Re-score every entry on the full validation set; best accuracy wins, then fewer flops."""
    if len(labels) == 0:
        raise BoardError("empty validation set")
    accs = [evaluate_accuracy(net, e.path, images, labels, batch_size) for e in board.entries]
    best = min(range(board.size), key=lambda k: (-accs[k], board.entries[k].flops, k))
    return board.entries[best].path, accs
