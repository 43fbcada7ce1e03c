"""Supernet search loop with prioritized-path distillation (and the plain SPOS baseline)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import numerics as nx
from . import rng as rngs
from .board import Board, BoardEntry, final_selection, init_board, try_insert, evaluate_accuracy
from .config import RunConfig
from .data import Dataset
from .matcher import MatchScore, NoTeacherError, hypergradient, init_meta, meta_step, select_teacher
from .metrics import MetricsWriter
from .numerics import NumericsError
from .search_space import PathSpec, SpaceSpec, build_space, count_flops, encode, sample_uniform
from .supernet import (PathGrads, Supernet, all_unit_keys, apply_path_grads, backward_path, forward_path,
                       init_supernet)

log = logging.getLogger(__name__)

STREAMS = ("init", "meta_init", "board", "sampling", "data", "meta_data")


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def lr_schedule(t: int, total: int, lr0: float, kind: str = "linear") -> float:
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if kind == "constant":
        return lr0
    return lr0 * (1.0 - t / total)


@dataclass
class TrainState:
    config: RunConfig
    space: SpaceSpec
    net: Supernet
    board: Board
    meta: dict
    rngs: dict[str, np.random.Generator]
    step: int = 0
    velocity: dict = field(default_factory=dict)


@dataclass
class StepReport:
    record: dict
    match: MatchScore | None = None
    g_kd: PathGrads | None = None
    path: PathSpec | None = None
    lr: float = 0.0


@dataclass
class SearchResult:
    final_path: PathSpec
    board: Board
    metrics: list[dict]
    state: TrainState
    final_accuracies: list[float]


def check_compatible(space: SpaceSpec, dataset: Dataset) -> None:
    if dataset.resolution != space.resolution or dataset.channels != space.in_channels:
        raise ValueError(
            f"dataset images are {dataset.resolution}x{dataset.resolution}x{dataset.channels}, "
            f"space expects {space.resolution}x{space.resolution}x{space.in_channels}"
        )
    if dataset.classes != space.classes:
        raise ValueError(f"dataset has {dataset.classes} classes, space has {space.classes}")


def init_state(config: RunConfig, dtype=np.float32) -> TrainState:
    space = build_space(config.space)
    streams = {name: rngs.stream(config.seed, name) for name in STREAMS}
    net = init_supernet(space, streams["init"], config.train.init_scale, dtype=dtype)
    meta = init_meta(space.classes, config.train.meta_hidden, streams["meta_init"])
    b = config.board
    board = init_board(space, b.size, b.flops_min, b.flops_max, streams["board"])
    return TrainState(config, space, net, board, meta, streams)


def distill_gradients(logits, labels, teacher_probs=None, rho: float = 0.0):
    """Logit gradient of CE + rho * KD, plus the parts needed for logging.

    Returns ``(grad_logits, ce_loss, kd_loss, kd_grad_logits)``; the KD
    entries are None without a teacher.
    """
    ce_loss, g_ce = nx.cross_entropy(logits, labels)
    if teacher_probs is None:
        return g_ce, ce_loss, None, None
    kd_loss, g_kd = nx.soft_cross_entropy(logits, teacher_probs)
    return g_ce + rho * g_kd, ce_loss, kd_loss, g_kd


def _draw(rng, x, y, n):
    idx = rng.choice(len(y), size=min(n, len(y)), replace=False)
    return x[idx], y[idx]


def train_step(state: TrainState, batch, val_subset, meta_due: bool = False) -> StepReport:
    cfg = state.config.train
    t = state.step
    if t >= cfg.steps:
        raise TrainingError(t, "run already finished")
    x, y = batch
    net = state.net
    path = sample_uniform(state.space, state.rngs["sampling"])
    distill = cfg.mode == "cream" and cfg.rho_override != 0
    try:
        logits, caches = forward_path(net, path, x)
        match, fallback, teacher_probs, rho, teacher_path = None, False, None, 0.0, None
        if distill:
            try:
                match = select_teacher(state.meta, state.board, net, path, x, logits)
            except NoTeacherError:
                fallback = True
            else:
                teacher_probs = nx.softmax(match.teacher_logits)
                teacher_path = encode(state.board.entries[match.teacher_index].path)
                rho = match.rho if cfg.rho_override is None else float(cfg.rho_override)
        grad_logits, ce_loss, kd_loss, g_kd_logits = distill_gradients(logits, y, teacher_probs, rho)
        grads = backward_path(net, path, caches, grad_logits)
        g_kd = None
        if meta_due and match is not None:
            g_kd = backward_path(net, path, caches, g_kd_logits)
        lr = lr_schedule(t, cfg.steps, cfg.lr0, cfg.schedule)
        apply_path_grads(net, path, grads, lr, state.velocity, cfg.momentum)
        if not np.isfinite(ce_loss) or (kd_loss is not None and not np.isfinite(kd_loss)):
            raise NumericsError("non-finite loss")

        flops = count_flops(state.space, path)
        acc, insert = None, None
        if t % cfg.eval_interval == 0:
            acc = evaluate_accuracy(net, path, *val_subset)
            insert = try_insert(state.board, BoardEntry(path, acc, flops))
            if not all(state.board.in_bounds(e.flops) for e in state.board.entries):
                raise TrainingError(t, "board entry outside the flops bounds")
    except NumericsError as exc:
        raise TrainingError(t, str(exc)) from exc

    record = {
        "event": "step", "step": t, "path": encode(path), "flops": flops, "lr": lr,
        "ce_loss": ce_loss, "kd_loss": kd_loss, "rho": rho if match is not None else None,
        "teacher": match.teacher_index if match is not None else None,
        "teacher_path": teacher_path,
        "fallback": fallback, "val_acc": acc, "insert": None if insert is None else str(insert),
        "board": state.board.summary(),
    }
    return StepReport(record, match, g_kd, path, lr)


def maybe_meta_update(state: TrainState, report: StepReport, val_batch) -> dict | None:
    """Hypergradient step on the meta network when the step index hits the interval."""
    cfg = state.config.train
    if cfg.mode != "cream" or report.g_kd is None:
        return None
    xv, yv = val_batch
    try:
        logits, caches = forward_path(state.net, report.path, xv)
        val_loss, g = nx.cross_entropy(logits, yv)
        v = backward_path(state.net, report.path, caches, g)
        grads = hypergradient(state.meta, report.match, v, report.g_kd, report.lr)
    except NumericsError as exc:
        raise TrainingError(report.record["step"], str(exc)) from exc
    state.meta = meta_step(state.meta, grads, cfg.meta_lr)
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    return {"event": "meta", "step": report.record["step"], "val_loss": val_loss,
            "rho": report.match.rho, "grad_norm": norm}


def save_checkpoint(state: TrainState, path) -> Path:
    tensors = {}
    for key, params in state.net.weights.items():
        for name, arr in params.items():
            tensors[f"w/{key}/{name}"] = arr
    for name, arr in state.velocity.items():
        tensors[f"v/{name}"] = arr
    for name, arr in state.meta.items():
        tensors[f"m/{name}"] = arr
    meta_state = {
        "step": state.step,
        "dtype": state.net.dtype.str,
        "board": {"entries": [[list(e.path), e.accuracy, e.flops] for e in state.board.entries],
                  "flops_min": state.board.flops_min, "flops_max": state.board.flops_max},
        "rngs": {name: rngs.get_state(r) for name, r in state.rngs.items()},
    }
    tensors["__state__"] = ckpt.pack_json(meta_state)
    ckpt.write_tensors(path, tensors)
    return Path(path)


def load_checkpoint(path, config: RunConfig) -> TrainState:
    tensors = ckpt.read_tensors(path)
    if "__state__" not in tensors:
        raise ckpt.CheckpointError(f"{path}: missing run state")
    info = ckpt.unpack_json(tensors.pop("__state__"))
    space = build_space(config.space)
    dtype = np.dtype(info["dtype"])
    template = init_supernet(space, np.random.default_rng(0), 0.0, dtype=dtype)
    weights = {}
    for key in all_unit_keys(space):
        weights[key] = {}
        for name, ref in template.weights[key].items():
            arr = tensors.pop(f"w/{key}/{name}", None)
            if arr is None or arr.shape != ref.shape:
                raise ckpt.CheckpointError(f"{path}: shape mismatch for {key}/{name} (different space?)")
            weights[key][name] = arr
    velocity = {k[2:]: tensors.pop(k) for k in list(tensors) if k.startswith("v/")}
    meta = {k[2:]: tensors.pop(k) for k in list(tensors) if k.startswith("m/")}
    if any(k.startswith("w/") for k in tensors):
        raise ckpt.CheckpointError(f"{path}: shape mismatch (checkpoint has extra units)")
    if meta["fc1.weight"].shape[0] != space.classes:
        raise ckpt.CheckpointError(f"{path}: shape mismatch for the meta network")
    b = info["board"]
    board = Board([BoardEntry(tuple(p), a, f) for p, a, f in b["entries"]], b["flops_min"], b["flops_max"])
    streams = {name: rngs.stream(config.seed, name) for name in STREAMS}
    for name, st in info["rngs"].items():
        rngs.set_state(streams[name], st)
    return TrainState(config, space, Supernet(space, weights, dtype), board, meta, streams,
                      step=info["step"], velocity=velocity)


def run_search(config: RunConfig, dataset: Dataset, out_dir=None, resume=None, dtype=np.float32,
               stop_after: int | None = None) -> SearchResult:
    """Run every remaining step, then pick the best board entry on the full validation split.

    ``stop_after`` ends the loop early without final selection (used to
    simulate an interrupted run); the result then has ``final_path=None``.
    """
    cfg = config.train
    out = Path(out_dir) if out_dir else None
    if resume is not None:
        state = load_checkpoint(resume, config)
    else:
        state = init_state(config, dtype)
    check_compatible(state.space, dataset)
    data = dataset if dataset.train_x.dtype == state.net.dtype else dataset.astype(state.net.dtype)

    previous = []
    if out is not None and resume is not None and (out / "metrics.jsonl").exists():
        from .metrics import read_metrics
        previous = [r for r in read_metrics(out / "metrics.jsonl")
                    if r.get("event") in ("step", "meta") and r["step"] < state.step]
    writer = MetricsWriter(out / "metrics.jsonl" if out else None, previous)

    val_subset = data.val_subset(config.board.val_subset, config.seed)
    while state.step < cfg.steps:
        if stop_after is not None and state.step >= stop_after:
            return SearchResult(None, state.board, writer.records, state, [])
        t = state.step
        batch = _draw(state.rngs["data"], data.train_x, data.train_y, cfg.batch_size)
        meta_due = cfg.mode == "cream" and cfg.rho_override is None and t % cfg.meta_interval == 0
        report = train_step(state, batch, val_subset, meta_due)
        writer.write(report.record)
        if meta_due:
            val_batch = _draw(state.rngs["meta_data"], data.val_x, data.val_y, cfg.meta_val_batch)
            meta_rec = maybe_meta_update(state, report, val_batch)
            if meta_rec is not None:
                writer.write(meta_rec)
        state.step += 1
        if out is not None and cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
            save_checkpoint(state, out / "checkpoint.crm")
    final, accs = final_selection(state.board, state.net, data.val_x, data.val_y, config.eval.batch_size)
    writer.write({"event": "final", "path": encode(final), "flops": count_flops(state.space, final),
                  "board_val_acc": accs})
    if out is not None:
        save_checkpoint(state, out / "checkpoint.crm")
    log.info("search finished: %s", encode(final))
    return SearchResult(final, state.board, writer.records, state, accs)
