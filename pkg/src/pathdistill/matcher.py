"""Meta network that scores teacher/student logit gaps and picks a teacher.

The network maps each example's logit difference (teacher minus student)
through dense -> ReLU -> dense, averages the scalar outputs over the batch
and squashes the mean with a sigmoid to give a matching degree in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .board import Board
from .numerics import LayerSpec, NumericsError, ParamSet
from .supernet import PathGrads, Supernet, forward_path

MetaParams = ParamSet


class NoTeacherError(RuntimeError):
    """Every board entry equals the student path."""


@dataclass
class MatchScore:
    rho: float
    pre_activation: float
    teacher_index: int | None = None
    teacher_logits: np.ndarray | None = field(default=None, repr=False)
    cache: tuple | None = field(default=None, repr=False)


def _layers(meta: MetaParams) -> tuple[LayerSpec, LayerSpec]:
    c, h = meta["fc1.weight"].shape
    return LayerSpec("dense", 1, 1, c, h), LayerSpec("dense", 1, 1, h, 1)


def init_meta(classes: int, hidden: int, rng: np.random.Generator, dtype=np.float64) -> MetaParams:
    if hidden < 1:
        raise NumericsError("meta hidden size must be >= 1")
    b1, b2 = np.sqrt(3.0 / classes), np.sqrt(3.0 / hidden)
    return {
        "fc1.weight": rng.uniform(-b1, b1, size=(classes, hidden)).astype(dtype),
        "fc1.bias": np.zeros(hidden, dtype=dtype),
        "fc2.weight": rng.uniform(-b2, b2, size=(hidden, 1)).astype(dtype),
        "fc2.bias": np.zeros(1, dtype=dtype),
    }


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def score(meta: MetaParams, teacher_logits: np.ndarray, student_logits: np.ndarray) -> MatchScore:
    if teacher_logits.shape != student_logits.shape or teacher_logits.ndim != 2:
        raise NumericsError(f"logit shapes differ: {teacher_logits.shape} vs {student_logits.shape}")
    l1, l2 = _layers(meta)
    if teacher_logits.shape[1] != l1.in_channels:
        raise NumericsError("logit width does not match the meta network input")
    diff = (teacher_logits - student_logits).astype(meta["fc1.weight"].dtype)
    a, c1 = nx.forward(l1, {"weight": meta["fc1.weight"], "bias": meta["fc1.bias"]}, diff)
    h, c2 = nx.forward(LayerSpec("relu"), {}, a)
    out, c3 = nx.forward(l2, {"weight": meta["fc2.weight"], "bias": meta["fc2.bias"]}, h)
    z = float(out.mean())
    return MatchScore(float(_sigmoid(z)), z, cache=(c1, c2, c3, out.shape))


def rho_gradient(meta: MetaParams, match: MatchScore) -> MetaParams:
    """Exact gradient of rho with respect to every meta parameter."""
    if match.cache is None:
        raise NumericsError("match score carries no forward cache")
    c1, c2, c3, out_shape = match.cache
    l1, l2 = _layers(meta)
    rho = match.rho
    g_out = np.full(out_shape, rho * (1.0 - rho) / out_shape[0], dtype=meta["fc2.weight"].dtype)
    g_h, g2 = nx.backward(l2, {"weight": meta["fc2.weight"], "bias": meta["fc2.bias"]}, c3, g_out)
    g_a, _ = nx.backward(LayerSpec("relu"), {}, c2, g_h)
    _, g1 = nx.backward(l1, {"weight": meta["fc1.weight"], "bias": meta["fc1.bias"]}, c1, g_a)
    return {"fc1.weight": g1["weight"], "fc1.bias": g1["bias"],
            "fc2.weight": g2["weight"], "fc2.bias": g2["bias"]}


def select_teacher(meta: MetaParams, board: Board, net: Supernet, student_path, batch: np.ndarray,
                   student_logits: np.ndarray | None = None) -> MatchScore:
    """Highest-rho board entry for this student; ties go to the lowest slot."""
    student_path = tuple(student_path)
    if student_logits is None:
        student_logits, _ = forward_path(net, student_path, batch)
    best = None
    for k, entry in enumerate(board.entries):
        if entry.path == student_path:
            continue
        t_logits, _ = forward_path(net, entry.path, batch)
        m = score(meta, t_logits, student_logits)
        if best is None or m.pre_activation > best.pre_activation:
            m.teacher_index = k
            m.teacher_logits = t_logits
            best = m
    if best is None:
        raise NoTeacherError("student path is the only path on the board")
    return best


def hypergradient(meta: MetaParams, match: MatchScore, v: PathGrads, g_kd: PathGrads, eta: float) -> MetaParams:
    """Gradient of the post-update validation loss with respect to the meta parameters.

    The student update is w' = w - eta * (g_ce + rho * g_kd), so
    dR/drho = v . (-eta * g_kd) with v the validation gradient at w'.
    """
    if set(v) != set(g_kd):
        raise NumericsError("v and g_kd cover different parameters")
    s = -eta * nx.flat_dot(v, g_kd)
    return {k: s * g for k, g in rho_gradient(meta, match).items()}


def meta_step(meta: MetaParams, grads: MetaParams, meta_lr: float) -> MetaParams:
    if set(grads) != set(meta):
        raise NumericsError("meta gradient keys do not match the meta parameters")
    return nx.sgd_step(meta, grads, meta_lr)
