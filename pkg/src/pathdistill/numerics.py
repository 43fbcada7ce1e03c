"""Small tensor kernels with hand-written forward and backward passes.

Activations use NHWC layout. Parameter layouts:

    conv2d            weight (k, k, C_in, C_out), bias (C_out,)
    depthwise_conv2d  weight (k, k, C),          bias (C,)
    dense             weight (C_in, C_out),      bias (C_out,)

Every function is pure: arrays passed in are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ParamSet = dict[str, np.ndarray]

LAYER_KINDS = ("conv2d", "depthwise_conv2d", "dense", "relu", "global_avg_pool", "add")


class NumericsError(ValueError):
    """Shape mismatch, bad arguments or non-finite values."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    stride: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise NumericsError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise NumericsError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.stride not in (1, 2):
            raise NumericsError(f"stride must be 1 or 2, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise NumericsError("channel counts must be positive")
        if self.kind == "depthwise_conv2d" and self.in_channels != self.out_channels:
            raise NumericsError("depthwise conv needs in_channels == out_channels")

    @property
    def padding(self) -> int:
        return self.kernel // 2

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        p, k, s = self.padding, self.kernel, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k, ci, co = self.kernel, self.in_channels, self.out_channels
        if self.kind == "conv2d":
            return {"weight": (k, k, ci, co), "bias": (co,)}
        if self.kind == "depthwise_conv2d":
            return {"weight": (k, k, ci), "bias": (ci,)}
        if self.kind == "dense":
            return {"weight": (ci, co), "bias": (co,)}
        return {}

    def fan_in(self) -> int:
        if self.kind == "conv2d":
            return self.kernel * self.kernel * self.in_channels
        if self.kind == "depthwise_conv2d":
            return self.kernel * self.kernel
        return self.in_channels


def check_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.isfinite(x).all():
        raise NumericsError(f"non-finite values in {what}")


def _check_params(layer: LayerSpec, params: ParamSet) -> None:
    for name, shape in layer.param_shapes().items():
        if name not in params:
            raise NumericsError(f"{layer.kind}: missing parameter {name!r}")
        if params[name].shape != shape:
            raise NumericsError(
                f"{layer.kind}: parameter {name!r} has shape {params[name].shape}, expected {shape}"
            )
        check_finite(params[name], f"{layer.kind}.{name}")


def _check_image(layer: LayerSpec, x: np.ndarray) -> None:
    if x.ndim != 4 or x.shape[-1] != layer.in_channels:
        raise NumericsError(
            f"{layer.kind}: expected input (N, H, W, {layer.in_channels}), got {x.shape}"
        )


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _windows(xp: np.ndarray, layer: LayerSpec, ho: int, wo: int) -> np.ndarray:
    """(N, Ho, Wo, C, k, k) view of the padded input."""
    k, s = layer.kernel, layer.stride
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win[:, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]


def forward(layer: LayerSpec, params: ParamSet, x):
    """Run one layer. Returns ``(y, cache)``; ``add`` takes a pair ``(a, b)``."""
    kind = layer.kind
    if kind == "add":
        a, b = x
        if a.shape != b.shape:
            raise NumericsError(f"add: shape mismatch {a.shape} vs {b.shape}")
        check_finite(a, "add input")
        check_finite(b, "add input")
        return a + b, {"shape": a.shape}

    check_finite(x, f"{kind} input")
    _check_params(layer, params)

    if kind == "relu":
        return np.maximum(x, 0), {"mask": x > 0}

    if kind == "global_avg_pool":
        if x.ndim != 4:
            raise NumericsError(f"global_avg_pool: expected 4-d input, got {x.shape}")
        return x.mean(axis=(1, 2)), {"shape": x.shape}

    if kind == "dense":
        if x.shape[-1] != layer.in_channels or x.ndim not in (1, 2):
            raise NumericsError(f"dense: expected (N, {layer.in_channels}), got {x.shape}")
        return x @ params["weight"] + params["bias"], {"x": x}

    _check_image(layer, x)
    n, h, w, c = x.shape
    ho, wo = layer.output_hw(h, w)
    k, s = layer.kernel, layer.stride

    if kind == "conv2d":
        if k == 1 and s == 1:
            y = x @ params["weight"][0, 0] + params["bias"]
            return y, {"x": x}
        win = _windows(_pad(x, layer.padding), layer, ho, wo)
        # im2col ordered (C, ki, kj) to match the flattened weight below
        cols = win.reshape(n * ho * wo, c * k * k)
        wmat = params["weight"].transpose(2, 0, 1, 3).reshape(c * k * k, -1)
        y = (cols @ wmat).reshape(n, ho, wo, -1) + params["bias"]
        return y, {"cols": cols, "in_shape": x.shape}

    # depthwise_conv2d
    xp = _pad(x, layer.padding)
    wt = params["weight"]
    y = np.zeros((n, ho, wo, c), dtype=np.result_type(x, wt))
    for i in range(k):
        for j in range(k):
            y += xp[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] * wt[i, j]
    y += params["bias"]
    return y, {"xp": xp, "in_shape": x.shape}


def backward(layer: LayerSpec, params: ParamSet, cache, grad_y: np.ndarray):
    """Gradients of a layer given its forward cache. Returns ``(grad_x, grad_params)``."""
    if cache is None:
        raise NumericsError(f"{layer.kind}: missing activation cache")
    kind = layer.kind

    if kind == "add":
        if grad_y.shape != cache["shape"]:
            raise NumericsError("add: grad shape mismatch")
        return (grad_y, grad_y), {}

    if kind == "relu":
        if grad_y.shape != cache["mask"].shape:
            raise NumericsError("relu: grad shape mismatch")
        return grad_y * cache["mask"], {}

    if kind == "global_avg_pool":
        n, h, w, c = cache["shape"]
        if grad_y.shape != (n, c):
            raise NumericsError("global_avg_pool: grad shape mismatch")
        gx = np.broadcast_to(grad_y[:, None, None, :] / (h * w), cache["shape"]).copy()
        return gx, {}

    if kind == "dense":
        x = cache["x"]
        if grad_y.shape != x.shape[:-1] + (layer.out_channels,):
            raise NumericsError("dense: grad shape mismatch")
        x2 = np.atleast_2d(x)
        g2 = np.atleast_2d(grad_y)
        grads = {"weight": x2.T @ g2, "bias": g2.sum(axis=0)}
        return grad_y @ params["weight"].T, grads

    k, s = layer.kernel, layer.stride

    if kind == "conv2d" and "x" in cache:
        x = cache["x"]
        if grad_y.shape != x.shape[:-1] + (layer.out_channels,):
            raise NumericsError("conv2d: grad shape mismatch")
        w0 = params["weight"][0, 0]
        x2 = x.reshape(-1, x.shape[-1])
        g2 = grad_y.reshape(-1, grad_y.shape[-1])
        grads = {"weight": (x2.T @ g2)[None, None], "bias": g2.sum(axis=0)}
        return grad_y @ w0.T, grads

    n, h, w, c = cache["in_shape"]
    ho, wo = layer.output_hw(h, w)
    if grad_y.shape != (n, ho, wo, layer.out_channels):
        raise NumericsError(f"{kind}: grad shape mismatch")
    p = layer.padding
    gxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=grad_y.dtype)

    if kind == "conv2d":
        cols = cache["cols"]
        g2 = grad_y.reshape(-1, layer.out_channels)
        wmat = params["weight"].transpose(2, 0, 1, 3).reshape(c * k * k, -1)
        gw = (cols.T @ g2).reshape(c, k, k, -1).transpose(1, 2, 0, 3)
        gcols = (g2 @ wmat.T).reshape(n, ho, wo, c, k, k)
        for i in range(k):
            for j in range(k):
                gxp[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += gcols[..., i, j]
        grads = {"weight": gw, "bias": g2.sum(axis=0)}
    else:
        xp = cache["xp"]
        wt = params["weight"]
        gw = np.empty_like(wt)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + (ho - 1) * s + 1, s), slice(j, j + (wo - 1) * s + 1, s))
                gw[i, j] = (xp[sl] * grad_y).sum(axis=(0, 1, 2))
                gxp[sl] += grad_y * wt[i, j]
        grads = {"weight": gw, "bias": grad_y.sum(axis=(0, 1, 2))}

    gx = gxp[:, p : p + h, p : p + w] if p else gxp
    return np.ascontiguousarray(gx), grads


def softmax(logits: np.ndarray) -> np.ndarray:
    check_finite(logits, "logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross entropy against integer labels and its gradient w.r.t. logits."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, c = logits.shape
    if labels.shape != (n,):
        raise NumericsError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise NumericsError(f"label out of range [0, {c})")
    check_finite(logits, "logits")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def soft_cross_entropy(student_logits: np.ndarray, teacher_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross entropy of student softmax against soft targets (temperature 1)."""
    s = np.atleast_2d(student_logits)
    q = np.atleast_2d(teacher_probs)
    if s.shape != q.shape:
        raise NumericsError(f"shape mismatch {s.shape} vs {q.shape}")
    if np.abs(q.sum(axis=-1) - 1.0).max() > 1e-6:
        raise NumericsError("teacher rows must sum to 1")
    check_finite(s, "student logits")
    logp = log_softmax(s)
    n = s.shape[0]
    loss = -(q * logp).sum() / n
    return float(loss), (np.exp(logp) - q) / n


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    if lr < 0:
        raise NumericsError("learning rate must be non-negative")
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise NumericsError(f"gradient shape mismatch for {name!r}")
        out[name] = p if lr == 0 else (p - (lr * g).astype(p.dtype, copy=False))
    extra = set(grads) - set(params)
    if extra:
        raise NumericsError(f"gradients for unknown parameters {sorted(extra)}")
    return out


def flat_dot(a: ParamSet, b: ParamSet) -> float:
    if set(a) != set(b):
        raise NumericsError("flat_dot: key sets differ")
    total = 0.0
    for key in sorted(a):
        if a[key].shape != b[key].shape:
            raise NumericsError(f"flat_dot: shape mismatch at {key!r}")
        total += float(np.dot(a[key].ravel().astype(np.float64), b[key].ravel().astype(np.float64)))
    return total
