"""Weight-sharing supernet evaluated one path at a time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import LayerSpec, NumericsError, ParamSet
from .search_space import SpaceSpec

# Gradients for a single path, flat-keyed as "<unit>/<layer>.<param>".
PathGrads = dict[str, np.ndarray]

_RELU = LayerSpec("relu")
_GAP = LayerSpec("global_avg_pool")


@dataclass
class Supernet:
    space: SpaceSpec
    weights: dict[str, ParamSet]
    dtype: np.dtype

    def unit_keys(self, path) -> list[str]:
        path = self.space.validate_path(path)
        keys = ["stem"]
        for b, o in enumerate(path):
            if not self.space.blocks[b].operators[o].is_skip:
                keys.append(block_key(b, o))
        keys.append("head")
        return keys

    def copy(self) -> Supernet:
        return Supernet(self.space, {k: dict(v) for k, v in self.weights.items()}, self.dtype)


def block_key(block: int, op: int) -> str:
    return f"b{block}.{op}"


def _unit_program(space: SpaceSpec, key: str):
    """(layers with relu flags, residual, relu after residual) for one unit."""
    if key == "stem":
        return [("conv", space.stem, True)], False, False
    if key == "head":
        raise KeyError("head has no linear program")
    b, o = (int(s) for s in key[1:].split("."))
    block = space.blocks[b]
    op = block.operators[o]
    chain = op.layers(block.in_channels, block.out_channels, block.stride)
    if op.family == "conv2d":
        flags = [True]
    else:
        flags = [True] * (len(chain) - 1) + [False]
    residual = op.has_residual(block.in_channels, block.out_channels, block.stride)
    post_relu = op.family == "resblock"
    return [(name, layer, f) for (name, layer), f in zip(chain, flags)], residual, post_relu


def _unit_layers(space: SpaceSpec, key: str) -> list[tuple[str, LayerSpec]]:
    if key == "head":
        out = []
        if space.head_conv is not None:
            out.append(("conv", space.head_conv))
        out.append(("fc", space.classifier))
        return out
    return [(name, layer) for name, layer, _ in _unit_program(space, key)[0]]


def all_unit_keys(space: SpaceSpec) -> list[str]:
    keys = ["stem"]
    for block in space.blocks:
        keys.extend(block_key(block.index, o) for o, op in enumerate(block.operators) if not op.is_skip)
    keys.append("head")
    return keys


def init_supernet(space: SpaceSpec, rng: np.random.Generator, init_scale: float = 1.0,
                  dtype=np.float32, path=None) -> Supernet:
    """Fan-in scaled uniform weights, zero biases.

    With ``path`` given only that path's units are created, which is what a
    stand-alone network needs.
    """
    keys = all_unit_keys(space) if path is None else Supernet(space, {}, dtype).unit_keys(path)
    weights = {}
    for key in keys:
        params = {}
        for lname, layer in _unit_layers(space, key):
            bound = init_scale * np.sqrt(3.0 / layer.fan_in())
            shapes = layer.param_shapes()
            params[f"{lname}.weight"] = rng.uniform(-bound, bound, size=shapes["weight"]).astype(dtype)
            params[f"{lname}.bias"] = np.zeros(shapes["bias"], dtype=dtype)
        weights[key] = params
    return Supernet(space, weights, np.dtype(dtype))


def _sub(params: ParamSet, lname: str) -> ParamSet:
    return {"weight": params[f"{lname}.weight"], "bias": params[f"{lname}.bias"]}


def _run_unit(net: Supernet, key: str, x: np.ndarray):
    params = net.weights[key]
    caches = []
    if key == "head":
        h = x
        if net.space.head_conv is not None:
            h, c1 = nx.forward(net.space.head_conv, _sub(params, "conv"), h)
            h, c2 = nx.forward(_RELU, {}, h)
            caches += [c1, c2]
        h, c3 = nx.forward(_GAP, {}, h)
        h, c4 = nx.forward(net.space.classifier, _sub(params, "fc"), h)
        return h, caches + [c3, c4]
    program, residual, post_relu = _unit_program(net.space, key)
    h = x
    for lname, layer, relu in program:
        h, c = nx.forward(layer, _sub(params, lname), h)
        caches.append(c)
        if relu:
            h, c = nx.forward(_RELU, {}, h)
            caches.append(c)
    if residual:
        h, c = nx.forward(LayerSpec("add"), {}, (h, x))
        caches.append(c)
    if post_relu:
        h, c = nx.forward(_RELU, {}, h)
        caches.append(c)
    return h, caches


def _back_unit(net: Supernet, key: str, caches, grad: np.ndarray):
    params = net.weights[key]
    grads: ParamSet = {}
    caches = list(caches)
    if key == "head":
        g, gp = nx.backward(net.space.classifier, _sub(params, "fc"), caches.pop(), grad)
        grads.update({f"fc.{k}": v for k, v in gp.items()})
        g, _ = nx.backward(_GAP, {}, caches.pop(), g)
        if net.space.head_conv is not None:
            g, _ = nx.backward(_RELU, {}, caches.pop(), g)
            g, gp = nx.backward(net.space.head_conv, _sub(params, "conv"), caches.pop(), g)
            grads.update({f"conv.{k}": v for k, v in gp.items()})
        return g, grads
    program, residual, post_relu = _unit_program(net.space, key)
    g = grad
    g_skip = None
    if post_relu:
        g, _ = nx.backward(_RELU, {}, caches.pop(), g)
    if residual:
        (g, g_skip), _ = nx.backward(LayerSpec("add"), {}, caches.pop(), g)
    for lname, layer, relu in reversed(program):
        if relu:
            g, _ = nx.backward(_RELU, {}, caches.pop(), g)
        g, gp = nx.backward(layer, _sub(params, lname), caches.pop(), g)
        grads.update({f"{lname}.{k}": v for k, v in gp.items()})
    if g_skip is not None:
        g = g + g_skip
    return g, grads


def forward_path(net: Supernet, path, batch: np.ndarray):
    """Logits of one path using inherited weights. Returns ``(logits, caches)``."""
    space = net.space
    expected = (space.resolution, space.resolution, space.in_channels)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise NumericsError(f"batch must be (N, {expected[0]}, {expected[1]}, {expected[2]}), got {batch.shape}")
    keys = net.unit_keys(path)
    h = batch.astype(net.dtype, copy=False)
    caches = []
    for key in keys:
        if key not in net.weights:
            raise NumericsError(f"supernet has no weights for unit {key!r}")
        h, c = _run_unit(net, key, h)
        caches.append((key, c))
    nx.check_finite(h, "logits")
    return h, caches


def backward_path(net: Supernet, path, caches, grad_logits: np.ndarray) -> PathGrads:
    keys = net.unit_keys(path)
    if [k for k, _ in caches] != keys:
        raise NumericsError("caches do not belong to this path")
    out: PathGrads = {}
    g = grad_logits.astype(net.dtype, copy=False)
    for key, c in reversed(caches):
        g, grads = _back_unit(net, key, c, g)
        for name, v in grads.items():
            out[f"{key}/{name}"] = v
    return out


def path_params(net: Supernet, path) -> PathGrads:
    """Flat view of the parameters a path reads, keyed like ``PathGrads``."""
    return {f"{key}/{name}": v for key in net.unit_keys(path) for name, v in net.weights[key].items()}


def _split(grads: PathGrads) -> dict[str, ParamSet]:
    out: dict[str, ParamSet] = {}
    for flat, v in grads.items():
        key, name = flat.split("/", 1)
        out.setdefault(key, {})[name] = v
    return out


def apply_path_grads(net: Supernet, path, grads: PathGrads, lr: float,
                     velocity: dict | None = None, momentum: float = 0.0) -> None:
    """SGD on the path's parameters only; everything else is left untouched.

    ``velocity`` holds heavy-ball buffers keyed like ``grads`` when momentum > 0.
    """
    keys = set(net.unit_keys(path))
    by_unit = _split(grads)
    stray = set(by_unit) - keys
    if stray:
        raise NumericsError(f"gradients for units not on the path: {sorted(stray)}")
    for key, unit_grads in by_unit.items():
        if set(unit_grads) != set(net.weights[key]):
            raise NumericsError(f"gradient keys for {key!r} do not match its parameters")
        if momentum:
            stepped = {}
            for name, g in unit_grads.items():
                flat = f"{key}/{name}"
                buf = velocity.get(flat)
                buf = g.copy() if buf is None else momentum * buf + g
                velocity[flat] = buf
                stepped[name] = buf
            unit_grads = stepped
        net.weights[key] = nx.sgd_step(net.weights[key], unit_grads, lr)


def soft_targets(net: Supernet, teacher_path, batch: np.ndarray) -> np.ndarray:
    logits, _ = forward_path(net, teacher_path, batch)
    return nx.softmax(logits)


def predict(net: Supernet, path, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, len(images), batch_size):
        logits, _ = forward_path(net, path, images[start:start + batch_size])
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)
