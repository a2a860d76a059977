"""Feedforward baselines: a dense MLP and the two-input toy model."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mps import MpsModel
from .tensor import ShapeMismatchError

ACTIVATIONS = ("relu", "identity", "sigmoid")


class StaleCacheError(RuntimeError):
    pass


def activate(name: str, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(y, 0.0)
    if name == "identity":
        return y
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-y))
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Derivative wrt the pre-activation ``y`` (``z`` is the output)."""
    if name == "relu":
        return (y > 0.0).astype(y.dtype)  # 0 at exactly 0
    if name == "identity":
        return np.ones_like(y)
    if name == "sigmoid":
        return z * (1.0 - z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"


class Mlp:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weights.shape[0],):
                raise ShapeMismatchError(f"layer {k}: bias does not match weights")
            if k and layer.weights.shape[1] != self.layers[k - 1].weights.shape[0]:
                raise ShapeMismatchError(f"layer {k}: input width does not chain")

    @classmethod
    def init(cls, sizes: Sequence[int], seed=0, hidden: str = "relu",
             output: str = "identity") -> "Mlp":
        """Gaussian weights with stddev ``1/sqrt(fan_in)``, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output if k == len(sizes) - 2 else hidden
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weights.shape[1]] + [l.weights.shape[0] for l in self.layers]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def fingerprint(self) -> int:
        crc = 0
        for p in self.params:
            crc = zlib.crc32(p.tobytes(), crc)
        return crc


def param_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class ForwardCache:
    inputs: list  # z^(l-1) per layer
    pre: list  # y^(l)
    post: list  # z^(l)
    fingerprint: int


def mlp_forward(m: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    """Logits for one input vector or a batch ``(B, in)``."""
    z = np.asarray(x, dtype=np.float64)
    if z.shape[-1] != m.sizes[0]:
        raise ShapeMismatchError(f"input has width {z.shape[-1]}, network expects {m.sizes[0]}")
    inputs, pre, post = [], [], []
    for layer in m.layers:
        inputs.append(z)
        y = z @ layer.weights.T + layer.bias
        z = activate(layer.activation, y)
        pre.append(y)
        post.append(z)
    return z, ForwardCache(inputs, pre, post, m.fingerprint())


def mlp_backward(m: Mlp, cache: ForwardCache, loss_grad) -> list[np.ndarray]:
    """Gradients ``[dW1, db1, dW2, db2, ...]`` given dLoss/dlogits.

    Batched inputs sum the per-row contributions; pass a mean-scaled
    ``loss_grad`` for a mean loss.
    """
    if cache.fingerprint != m.fingerprint():
        raise StaleCacheError("forward cache was computed with different parameters")
    g = np.asarray(loss_grad, dtype=np.float64)
    grads: list[np.ndarray] = []
    for k in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[k]
        g = g * activation_grad(layer.activation, cache.pre[k], cache.post[k])
        zin = cache.inputs[k]
        if g.ndim == 1:
            dw = np.outer(g, zin)
            db = g.copy()
        else:
            dw = g.T @ zin
            db = g.sum(axis=0)
        grads = [dw, db] + grads
        g = g @ layer.weights
    return grads


@dataclass
class ToyModel:
    """``f(x) = phi(w_rel * x_rel + w_irr * x_irr + b)``."""

    w_rel: float
    w_irr: float
    b: float
    activation: str = "identity"

    def __post_init__(self):
        if not all(np.isfinite([self.w_rel, self.w_irr, self.b])):
            raise ValueError("toy model parameters must be finite")

    @classmethod
    def init(cls, seed=0, scale: float = 0.1, activation: str = "identity") -> "ToyModel":
        rng = np.random.default_rng(seed)
        w_rel, w_irr, b = rng.normal(0.0, scale, size=3)
        return cls(float(w_rel), float(w_irr), float(b), activation)

    def as_vector(self) -> np.ndarray:
        return np.array([self.w_rel, self.w_irr, self.b])

    def with_vector(self, v) -> "ToyModel":
        return ToyModel(float(v[0]), float(v[1]), float(v[2]), self.activation)


def toy_forward(m: ToyModel, x_rel, x_irr) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(output, pre_activation)``."""
    y = m.w_rel * np.asarray(x_rel, dtype=np.float64) + m.w_irr * np.asarray(x_irr, dtype=np.float64) + m.b
    return activate(m.activation, y), y


def toy_gradients(m: ToyModel, x_rel, x_irr, output_grad) -> np.ndarray:
    """Summed ``(dL/dw_rel, dL/dw_irr, dL/db)`` given dL/d(output) per row.

    Every row shares ``g = phi'(y) * dL/dphi``, so per row
    ``dL/dw_irr = x_irr * dL/db`` holds exactly.
    """
    out, y = toy_forward(m, x_rel, x_irr)
    g = activation_grad(m.activation, y, out) * np.asarray(output_grad, dtype=np.float64)
    return np.array([np.sum(np.asarray(x_rel) * g), np.sum(np.asarray(x_irr) * g), np.sum(g)])


def flatten_params(m) -> np.ndarray:
    """Fixed-order parameter vector.

    Mlp: layer by layer, weights (row-major) then bias. MpsModel: site by
    site, row-major. ToyModel: ``(w_rel, w_irr, b)``.
    """
    if isinstance(m, Mlp):
        return np.concatenate([p.ravel() for p in m.params])
    if isinstance(m, MpsModel):
        return np.concatenate([s.ravel() for s in m.sites])
    if isinstance(m, ToyModel):
        return m.as_vector()
    raise TypeError(f"cannot flatten {type(m).__name__}")


def unflatten_params(template, vector) -> object:
    """Inverse of :func:`flatten_params`, shaped like ``template``."""
    v = np.asarray(vector, dtype=np.float64)
    if v.size != flatten_params(template).size:
        raise ShapeMismatchError(f"vector of length {v.size} does not fit template")
    if isinstance(template, ToyModel):
        return template.with_vector(v)
    pos = 0
    chunks = []
    shapes = [p.shape for p in template.params] if isinstance(template, Mlp) else [s.shape for s in template.sites]
    for shape in shapes:
        size = int(np.prod(shape))
        chunks.append(v[pos:pos + size].reshape(shape).copy())
        pos += size
    if isinstance(template, Mlp):
        return Mlp([Layer(chunks[2 * k], chunks[2 * k + 1], l.activation)
                    for k, l in enumerate(template.layers)])
    return template.replace_sites(chunks)
