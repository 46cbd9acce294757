"""Fully connected conditional generator ``x = G(y, z)`` in plain numpy.

Hidden layers use ReLU and inverted dropout; the output layer is affine.
Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` with ``W`` of
shape (fan_in, fan_out), which is also the checkpoint order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataset import Scaler


@dataclass(frozen=True)
class Architecture:
    d: int
    q: int
    hidden_layers: int = 1
    hidden_width: int = 64
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.d < 1 or self.q < 1 or self.hidden_width < 1:
            raise ValueError("dimensions must be >= 1")
        if self.hidden_layers not in (1, 2):
            raise ValueError("hidden_layers must be 1 or 2")
        if not 0.0 <= self.dropout_rate < 0.5:
            raise ValueError("dropout_rate must lie in [0, 0.5)")

    @property
    def input_dim(self) -> int:
        return self.q + self.d

    @property
    def output_dim(self) -> int:
        return self.d

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.d]
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for fan_in, fan_out in self.layer_dims():
            shapes += [(fan_in, fan_out), (fan_out,)]
        return shapes

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.hidden_layers + 1):
            names += [f"W{i}", f"b{i}"]
        return names

    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


@dataclass
class GeneratorModel:
    arch: Architecture
    params: list[np.ndarray]
    scaler: Scaler | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if len(self.params) != len(shapes):
            raise ValueError("parameter list does not match the architecture")
        for p, s in zip(self.params, shapes):
            if p.shape != s:
                raise ValueError(f"parameter shape {p.shape} != expected {s}")

    def copy(self) -> "GeneratorModel":
        return GeneratorModel(self.arch, [p.copy() for p in self.params],
                              self.scaler, dict(self.meta))


def init(arch: Architecture, seed: int) -> GeneratorModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in arch.layer_dims():
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return GeneratorModel(arch, params)


def dropout_masks(arch: Architecture, n: int, seed) -> list[np.ndarray]:
    """Inverted-dropout masks (entries 0 or 1/(1-r)), one per hidden layer."""
    r = arch.dropout_rate
    rng = np.random.default_rng(seed)
    keep = 1.0 - r
    return [(rng.random((n, arch.hidden_width)) < keep) / keep
            for _ in range(arch.hidden_layers)]


def _inputs(model, y, z):
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    single = y.ndim == 1 and z.ndim == 1
    y, z = np.atleast_2d(y), np.atleast_2d(z)
    if y.shape[1] != model.arch.q or z.shape[1] != model.arch.d:
        raise ValueError(
            f"expected y of dim {model.arch.q} and z of dim {model.arch.d}, "
            f"got {y.shape[1]} and {z.shape[1]}")
    if y.shape[0] != z.shape[0]:
        raise ValueError("y and z row counts differ")
    return np.hstack([y, z]), single


def _forward(params, h, masks):
    acts = [h]
    n_hidden = len(params) // 2 - 1
    for i in range(n_hidden):
        h = h @ params[2 * i] + params[2 * i + 1]
        np.maximum(h, 0.0, out=h)
        if masks is not None:
            h = h * masks[i]
        acts.append(h)
    return h @ params[-2] + params[-1], acts


def forward(model: GeneratorModel, y, z, train_mode: bool = False,
            dropout_seed=None, masks=None) -> np.ndarray:
    """Evaluate G on one (y, z) pair or on row-stacked batches."""
    inp, single = _inputs(model, y, z)
    if train_mode and model.arch.dropout_rate > 0:
        if masks is None:
            masks = dropout_masks(model.arch, inp.shape[0], dropout_seed)
    else:
        masks = None
    out, _ = _forward(model.params, inp, masks)
    return out[0] if single else out


def _loss_grad(params, inp, target, masks, out=None):
    """MSE and its gradient; ``out`` optionally receives the gradients in place."""
    pred, acts = _forward(params, inp, masks)
    resid = pred - target
    loss = float(np.mean(resid * resid))
    g = resid * (2.0 / resid.size)
    grads = out if out is not None else [np.empty_like(p) for p in params]
    n_layers = len(params) // 2
    for i in reversed(range(n_layers)):
        a = acts[i]
        np.matmul(a.T, g, out=grads[2 * i])
        np.sum(g, axis=0, out=grads[2 * i + 1])
        if i > 0:
            g = g @ params[2 * i].T
            # ReLU and dropout both zero the same units; mask scale passes through
            if masks is not None:
                g *= masks[i - 1]
            g[a <= 0] = 0.0
    return loss, grads


def mse_and_gradient(model: GeneratorModel, y, z, x_target, dropout_seed=None,
                     masks=None, train_mode: bool = True):
    """Mean squared error over batch rows and output coordinates, and its gradient."""
    inp, _ = _inputs(model, y, z)
    target = np.atleast_2d(np.asarray(x_target, dtype=np.float64))
    if target.shape != (inp.shape[0], model.arch.d):
        raise ValueError("target shape does not match batch")
    if inp.shape[0] == 0:
        raise ValueError("empty batch")
    if train_mode and model.arch.dropout_rate > 0:
        if masks is None:
            masks = dropout_masks(model.arch, inp.shape[0], dropout_seed)
    else:
        masks = None
    return _loss_grad(model.params, inp, target, masks)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def _adam_update(p, g, m, v, state, lr):
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def adam_step(model: GeneratorModel, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place."""
    for g in grads:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    state.step += 1
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        _adam_update(p, g, m, v, state, lr)
    return model, state


def flat_views(shapes, buf: np.ndarray) -> list[np.ndarray]:
    """Split a flat buffer into views with the given shapes."""
    views, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        views.append(buf[pos:pos + n].reshape(s))
        pos += n
    return views
