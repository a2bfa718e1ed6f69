"""Adam and EMA parameter updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .params import ModelParams


@dataclass
class AdamState:
    names: list[str]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, **hyper) -> "AdamState":
        state = cls(names=list(params), **hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(state: AdamState, params: ModelParams):
    """One bias-corrected Adam update on ``state.names``; grads are zeroed after."""
    for name in state.names:
        p = params.get(name)
        if p is None or p.grad is None:
            raise ContractError(f"adam_step: no gradient for parameter {name!r}")
        if state.m[name].shape != p.shape:
            raise ContractError(f"adam_step: moment shape mismatch for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in state.names:
        p = params[name]
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.dtype, copy=False)
        p.grad[...] = 0


def ema_update(target: ModelParams, online: ModelParams, alpha: float):
    """target <- alpha * target + (1 - alpha) * online, elementwise, in place.

    Evaluated as ``target += (1 - alpha) * (online - target)`` so that a
    target equal to its online copy is a fixed point in floating point too.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"ema_update: alpha={alpha} outside [0, 1]")
    if list(target) != list(online):
        raise ContractError("ema_update: parameter name sets differ")
    for name, t in target.items():
        o = online[name]
        if t.shape != o.shape:
            raise ContractError(f"ema_update: shape mismatch for {name!r}: {t.shape} vs {o.shape}")
    for name, t in target.items():
        o = online[name].data
        if alpha == 0.0:
            t.data[...] = o
        elif alpha != 1.0:
            t.data += (1.0 - alpha) * (o - t.data)
