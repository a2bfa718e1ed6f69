"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ContractError, NumericError
from . import ops
from .params import ModelParams
from .tensor import Tape, Tensor


def _value(f, params) -> float:
    out = f(params)
    v = float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(v):
        raise NumericError("grad_check: non-finite function value")
    return v


def _value_and_masks(f, params) -> tuple[float, list]:
    ops._mask_log = []
    try:
        v = _value(f, params)
        return v, ops._mask_log
    finally:
        ops._mask_log = None


def grad_check(
    f: Callable[[ModelParams], Tensor],
    params: ModelParams,
    h: float = 1e-5,
    max_coords: int = 40,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``max_coords`` coordinates per parameter tensor are sampled (all of them
    when the tensor is smaller). The relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.

    With ``skip_kinks`` a coordinate whose +h and -h evaluations see
    different ReLU activation patterns is replaced by another one: the
    difference quotient there straddles a non-differentiable point and says
    nothing about the tape. Coordinates are drawn until ``max_coords`` clean
    ones are found or the tensor is exhausted.
    """
    if not 1e-5 <= h <= 1e-3:
        raise ContractError(f"grad_check: step {h} outside [1e-5, 1e-3]")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ContractError(f"grad_check needs float64 parameters; {name!r} is {p.dtype}")
    if not params:
        return 0.0
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite function value")
    tape.backward(loss, wrt=params.values())
    worst = 0.0
    for p in params.values():
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.permutation(n)
        done = 0
        for i in idx:
            if done == max_coords:
                break
            orig = flat[i]
            if skip_kinks:
                flat[i] = orig + h
                fp, mp = _value_and_masks(f, params)
                flat[i] = orig - h
                fm, mm = _value_and_masks(f, params)
                flat[i] = orig
                if mp != mm:
                    continue
            else:
                flat[i] = orig + h
                fp = _value(f, params)
                flat[i] = orig - h
                fm = _value(f, params)
                flat[i] = orig
            done += 1
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def layer_cases(seed: int = 0):
    """Small float64 problems, one per op type, as ``(name, params, f)``."""
    from .ops import add, conv1d, conv_transpose1d, flatten, linear, mse, relu, reshape, scale, sub

    rng = np.random.default_rng(seed)

    def t(a):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)

    x3 = rng.standard_normal((2, 3, 21))
    x2 = rng.standard_normal((3, 6))
    # keep relu inputs away from the kink so central differences are exact
    x2r = x2 + np.sign(x2) * 0.1
    return [
        ("conv1d", ModelParams(w=t(rng.standard_normal((4, 3, 5))), b=t(rng.standard_normal(4)), x=t(x3)),
         lambda p: mse(conv1d(p["x"], p["w"], p["b"], 2, 2), np.zeros((2, 4, 11)))),
        ("conv_transpose1d", ModelParams(w=t(rng.standard_normal((3, 2, 3))), b=t(rng.standard_normal(2)), x=t(x3)),
         lambda p: mse(conv_transpose1d(p["x"], p["w"], p["b"], 2, 1, 1), np.ones((2, 2, 42)))),
        ("relu", ModelParams(x=t(x2r)), lambda p: mse(relu(p["x"]), np.ones((3, 6)))),
        ("linear", ModelParams(w=t(rng.standard_normal((5, 6))), b=t(rng.standard_normal(5)), x=t(x2)),
         lambda p: mse(linear(p["x"], p["w"], p["b"]), np.ones((3, 5)))),
        ("flatten", ModelParams(x=t(x3)), lambda p: mse(flatten(p["x"]), np.ones((2, 63)))),
        ("reshape", ModelParams(x=t(x2)), lambda p: mse(reshape(p["x"], (9, 2)), np.ones((9, 2)))),
        ("add_scale_sub", ModelParams(a=t(x2), b=t(x2[::-1].copy())),
         lambda p: mse(sub(add(p["a"], scale(p["b"], -1.5)), scale(p["a"], 0.25)), np.ones((3, 6)))),
        ("mse", ModelParams(a=t(x2), b=t(x2 * 0.5)), lambda p: mse(p["a"], p["b"])),
    ]
