"""Named parameter collections."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ModelParams(dict):
    """Ordered ``name -> Tensor`` map.

    Names are dotted (``encoder.conv0.weight``); the EMA shadow of the
    encoder lives under the ``ema.`` prefix in the same map.
    """

    def with_prefix(self, prefix: str) -> "ModelParams":
        return ModelParams((k, v) for k, v in self.items() if k.startswith(prefix))

    def strip_prefix(self, prefix: str) -> "ModelParams":
        return ModelParams((k[len(prefix):], v) for k, v in self.items() if k.startswith(prefix))

    def copy_params(self, dtype=None, requires_grad: bool | None = None) -> "ModelParams":
        out = ModelParams()
        for k, v in self.items():
            rg = v.requires_grad if requires_grad is None else requires_grad
            out[k] = Tensor(np.array(v.data, dtype=dtype or v.dtype, copy=True), requires_grad=rg)
        return out

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))

    def zero_grad(self):
        for v in self.values():
            v.grad = None

    def flat(self) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([v.data.ravel().astype(np.float64) for v in self.values()])
