"""Adam with bias correction over named float32 parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels
from .tensor import DTYPE, Tensor


class NaNGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def moments_for(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros_like(like, dtype=DTYPE)
            self.v[name] = np.zeros_like(like, dtype=DTYPE)
        m, v = self.m[name], self.v[name]
        if m.shape != like.shape:
            raise ValueError(f"adam: moment shape {m.shape} != parameter shape {like.shape} for {name!r}")
        return m, v


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one Adam update in place and return ``state``.

    Parameters with ``requires_grad=False`` are frozen: they are skipped
    and their moments are left untouched. Parameters that appear under
    several names (weight sharing) are updated once, using the first name.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NaNGradientError(f"adam: non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"adam: gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    seen: set[int] = set()
    for name, p in params.items():
        if not p.requires_grad or id(p) in seen or name not in grads:
            continue
        seen.add(id(p))
        g = grads[name].astype(DTYPE, copy=False)
        m, v = state.moments_for(name, p.data)
        _kernels.adam_update(p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                             b1, b2, DTYPE(1.0 / bc2), DTYPE(state.eps), DTYPE(state.lr / bc1))
    return state
