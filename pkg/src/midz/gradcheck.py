"""Central finite-difference checks for every differentiable operator.

Each case draws inputs away from kinks (relu, abs and clip boundaries) so
the finite difference is well defined. The checked scalar is a random
weighting of the operator's output, summed in float64; the error reported
is ``|g_analytic - g_numeric| / (|g_analytic| + |g_numeric|)`` over the
flattened gradient of every input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import DTYPE, Tensor, backward, ops

STEP = 1e-3
TOLERANCE = 1e-3


def _away_from_zero(rng, shape, lo=0.1, hi=2.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _normal(rng, *shape):
    return rng.normal(size=shape)


# name -> builder(rng) returning (input arrays, function of input tensors)
CASES: dict[str, Callable] = {
    "add": lambda r: ([_normal(r, 3, 4), _normal(r, 4)], lambda a, b: ops.add(a, b)),
    "bias_add": lambda r: ([_normal(r, 2, 3, 5), _normal(r, 5)], lambda a, b: ops.bias_add(a, b)),
    "sub": lambda r: ([_normal(r, 3, 4), _normal(r, 3, 1)], lambda a, b: ops.sub(a, b)),
    "mul": lambda r: ([_normal(r, 3, 4), _normal(r, 1, 4)], lambda a, b: ops.mul(a, b)),
    "matmul": lambda r: ([_normal(r, 3, 5), _normal(r, 5, 4)], lambda a, b: ops.matmul(a, b)),
    "conv2d": lambda r: ([_normal(r, 2, 6, 6, 3), 0.3 * _normal(r, 4, 4, 3, 4)],
                         lambda x, w: ops.conv2d(x, w, stride=2, padding=1)),
    "conv2d_stride1": lambda r: ([_normal(r, 1, 5, 5, 2), 0.3 * _normal(r, 3, 3, 2, 3)],
                                 lambda x, w: ops.conv2d(x, w, stride=1, padding=0)),
    "conv1x1": lambda r: ([_normal(r, 2, 3, 3, 4), _normal(r, 4, 5)], lambda x, w: ops.conv1x1(x, w)),
    "relu": lambda r: ([_away_from_zero(r, (4, 5))], ops.relu),
    "leaky_relu": lambda r: ([_away_from_zero(r, (4, 5))], lambda x: ops.leaky_relu(x, 0.2)),
    "sigmoid": lambda r: ([r.uniform(-4, 4, size=(4, 5))], ops.sigmoid),
    "softplus": lambda r: ([r.uniform(-6, 6, size=(4, 5))], ops.softplus),
    "absolute": lambda r: ([_away_from_zero(r, (4, 5))], ops.absolute),
    "clip": lambda r: ([np.where(r.random((4, 5)) < 0.5, r.uniform(-0.4, 0.4, (4, 5)), _away_from_zero(r, (4, 5), 0.6, 2.0))],
                       lambda x: ops.clip(x, -0.5, 0.5)),
    "sum": lambda r: ([_normal(r, 3, 4, 2)], lambda x: ops.sum(x, axis=1)),
    "sum_all": lambda r: ([_normal(r, 3, 4)], lambda x: ops.sum(x)),
    "mean": lambda r: ([_normal(r, 3, 4, 2)], lambda x: ops.mean(x, axis=(0, 2))),
    "concat": lambda r: ([_normal(r, 3, 2), _normal(r, 3, 4)], lambda a, b: ops.concat([a, b], axis=1)),
    "reshape": lambda r: ([_normal(r, 2, 6)], lambda x: ops.reshape(x, (3, 4))),
    "flatten": lambda r: ([_normal(r, 2, 3, 2)], ops.flatten),
    "take_rows": lambda r: ([_normal(r, 5, 3)], lambda x: ops.take_rows(x, [4, 0, 0, 2, 1, 3])),
    "cross_entropy": lambda r: ([_normal(r, 6, 4)], lambda x: ops.cross_entropy(x, [0, 3, 1, 1, 2, 0])),
}


@dataclass(frozen=True)
class GradCheckResult:
    op: str
    seed: int
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def check_case(name: str, seed: int, step: float = STEP) -> GradCheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    arrays, fn = CASES[name](rng)
    arrays = [np.asarray(a, DTYPE) for a in arrays]
    weights = rng.normal(size=np.shape(fn(*[Tensor(a) for a in arrays]).data))

    def value(arrs) -> float:
        out = fn(*[Tensor(a) for a in arrs]).data
        return float(np.sum(out.astype(np.float64) * weights))

    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = ops.sum(ops.mul(fn(*inputs), Tensor(weights)))
    analytic = backward(loss, inputs)

    num_err = den = 0.0
    for k, a in enumerate(arrays):
        numeric = np.zeros(a.shape, np.float64)
        for i in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][i] += DTYPE(step)
            minus[k][i] -= DTYPE(step)
            # use the step actually realized in float32
            h = float(plus[k][i]) - float(minus[k][i])
            numeric[i] = (value(plus) - value(minus)) / h
        g = analytic[k].astype(np.float64)
        num_err += float(np.sum((g - numeric) ** 2))
        den += float(np.sum(g ** 2)) ** 0.5 + float(np.sum(numeric ** 2)) ** 0.5
    rel = num_err ** 0.5 / den if den > 0 else num_err ** 0.5
    return GradCheckResult(name, seed, rel)


def run_gradcheck(names: Sequence[str] | None = None, seeds: Sequence[int] = range(10)) -> list[GradCheckResult]:
    names = list(CASES) if names is None else list(names)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise ValueError(f"unknown operators: {', '.join(unknown)}")
    return [check_case(n, s) for n in names for s in seeds]
