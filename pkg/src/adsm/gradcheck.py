"""Central finite-difference checks for the autodiff ops.

Each case builds float64 inputs from a seeded generator, contracts the op's
output with a fixed random cotangent to get a scalar, and compares the
reverse-mode gradient with central differences of the same scalar computed
on raw numpy arrays (no graph involved).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad

STEP = 1e-5


@dataclass
class GradCase:
    name: str
    make_inputs: Callable[[np.random.Generator], list[np.ndarray]]
    fn: Callable[..., Tensor]


def _normal(*shape):
    return lambda rng: rng.normal(size=shape)


def _away_from_zero(*shape):
    # kinks at 0 (abs) are kept a safe distance from the difference step
    def make(rng):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 0.05, np.sign(x + 1e-12) * 0.05 + x, x)
    return make


def _positive(*shape):
    return lambda rng: rng.uniform(0.3, 2.0, size=shape)


def _distinct(*shape):
    # well separated values so the arg-max cannot flip under the step
    def make(rng):
        n = int(np.prod(shape))
        return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.01, n)).reshape(shape)
    return make


def _inputs(*makers):
    return lambda rng: [m(rng) for m in makers]


CASES: list[GradCase] = [
    GradCase("add", _inputs(_normal(3, 4), _normal(3, 4)), lambda a, b: a + b),
    GradCase("add_suffix_broadcast", _inputs(_normal(2, 3, 4), _normal(4)), lambda a, b: a + b),
    GradCase("sub", _inputs(_normal(3, 4), _normal(4)), lambda a, b: a - b),
    GradCase("mul", _inputs(_normal(2, 5), _normal(2, 5)), lambda a, b: a * b),
    GradCase("mul_suffix_broadcast", _inputs(_normal(4, 2, 5), _normal(2, 5)), lambda a, b: a * b),
    GradCase("div", _inputs(_normal(3, 3), _positive(3, 3)), lambda a, b: a / b),
    GradCase("neg", _inputs(_normal(4)), lambda a: -a),
    GradCase("abs", _inputs(_away_from_zero(3, 4)), T.abs_),
    GradCase("exp", _inputs(_normal(3, 4)), T.exp),
    GradCase("log", _inputs(_positive(3, 4)), T.log),
    GradCase("sqrt", _inputs(_positive(3, 4)), T.sqrt),
    GradCase("gelu", _inputs(_normal(3, 6)), T.gelu),
    GradCase("matmul", _inputs(_normal(3, 4), _normal(4, 2)), lambda a, b: a @ b),
    GradCase("matmul_batched", _inputs(_normal(2, 3, 4), _normal(2, 4, 5)), lambda a, b: a @ b),
    GradCase("matmul_shared_weight", _inputs(_normal(2, 3, 4), _normal(4, 5)), lambda a, b: a @ b),
    GradCase("transpose", _inputs(_normal(2, 3, 4)), lambda a: T.transpose(a, (2, 0, 1))),
    GradCase("reshape", _inputs(_normal(2, 6)), lambda a: T.reshape(a, (3, 4))),
    GradCase("expand", _inputs(_normal(2, 1, 3)), lambda a: T.expand(a, (2, 4, 3))),
    GradCase("concat", _inputs(_normal(2, 3), _normal(2, 2)), lambda a, b: T.concat([a, b], axis=1)),
    GradCase("split", _inputs(_normal(6, 2)), lambda a: T.split(a, [2, 5], axis=0)[1]),
    GradCase("sum", _inputs(_normal(3, 4)), lambda a: T.sum_(a, axis=0)),
    GradCase("mean", _inputs(_normal(3, 4, 2)), lambda a: T.mean(a, axis=(0, 2))),
    GradCase("max", _inputs(_distinct(3, 5)), lambda a: T.max_(a, axis=1)),
    GradCase("softmax", _inputs(_normal(3, 5)), lambda a: T.softmax(a, axis=-1)),
    GradCase("layer_norm", _inputs(_normal(4, 6)), T.layer_norm),
    GradCase("attention_like", _inputs(_normal(2, 4, 3), _normal(2, 4, 3), _normal(2, 4, 3)),
             lambda q, k, v: T.softmax(q @ T.transpose(k, (0, 2, 1)), axis=-1) @ v),
    GradCase("mlp_like", _inputs(_normal(5, 4), _normal(4, 6), _normal(6)),
             lambda x, w, b: T.layer_norm(T.gelu(x @ w + b))),
]


def _scalar(fn, arrays, cot):
    with no_grad():
        out = fn(*[Tensor(a, dtype=np.float64) for a in arrays])
    return float(np.sum(out.data * cot))


def check_case(case: GradCase, seed: int, step: float = STEP) -> float:
    """Largest relative error between analytic and numerical gradients over all inputs."""
    rng = np.random.default_rng(seed)
    arrays = case.make_inputs(rng)
    params = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = case.fn(*params)
    cot = rng.normal(size=out.shape)
    loss = T.sum_(out * Tensor(cot))
    analytic = T.grad(loss, params)
    worst = 0.0
    for k, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += step
            minus[k][idx] -= step
            num[idx] = (_scalar(case.fn, plus, cot) - _scalar(case.fn, minus, cot)) / (2 * step)
        denom = max(np.linalg.norm(analytic[k]), np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic[k] - num) / denom))
    return worst


def run_trials(trials_per_case: int = 4, seed: int = 0) -> dict[str, float]:
    """Worst relative error per op over ``trials_per_case`` random draws each."""
    return {case.name: max(check_case(case, seed * 1000 + t) for t in range(trials_per_case)) for case in CASES}
