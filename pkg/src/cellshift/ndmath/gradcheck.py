"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ArgumentError, NumericError
from .params import ParamSet
from .tensor import Tape, Tensor, backward


def grad_check(
    f: Callable[[ParamSet], Tensor],
    params: ParamSet,
    h: float = 1e-5,
    coords_per_param: int = 4,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must rebuild its scalar loss from ``params`` on every call (it is
    evaluated repeatedly with parameters perturbed in place). Relative error
    is ``|analytic - fd| / max(1, |analytic|)`` per sampled coordinate.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ArgumentError(f"step h={h} outside [1e-6, 1e-4]")
    if rng is None:
        rng = np.random.default_rng(0)

    tape = Tape()
    params.bind(tape)
    loss = f(params)
    if loss.data.shape != ():
        raise ArgumentError("grad_check expects a scalar loss")
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite at the evaluation point")
    backward(tape, 1.0, out=loss)
    analytic = params.grads()
    params.bind(None)

    worst = 0.0
    for name, _tensor in params.items():
        t = params[name]
        n = t.data.size
        if n <= coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=coords_per_param, replace=False)
        flat = t.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f(params).item()
            flat[i] = orig - h
            down = f(params).item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while probing {name}[{i}]")
            fd = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - fd) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst
