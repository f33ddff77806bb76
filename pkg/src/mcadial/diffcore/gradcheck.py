"""Central finite-difference checks for graph gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``param.data``.

    ``param.data`` is perturbed in place and restored.  The perturbation is
    applied in float64 when ``param`` is float64; for float32 parameters the
    caller should use :func:`check_gradients` with ``fd_dtype=np.float64``.
    """
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
                    floor: float = 1e-6) -> float:
    """Backprop once, then compare every parameter against central differences.

    Returns the largest relative error over all parameters.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, relative_error(a, numeric_grad(f, p, h), floor))
    return worst


def check_gradients_mixed(build: Callable[[type], tuple[Callable[[], Tensor], Sequence[Tensor]]],
                          h: float = 1e-4, floor: float = 1e-4) -> float:
    """Analytic gradients in float32 against float64 finite differences.

    ``build(dtype)`` must return ``(loss_fn, params)`` for a model created in
    ``dtype`` from the same seed, so both copies share parameter values up to
    rounding.  The larger default ``floor`` reflects float32 resolution:
    gradients that vanish exactly (e.g. key biases under softmax) come back
    from float32 backprop as ~1e-7 noise, which must not count as error.
    """
    f32, p32 = build(np.float32)
    f64, p64 = build(np.float64)
    for p in p32:
        p.zero_grad()
    f32().backward()
    worst = 0.0
    for a, b in zip(p32, p64):
        # evaluate at the float32 point so both sides see the same parameters
        b.data[...] = a.data.astype(np.float64)
    for a, b in zip(p32, p64):
        worst = max(worst, relative_error(a.grad, numeric_grad(f64, b, h), floor))
    return worst
