"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, no_grad


def _value(f, x) -> float:
    y = f(x)
    v = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("gradient_check: f(x) is not finite")
    return float(v.reshape(-1)[0])


def gradient_check(f, x: Tensor, h: float = 1e-5, coords=None, zero_tol: float = 1e-10) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps ``x`` to a scalar Tensor.  ``coords`` optionally restricts the
    check to a subset of flat indices (the max is taken over that subset).
    A coordinate where both gradients are below ``zero_tol`` counts as agreeing:
    there the difference quotient only measures rounding noise.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if not x.requires_grad:
        raise ValueError("gradient_check: x must require grad")
    x.zero_grad()
    y = f(x)
    if not np.all(np.isfinite(y.data)):
        raise NumericError("gradient_check: f(x) is not finite")
    if y.requires_grad:
        y.backward()
    analytic = x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = _value(f, x)
            flat[i] = orig - h
            fm = _value(f, x)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i]
            if max(abs(a), abs(numeric)) < zero_tol:
                continue
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


def gradient_check_params(loss_fn, params, h: float = 1e-5, per_param: int | None = None,
                          rng: np.random.Generator | None = None, zero_tol: float = 1e-10) -> float:
    """Run ``gradient_check`` on each parameter of a model and return the worst error.

    ``loss_fn`` takes no arguments and rebuilds the loss from current parameter data.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        coords = None
        if per_param is not None and p.size > per_param:
            coords = rng.choice(p.size, size=per_param, replace=False)
        worst = max(worst, gradient_check(lambda _: loss_fn(), p, h, coords, zero_tol))
    return worst
