"""Central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` recomputes a scalar loss from the current values of ``params``.
    Relative error per coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``.
    ``analytic`` overrides the reverse-mode gradients (used for fault injection).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if analytic is None:
        for p in params:
            p.grad = np.zeros_like(p.data)
        out = f()
        if not np.isfinite(out.data).all():
            raise NumericError("grad_check: function value is not finite")
        out.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("grad_check: function value is not finite")
            num = (fp - fm) / (2.0 * eps)
            denom = max(abs(a[i]), abs(num), 1e-8)
            worst = max(worst, abs(a[i] - num) / denom)
    return worst
