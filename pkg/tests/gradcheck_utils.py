"""Shared helper: compare backward() gradients against central differences."""

import numpy as np

from idlx import autodiff as ad


def rel_gradient_error(build, arrays, eps=1e-6):
    """Worst relative discrepancy between analytic and numeric gradients.

    ``build`` maps Tensors (one per array) to a scalar Tensor. The error is
    |analytic - numeric| / max(1, |analytic|, |numeric|), maximized over
    all coordinates of all inputs.
    """
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def f(*arrs):
        with ad.no_grad():
            return build(*[ad.Tensor(x) for x in arrs]).item()

    numeric = ad.numeric_gradient(f, [a.copy() for a in arrays], eps=eps)
    worst = 0.0
    for t, num in zip(tensors, numeric):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        scale = max(1.0, np.abs(num).max(), np.abs(analytic).max())
        worst = max(worst, float(np.abs(analytic - num).max() / scale))
    return worst
