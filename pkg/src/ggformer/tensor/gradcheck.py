"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .core import backward, no_grad

DENOM_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    # parameter label -> max relative error within that parameter
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def __bool__(self):
        return self.passed


def _scalar(t):
    v = float(np.asarray(t.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError("non-finite loss during gradient check")
    return v


def finite_diff_check(f, params, tol=1e-5, step=1e-4):
    """Compare analytic and central-difference gradients of ``f()`` w.r.t. ``params``.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``, maximised elementwise.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [p.grad.copy() for p in params]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite analytic gradient")

    worst = 0.0
    per_param = {}
    with no_grad():
        for idx, (p, a) in enumerate(zip(params, analytic)):
            flat = p.data.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f())
                flat[i] = orig - step
                fm = _scalar(f())
                flat[i] = orig
                numeric[i] = (fp - fm) / (2.0 * step)
            a = a.reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), DENOM_FLOOR)
            err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
            per_param[p.name or f"param{idx}"] = err
            worst = max(worst, err)
    return GradCheckReport(worst, tol, per_param)
