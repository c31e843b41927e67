"""Central finite-difference verification of reverse-mode gradients."""

import numpy as np

from ..errors import NumericalError


def grad_check(f, params, h=1e-5):
    """Max relative error between analytic and numeric gradients.

    f: deterministic callable returning a scalar Tensor built from the
    given parameters. Error per entry is |analytic - numeric| / max(1, |numeric|);
    the max over all entries of all parameters is returned.
    """
    params = list(params)
    for p in params:
        p.tensor.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    out.backward()
    analytic = {p.name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for p in params}

    max_err = 0.0
    for p in params:
        flat = p.tensor.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_hi = float(f().data)
            flat[i] = orig - h
            f_lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise NumericalError("grad_check: non-finite value during finite differencing")
            numeric = (f_hi - f_lo) / (2.0 * h)
            a = analytic[p.name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
