"""Shared test utilities: finite differences and input builders."""

import numpy as np

from cvrlab.autodiff import Tensor


def central_diff(f, inputs, which, index, eps):
    """Central finite difference of scalar f(*inputs) wrt one element."""
    base = inputs[which].data
    saved = base[index]
    base[index] = saved + eps
    hi = f(*inputs).item()
    base[index] = saved - eps
    lo = f(*inputs).item()
    base[index] = saved
    return (hi - lo) / (2.0 * eps)


def check_grads(f, inputs, eps=1e-3, floor=0.1):
    """Max relative error between finite-difference and backward gradients.

    Fresh tensors are rebuilt per evaluation so no graph state leaks between
    the probe passes and the analytic pass.
    """
    tensors = [Tensor(arr.copy(), requires_grad=True) for arr in inputs]
    loss = f(*tensors)
    loss.backward()
    worst = 0.0
    for which, t in enumerate(tensors):
        it = np.ndindex(*t.shape) if t.shape else [()]
        for index in it:
            fd = central_diff(lambda *args: f(*args), tensors, which, index, eps)
            ad = float(t.grad[index]) if t.shape else float(t.grad)
            err = abs(fd - ad) / max(abs(fd), abs(ad), floor)
            worst = max(worst, err)
    return worst
