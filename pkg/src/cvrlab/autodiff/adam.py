"""Adam with decoupled weight decay.

Moments use the standard (0.9, 0.999) estimates with bias correction; the
decay term lr * wd * param is subtracted after the gradient step rather than
folded into the gradient.  A step validates every gradient before touching
any parameter, so a non-finite gradient leaves the model untouched.
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr < 0 or eps <= 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValueError("adam: invalid hyperparameters")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def _grad(self, name: str, p: Tensor) -> np.ndarray:
        # A parameter that never touched the loss keeps an exactly-zero
        # gradient; it still decays.
        if p.grad is None:
            return np.zeros_like(p.data)
        return p.grad

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            g = self._grad(name, p)
            if g.shape != p.data.shape:
                raise NumericsError(f"adam: gradient shape {g.shape} != param shape {p.data.shape} for {name}")
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"adam: non-finite gradient for {name}")
            grads[name] = g

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= np.asarray(self.lr, dtype=p.data.dtype) * mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                p.data -= np.asarray(self.lr * self.weight_decay, dtype=p.data.dtype) * p.data
