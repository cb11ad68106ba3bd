"""First-order optimizers over named parameter blocks.

Both optimizers update a ``dict[str, np.ndarray]`` in place and keep their
moment buffers keyed by the same names.
"""
import numpy as np

from cnir.core.exceptions import GradientError


def check_finite(grads: dict[str, np.ndarray]) -> None:
    """Raise GradientError naming the first block holding NaN or inf."""
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise GradientError(name)


class Adagrad:
    """Adagrad with an accumulator of squared gradients."""

    def __init__(self, lr: float, eps: float = 1e-8):
        self.lr = lr
        self.eps = eps
        self.accum: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        check_finite(grads)
        for name, grad in grads.items():
            acc = self.accum.get(name)
            if acc is None:
                acc = np.zeros_like(params[name])
                self.accum[name] = acc
            acc += grad * grad
            params[name] -= self.lr * grad / (np.sqrt(acc) + self.eps)


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        check_finite(grads)
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
