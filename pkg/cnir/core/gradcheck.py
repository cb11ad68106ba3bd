"""Central finite differences for checking hand-written gradients."""
from collections.abc import Callable

import numpy as np


def numerical_gradient(
    loss_fn: Callable[[], float],
    array: np.ndarray,
    index: tuple[int, ...],
    eps: float = 1e-5,
) -> float:
    """d loss / d array[index] by central differences; array is restored."""
    original = array[index]
    array[index] = original + eps
    plus = loss_fn()
    array[index] = original - eps
    minus = loss_fn()
    array[index] = original
    return (plus - minus) / (2.0 * eps)


def gradient_mismatches(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    coords: dict[str, list[tuple[int, ...]]] | None = None,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
) -> list[str]:
    """Compare analytic grads with numerical ones.

    A coordinate passes when |a - n| <= rtol * max(|a|, |n|) + atol. Every
    coordinate is checked unless ``coords`` narrows it per block. Returns one
    message per failing coordinate.
    """
    failures = []
    for name in sorted(grads):
        array = params[name]
        indices = coords[name] if coords and name in coords else list(np.ndindex(array.shape))
        for index in indices:
            numeric = numerical_gradient(loss_fn, array, index, eps)
            analytic = float(grads[name][index])
            if abs(analytic - numeric) > rtol * max(abs(analytic), abs(numeric)) + atol:
                failures.append(f"{name}{list(index)}: analytic={analytic:.8g} numeric={numeric:.8g}")
    return failures
