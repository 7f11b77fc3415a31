"""Finite-difference gradient verification.

The numeric side is an independent oracle: it only ever calls the forward
computation on perturbed plain arrays, never the tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def numeric_gradient(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    index: int,
    step: float = 1e-5,
) -> np.ndarray:
    """Central finite differences of f w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(base)
        flat[i] = orig - step
        lo = f(base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst-case |a-n| / max(|a|, |n|, floor) over all elements."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(
    build: Callable[[Sequence[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    wrt: Sequence[int] | None = None,
    step: float = 1e-5,
    rtol: float = 1e-6,
    atol: float = 1e-9,
) -> float:
    """Compare tape gradients of a scalar-valued graph against central
    finite differences.

    ``build`` maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error over the checked inputs; raises AssertionError when the
    elementwise tolerance |a - n| <= atol + rtol*max(|a|,|n|) is violated.
    """
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)
    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    with Tape() as tape:
        loss = build(tensors)
        tape.backward(loss)

    def forward(arrs: Sequence[np.ndarray]) -> float:
        return build([Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        numeric = numeric_gradient(forward, arrays, i, step=step)
        err = np.abs(analytic - numeric)
        bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
        if np.any(err > bound):
            j = int(np.argmax(err - bound))
            raise AssertionError(
                f"gradcheck failed for input {i} at flat index {j}: "
                f"analytic={analytic.reshape(-1)[j]:.6e} "
                f"numeric={numeric.reshape(-1)[j]:.6e}"
            )
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst
