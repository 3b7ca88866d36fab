"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from rccf.core.tensor import Tensor
from rccf.errors import NonFiniteError, ShapeError


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _scalar(value: Tensor, where: str) -> float:
    if value.size != 1:
        raise ShapeError(f"function must return a scalar, got shape {value.shape}")
    out = value.item()
    if not np.isfinite(out):
        raise NonFiniteError(f"non-finite function value {out!r} {where}")
    return out


def numeric_gradient(fn: Callable[[Tensor], Tensor], point: np.ndarray, step: float = 1e-3,
                     coords: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of ``fn`` at ``point`` for the selected flat coordinates."""
    base = np.array(point, dtype=np.float64)
    flat = base.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + step
        up = _scalar(fn(Tensor(base)), f"at +step on coordinate {i}")
        flat[i] = orig - step
        down = _scalar(fn(Tensor(base)), f"at -step on coordinate {i}")
        flat[i] = orig
        out[k] = (up - down) / (2.0 * step)
    return out


def analytic_gradient(fn: Callable[[Tensor], Tensor], point: np.ndarray) -> np.ndarray:
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    y = fn(x)
    _scalar(y, "at the base point")
    y.backward()
    grad = np.zeros_like(x.data) if x.grad is None else x.grad
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("analytic gradient contains NaN/Inf")
    return grad


def finite_difference_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-3,
                            coords: Optional[Sequence[int]] = None) -> float:
    """Max relative error between backprop and central differences.

    The error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. Raises
    :class:`NonFiniteError` when any evaluation is NaN/Inf.
    """
    point = point.data if isinstance(point, Tensor) else np.asarray(point, dtype=np.float64)
    analytic = analytic_gradient(fn, point).reshape(-1)
    if coords is not None:
        analytic = analytic[list(coords)]
    numeric = numeric_gradient(fn, point, step, coords)
    if analytic.size == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())
