"""Kernel families, their partial derivatives, and discrete support queries.

Two families are provided:

* ``gaussian``: K(x, y) = exp(-|x - y|^2 / scale^2), smooth and globally
  supported (discretely truncated to the window footprint).
* ``wendland_c0_mult``: the product over axes of the one-dimensional C0
  kernel ((1 - |dx|/scale) clipped at 0)^2. Compactly supported: exactly
  zero as soon as any axis offset reaches ``scale``. Not differentiable on
  the axis-aligned hyperplanes through the second argument; this kink is
  what lets first-order momenta encode velocity jumps.

Derivatives are taken with respect to the *second* argument (the control
point). On the kink set the first partial uses the symmetric-subgradient
value 0; the mixed second partial uses the positive diagonal limit
``2/scale^2`` per 1D factor.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import GridGeometry

__all__ = [
    "KernelSpec",
    "eval_kernel",
    "eval_partial",
    "eval_mixed",
    "eval_kernel_many",
    "eval_partial_many",
    "eval_mixed_many",
    "support_nodes",
    "default_scale",
]

FAMILIES = ("gaussian", "wendland_c0_mult")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, physical scale, and odd discrete window size."""

    family: str
    scale: float
    window: int = 9

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


def default_scale(grid: GridGeometry) -> float:
    """Default physical scale: 4 x the finest grid spacing.

    With the default 9-node window the compact support then just fills the
    discrete footprint.
    """
    return 4.0 * min(grid.spacing)


def _check_pair(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"points must be equal-length 1D, got {x.shape} and {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("kernel arguments must be finite")
    return x, y


# Vectorized cores: X is (m, d), y is (d,).


def eval_kernel_many(spec: KernelSpec, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx = np.atleast_2d(X) - y
    if spec.family == "gaussian":
        return np.exp(-np.sum(dx * dx, axis=1) / spec.scale**2)
    f = np.clip(1.0 - np.abs(dx) / spec.scale, 0.0, None)
    return np.prod(f * f, axis=1)


def eval_partial_many(spec: KernelSpec, i: int, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx = np.atleast_2d(X) - y
    s = spec.scale
    if spec.family == "gaussian":
        return 2.0 * dx[:, i] / s**2 * np.exp(-np.sum(dx * dx, axis=1) / s**2)
    f = np.clip(1.0 - np.abs(dx) / s, 0.0, None)
    rest = np.prod(np.delete(f * f, i, axis=1), axis=1)
    # d/dy of the axis-i factor; sign(0) = 0 encodes the kink convention
    return (2.0 / s) * f[:, i] * np.sign(dx[:, i]) * rest


def eval_mixed_many(spec: KernelSpec, i: int, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx = np.atleast_2d(X) - y
    s = spec.scale
    if spec.family == "gaussian":
        k = np.exp(-np.sum(dx * dx, axis=1) / s**2)
        return (2.0 / s**2 - 4.0 * dx[:, i] ** 2 / s**4) * k
    f = np.clip(1.0 - np.abs(dx) / s, 0.0, None)
    rest = np.prod(np.delete(f * f, i, axis=1), axis=1)
    adx = np.abs(dx[:, i])
    c = np.where(adx == 0.0, 2.0 / s**2, np.where(adx < s, -2.0 / s**2, 0.0))
    return c * rest


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """K(x, y) for two points of equal dimension."""
    x, y = _check_pair(x, y)
    return float(eval_kernel_many(spec, x[None, :], y)[0])


def eval_partial(spec: KernelSpec, i: int, x, y) -> float:
    """dK/dy_i(x, y); 0 on the wendland kink set x_i == y_i."""
    x, y = _check_pair(x, y)
    if not 0 <= i < x.size:
        raise ValueError(f"axis {i} out of range for dimension {x.size}")
    return float(eval_partial_many(spec, i, x[None, :], y)[0])


def eval_mixed(spec: KernelSpec, i: int, x, y) -> float:
    """d^2 K / dx_i dy_i(x, y); +2/scale^2 per 1D factor on the diagonal."""
    x, y = _check_pair(x, y)
    if not 0 <= i < x.size:
        raise ValueError(f"axis {i} out of range for dimension {x.size}")
    return float(eval_mixed_many(spec, i, x[None, :], y)[0])


def support_nodes(spec: KernelSpec, center, grid: GridGeometry) -> np.ndarray:
    """Node multi-indices of the discrete kernel footprint around ``center``.

    The footprint is the window x ... x window node block centered at the
    node nearest to ``center``, clipped to the grid. For the wendland family
    nodes outside the exact compact support are dropped; the gaussian is
    simply truncated to the window.
    """
    center = np.asarray(center, float)
    lo, hi = grid.bounds
    if np.any(center < lo) or np.any(center > hi):
        raise ValueError(f"center {center.tolist()} outside domain box {lo.tolist()}..{hi.tolist()}")
    dims = np.asarray(grid.dims)
    nearest = np.clip(np.rint(grid.to_index(center)).astype(int), 0, dims - 1)
    half = spec.window // 2
    ranges = [
        np.arange(max(0, nearest[a] - half), min(dims[a], nearest[a] + half + 1))
        for a in range(grid.ndim)
    ]
    mesh = np.meshgrid(*ranges, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=1)
    if spec.family == "wendland_c0_mult":
        pos = grid.to_physical(idx)
        keep = np.all(np.abs(pos - center) < spec.scale, axis=1)
        idx = idx[keep]
    return idx


def window_offsets(spec: KernelSpec, ndim: int) -> np.ndarray:
    """All integer offsets of the window block, shape (window^d, d)."""
    half = spec.window // 2
    r = range(-half, half + 1)
    return np.array(list(itertools.product(r, repeat=ndim)), dtype=int)
