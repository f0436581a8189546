"""Control-point momenta and velocity-field synthesis.

A momentum set attaches to each control point one zeroth-order vector and
d first-order vectors (one per derivative slot). The synthesized velocity
is

    v(x) = sum_j [ K(x, x_j) m0_j + sum_i dK/dy_i(x, x_j) m1_{j,i} ],

accumulated only over the discrete kernel footprint of each control point.
Zeroth-order terms translate locally; first-order terms shear, and on the
non-differentiable wendland kernel they produce velocity jumps across the
axis hyperplanes through the control point (sliding).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .geometry import GridGeometry, VectorField
from .kernels import KernelSpec

__all__ = [
    "MomentumSet",
    "TimeMomenta",
    "synth_velocity",
    "v_energy",
    "sparsity",
    "directional_kernel_velocity",
    "VelocityAssembler",
    "KernelGrams",
    "control_lattice",
]


def _readonly(a):
    out = np.array(a, float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MomentumSet:
    """Momenta at fixed control points.

    points: (n, d) physical control-point positions.
    m0:     (n, d) zeroth-order vectors.
    m1:     (n, d, d) first-order vectors, ``m1[j, i]`` is the vector in
            derivative slot ``i`` at point ``j``.
    """

    points: np.ndarray
    m0: np.ndarray
    m1: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if pts.ndim != 2:
            raise ValueError(f"points must be (n, d), got shape {pts.shape}")
        n, d = pts.shape
        m0 = np.asarray(self.m0, float)
        m1 = np.asarray(self.m1, float)
        if m0.shape != (n, d):
            raise ValueError(f"m0 shape {m0.shape} != {(n, d)}")
        if m1.shape != (n, d, d):
            raise ValueError(f"m1 shape {m1.shape} != {(n, d, d)}")
        for name, arr in (("points", pts), ("m0", m0), ("m1", m1)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "m0", _readonly(m0))
        object.__setattr__(self, "m1", _readonly(m1))

    @classmethod
    def zeros(cls, points) -> "MomentumSet":
        pts = np.asarray(points, float)
        n, d = pts.shape
        return cls(pts, np.zeros((n, d)), np.zeros((n, d, d)))

    @property
    def ndim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class TimeMomenta:
    """A sequence of momentum sets (one per timestep) sharing control points."""

    steps: tuple

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise ValueError("need at least one timestep")
        ref = steps[0].points
        for k, ms in enumerate(steps[1:], start=1):
            if ms.points.shape != ref.shape or not np.array_equal(ms.points, ref):
                raise ValueError(f"step {k} has different control points than step 0")
        object.__setattr__(self, "steps", steps)

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def points(self) -> np.ndarray:
        return self.steps[0].points

    @classmethod
    def zeros(cls, points, T: int) -> "TimeMomenta":
        return cls(tuple(MomentumSet.zeros(points) for _ in range(T)))


def control_lattice(grid: GridGeometry, stride: int = 2) -> np.ndarray:
    """Physical positions of a regular control-point sublattice."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    axes = [np.arange(0, grid.dims[a], stride) for a in range(grid.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=1)
    return grid.to_physical(idx)


class VelocityAssembler:
    """Sparse synthesis operator from momenta to node velocities.

    Kernel values between grid nodes and control points are fixed once the
    control points are placed, so synthesis is a sparse matrix product and
    its adjoint is the transpose product. ``S0`` holds kernel values,
    ``S1[i]`` the slot-``i`` partial derivatives, each of shape
    (node_count, n_points) restricted to the discrete footprints.
    """

    def __init__(self, spec: KernelSpec, grid: GridGeometry, points: np.ndarray):
        self.spec = spec
        self.grid = grid
        self.points = np.asarray(points, float)
        d = grid.ndim
        n = self.points.shape[0]
        N = grid.node_count
        dims = grid.dims
        rows, cols = [], []
        vals0 = []
        vals1 = [[] for _ in range(d)]
        for j in range(n):
            idx = kernels.support_nodes(spec, self.points[j], grid)
            if idx.size == 0:
                continue
            pos = grid.to_physical(idx)
            flat = np.ravel_multi_index(tuple(idx.T), dims)
            rows.append(flat)
            cols.append(np.full(flat.shape, j))
            vals0.append(kernels.eval_kernel_many(spec, pos, self.points[j]))
            for i in range(d):
                vals1[i].append(kernels.eval_partial_many(spec, i, pos, self.points[j]))
        if rows:
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            self.S0 = sp.csr_matrix((np.concatenate(vals0), (r, c)), shape=(N, n))
            self.S1 = [
                sp.csr_matrix((np.concatenate(vals1[i]), (r, c)), shape=(N, n))
                for i in range(d)
            ]
        else:
            self.S0 = sp.csr_matrix((N, n))
            self.S1 = [sp.csr_matrix((N, n)) for _ in range(d)]

    def velocity(self, m0: np.ndarray, m1: np.ndarray) -> np.ndarray:
        """Node velocities, shape (node_count, d)."""
        v = self.S0 @ m0
        for i in range(self.grid.ndim):
            v = v + self.S1[i] @ m1[:, i, :]
        return v

    def adjoint(self, vbar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pull node-velocity adjoints back to (m0bar, m1bar)."""
        d = self.grid.ndim
        m0bar = self.S0.T @ vbar
        m1bar = np.empty((self.points.shape[0], d, d))
        for i in range(d):
            m1bar[:, i, :] = self.S1[i].T @ vbar
        return m0bar, m1bar


class KernelGrams:
    """Dense per-order Gram matrices over a fixed control-point set.

    G0[j, k] = K(x_j, x_k); G1[i][j, k] = d^2 K / dx_i dy_i (x_j, x_k).
    The energy has no cross-order blocks: it is the sum of the per-order
    quadratic forms.
    """

    def __init__(self, spec: KernelSpec, points: np.ndarray):
        pts = np.asarray(points, float)
        n, d = pts.shape
        self.G0 = np.empty((n, n))
        self.G1 = [np.empty((n, n)) for _ in range(d)]
        for k in range(n):
            self.G0[:, k] = kernels.eval_kernel_many(spec, pts, pts[k])
            for i in range(d):
                self.G1[i][:, k] = kernels.eval_mixed_many(spec, i, pts, pts[k])

    def energy(self, m0: np.ndarray, m1: np.ndarray) -> float:
        e = float(np.sum(m0 * (self.G0 @ m0)))
        for i, g in enumerate(self.G1):
            e += float(np.sum(m1[:, i, :] * (g @ m1[:, i, :])))
        return e

    def grad(self, m0: np.ndarray, m1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of :meth:`energy`: (2 G0 m0, 2 G1_i m1_i)."""
        g0 = 2.0 * (self.G0 @ m0)
        g1 = np.empty_like(m1)
        for i, g in enumerate(self.G1):
            g1[:, i, :] = 2.0 * (g @ m1[:, i, :])
        return g0, g1


def synth_velocity(ms: MomentumSet, spec: KernelSpec, grid: GridGeometry) -> VectorField:
    """Velocity field synthesized from zeroth- and first-order momenta."""
    lo, hi = grid.bounds
    if np.any(ms.points < lo) or np.any(ms.points > hi):
        raise ValueError("control points must lie inside the domain bounding box")
    asm = VelocityAssembler(spec, grid, ms.points)
    v = asm.velocity(ms.m0, ms.m1)
    return VectorField(grid, v.reshape(grid.dims + (grid.ndim,)))


def v_energy(ms: MomentumSet, spec: KernelSpec) -> float:
    """Sum of per-order squared kernel norms of the synthesized field."""
    return KernelGrams(spec, ms.points).energy(ms.m0, ms.m1)


def sparsity(ms: MomentumSet, lam, eps: float = 1e-6) -> float:
    """Smoothed L1 penalty sum_i lam_i sum_j (sqrt(|m_ij|^2 + eps^2) - eps).

    ``lam`` holds d + 1 weights: index 0 for the zeroth order, 1..d for the
    first-order slots. Smoothing keeps the penalty differentiable at 0.
    """
    d = ms.ndim
    lam = np.asarray(lam, float)
    if lam.shape != (d + 1,):
        raise ValueError(f"need {d + 1} weights (zeroth + {d} slots), got shape {lam.shape}")
    if np.any(lam < 0) or not eps > 0:
        raise ValueError("weights must be >= 0 and eps > 0")
    total = lam[0] * np.sum(np.sqrt(np.sum(ms.m0**2, axis=1) + eps**2) - eps)
    for i in range(d):
        norms = np.sqrt(np.sum(ms.m1[:, i, :] ** 2, axis=1) + eps**2) - eps
        total += lam[i + 1] * np.sum(norms)
    return float(total)


def sparsity_grad(ms: MomentumSet, lam, eps: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`sparsity` with respect to (m0, m1)."""
    d = ms.ndim
    lam = np.asarray(lam, float)
    g0 = lam[0] * ms.m0 / np.sqrt(np.sum(ms.m0**2, axis=1) + eps**2)[:, None]
    g1 = np.empty_like(ms.m1)
    for i in range(d):
        block = ms.m1[:, i, :]
        g1[:, i, :] = lam[i + 1] * block / np.sqrt(np.sum(block**2, axis=1) + eps**2)[:, None]
    return g0, g1


def directional_kernel_velocity(a, w, y, spec: KernelSpec, grid: GridGeometry) -> VectorField:
    """Velocity of a single directional-derivative kernel at point ``y``.

    Returns the field x -> (sum_i w_i dK/dy_i(x, y)) a, which coincides with
    synthesizing first-order momenta m1_i = w_i a and nothing else.
    """
    a = np.asarray(a, float)
    w = np.asarray(w, float)
    y = np.asarray(y, float)
    if not np.isclose(np.linalg.norm(w), 1.0, atol=1e-12):
        raise ValueError(f"direction must be a unit vector, |w| = {np.linalg.norm(w)}")
    n, d = 1, grid.ndim
    m1 = np.zeros((n, d, d))
    for i in range(d):
        m1[0, i, :] = w[i] * a
    ms = MomentumSet(y[None, :], np.zeros((n, d)), m1)
    return synth_velocity(ms, spec, grid)
