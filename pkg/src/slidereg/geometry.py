"""Discrete grids, scalar/vector fields, deformation maps, and interpolation.

All spatial math runs in physical coordinates: the node with multi-index
``k`` sits at ``origin + k * spacing``. Arrays are row-major with axis 0
slowest. Every container is immutable after construction (the backing
numpy arrays are marked read-only), so instances are safe to share across
threads.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridGeometry",
    "ScalarImage",
    "VectorField",
    "DeformationMap",
    "LandmarkSet",
    "sample_linear",
    "warp_image",
    "gradient_central",
    "box_downsample",
    "identity_map",
    "interp_values",
    "interp_with_point_grad",
    "splat_adjoint",
]


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GridGeometry:
    """Regular rectangular grid over a 2D or 3D physical domain."""

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(dims)} axes")
        if not (len(dims) == len(spacing) == len(origin)):
            raise ValueError("dims, spacing, origin must have equal length")
        if any(n < 2 for n in dims):
            raise ValueError(f"every axis needs at least 2 nodes, got {dims}")
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) physical corners of the node bounding box."""
        lo = np.asarray(self.origin, float)
        hi = lo + (np.asarray(self.dims, float) - 1.0) * np.asarray(self.spacing, float)
        return lo, hi

    def node_positions(self) -> np.ndarray:
        """Physical node coordinates, shape ``dims + (ndim,)``."""
        axes = [
            self.origin[a] + self.spacing[a] * np.arange(self.dims[a])
            for a in range(self.ndim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def to_physical(self, index_pts) -> np.ndarray:
        """Map (fractional) index coordinates to physical coordinates."""
        idx = np.asarray(index_pts, float)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def to_index(self, phys_pts) -> np.ndarray:
        """Map physical coordinates to (fractional) index coordinates."""
        p = np.asarray(phys_pts, float)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing)


@dataclass(frozen=True)
class ScalarImage:
    """Scalar intensities on a grid; ``values`` has shape ``geometry.dims``."""

    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != self.geometry.dims:
            raise ValueError(
                f"values shape {v.shape} does not match grid dims {self.geometry.dims}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True)
class VectorField:
    """One d-vector per node in physical units; shape ``dims + (ndim,)``."""

    geometry: GridGeometry
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, float)
        want = self.geometry.dims + (self.geometry.ndim,)
        if v.shape != want:
            raise ValueError(f"vectors shape {v.shape} != expected {want}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector components must be finite")
        object.__setattr__(self, "vectors", _readonly(v))


@dataclass(frozen=True)
class DeformationMap:
    """Per-node mapped physical positions; direction 'forward' or 'inverse'.

    A forward map transports material points ahead in time; an inverse map
    is the pull-back used to warp images (``warped(x) = image(inverse(x))``).
    """

    geometry: GridGeometry
    targets: np.ndarray
    direction: str

    def __post_init__(self):
        t = np.asarray(self.targets, float)
        want = self.geometry.dims + (self.geometry.ndim,)
        if t.shape != want:
            raise ValueError(f"targets shape {t.shape} != expected {want}")
        if not np.all(np.isfinite(t)):
            raise ValueError("map targets must be finite")
        if self.direction not in ("forward", "inverse"):
            raise ValueError(f"direction must be 'forward' or 'inverse', got {self.direction!r}")
        object.__setattr__(self, "targets", _readonly(t))

    def displacement(self) -> np.ndarray:
        """targets − identity, shape ``dims + (ndim,)``."""
        return self.targets - self.geometry.node_positions()


@dataclass(frozen=True)
class LandmarkSet:
    """Landmark points in zero-based voxel index coordinates.

    ``index_base`` records the convention of the source file; points are
    normalized to base 0 on construction.
    """

    points: np.ndarray
    index_base: int = 0

    def __post_init__(self):
        p = np.asarray(self.points, float)
        if p.ndim != 2 or p.shape[1] not in (2, 3):
            raise ValueError(f"points must be (n, 2) or (n, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("landmark coordinates must be finite")
        if self.index_base not in (0, 1):
            raise ValueError(f"index_base must be 0 or 1, got {self.index_base}")
        object.__setattr__(self, "points", _readonly(p))

    def __len__(self) -> int:
        return self.points.shape[0]

    def validate_inside(self, dims) -> None:
        dims = np.asarray(dims, float)
        bad = np.nonzero(
            np.any((self.points < 0) | (self.points > dims - 1), axis=1)
        )[0]
        if bad.size:
            raise ValueError(
                f"landmark {int(bad[0])} at {self.points[bad[0]].tolist()} "
                f"outside grid dims {tuple(int(n) for n in dims)}"
            )


def identity_map(geom: GridGeometry, direction: str = "forward") -> DeformationMap:
    return DeformationMap(geom, geom.node_positions(), direction)


# ---------------------------------------------------------------------------
# Multilinear interpolation core.
#
# Sample points outside the node bounding box are clamped to the nearest
# boundary face before interpolation, so the interpolant extends constantly
# past the boundary along each clamped axis.
# ---------------------------------------------------------------------------


def _locate(geom: GridGeometry, pts: np.ndarray):
    """Cell indices, in-cell fractions, and the clamp pass-through mask.

    Returns (i0, frac, unclamped) for flattened points of shape (m, d).
    ``unclamped`` is True per axis where the raw coordinate lies strictly
    inside the domain, i.e. where the clamp is locally the identity.
    """
    dims = np.asarray(geom.dims)
    u = geom.to_index(pts)
    hi = dims - 1.0
    uc = np.clip(u, 0.0, hi)
    i0 = np.minimum(uc.astype(np.intp), dims - 2)
    frac = uc - i0
    unclamped = (u > 0.0) & (u < hi)
    return i0, frac, unclamped


def _corner_weights(frac: np.ndarray, corner: tuple[int, ...]) -> np.ndarray:
    w = np.ones(frac.shape[0])
    for a, bit in enumerate(corner):
        w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
    return w


def interp_values(values: np.ndarray, geom: GridGeometry, pts) -> np.ndarray:
    """Multilinear interpolation of node data at physical points.

    ``values`` has shape ``dims`` (scalar) or ``dims + (c,)`` (c channels);
    ``pts`` has shape ``(..., d)``. Returns shape ``(...,)`` or ``(..., c)``.
    """
    pts = np.asarray(pts, float)
    lead = pts.shape[:-1]
    d = geom.ndim
    flat = pts.reshape(-1, d)
    i0, frac, _ = _locate(geom, flat)
    channels = values.shape[d:]
    acc = np.zeros((flat.shape[0],) + channels)
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(i0[:, a] + corner[a] for a in range(d))
        w = _corner_weights(frac, corner)
        acc += w.reshape((-1,) + (1,) * len(channels)) * values[idx]
    return acc.reshape(lead + channels)


def interp_with_point_grad(values: np.ndarray, geom: GridGeometry, pts):
    """Interpolated values and their derivative with respect to the point.

    For flattened points (m, d) returns ``(vals, grad)`` where grad has
    shape ``(m, d)`` for scalar data or ``(m, c, d)`` for c channels:
    ``grad[..., a] = ∂(interp)/∂p_a``. The derivative is zero along any
    axis on which the point was clamped.
    """
    pts = np.asarray(pts, float)
    d = geom.ndim
    flat = pts.reshape(-1, d)
    m = flat.shape[0]
    i0, frac, unclamped = _locate(geom, flat)
    channels = values.shape[d:]
    vals = np.zeros((m,) + channels)
    grad = np.zeros((m,) + channels + (d,))
    inv_spacing = 1.0 / np.asarray(geom.spacing)
    cshape = (1,) * len(channels)
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(i0[:, a] + corner[a] for a in range(d))
        node = values[idx]
        w = _corner_weights(frac, corner)
        vals += w.reshape((-1,) + cshape) * node
        for a in range(d):
            dw = np.ones(m)
            for b, bit in enumerate(corner):
                if b == a:
                    continue
                dw = dw * (frac[:, b] if bit else 1.0 - frac[:, b])
            if corner[a] == 0:
                dw = -dw
            dw = dw * inv_spacing[a] * unclamped[:, a]
            grad[..., a] += dw.reshape((-1,) + cshape) * node
    lead = pts.shape[:-1]
    return vals.reshape(lead + channels), grad.reshape(lead + channels + (d,))


def splat_adjoint(shape: tuple, geom: GridGeometry, pts, adj) -> np.ndarray:
    """Transpose of :func:`interp_values`: scatter adjoints back to nodes.

    Accumulates ``adj`` (shape ``(m,)`` or ``(m, c)``) into a zero array of
    ``shape`` (``dims`` or ``dims + (c,)``) using the same corner weights the
    interpolation gather would use at ``pts``.
    """
    pts = np.asarray(pts, float)
    d = geom.ndim
    flat = pts.reshape(-1, d)
    adj = np.asarray(adj, float).reshape((flat.shape[0],) + shape[d:])
    out = np.zeros(shape)
    i0, frac, _ = _locate(geom, flat)
    cshape = (1,) * (len(shape) - d)
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(i0[:, a] + corner[a] for a in range(d))
        w = _corner_weights(frac, corner).reshape((-1,) + cshape)
        np.add.at(out, idx, w * adj)
    return out


# ---------------------------------------------------------------------------
# Public image operations.
# ---------------------------------------------------------------------------


def sample_linear(img: ScalarImage, p) -> float:
    """Multilinear sample of an image at one physical point (clamped)."""
    p = np.asarray(p, float)
    if p.shape != (img.geometry.ndim,):
        raise ValueError(f"point shape {p.shape} != ({img.geometry.ndim},)")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"sample point must be finite, got {p}")
    return float(interp_values(img.values, img.geometry, p[None, :])[0])


def warp_image(img: ScalarImage, inv_map: DeformationMap) -> ScalarImage:
    """Pull an image back through an inverse map: out(x) = img(inv_map(x))."""
    if inv_map.direction != "inverse":
        raise ValueError("warp_image needs an inverse-direction map")
    if inv_map.geometry.dims != img.geometry.dims:
        raise ValueError(
            f"map dims {inv_map.geometry.dims} != image dims {img.geometry.dims}"
        )
    warped = interp_values(img.values, img.geometry, inv_map.targets)
    return ScalarImage(inv_map.geometry, warped)


def gradient_central(img: ScalarImage) -> VectorField:
    """Spatial gradient: central differences inside, one-sided at borders."""
    grads = np.gradient(img.values, *img.geometry.spacing, edge_order=1)
    return VectorField(img.geometry, np.stack(grads, axis=-1))


def box_downsample(img: ScalarImage, factor: int = 2) -> ScalarImage:
    """Block-average downsampling; trailing nodes that do not fill a block drop.

    The coarse origin shifts to the center of the first block so coarse
    nodes sit at the mean position of the nodes they average.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    geom = img.geometry
    new_dims = tuple(n // factor for n in geom.dims)
    if any(n < 2 for n in new_dims):
        raise ValueError(f"image too small to downsample by {factor}")
    v = img.values
    sl = tuple(slice(0, n * factor) for n in new_dims)
    v = v[sl]
    for axis in range(geom.ndim):
        shape = v.shape[:axis] + (new_dims[axis], factor) + v.shape[axis + 1:]
        v = v.reshape(shape).mean(axis=axis + 1)
    new_spacing = tuple(s * factor for s in geom.spacing)
    new_origin = tuple(
        o + 0.5 * (factor - 1) * s for o, s in zip(geom.origin, geom.spacing)
    )
    return ScalarImage(GridGeometry(new_dims, new_spacing, new_origin), v)
