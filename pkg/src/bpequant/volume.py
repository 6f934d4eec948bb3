"""Core immutable 3D volume and mask types shared across the toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IntTriple = tuple[int, int, int]
FloatTriple = tuple[float, float, float]

# Relative tolerance for comparing voxel spacings that may have passed
# through float32 headers on disk.
_SPACING_RTOL = 1e-6
_ORIGIN_ATOL = 1e-4


def _validated_geometry(
    dims: IntTriple, spacing: FloatTriple, origin: FloatTriple
) -> tuple[IntTriple, FloatTriple, FloatTriple]:
    if len(dims) != 3:
        raise ValueError(f"dims must have 3 entries, got {dims!r}")
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"dims must all be >= 1, got {dims!r}")
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 entries, got {spacing!r}")
    spacing = tuple(float(s) for s in spacing)
    if any(not math.isfinite(s) or s <= 0.0 for s in spacing):
        raise ValueError(f"spacing must be finite and positive, got {spacing!r}")
    if len(origin) != 3:
        raise ValueError(f"origin must have 3 entries, got {origin!r}")
    origin = tuple(float(o) for o in origin)
    if any(not math.isfinite(o) for o in origin):
        raise ValueError(f"origin must be finite, got {origin!r}")
    return dims, spacing, origin


def _frozen_array(voxels: np.ndarray, dims: IntTriple, dtype: np.dtype) -> np.ndarray:
    arr = np.asarray(voxels, dtype=dtype)
    if arr.shape != dims:
        raise ValueError(f"voxel array shape {arr.shape} does not match dims {dims}")
    try:
        arr.setflags(write=False)
    except ValueError:
        # Some views cannot be frozen in place; freeze a private copy instead.
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume3D:
    """A scalar volume on a regular grid, indexed ``voxels[x, y, z]``.

    Voxel (i, j, k) is centered at ``origin + (i, j, k) * spacing`` in mm.
    The voxel array is float32 and frozen at construction; operations on
    volumes return new instances.
    """

    dims: IntTriple
    spacing: FloatTriple
    origin: FloatTriple
    voxels: np.ndarray
    # Opaque 348-byte source header carried along from file reads so that
    # orientation fields we do not interpret survive a read/write round trip.
    raw_header: bytes | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        dims, spacing, origin = _validated_geometry(self.dims, self.spacing, self.origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        arr = _frozen_array(self.voxels, dims, np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("volume contains non-finite voxels")
        object.__setattr__(self, "voxels", arr)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_voxels(self, voxels: np.ndarray) -> "Volume3D":
        """Same grid, new values. The raw header does not follow derived data."""
        return Volume3D(self.dims, self.spacing, self.origin, voxels)


@dataclass(frozen=True)
class Mask3D:
    """A binary volume (uint8 values 0/1) on the same grid convention as Volume3D."""

    dims: IntTriple
    spacing: FloatTriple
    origin: FloatTriple
    voxels: np.ndarray

    def __post_init__(self) -> None:
        dims, spacing, origin = _validated_geometry(self.dims, self.spacing, self.origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        arr = _frozen_array(self.voxels, dims, np.uint8)
        bad = (arr > 1).any()
        if bad:
            raise ValueError("mask voxels must be 0 or 1")
        object.__setattr__(self, "voxels", arr)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def count(self) -> int:
        return int(np.count_nonzero(self.voxels))

    def with_voxels(self, voxels: np.ndarray) -> "Mask3D":
        return Mask3D(self.dims, self.spacing, self.origin, voxels)


def mask_like(vol: Volume3D | Mask3D, voxels: np.ndarray) -> Mask3D:
    """Build a mask on the grid of an existing volume."""
    return Mask3D(vol.dims, vol.spacing, vol.origin, voxels)


def check_same_grid(a: Volume3D | Mask3D, b: Volume3D | Mask3D, what: str = "inputs") -> None:
    """Require identical dims and spacing; raises ValueError otherwise."""
    if a.dims != b.dims:
        raise ValueError(f"{what} have mismatched dims: {a.dims} vs {b.dims}")
    for sa, sb in zip(a.spacing, b.spacing):
        if not math.isclose(sa, sb, rel_tol=_SPACING_RTOL, abs_tol=0.0):
            raise ValueError(f"{what} have mismatched spacing: {a.spacing} vs {b.spacing}")


def check_same_frame(a: Volume3D | Mask3D, b: Volume3D | Mask3D, what: str = "inputs") -> None:
    """Require identical dims, spacing and origin."""
    check_same_grid(a, b, what)
    for oa, ob in zip(a.origin, b.origin):
        if not math.isclose(oa, ob, rel_tol=1e-6, abs_tol=_ORIGIN_ATOL):
            raise ValueError(f"{what} have mismatched origin: {a.origin} vs {b.origin}")


def volume_of_mask(mask: Mask3D) -> float:
    """Physical volume of the foreground in mm^3 (voxel count times voxel volume)."""
    return mask.count() * mask.voxel_volume_mm3


@dataclass(frozen=True)
class DceSeries:
    """An ordered pair-or-more of co-registered DCE time points for one case.

    timepoints[0] is the pre-contrast volume (S0), timepoints[1] the first
    post-contrast volume (S1). All time points must live on the same grid
    and in the same physical frame.
    """

    case_id: str
    timepoints: tuple[Volume3D, ...]

    def __post_init__(self) -> None:
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        tps = tuple(self.timepoints)
        if len(tps) < 2:
            raise ValueError("a DCE series needs at least two time points")
        for i, tp in enumerate(tps[1:], start=1):
            check_same_grid(tps[0], tp, f"time points 0 and {i}")
            check_same_frame(tps[0], tp, f"time points 0 and {i}")
        object.__setattr__(self, "timepoints", tps)

    @property
    def s0(self) -> Volume3D:
        return self.timepoints[0]

    @property
    def s1(self) -> Volume3D:
        return self.timepoints[1]
