"""Grayscale slice rendering with red mask contours for the reader study."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..preprocess import percentile_nearest_rank
from ..volume import Mask3D, Volume3D

CONTOUR_RGB = (255, 0, 0)


def volume_window(vol: Volume3D) -> tuple[float, float]:
    """Display window fixed per case: the 2nd..98th percentile of the volume.

    Percentile windowing keeps a handful of very bright voxels (vessels,
    fat-suppression failures) from washing out the whole display.
    """
    flat = vol.voxels.ravel()
    return (
        percentile_nearest_rank(flat, 2.0),
        percentile_nearest_rank(flat, 98.0),
    )


def contour2d(mask2d: np.ndarray) -> np.ndarray:
    """Boolean contour: mask pixels with at least one 4-neighbor outside.

    Pixels beyond the image border count as outside, so a mask touching
    the edge contributes its edge run to the contour.
    """
    mask2d = mask2d.astype(bool)
    padded = np.pad(mask2d, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return mask2d & ~interior


def render_slice(
    vol: Volume3D,
    z: int,
    window: tuple[float, float],
    mask: Mask3D | None = None,
) -> bytes:
    """Render slice z as PNG bytes; rows are the y axis, columns the x axis."""
    if not 0 <= z < vol.dims[2]:
        raise IndexError(f"slice {z} out of range for {vol.dims[2]} slices")
    plane = vol.voxels[:, :, z].astype(np.float64)
    lo, hi = window
    if hi > lo:
        gray = np.clip((plane - lo) / (hi - lo), 0.0, 1.0)
    else:
        gray = np.zeros_like(plane)
    level = np.round(gray * 255.0).astype(np.uint8)
    rgb = np.stack([level, level, level], axis=-1)
    if mask is not None:
        if mask.dims != vol.dims:
            raise ValueError("mask and volume dims differ")
        rgb[contour2d(mask.voxels[:, :, z] > 0.5)] = CONTOUR_RGB

    image = Image.fromarray(np.transpose(rgb, (1, 0, 2)), mode="RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()
