"""Clustering-route segmentation: intensity threshold breast mask, then fuzzy c-means FGT.

The breast mask comes from a global intensity threshold (scalar or Otsu) with a
per-slice elliptical chest-cavity exclusion and retention of the two largest
26-connected components. Fuzzy c-means with two clusters then separates fat
from fibroglandular tissue inside the mask; the FGT mask is the bright-cluster
membership above a probability threshold (strict).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .preprocess import percentile_nearest_rank
from .volume import Mask3D, Volume3D, check_same_grid, mask_like


@dataclass(frozen=True)
class EllipseExclusion:
    """Axial-plane ellipse removed from the breast mask on every slice.

    Coordinates and semi-axes are in voxels. A zero semi-axis disables the
    exclusion entirely. Voxels on the boundary count as inside the ellipse
    (and are removed).
    """

    center_x: float
    center_y: float
    semi_x: float
    semi_y: float

    def __post_init__(self) -> None:
        if self.semi_x < 0 or self.semi_y < 0:
            raise ValueError("ellipse semi-axes must be >= 0")

    @classmethod
    def none(cls) -> "EllipseExclusion":
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def chest_default(cls, dims: tuple[int, int, int]) -> "EllipseExclusion":
        """Default chest-cavity ellipse for batch runs, scaled to the grid."""
        nx, ny = dims[0], dims[1]
        return cls(nx / 2.0, 0.15 * ny, 0.45 * nx, 0.2 * ny)

    def inside(self, nx: int, ny: int) -> np.ndarray:
        """Boolean (nx, ny) map of voxels inside or on the ellipse."""
        if self.semi_x == 0.0 or self.semi_y == 0.0:
            return np.zeros((nx, ny), dtype=bool)
        x = (np.arange(nx, dtype=np.float64) - self.center_x) / self.semi_x
        y = (np.arange(ny, dtype=np.float64) - self.center_y) / self.semi_y
        return (x * x)[:, None] + (y * y)[None, :] <= 1.0


@dataclass(frozen=True)
class FcmParams:
    fuzziness: float = 2.0
    max_iters: int = 200
    tol: float = 1e-5  # max absolute membership change
    prob_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.fuzziness <= 1.0:
            raise ValueError("fuzziness must be > 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.prob_threshold < 1.0:
            raise ValueError("prob_threshold must be in (0, 1)")


@dataclass(frozen=True)
class FcmResult:
    """Bright-cluster (FGT) membership and clustering diagnostics.

    membership is 0 outside the breast mask. centroids are sorted ascending:
    (fat, fgt). objective_history holds J_m after each iteration and is
    non-increasing.
    """

    membership: Volume3D
    centroids: tuple[float, float]
    iterations: int
    converged: bool
    objective: float
    objective_history: tuple[float, ...]


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Histogram-based Otsu threshold; foreground is values >= the returned cut."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if lo == hi:
        raise ValueError("degenerate volume: cannot compute a threshold")
    hist, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    w = hist.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    cum_w = np.cumsum(w)
    cum_m = np.cumsum(w * centers)
    total_w, total_m = cum_w[-1], cum_m[-1]
    w0 = cum_w[:-1]
    w1 = total_w - w0
    valid = (w0 > 0) & (w1 > 0)
    m0 = np.where(w0 > 0, cum_m[:-1] / np.maximum(w0, 1), 0.0)
    m1 = np.where(w1 > 0, (total_m - cum_m[:-1]) / np.maximum(w1, 1), 0.0)
    between = np.where(valid, w0 * w1 * (m0 - m1) ** 2, -1.0)
    k = int(np.argmax(between))
    return float(edges[k + 1])


def threshold_breast_mask(
    vol: Volume3D,
    threshold: float | str = "otsu",
    ellipse: EllipseExclusion | None = None,
) -> Mask3D:
    """Breast mask: voxels >= threshold, minus the chest ellipse, two largest components.

    threshold may be a number or the string "otsu". ellipse=None applies no
    exclusion; pass EllipseExclusion.chest_default(vol.dims) for batch runs.
    Raises ValueError when the mask comes out empty.
    """
    if isinstance(threshold, str):
        if threshold != "otsu":
            raise ValueError(f"unknown threshold mode {threshold!r}")
        thr = otsu_threshold(vol.voxels)
    else:
        thr = float(threshold)

    fg = vol.voxels >= np.float32(thr)
    if ellipse is not None:
        fg[ellipse.inside(vol.dims[0], vol.dims[1])] = False

    labels, n = ndimage.label(fg, structure=np.ones((3, 3, 3), dtype=np.int8))
    if n == 0:
        raise ValueError(f"empty breast mask at threshold {thr}")
    counts = np.bincount(labels.ravel())[1:]  # skip background
    keep = np.argsort(counts, kind="stable")[::-1][:2] + 1
    mask = np.isin(labels, keep)
    return mask_like(vol, mask.astype(np.uint8))


def fcm_cluster(vol: Volume3D, breast_mask: Mask3D, params: FcmParams | None = None) -> FcmResult:
    """Two-cluster fuzzy c-means over breast-mask intensities.

    Minimizes J_m = sum_i sum_k u_ik^m (x_i - c_k)^2 by alternating membership
    and centroid updates; memberships use the inverse-distance form with the
    zero-distance convention (a voxel exactly at a centroid gets membership 1
    there). Centroids start at the 5th and 95th nearest-rank percentiles of
    the masked intensities (falling back to min/max if those coincide), making
    the whole procedure deterministic. Convergence is max |membership change|
    <= tol.
    """
    params = params or FcmParams()
    check_same_grid(vol, breast_mask, "volume and breast mask")
    sel = breast_mask.voxels.astype(bool)
    xs = vol.voxels[sel].astype(np.float64)
    if xs.size == 0:
        raise ValueError("empty breast mask")
    if np.unique(xs).size < 2:
        raise ValueError("degenerate input: fewer than two distinct intensities")

    c0 = percentile_nearest_rank(xs, 5.0)
    c1 = percentile_nearest_rank(xs, 95.0)
    if c0 == c1:
        c0, c1 = float(xs.min()), float(xs.max())
    c = np.array([c0, c1], dtype=np.float64)

    m = params.fuzziness
    expo = 2.0 / (m - 1.0)
    u_prev: np.ndarray | None = None
    u = np.empty((xs.size, 2), dtype=np.float64)
    history: list[float] = []
    converged = False
    iterations = 0

    for iterations in range(1, params.max_iters + 1):
        d = np.abs(xs[:, None] - c[None, :])
        zero = d == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = d ** (-expo)
            u = inv / inv.sum(axis=1, keepdims=True)
        zrows = zero.any(axis=1)
        if zrows.any():
            u[zrows] = zero[zrows].astype(np.float64)
            u[zrows] /= u[zrows].sum(axis=1, keepdims=True)

        w = u**m
        c = (w * xs[:, None]).sum(axis=0) / w.sum(axis=0)

        d2 = (xs[:, None] - c[None, :]) ** 2
        history.append(float((w * d2).sum()))

        if u_prev is not None and float(np.abs(u - u_prev).max()) <= params.tol:
            converged = True
            break
        u_prev = u

    order = np.argsort(c, kind="stable")
    c_sorted = c[order]
    if c_sorted[0] == c_sorted[1]:
        raise ValueError("clusters collapsed to a single centroid")
    bright = u[:, order[1]]

    vox = np.zeros(vol.dims, dtype=np.float32)
    vox[sel] = bright.astype(np.float32)
    membership = Volume3D(vol.dims, vol.spacing, vol.origin, vox)
    return FcmResult(
        membership=membership,
        centroids=(float(c_sorted[0]), float(c_sorted[1])),
        iterations=iterations,
        converged=converged,
        objective=history[-1],
        objective_history=tuple(history),
    )


def apply_probability_threshold(result: FcmResult, threshold: float = 0.5) -> Mask3D:
    """FGT mask: membership strictly above the probability threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("probability threshold must be in (0, 1)")
    mem = result.membership
    return mask_like(mem, (mem.voxels > np.float32(threshold)).astype(np.uint8))
