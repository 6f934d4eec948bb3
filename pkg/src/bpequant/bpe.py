"""Percent-enhancement maps and BPE metrics.

PE = (S1 - S0) / S0 * 100 on voxels where S0 is above a small floor; BPE is
the FGT at or above the PE threshold (inclusive). Metrics are plain physical
volumes and ratios; empty denominator masks make a ratio explicitly undefined
(None) rather than zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Mask3D, Volume3D, check_same_frame, check_same_grid, mask_like, volume_of_mask


@dataclass(frozen=True)
class BpeParams:
    pe_threshold_pct: float = 50.0
    s0_floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.s0_floor < 0:
            raise ValueError("s0_floor must be >= 0")


@dataclass(frozen=True)
class PeMap:
    """Percent enhancement with its validity mask (S0 above the division floor)."""

    pe: Volume3D
    valid: Mask3D


@dataclass(frozen=True)
class BpeMetrics:
    breast_volume_mm3: float
    fgt_volume_mm3: float
    bpe_volume_mm3: float
    bpe_fgt_ratio_pct: float | None
    bpe_breast_ratio_pct: float | None
    bpe_integrated_intensity: float


def compute_pe_map(s0: Volume3D, s1: Volume3D, params: BpeParams | None = None) -> PeMap:
    """Voxelwise percent enhancement; voxels with S0 <= floor get PE 0 and valid 0."""
    params = params or BpeParams()
    check_same_grid(s0, s1, "S0 and S1")
    check_same_frame(s0, s1, "S0 and S1")
    a = s0.voxels.astype(np.float64)
    b = s1.voxels.astype(np.float64)
    valid = a > params.s0_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(valid, (b - a) / a * 100.0, 0.0)
    return PeMap(
        pe=s0.with_voxels(pe.astype(np.float32)),
        valid=mask_like(s0, valid.astype(np.uint8)),
    )


def compute_bpe_mask(pe_map: PeMap, fgt: Mask3D, params: BpeParams | None = None) -> Mask3D:
    """BPE mask: FGT voxels that are valid and have PE >= threshold (inclusive)."""
    params = params or BpeParams()
    check_same_grid(pe_map.pe, fgt, "PE map and FGT mask")
    hot = pe_map.pe.voxels >= np.float32(params.pe_threshold_pct)
    sel = hot & (pe_map.valid.voxels > 0) & (fgt.voxels > 0)
    return mask_like(fgt, sel.astype(np.uint8))


def compute_metrics(
    pe_map: PeMap, fgt: Mask3D, breast: Mask3D, bpe: Mask3D
) -> BpeMetrics:
    """The four BPE metrics plus the mask volumes they are derived from.

    Requires bpe to be contained in fgt. An empty FGT or breast mask makes the
    corresponding ratio None; an empty BPE mask gives zero ratios and zero
    integrated intensity.
    """
    check_same_grid(pe_map.pe, fgt, "PE map and FGT mask")
    check_same_grid(pe_map.pe, breast, "PE map and breast mask")
    check_same_grid(pe_map.pe, bpe, "PE map and BPE mask")
    if np.any(bpe.voxels > fgt.voxels):
        raise ValueError("BPE mask is not contained in the FGT mask")

    breast_vol = volume_of_mask(breast)
    fgt_vol = volume_of_mask(fgt)
    bpe_vol = volume_of_mask(bpe)

    fgt_ratio = None if fgt.count() == 0 else bpe_vol / fgt_vol * 100.0
    breast_ratio = None if breast.count() == 0 else bpe_vol / breast_vol * 100.0

    if bpe.count() == 0:
        integrated = 0.0
    else:
        mean_pe = float(pe_map.pe.voxels[bpe.voxels.astype(bool)].astype(np.float64).mean())
        integrated = bpe_vol * mean_pe

    return BpeMetrics(
        breast_volume_mm3=float(breast_vol),
        fgt_volume_mm3=float(fgt_vol),
        bpe_volume_mm3=float(bpe_vol),
        bpe_fgt_ratio_pct=fgt_ratio,
        bpe_breast_ratio_pct=breast_ratio,
        bpe_integrated_intensity=float(integrated),
    )
