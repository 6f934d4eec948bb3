"""Sliding 3D patch tiling, prediction stitching, and the two-stage DL route.

Backends are execution contracts: given a list of patch-sized input channels
they return one or more patch-sized prediction channels in [0, 1]. The harness
owns tiling, padding, stitching, and thresholding, so any model runner that
speaks the contract plugs in (in-memory stubs for tests, an external process
wrapper for real models).
"""

from __future__ import annotations

import itertools
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .preprocess import cap_intensities, zscore_normalize
from .volume import Mask3D, Volume3D, mask_like

Offset = tuple[int, int, int]


@dataclass(frozen=True)
class TilingPlan:
    """Minimal even-spread tiling of a grid by cubic patches.

    Per axis the patch count is ceil(dim / patch_size); offsets run from 0 to
    dim - patch_size with even spacing (last patch flush with the boundary).
    Axes shorter than the patch are zero-padded symmetrically, with the extra
    voxel on the high side; padded_dims and pad_low record the padding.
    """

    dims: tuple[int, int, int]
    patch_size: int
    padded_dims: tuple[int, int, int]
    pad_low: tuple[int, int, int]
    offsets: tuple[Offset, ...]


class ModelBackend(Protocol):
    def predict(self, channels: list[np.ndarray]) -> list[np.ndarray]:
        """Map patch-sized input channels to patch-sized prediction channels in [0, 1]."""
        ...


@dataclass(frozen=True)
class DlParams:
    patch_size: int = 96
    cap_low_pct: float = 0.1
    cap_high_pct: float = 99.9

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")


@dataclass(frozen=True)
class DlSegmentation:
    breast_prob: Volume3D
    fgt_prob: Volume3D
    vessel_prob: Volume3D
    breast_mask: Mask3D
    fgt_mask: Mask3D
    vessel_mask: Mask3D


def _axis_offsets(dim: int, patch: int) -> list[int]:
    if dim <= patch:
        return [0]
    n = math.ceil(dim / patch)
    span = dim - patch
    return [int(math.floor(i * span / (n - 1) + 0.5)) for i in range(n)]


def plan_tiling(dims: tuple[int, int, int], patch_size: int = 96) -> TilingPlan:
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims!r}")
    padded = tuple(max(d, patch_size) for d in dims)
    pad_low = tuple((p - d) // 2 for p, d in zip(padded, dims))
    per_axis = [_axis_offsets(p, patch_size) for p in padded]
    offsets = tuple(itertools.product(*per_axis))
    return TilingPlan(dims, patch_size, padded, pad_low, offsets)


def _pad_volume(vox: np.ndarray, plan: TilingPlan) -> np.ndarray:
    if plan.padded_dims == plan.dims:
        return vox
    pads = [
        (lo, pd - d - lo)
        for lo, pd, d in zip(plan.pad_low, plan.padded_dims, plan.dims)
    ]
    return np.pad(vox, pads, mode="constant", constant_values=0.0)


def stitch(predictions: Sequence[tuple[Offset, np.ndarray]], plan: TilingPlan) -> np.ndarray:
    """Average overlapping patch predictions back onto the original grid.

    Every plan offset must appear exactly once. Overlap resolution is the
    arithmetic mean of all covering patches; padding introduced by the plan is
    cropped from the result.
    """
    p = plan.patch_size
    got = sorted(tuple(off) for off, _ in predictions)
    want = sorted(plan.offsets)
    if got != want:
        raise ValueError(
            f"missing or extra predictions: plan has {len(want)} offsets, "
            f"got {len(got)} (first difference near {_first_diff(got, want)!r})"
        )
    acc = np.zeros(plan.padded_dims, dtype=np.float64)
    cnt = np.zeros(plan.padded_dims, dtype=np.int32)
    for off, patch in predictions:
        patch = np.asarray(patch)
        if patch.shape != (p, p, p):
            raise ValueError(f"patch at {off} has shape {patch.shape}, expected {(p, p, p)}")
        ox, oy, oz = off
        acc[ox : ox + p, oy : oy + p, oz : oz + p] += patch.astype(np.float64)
        cnt[ox : ox + p, oy : oy + p, oz : oz + p] += 1
    out = (acc / cnt).astype(np.float32)
    lx, ly, lz = plan.pad_low
    dx, dy, dz = plan.dims
    return out[lx : lx + dx, ly : ly + dy, lz : lz + dz]


def _first_diff(a: list, b: list) -> object:
    for x, y in itertools.zip_longest(a, b):
        if x != y:
            return x if x is not None else y
    return None


# ---------------------------------------------------------------------------
# Backends


class ConstantBackend:
    """Stub: emits constant-valued channels regardless of input."""

    def __init__(self, values: Sequence[float]):
        if not values:
            raise ValueError("need at least one channel value")
        self.values = tuple(float(v) for v in values)

    def predict(self, channels: list[np.ndarray]) -> list[np.ndarray]:
        shape = channels[0].shape
        return [np.full(shape, v, dtype=np.float32) for v in self.values]


class IdentityBackend:
    """Stub: returns the first input channel unchanged (repeated if asked)."""

    def __init__(self, outputs: int = 1):
        if outputs < 1:
            raise ValueError("outputs must be >= 1")
        self.outputs = outputs

    def predict(self, channels: list[np.ndarray]) -> list[np.ndarray]:
        return [channels[0].astype(np.float32)] * self.outputs


class ThresholdBackend:
    """Stub: channel i is 1.0 where input channel 0 exceeds thresholds[i]."""

    def __init__(self, thresholds: Sequence[float]):
        if not thresholds:
            raise ValueError("need at least one threshold")
        self.thresholds = tuple(float(t) for t in thresholds)

    def predict(self, channels: list[np.ndarray]) -> list[np.ndarray]:
        src = channels[0]
        return [(src > t).astype(np.float32) for t in self.thresholds]


class ExternalProcessBackend:
    """Runs `argv --in <dir> --out <dir>` per patch, channels as raw+JSON sidecars.

    Input channels are written as ch0, ch1, ... in the input directory; the
    process must write its prediction channels as ch0, ch1, ... in the output
    directory and exit 0. A nonzero exit or unreadable output is a backend
    failure.
    """

    def __init__(self, argv: Sequence[str]):
        if not argv:
            raise ValueError("empty backend command")
        self.argv = [str(a) for a in argv]

    def predict(self, channels: list[np.ndarray]) -> list[np.ndarray]:
        from .io import read_volume, write_volume  # local import to avoid cycles

        with tempfile.TemporaryDirectory(prefix="patch-io-") as tmp:
            din = Path(tmp) / "in"
            dout = Path(tmp) / "out"
            din.mkdir()
            dout.mkdir()
            for i, ch in enumerate(channels):
                vol = Volume3D(ch.shape, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), ch)
                write_volume(vol, din / f"ch{i}.json")
            proc = subprocess.run(
                self.argv + ["--in", str(din), "--out", str(dout)],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                tail = (proc.stderr or "").strip()[-500:]
                raise RuntimeError(
                    f"backend command {self.argv[0]!r} exited {proc.returncode}: {tail}"
                )
            outs = sorted(dout.glob("ch*.json"))
            if not outs:
                raise RuntimeError(f"backend command {self.argv[0]!r} wrote no channels")
            return [read_volume(p).voxels for p in outs]


# ---------------------------------------------------------------------------
# Two-stage segmentation


def _run_stage(
    backend: ModelBackend,
    plan: TilingPlan,
    padded_channels: list[np.ndarray],
    min_outputs: int,
    stage: str,
) -> list[np.ndarray]:
    """Tile, run, and stitch one backend; returns stitched channels on the original grid."""
    p = plan.patch_size
    per_offset: list[list[np.ndarray]] = []
    n_out: int | None = None
    for off in plan.offsets:
        ox, oy, oz = off
        inputs = [ch[ox : ox + p, oy : oy + p, oz : oz + p] for ch in padded_channels]
        try:
            outputs = backend.predict(inputs)
        except Exception as exc:
            raise RuntimeError(f"{stage} backend failed on patch at offset {off}: {exc}") from exc
        if len(outputs) < min_outputs:
            raise ValueError(
                f"{stage} backend returned {len(outputs)} channels, needs >= {min_outputs}"
            )
        if n_out is None:
            n_out = len(outputs)
        elif len(outputs) != n_out:
            raise ValueError(f"{stage} backend changed channel count at offset {off}")
        for k, out in enumerate(outputs):
            arr = np.asarray(out, dtype=np.float32)
            if arr.shape != (p, p, p):
                raise ValueError(
                    f"{stage} backend channel {k} at offset {off} has shape {arr.shape}"
                )
            if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
                raise ValueError(f"{stage} backend channel {k} has values outside [0, 1]")
        per_offset.append([np.asarray(o, dtype=np.float32) for o in outputs])
    assert n_out is not None
    stitched = []
    for k in range(n_out):
        preds = list(zip(plan.offsets, (outs[k] for outs in per_offset)))
        stitched.append(stitch(preds, plan))
    return stitched


def segment_dl(
    pre: Volume3D,
    backend_breast: ModelBackend,
    backend_fgt_vessel: ModelBackend,
    params: DlParams | None = None,
) -> DlSegmentation:
    """Cap, normalize, then run the breast and FGT-vessel stages patchwise.

    The breast stage sees the normalized image; the FGT-vessel stage sees the
    normalized image plus the stitched breast probability map as a second
    channel and must emit at least two channels (FGT, vessel). Masks binarize
    probabilities at 0.5 (strict), and the FGT mask is intersected with the
    breast mask.
    """
    params = params or DlParams()
    capped = cap_intensities(pre, params.cap_low_pct, params.cap_high_pct)
    norm = zscore_normalize(capped)
    plan = plan_tiling(norm.dims, params.patch_size)

    img_padded = _pad_volume(norm.voxels, plan)
    (breast_prob_arr,) = _run_stage(backend_breast, plan, [img_padded], 1, "breast")[:1]

    breast_padded = _pad_volume(breast_prob_arr, plan)
    fgt_prob_arr, vessel_prob_arr = _run_stage(
        backend_fgt_vessel, plan, [img_padded, breast_padded], 2, "fgt-vessel"
    )[:2]

    breast_mask_arr = (breast_prob_arr > 0.5).astype(np.uint8)
    fgt_mask_arr = ((fgt_prob_arr > 0.5) & (breast_mask_arr > 0)).astype(np.uint8)
    vessel_mask_arr = (vessel_prob_arr > 0.5).astype(np.uint8)

    return DlSegmentation(
        breast_prob=pre.with_voxels(breast_prob_arr),
        fgt_prob=pre.with_voxels(fgt_prob_arr),
        vessel_prob=pre.with_voxels(vessel_prob_arr),
        breast_mask=mask_like(pre, breast_mask_arr),
        fgt_mask=mask_like(pre, fgt_mask_arr),
        vessel_mask=mask_like(pre, vessel_mask_arr),
    )
