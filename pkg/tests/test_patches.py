import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpequant.patches import (
    ConstantBackend,
    DlParams,
    ExternalProcessBackend,
    IdentityBackend,
    ThresholdBackend,
    plan_tiling,
    segment_dl,
    stitch,
)

from conftest import make_volume


def pad_like_plan(arr, plan):
    """Replicate the documented padding: symmetric zeros, extra voxel high."""
    pads = [
        ((p - d) // 2, (p - d) - (p - d) // 2)
        for p, d in zip(plan.padded_dims, plan.dims)
    ]
    return np.pad(arr, pads, mode="constant")


class TestPlanTiling:
    def test_worked_example_offsets(self):
        plan = plan_tiling((96, 192, 289), 96)
        xs = sorted({o[0] for o in plan.offsets})
        ys = sorted({o[1] for o in plan.offsets})
        zs = sorted({o[2] for o in plan.offsets})
        assert xs == [0]
        assert ys == [0, 96]
        assert zs == [0, 64, 129, 193]
        assert len(plan.offsets) == 1 * 2 * 4
        assert plan.padded_dims == (96, 192, 289)
        assert plan.pad_low == (0, 0, 0)

    def test_small_overhang(self):
        plan = plan_tiling((100, 96, 96), 96)
        assert sorted({o[0] for o in plan.offsets}) == [0, 4]

    def test_short_axis_padding_extra_high(self):
        plan = plan_tiling((9, 96, 96), 96)
        assert plan.padded_dims == (96, 96, 96)
        assert plan.pad_low == (43, 0, 0)  # 87 voxels of pad: 43 low, 44 high
        assert plan.offsets == ((0, 0, 0),)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            plan_tiling((0, 5, 5), 4)
        with pytest.raises(ValueError):
            plan_tiling((5, 5, 5), 0)

    @settings(max_examples=150, deadline=None)
    @given(
        dims=st.tuples(*[st.integers(1, 400)] * 3),
        patch=st.integers(1, 128),
    )
    def test_coverage_and_patch_count(self, dims, patch):
        plan = plan_tiling(dims, patch)
        expected = 1
        for d, pd in zip(dims, plan.padded_dims):
            assert pd == max(d, patch)
            expected *= math.ceil(pd / patch)
        assert len(plan.offsets) == expected
        for axis in range(3):
            offs = sorted({o[axis] for o in plan.offsets})
            assert offs[0] == 0
            assert offs[-1] == plan.padded_dims[axis] - patch
            for a, b in zip(offs, offs[1:]):
                assert b - a <= patch  # no gaps between consecutive patches
                assert b - a >= 1


class TestStitch:
    def test_constant_patches(self):
        plan = plan_tiling((5, 5, 5), 3)
        preds = [(off, np.full((3, 3, 3), 0.7, np.float32)) for off in plan.offsets]
        out = stitch(preds, plan)
        assert out.shape == (5, 5, 5)
        assert np.allclose(out, 0.7, atol=1e-6)

    def test_overlap_is_averaged(self):
        plan = plan_tiling((4, 1, 1), 3)
        offs = sorted(plan.offsets)
        assert [o[0] for o in offs] == [0, 1]
        preds = [
            (offs[0], np.zeros((3, 3, 3), np.float32)),
            (offs[1], np.ones((3, 3, 3), np.float32)),
        ]
        out = stitch(preds, plan)
        assert out.shape == (4, 1, 1)
        assert np.allclose(out[:, 0, 0], [0.0, 0.5, 0.5, 1.0])

    def test_identity_stitch_recovers_volume(self, rng):
        plan = plan_tiling((10, 7, 5), 4)
        arr = rng.random((10, 7, 5)).astype(np.float32)
        padded = pad_like_plan(arr, plan)
        p = plan.patch_size
        preds = [
            (off, padded[off[0] : off[0] + p, off[1] : off[1] + p, off[2] : off[2] + p])
            for off in plan.offsets
        ]
        out = stitch(preds, plan)
        assert np.allclose(out, arr, atol=1e-6)

    def test_missing_prediction_raises(self):
        plan = plan_tiling((5, 5, 5), 3)
        preds = [(off, np.zeros((3, 3, 3))) for off in plan.offsets[:-1]]
        with pytest.raises(ValueError, match="missing or extra"):
            stitch(preds, plan)

    def test_duplicate_prediction_raises(self):
        plan = plan_tiling((5, 5, 5), 3)
        preds = [(off, np.zeros((3, 3, 3))) for off in plan.offsets]
        preds[-1] = (preds[0][0], preds[0][1])
        with pytest.raises(ValueError, match="missing or extra"):
            stitch(preds, plan)

    def test_wrong_patch_shape_raises(self):
        plan = plan_tiling((5, 5, 5), 3)
        preds = [(off, np.zeros((3, 3, 3))) for off in plan.offsets]
        preds[0] = (preds[0][0], np.zeros((2, 3, 3)))
        with pytest.raises(ValueError, match="shape"):
            stitch(preds, plan)


class _Recording:
    """Wraps a backend and keeps copies of every input it saw."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def predict(self, channels):
        self.calls.append([c.copy() for c in channels])
        return self.inner.predict(channels)


class _Failing:
    def predict(self, channels):
        raise ValueError("weights not loaded")


def _box_phantom():
    """Three-level volume: background 0, one box at 100, one at 200."""
    arr = np.zeros((24, 24, 12), np.float32)
    arr[2:12, 2:12, 2:10] = 100.0
    arr[14:20, 14:20, 3:9] = 200.0
    return make_volume(arr, spacing=(1.0, 1.0, 1.0)), arr


def _normalized_thresholds(arr):
    mu = float(arr.astype(np.float64).mean())
    sd = float(arr.astype(np.float64).std())
    return (50.0 - mu) / sd, (150.0 - mu) / sd


class TestSegmentDl:
    def test_threshold_route_matches_expected_masks(self):
        vol, arr = _box_phantom()
        t_b, t_f = _normalized_thresholds(arr)
        seg = segment_dl(
            vol,
            ThresholdBackend([t_b]),
            ThresholdBackend([t_f, 5.0]),
            DlParams(patch_size=16),
        )
        assert np.array_equal(seg.breast_mask.voxels, (arr > 50.0).astype(np.uint8))
        assert np.array_equal(seg.fgt_mask.voxels, (arr > 150.0).astype(np.uint8))
        assert seg.vessel_mask.count() == 0
        assert seg.breast_prob.dims == vol.dims
        assert seg.breast_prob.spacing == vol.spacing

    def test_fgt_stage_receives_breast_probability_channel(self):
        vol, arr = _box_phantom()
        t_b, t_f = _normalized_thresholds(arr)
        spy = _Recording(ThresholdBackend([t_f, 5.0]))
        segment_dl(vol, ThresholdBackend([t_b]), spy, DlParams(patch_size=16))
        assert spy.calls
        for channels in spy.calls:
            assert len(channels) == 2
            # the breast map fed to stage two is the thresholded stage-one
            # output, so on this phantom it equals (image > t_b) patchwise
            expect = (channels[0] > t_b).astype(np.float32)
            assert np.array_equal(channels[1], expect)

    def test_fgt_mask_contained_in_breast_mask(self, rng):
        arr = np.abs(rng.normal(50, 40, size=(20, 20, 10))).astype(np.float32)
        vol = make_volume(arr)
        seg = segment_dl(
            vol,
            ThresholdBackend([0.2]),
            ThresholdBackend([-0.5, 5.0]),  # fgt fires more widely than breast
            DlParams(patch_size=16),
        )
        assert not (seg.fgt_mask.voxels & ~seg.breast_mask.voxels).any()

    def test_deterministic(self, rng):
        arr = np.abs(rng.normal(50, 40, size=(18, 18, 9))).astype(np.float32)
        vol = make_volume(arr)
        args = (ThresholdBackend([0.1]), ThresholdBackend([0.4, 0.9]),
                DlParams(patch_size=16))
        a = segment_dl(vol, *args)
        b = segment_dl(vol, *args)
        assert np.array_equal(a.breast_prob.voxels, b.breast_prob.voxels)
        assert np.array_equal(a.fgt_prob.voxels, b.fgt_prob.voxels)
        assert np.array_equal(a.fgt_mask.voxels, b.fgt_mask.voxels)

    def test_backend_failure_reports_offset(self):
        vol, _ = _box_phantom()
        with pytest.raises(RuntimeError, match=r"offset \(0, 0, 0\)"):
            segment_dl(vol, _Failing(), ThresholdBackend([0.5, 5.0]),
                       DlParams(patch_size=16))

    def test_fgt_stage_needs_two_channels(self):
        vol, _ = _box_phantom()
        with pytest.raises(ValueError, match="needs >= 2"):
            segment_dl(vol, ThresholdBackend([0.5]), ThresholdBackend([0.5]),
                       DlParams(patch_size=16))

    def test_out_of_range_probability_rejected(self):
        vol, _ = _box_phantom()
        with pytest.raises(ValueError, match=r"outside \[0, 1\]"):
            segment_dl(vol, ConstantBackend([1.5]),
                       ThresholdBackend([0.5, 5.0]), DlParams(patch_size=16))

    def test_constant_and_identity_backends(self):
        vol, _ = _box_phantom()
        seg = segment_dl(vol, ConstantBackend([1.0]), ConstantBackend([0.0, 0.0]),
                         DlParams(patch_size=16))
        assert seg.breast_mask.count() == int(np.prod(vol.dims))
        assert seg.fgt_mask.count() == 0
        ident = IdentityBackend(outputs=2)
        assert len(ident.predict([np.zeros((2, 2, 2))])) == 2


EXTERNAL_SCRIPT = """\
import argparse
import pathlib

from bpequant.io import read_volume, write_volume

parser = argparse.ArgumentParser()
parser.add_argument("--in", dest="indir", required=True)
parser.add_argument("--out", dest="outdir", required=True)
args = parser.parse_args()

vol = read_volume(pathlib.Path(args.indir) / "ch0.json")
out = vol.with_voxels((vol.voxels > 0.0).astype("float32"))
write_volume(out, pathlib.Path(args.outdir) / "ch0.json")
"""


class TestExternalProcessBackend:
    def test_round_trip_through_subprocess(self, tmp_path, rng):
        script = tmp_path / "model.py"
        script.write_text(EXTERNAL_SCRIPT)
        backend = ExternalProcessBackend([sys.executable, str(script)])
        patch = rng.normal(0, 1, size=(6, 6, 6)).astype(np.float32)
        (out,) = backend.predict([patch])
        assert np.array_equal(out, (patch > 0.0).astype(np.float32))

    def test_nonzero_exit_is_reported(self, tmp_path):
        script = tmp_path / "broken.py"
        script.write_text("import sys; sys.stderr.write('boom'); sys.exit(3)\n")
        backend = ExternalProcessBackend([sys.executable, str(script)])
        with pytest.raises(RuntimeError, match="exited 3"):
            backend.predict([np.zeros((4, 4, 4), np.float32)])

    def test_empty_command_rejected(self):
        with pytest.raises(ValueError):
            ExternalProcessBackend([])
