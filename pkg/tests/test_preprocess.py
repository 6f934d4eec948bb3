import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpequant.preprocess import (
    Affine2D,
    PreprocParams,
    cap_intensities,
    percentile_nearest_rank,
    register_inplane,
    resample_isotropic,
    zscore_normalize,
)

from conftest import make_volume
from phantom import gaussian_blob_pair


def sorted_rank_percentile(values, pct):
    """Reference implementation straight from the definition: sort, take
    the value at rank ceil(pct/100 * n), 1-based, clamped to [1, n]. The
    ceil backs off by a hair so binary float noise cannot carry a rank past
    an exact decimal boundary (e.g. 99.9% of 1000 values is rank 999)."""
    s = sorted(values)
    n = len(s)
    rank = min(n, max(1, math.ceil(pct / 100.0 * n - 1e-9)))
    return s[rank - 1]


def test_percentile_matches_sorted_rank_definition(rng):
    values = rng.normal(50, 20, size=501)
    for pct in (0.1, 5.0, 25.0, 50.0, 75.0, 95.0, 99.9, 100.0):
        got = percentile_nearest_rank(values, pct)
        assert got == sorted_rank_percentile(values.tolist(), pct)


def test_percentile_small_inputs():
    assert percentile_nearest_rank(np.array([7.0]), 0.5) == 7.0
    assert percentile_nearest_rank(np.array([3.0, 1.0]), 50.0) == 1.0
    assert percentile_nearest_rank(np.array([3.0, 1.0]), 50.1) == 3.0


def test_cap_clips_to_rank_bounds():
    arr = np.arange(1.0, 1001.0, dtype=np.float32).reshape((10, 10, 10))
    v = make_volume(arr)
    capped = cap_intensities(v, 0.1, 99.9)
    # rank ceil(0.001*1000)=1 -> 1.0, rank ceil(0.999*1000)=999 -> 999.0
    assert capped.voxels.min() == 1.0
    assert capped.voxels.max() == 999.0
    inner = (arr >= 1.0) & (arr <= 999.0)
    assert np.array_equal(capped.voxels[inner], arr[inner])


def test_cap_is_idempotent(rng):
    arr = rng.normal(0, 100, size=(9, 9, 9)).astype(np.float32)
    v = make_volume(arr)
    once = cap_intensities(v, 2.0, 98.0)
    twice = cap_intensities(once, 2.0, 98.0)
    assert np.array_equal(once.voxels, twice.voxels)


def test_cap_rejects_bad_bounds():
    v = make_volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        cap_intensities(v, 99.0, 1.0)


def test_zscore_two_values():
    arr = np.ones((2, 2, 2), np.float32)
    arr[:, :, 1] = 3.0
    z = zscore_normalize(make_volume(arr))
    # mean 2, population std 1
    assert np.allclose(z.voxels[:, :, 0], -1.0)
    assert np.allclose(z.voxels[:, :, 1], 1.0)


def test_zscore_moments_and_affine_invariance(rng):
    arr = rng.normal(37.0, 12.0, size=(8, 8, 8)).astype(np.float32)
    z1 = zscore_normalize(make_volume(arr))
    assert abs(float(z1.voxels.mean())) < 1e-5
    assert abs(float(z1.voxels.std()) - 1.0) < 1e-5
    z2 = zscore_normalize(make_volume(5.0 * arr + 11.0))
    assert np.allclose(z1.voxels, z2.voxels, atol=1e-4)


def test_zscore_degenerate_raises():
    with pytest.raises(ValueError, match="degenerate volume"):
        zscore_normalize(make_volume(np.full((3, 3, 3), 4.0)))


def test_resample_dims_rule():
    v = make_volume(np.zeros((10, 10, 10)), spacing=(0.7, 0.7, 3.0))
    out = resample_isotropic(v, 1.0)
    # floor(10*0.7/1 + 0.5) = 7, floor(10*3/1 + 0.5) = 30
    assert out.dims == (7, 7, 30)
    assert out.spacing == (1.0, 1.0, 1.0)
    tiny = make_volume(np.zeros((1, 1, 1)), spacing=(0.4, 0.4, 0.4))
    assert resample_isotropic(tiny, 1.0).dims == (1, 1, 1)


def test_resample_preserves_constant(rng):
    v = make_volume(np.full((6, 7, 8), 42.0), spacing=(0.9, 1.1, 2.0))
    out = resample_isotropic(v, 1.0)
    assert np.allclose(out.voxels, 42.0, atol=1e-5)


def test_resample_linear_ramp_is_exact():
    # Trilinear interpolation reproduces an affine field exactly away from
    # the clamped border, so a ramp in x is an analytic oracle.
    nx, ny, nz = 12, 5, 5
    xs = np.arange(nx, dtype=np.float32)
    arr = np.broadcast_to(xs[:, None, None], (nx, ny, nz)).copy()
    v = make_volume(arr, spacing=(2.0, 2.0, 2.0))
    out = resample_isotropic(v, 1.0)
    assert out.dims == (24, 10, 10)
    # output voxel i sits at source coordinate i * (1.0 / 2.0)
    expect = np.minimum(np.arange(24) * 0.5, nx - 1)
    got = out.voxels[:, 3, 3]
    assert np.allclose(got, expect, atol=1e-4)


def test_resample_at_own_spacing_is_identity(rng):
    arr = rng.normal(0, 10, size=(5, 6, 7)).astype(np.float32)
    v = make_volume(arr, spacing=(1.0, 1.0, 1.0))
    out = resample_isotropic(v, 1.0)
    assert out.dims == v.dims
    assert np.allclose(out.voxels, arr, atol=1e-5)


def test_resample_keeps_origin():
    v = make_volume(np.zeros((4, 4, 4)), spacing=(2.0, 2.0, 2.0), origin=(5.0, -3.0, 1.0))
    assert resample_isotropic(v, 1.0).origin == (5.0, -3.0, 1.0)


def test_affine2d_inverse_round_trip(rng):
    a = Affine2D(1.02, 0.05, -0.03, 0.97, 3.0, -2.0)
    inv = a.inverse()
    pts = rng.normal(0, 20, size=(10, 2))
    fwd = pts @ a.linear().T + a.translation()
    back = fwd @ inv.linear().T + inv.translation()
    assert np.allclose(back, pts, atol=1e-9)


def test_affine2d_identity_and_flip():
    ident = Affine2D.identity()
    assert np.array_equal(ident.linear(), np.eye(2))
    assert ident.det == 1.0
    with pytest.raises(ValueError, match="determinant"):
        Affine2D(-1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


def test_register_identical_volumes_is_identity(rng):
    arr = rng.normal(100, 30, size=(32, 32, 4)).astype(np.float32)
    arr = np.maximum(arr, 0)
    v = make_volume(arr, spacing=(1.5, 1.5, 3.0))
    res = register_inplane(v, v, PreprocParams())
    assert not res.fell_back_to_identity
    assert np.allclose(res.transform.linear(), np.eye(2), atol=0.02)
    assert np.allclose(res.transform.translation(), 0.0, atol=0.5)
    assert res.objective_final <= res.objective_identity + 1e-9


def test_register_recovers_known_shift():
    fixed, moving = gaussian_blob_pair((48, 48, 3), shift_mm=(3.0, -2.0))
    res = register_inplane(moving, fixed, PreprocParams())
    assert not res.fell_back_to_identity
    # the returned transform maps moving-volume mm points onto fixed ones,
    # so it must undo the (+3, -2) shift baked into the moving image
    assert abs(res.transform.tx - (-3.0)) < 0.5
    assert abs(res.transform.ty - 2.0) < 0.5
    assert np.allclose(res.transform.linear(), np.eye(2), atol=0.05)
    # and the resampled volume should match the fixed one closely
    diff = res.resampled.voxels - fixed.voxels
    assert float(np.mean(diff[4:-4, 4:-4, :] ** 2)) < 0.001 * float(
        np.mean(fixed.voxels**2)
    )


def test_register_structureless_pair_falls_back(rng):
    fixed = make_volume(rng.normal(0, 1, size=(24, 24, 3)).astype(np.float32))
    moving = make_volume(rng.normal(0, 1, size=(24, 24, 3)).astype(np.float32))
    res = register_inplane(moving, fixed, PreprocParams())
    assert res.fell_back_to_identity
    assert np.array_equal(res.transform.linear(), np.eye(2))
    assert res.transform.tx == 0.0
    assert res.transform.ty == 0.0
    # moving volume passes through untouched on fallback
    assert np.array_equal(res.resampled.voxels, moving.voxels)


def test_register_never_worsens_msd(rng):
    fixed, moving = gaussian_blob_pair((40, 40, 3), shift_mm=(1.0, 1.5))
    res = register_inplane(moving, fixed, PreprocParams())
    assert res.objective_final <= res.objective_identity + 1e-9


def test_params_validation():
    with pytest.raises(ValueError):
        PreprocParams(target_spacing=0.0)
    with pytest.raises(ValueError):
        PreprocParams(cap_low_pct=99.0, cap_high_pct=1.0)
    with pytest.raises(ValueError):
        PreprocParams(reg_max_iters_per_level=0)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 40),
    pct=st.floats(0.001, 100.0, allow_nan=False),
    seed=st.integers(0, 2**31 - 1),
)
def test_percentile_property_matches_reference(n, pct, seed):
    values = np.random.default_rng(seed).normal(0, 10, size=n)
    assert percentile_nearest_rank(values, pct) == sorted_rank_percentile(
        values.tolist(), pct
    )
