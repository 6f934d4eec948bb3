import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sstats

from bpequant import (
    RNG_ALGORITHM,
    AgreementReport,
    PairedSample,
    QualitativeBpe,
    bootstrap_compare_spearman,
    ccc,
    ccc_ci,
    dice,
    spearman,
    wilcoxon_signed_rank,
)
from bpequant.stats import _midranks

from conftest import make_mask


# ---------------------------------------------------------------------------
# Reference implementations, written from the definitions in plain python so
# the library results have something independent to agree with.


def ref_midranks(vals):
    n = len(vals)
    order = sorted(range(n), key=lambda i: vals[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and vals[order[j + 1]] == vals[order[i]]:
            j += 1
        avg = (i + 1 + j + 1) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def ref_pearson(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    da = math.sqrt(sum((x - ma) ** 2 for x in a))
    db = math.sqrt(sum((y - mb) ** 2 for y in b))
    return num / (da * db)


def ref_spearman(x, y):
    rx = ref_midranks(list(x))
    ry = ref_midranks(list(y))
    rho = ref_pearson(rx, ry)
    n = len(x)
    count = 0
    for perm in itertools.permutations(range(n)):
        r = ref_pearson(rx, [ry[i] for i in perm])
        if abs(r) >= abs(rho) - 1e-9:
            count += 1
    return rho, min(1.0, 2.0 * count / math.factorial(n))


def ref_wilcoxon(x, y):
    d = [a - b for a, b in zip(x, y) if a != b]
    ranks = ref_midranks([abs(v) for v in d])
    w_pos = sum(r for r, v in zip(ranks, d) if v > 0)
    w_neg = sum(r for r, v in zip(ranks, d) if v < 0)
    w = min(w_pos, w_neg)
    total = sum(ranks)
    count = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        s = sum(r for r, b in zip(ranks, signs) if b)
        if min(s, total - s) <= w + 1e-9:
            count += 1
    return w, count / 2 ** len(d)


# ---------------------------------------------------------------------------
# Dice


def _mask_from_flags(flags):
    arr = np.array(flags, np.uint8).reshape((len(flags), 1, 1))
    return make_mask(arr)


def test_dice_identical_masks():
    m = _mask_from_flags([1, 0, 1, 1])
    assert dice(m, m) == 1.0


def test_dice_partial_overlap():
    a = _mask_from_flags([1, 1, 0, 0, 0, 0])
    b = _mask_from_flags([1, 1, 1, 1, 0, 0])
    assert math.isclose(dice(a, b), 2 / 3, rel_tol=1e-12)


def test_dice_disjoint_and_one_empty():
    a = _mask_from_flags([1, 1, 0, 0])
    b = _mask_from_flags([0, 0, 1, 1])
    assert dice(a, b) == 0.0
    assert dice(a, _mask_from_flags([0, 0, 0, 0])) == 0.0


def test_dice_both_empty_is_undefined():
    e = _mask_from_flags([0, 0, 0])
    with pytest.raises(ValueError, match="empty"):
        dice(e, e)


def test_dice_requires_same_grid():
    with pytest.raises(ValueError, match="dims"):
        dice(_mask_from_flags([1, 0]), _mask_from_flags([1, 0, 0]))


# ---------------------------------------------------------------------------
# Concordance


def test_ccc_worked_example():
    s = PairedSample((1, 2, 3, 4), (1, 2, 3, 6))
    assert abs(ccc(s) - 0.8) <= 1e-12


def test_ccc_perfect_agreement():
    s = PairedSample((1.5, 2.5, 9.0, -3.0), (1.5, 2.5, 9.0, -3.0))
    assert abs(ccc(s) - 1.0) <= 1e-12


def test_ccc_penalizes_location_shift(rng):
    x = tuple(rng.normal(10, 3, size=20))
    same = ccc(PairedSample(x, x))
    shifted = ccc(PairedSample(x, tuple(v + 5.0 for v in x)))
    assert shifted < same
    assert shifted < 1.0


def test_ccc_bounded_by_pearson(rng):
    for _ in range(20):
        x = rng.normal(0, 1, size=12)
        y = 0.5 * x + rng.normal(0, 1, size=12) + rng.normal(0, 2)
        r = ref_pearson(list(x), list(y))
        c = ccc(PairedSample(tuple(x), tuple(y)))
        assert abs(c) <= abs(r) + 1e-12


def test_ccc_constant_inputs_raise():
    with pytest.raises(ValueError, match="constant"):
        ccc(PairedSample((3, 3, 3), (3, 3, 3)))


def test_ccc_ci_perfect_agreement_degenerates_to_point(rng):
    x = tuple(rng.normal(0, 5, size=10))
    s = PairedSample(x, x)
    lo, hi = ccc_ci(s, seed=7)
    assert abs(lo - 1.0) <= 1e-12
    assert abs(hi - 1.0) <= 1e-12


def test_ccc_ci_brackets_estimate_and_is_seeded(rng):
    x = rng.normal(50, 10, size=14)
    y = x + rng.normal(0, 4, size=14)
    s = PairedSample(tuple(x), tuple(y))
    lo1, hi1 = ccc_ci(s, seed=3)
    lo2, hi2 = ccc_ci(s, seed=3)
    assert (lo1, hi1) == (lo2, hi2)
    est = ccc(s)
    assert lo1 <= est <= hi1
    assert -1.0 - 1e-9 <= lo1 and hi1 <= 1.0 + 1e-9


def test_ccc_ci_small_sample_warns(rng):
    x = rng.normal(0, 1, size=5)
    s = PairedSample(tuple(x), tuple(x + rng.normal(0, 0.5, size=5)))
    with pytest.warns(UserWarning, match="unreliable"):
        ccc_ci(s, resamples=50, seed=1)


def test_ccc_ci_rejects_bad_level():
    s = PairedSample((1, 2, 3, 4, 5, 6, 7, 8), (2, 1, 4, 3, 6, 5, 8, 7))
    with pytest.raises(ValueError):
        ccc_ci(s, level=1.0)
    with pytest.raises(ValueError):
        ccc_ci(s, resamples=0)


# ---------------------------------------------------------------------------
# Ranks and Spearman


def test_midranks_tie_example():
    assert _midranks(np.array([1.0, 2.0, 2.0, 3.0])).tolist() == [1.0, 2.5, 2.5, 4.0]


def test_midranks_all_tied():
    assert _midranks(np.array([7.0, 7.0, 7.0])).tolist() == [2.0, 2.0, 2.0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_midranks_match_reference_and_sum(vals):
    got = _midranks(np.asarray(vals, dtype=np.float64)).tolist()
    assert got == ref_midranks([float(v) for v in vals])
    n = len(vals)
    assert math.isclose(sum(got), n * (n + 1) / 2.0, rel_tol=1e-12)


def test_spearman_perfect_monotone():
    rho, p = spearman([1, 2, 3, 4, 5], [10, 20, 30, 40, 50])
    assert rho == 1.0
    # exactly two of the 120 permutations reach |rho| = 1, doubled
    assert math.isclose(p, 4.0 / 120.0, rel_tol=1e-12)
    rho_r, p_r = spearman([1, 2, 3, 4, 5], [50, 40, 30, 20, 10])
    assert rho_r == -1.0
    assert math.isclose(p_r, p, rel_tol=1e-12)


def test_spearman_matches_enumeration_oracle(rng):
    for n in (4, 5, 6):
        for _ in range(3):
            x = rng.integers(0, 4, size=n).astype(float).tolist()
            y = rng.integers(0, 4, size=n).astype(float).tolist()
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            rho, p = spearman(x, y)
            rho_ref, p_ref = ref_spearman(x, y)
            assert math.isclose(rho, rho_ref, abs_tol=1e-12)
            assert math.isclose(p, p_ref, abs_tol=1e-12)


def test_spearman_invariant_under_monotone_transform(rng):
    x = rng.normal(0, 1, size=8).tolist()
    y = rng.normal(0, 1, size=8).tolist()
    rho1, p1 = spearman(x, y)
    rho2, p2 = spearman([math.exp(v) for v in x], y)
    assert math.isclose(rho1, rho2, abs_tol=1e-12)
    assert math.isclose(p1, p2, abs_tol=1e-12)


def test_spearman_large_n_matches_t_approximation(rng):
    x = rng.normal(0, 1, size=15).tolist()
    y = (0.6 * np.asarray(x) + rng.normal(0, 0.8, size=15)).tolist()
    rho, p = spearman(x, y)
    ref = sstats.spearmanr(x, y)
    assert math.isclose(rho, float(ref.statistic), abs_tol=1e-12)
    assert math.isclose(p, float(ref.pvalue), abs_tol=1e-10)


def test_spearman_large_n_perfect_rho_has_tiny_p():
    x = list(range(12))
    rho, p = spearman(x, x)
    assert rho == 1.0
    assert math.isclose(p, 4.0 / math.factorial(12), rel_tol=1e-12)


def test_spearman_validation():
    with pytest.raises(ValueError, match="length"):
        spearman([1, 2, 3], [1, 2])
    with pytest.raises(ValueError, match="three"):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError, match="constant"):
        spearman([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(ValueError, match="finite"):
        spearman([1, 2, float("nan")], [1, 2, 3])


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def test_wilcoxon_one_sided_extreme():
    s = PairedSample((2, 4, 6, 8, 10), (1, 2, 3, 4, 5))
    w, p = wilcoxon_signed_rank(s)
    assert w == 0.0
    assert math.isclose(p, 2.0 / 32.0, rel_tol=1e-12)


def test_wilcoxon_tied_magnitudes():
    s = PairedSample((1.0, 0.0), (0.0, 1.0))  # differences +1, -1
    w, p = wilcoxon_signed_rank(s)
    assert w == 1.5
    assert p == 1.0


def test_wilcoxon_drops_zero_differences():
    s = PairedSample((5, 1, 2, 3), (5, 0, 0, 0))  # first pair is a zero diff
    w, p = wilcoxon_signed_rank(s)
    s2 = PairedSample((1, 2, 3), (0, 0, 0))
    w2, p2 = wilcoxon_signed_rank(s2)
    assert (w, p) == (w2, p2)


def test_wilcoxon_all_zero_differences_raise():
    with pytest.raises(ValueError, match="no nonzero pairs"):
        wilcoxon_signed_rank(PairedSample((1, 2), (1, 2)))


def test_wilcoxon_matches_enumeration_oracle(rng):
    for n in (4, 6, 8):
        for _ in range(3):
            x = rng.integers(-3, 7, size=n).astype(float)
            y = rng.integers(-3, 7, size=n).astype(float)
            if np.all(x == y):
                continue
            w, p = wilcoxon_signed_rank(PairedSample(tuple(x), tuple(y)))
            w_ref, p_ref = ref_wilcoxon(x.tolist(), y.tolist())
            assert math.isclose(w, w_ref, abs_tol=1e-12)
            assert math.isclose(p, p_ref, abs_tol=1e-12)


def test_wilcoxon_exact_and_normal_agree_at_moderate_n(rng):
    x = rng.normal(10, 2, size=20)
    y = x + rng.normal(0.8, 1.5, size=20)
    s = PairedSample(tuple(x), tuple(y))
    w_e, p_e = wilcoxon_signed_rank(s, method="exact")
    w_n, p_n = wilcoxon_signed_rank(s, method="normal")
    assert w_e == w_n
    assert abs(p_e - p_n) <= 0.02


def test_wilcoxon_method_validation():
    s = PairedSample((1, 2), (2, 1))
    with pytest.raises(ValueError, match="unknown method"):
        wilcoxon_signed_rank(s, method="montecarlo")


# ---------------------------------------------------------------------------
# Bootstrap comparison


def _ordinal_case_set(rng, n=50):
    q = rng.integers(1, 5, size=n)
    strong = q * 10.0 + rng.uniform(0, 1, size=n)  # rank-follows-q metric
    noise = rng.normal(0, 1, size=n)
    return q.tolist(), strong.tolist(), noise.tolist()


def test_bootstrap_compare_identical_metrics_is_null(rng):
    q, strong, _ = _ordinal_case_set(rng, n=20)
    delta, p = bootstrap_compare_spearman(q, strong, list(strong), resamples=400, seed=5)
    assert delta == 0.0
    assert p == 1.0


def test_bootstrap_compare_detects_clear_difference(rng):
    q, strong, noise = _ordinal_case_set(rng, n=50)
    delta, p = bootstrap_compare_spearman(q, strong, noise, resamples=1000, seed=2)
    assert delta > 0.3
    assert p < 0.05


def test_bootstrap_compare_is_seeded(rng):
    q, strong, noise = _ordinal_case_set(rng, n=12)
    r1 = bootstrap_compare_spearman(q, strong, noise, resamples=300, seed=11)
    r2 = bootstrap_compare_spearman(q, strong, noise, resamples=300, seed=11)
    assert r1 == r2


def test_bootstrap_compare_validation(rng):
    q = [1, 2, 3, 4, 1, 2, 3, 4]
    m = [1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5, 4.5]
    with pytest.raises(ValueError, match="eight"):
        bootstrap_compare_spearman(q[:5], m[:5], m[:5])
    with pytest.raises(ValueError, match="1..4"):
        bootstrap_compare_spearman([0, 2, 3, 4, 1, 2, 3, 4], m, m)
    with pytest.raises(ValueError, match="equal length"):
        bootstrap_compare_spearman(q, m[:-1], m)
    with pytest.raises(ValueError, match="constant"):
        bootstrap_compare_spearman(q, [1.0] * 8, m)


def test_qualitative_scale_values():
    assert [int(v) for v in QualitativeBpe] == [1, 2, 3, 4]
    assert QualitativeBpe.MARKED > QualitativeBpe.MILD


def test_rng_algorithm_is_recorded():
    assert RNG_ALGORITHM == "numpy-pcg64"


# ---------------------------------------------------------------------------
# Containers


def test_paired_sample_validation():
    with pytest.raises(ValueError, match="length"):
        PairedSample((1, 2), (1, 2, 3))
    with pytest.raises(ValueError, match="two pairs"):
        PairedSample((1,), (2,))
    with pytest.raises(ValueError, match="finite"):
        PairedSample((1, float("inf")), (2, 3))
    s = PairedSample((1, 2), (3, 4))
    assert len(s) == 2
    assert s.arrays()[0].dtype == np.float64


def test_agreement_report_validation():
    AgreementReport(n_cases=10, ccc=0.8, ccc_ci95=(0.7, 0.9))
    with pytest.raises(ValueError, match="bracket"):
        AgreementReport(n_cases=10, ccc=0.95, ccc_ci95=(0.7, 0.9))
    with pytest.raises(ValueError, match="spearman_p"):
        AgreementReport(n_cases=10, spearman_p=1.5)
    with pytest.raises(ValueError, match="dice"):
        AgreementReport(n_cases=10, dice=-0.1)
