"""Agreement statistics: overlap, concordance, rank correlation, paired tests.

Conventions are pinned for reproducibility rather than delegated to a stats
library: population (1/n) moments in the concordance correlation, midranks on
ties, exact small-sample null distributions by full enumeration, and seeded
percentile bootstraps on a fixed generator (numpy PCG64, recorded as
"numpy-pcg64" in report output).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as _sstats

from .volume import Mask3D, check_same_grid

RNG_ALGORITHM = "numpy-pcg64"

# Tolerance when comparing rank-derived statistics against an enumeration
# cutoff. Far below the quantization gap of the statistics at enumerable n,
# far above float64 noise, so equal-by-value permutations always count.
_ATOL = 1e-9

# Exact-enumeration cutoffs.
_SPEARMAN_EXACT_N = 10
_WILCOXON_EXACT_N = 25

_MAX_REDRAWS = 1000


class QualitativeBpe(IntEnum):
    """Ordinal qualitative BPE assessment."""

    MINIMAL = 1
    MILD = 2
    MODERATE = 3
    MARKED = 4


@dataclass(frozen=True)
class PairedSample:
    """Two equal-length measurement lists paired by case."""

    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self) -> None:
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        if len(x) != len(y):
            raise ValueError(f"paired lists differ in length: {len(x)} vs {len(y)}")
        if len(x) < 2:
            raise ValueError("need at least two pairs")
        if any(not math.isfinite(v) for v in x + y):
            raise ValueError("paired values must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.x)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.x, dtype=np.float64), np.asarray(self.y, dtype=np.float64)


@dataclass(frozen=True)
class AgreementReport:
    """Optional-field bundle of agreement results for one comparison."""

    n_cases: int
    dice: float | None = None
    ccc: float | None = None
    ccc_ci95: tuple[float, float] | None = None
    spearman_rho: float | None = None
    spearman_p: float | None = None
    wilcoxon_w: float | None = None
    wilcoxon_p: float | None = None
    bootstrap_delta_rho: float | None = None
    bootstrap_p: float | None = None

    def __post_init__(self) -> None:
        for name in ("spearman_p", "wilcoxon_p", "bootstrap_p"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.ccc_ci95 is not None:
            lo, hi = self.ccc_ci95
            if self.ccc is None or not lo <= self.ccc <= hi:
                raise ValueError("CI must bracket the CCC estimate")
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ValueError("dice must be in [0, 1]")


# ---------------------------------------------------------------------------
# Overlap and concordance


def dice(a: Mask3D, b: Mask3D) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|); undefined when both masks are empty."""
    check_same_grid(a, b, "masks")
    na, nb = a.count(), b.count()
    if na == 0 and nb == 0:
        raise ValueError("undefined Dice for two empty masks")
    inter = int(np.count_nonzero((a.voxels > 0) & (b.voxels > 0)))
    return 2.0 * inter / (na + nb)


def ccc(s: PairedSample) -> float:
    """Lin's concordance correlation with population (1/n) moments."""
    x, y = s.arrays()
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    if vx == 0.0 and vy == 0.0:
        raise ValueError("undefined concordance: both inputs are constant")
    cov = ((x - mx) * (y - my)).mean()
    return float(2.0 * cov / (vx + vy + (mx - my) ** 2))


def ccc_ci(
    s: PairedSample,
    level: float = 0.95,
    resamples: int = 2000,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile-bootstrap confidence interval for the CCC.

    Case-level resampling with replacement; degenerate resamples (both series
    constant) are redrawn, with a cap. Endpoints use linear-interpolation
    quantiles of the bootstrap distribution, widened if needed so the interval
    always brackets the point estimate. Below eight cases the interval is
    computed but flagged unreliable with a warning.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    n = len(s)
    if n < 8:
        warnings.warn(f"CCC CI on {n} cases is unreliable (need >= 8)", stacklevel=2)
    x, y = s.arrays()
    est = ccc(s)
    rng = np.random.Generator(np.random.PCG64(seed))
    boots = np.empty(resamples, dtype=np.float64)
    for r in range(resamples):
        for _attempt in range(_MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            xs, ys = x[idx], y[idx]
            if xs.var() == 0.0 and ys.var() == 0.0:
                continue
            mx, my = xs.mean(), ys.mean()
            cov = ((xs - mx) * (ys - my)).mean()
            boots[r] = 2.0 * cov / (xs.var() + ys.var() + (mx - my) ** 2)
            break
        else:
            raise ValueError("bootstrap resampling kept drawing degenerate resamples")
    alpha = (1.0 - level) / 2.0
    lo = float(np.quantile(boots, alpha))
    hi = float(np.quantile(boots, 1.0 - alpha))
    return min(lo, est), max(hi, est)


# ---------------------------------------------------------------------------
# Rank correlation


def _midranks(vals: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing the average of their rank range."""
    vals = np.asarray(vals, dtype=np.float64)
    n = vals.size
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = sv[1:] != sv[:-1]
    gid = np.cumsum(new_group) - 1
    counts = np.bincount(gid)
    ends = np.cumsum(counts).astype(np.float64)
    starts = ends - counts + 1.0
    mid = (starts + ends) / 2.0
    out = np.empty(n, dtype=np.float64)
    out[order] = mid[gid]
    return out


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float((ac * ac).sum()) * float((bc * bc).sum()))
    if denom == 0.0:
        raise ValueError("undefined correlation for constant input")
    return float((ac * bc).sum() / denom)


def _rho_from_ranks(x: Sequence[float], y: Sequence[float]) -> float:
    return _pearson(_midranks(np.asarray(x)), _midranks(np.asarray(y)))


def _permutation_chunks(n: int, chunk: int = 100_000) -> Iterable[np.ndarray]:
    import itertools

    it = itertools.permutations(range(n))
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.asarray(block, dtype=np.intp)


def _spearman_exact_p(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    """p = min(1, 2 * count(|rho_perm| >= |rho_obs|) / n!) over all rank permutations."""
    n = rx.size
    rxc = rx - rx.mean()
    ryc = ry - ry.mean()
    denom = math.sqrt(float((rxc * rxc).sum()) * float((ryc * ryc).sum()))
    total = math.factorial(n)
    count = 0
    cutoff = abs(rho_obs) - _ATOL
    for perms in _permutation_chunks(n):
        rhos = (ryc[perms] @ rxc) / denom
        count += int(np.count_nonzero(np.abs(rhos) >= cutoff))
    return min(1.0, 2.0 * count / total)


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation with midranks and a two-sided p-value.

    For n <= 10 the p-value is exact, from full enumeration of rank
    permutations: p = min(1, 2 * count(|rho_perm| >= |rho|) / n!). For larger
    n it uses the t approximation t = rho * sqrt((n-2)/(1-rho^2)) on n-2
    degrees of freedom; at |rho| = 1 (where t is singular) the permutation
    count of the untied extremes (identity and reversal) is used instead.
    """
    xa = np.asarray(list(x), dtype=np.float64)
    ya = np.asarray(list(y), dtype=np.float64)
    if xa.size != ya.size:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    n = xa.size
    if n < 3:
        raise ValueError("need at least three pairs")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise ValueError("inputs must be finite")
    rx, ry = _midranks(xa), _midranks(ya)
    rho = _pearson(rx, ry)

    if n <= _SPEARMAN_EXACT_N:
        return rho, _spearman_exact_p(rx, ry, rho)
    if abs(rho) >= 1.0 - 1e-12:
        return rho, min(1.0, 4.0 / math.factorial(n))
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(_sstats.t.sf(abs(t), df=n - 2))
    return rho, min(1.0, p)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def _wilcoxon_exact_p(ranks: np.ndarray, w_obs: float) -> float:
    """P(min(W+, W-) <= W_obs) over all 2^n sign assignments."""
    n = ranks.size
    total_rank = float(ranks.sum())
    count = 0
    total = 1 << n
    chunk = 1 << 17  # keeps the per-chunk sign matrix ~26 MB at n = 25
    bit_idx = np.arange(n, dtype=np.uint64)
    cutoff = w_obs + _ATOL
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        codes = np.arange(start, stop, dtype=np.uint64)
        bits = ((codes[:, None] >> bit_idx[None, :]) & 1).astype(np.float64)
        s = bits @ ranks
        w = np.minimum(s, total_rank - s)
        count += int(np.count_nonzero(w <= cutoff))
    return count / total


def _wilcoxon_normal_p(ranks: np.ndarray, w_obs: float) -> float:
    """Normal approximation with tie and continuity corrections."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0.0:
        return 1.0
    z = (w_obs - mean + 0.5) / math.sqrt(var)
    return min(1.0, 2.0 * float(_sstats.norm.cdf(z)))


def wilcoxon_signed_rank(s: PairedSample, method: str = "auto") -> tuple[float, float]:
    """Paired Wilcoxon signed-rank test with the drop-zeros convention.

    Zero differences are removed; |differences| are midranked; the statistic
    is W = min(W+, W-). The two-sided p-value is exact (all 2^n sign
    assignments) for n <= 25 and a tie- and continuity-corrected normal
    approximation above. method forces "exact" or "normal" for cross-checks.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    x, y = s.arrays()
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise ValueError("no nonzero pairs")
    ranks = _midranks(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    w_neg = float(ranks[d < 0].sum())
    w = min(w_pos, w_neg)
    use_exact = n <= _WILCOXON_EXACT_N if method == "auto" else method == "exact"
    if use_exact:
        return w, _wilcoxon_exact_p(ranks, w)
    return w, _wilcoxon_normal_p(ranks, w)


# ---------------------------------------------------------------------------
# Bootstrap comparison of correlated Spearman coefficients


def _qualitative_array(q: Sequence[int]) -> np.ndarray:
    vals = []
    for v in q:
        iv = int(v)
        if iv != v or not 1 <= iv <= 4:
            raise ValueError(f"qualitative BPE values must be integers 1..4, got {v!r}")
        vals.append(iv)
    return np.asarray(vals, dtype=np.float64)


def _rho_or_none(a: np.ndarray, b: np.ndarray) -> float | None:
    try:
        return _pearson(_midranks(a), _midranks(b))
    except ValueError:
        return None


def bootstrap_compare_spearman(
    q: Sequence[int],
    m1: Sequence[float],
    m2: Sequence[float],
    resamples: int = 2000,
    seed: int = 0,
) -> tuple[float, float]:
    """Paired bootstrap comparison of two Spearman correlations against one ordinal.

    Resamples cases with replacement, recomputes both correlations per
    resample, and returns (observed rho1 - rho2, two-sided bootstrap p) where
    p = min(1, 2 * min(frac(delta <= 0), frac(delta >= 0))). Degenerate
    resamples are redrawn with a cap. Deterministic for a given seed
    (generator: numpy-pcg64).
    """
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    qa = _qualitative_array(q)
    a1 = np.asarray(list(m1), dtype=np.float64)
    a2 = np.asarray(list(m2), dtype=np.float64)
    n = qa.size
    if a1.size != n or a2.size != n:
        raise ValueError("q, m1, m2 must have equal length")
    if n < 8:
        raise ValueError("need at least eight cases")
    if not (np.isfinite(a1).all() and np.isfinite(a2).all()):
        raise ValueError("inputs must be finite")

    rho1 = _rho_or_none(qa, a1)
    rho2 = _rho_or_none(qa, a2)
    if rho1 is None or rho2 is None:
        raise ValueError("undefined correlation for constant input")
    delta_obs = rho1 - rho2

    rng = np.random.Generator(np.random.PCG64(seed))
    deltas = np.empty(resamples, dtype=np.float64)
    for r in range(resamples):
        for _attempt in range(_MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            b1 = _rho_or_none(qa[idx], a1[idx])
            if b1 is None:
                continue
            b2 = _rho_or_none(qa[idx], a2[idx])
            if b2 is None:
                continue
            deltas[r] = b1 - b2
            break
        else:
            raise ValueError("bootstrap resampling kept drawing degenerate resamples")

    frac_le = float(np.count_nonzero(deltas <= 0.0)) / resamples
    frac_ge = float(np.count_nonzero(deltas >= 0.0)) / resamples
    p = min(1.0, 2.0 * min(frac_le, frac_ge))
    return float(delta_obs), p
