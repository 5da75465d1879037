"""Retention metrics, exponential decay fits and closed-form 1-winner MHN theory.

Array conventions: per-run scores are indexed ``[..., age_index]`` with
``age_index = age - 1``; grouped d'/R.D. data have shape
``(n_samples, runs_per_sample, n_ages)``.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, UndefinedDPrimeError

log = logging.getLogger(__name__)

A_HIGHER = 1
B_HIGHER = -1
NO_FLAG = 0


def rho(x_out, x, k_v=None):
    """Fraction of the active bits of ``x`` present in ``x_out``.

    Works row-wise on 2-D inputs. ``k_v`` defaults to the popcount of ``x``.
    """
    x_out = np.asarray(x_out)
    x = np.asarray(x)
    overlap = np.sum(x_out.astype(np.int64) * x, axis=-1)
    if k_v is None:
        k_v = np.sum(x, axis=-1)
    return overlap / k_v


# --- sensitivity -----------------------------------------------------------

def d_prime_sample(deltas):
    """d' = mean / population-std of one sample of real-minus-pseudo scores."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size < 2:
        raise InsufficientDataError("a d' sample needs at least two runs")
    sigma = deltas.std()
    if sigma == 0:
        raise UndefinedDPrimeError("zero spread in the sample")
    return float(deltas.mean() / sigma)


@dataclass
class DPrime:
    mean: np.ndarray          # per age, over valid samples
    se: np.ndarray            # standard error over valid samples
    samples: np.ndarray       # (n_samples, n_ages), NaN where undefined
    n_excluded: int


def d_prime(deltas):
    """d' per sample and its mean and standard error across samples.

    ``deltas`` has shape ``(n_samples, runs_per_sample)`` or
    ``(n_samples, runs_per_sample, n_ages)``. Samples with zero spread are
    set to NaN and excluded from the mean, with a logged count. The standard
    error uses the n-1 spread of the sample d' values.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    squeeze = deltas.ndim == 2
    if squeeze:
        deltas = deltas[:, :, None]
    if deltas.shape[1] < 2:
        raise InsufficientDataError("each d' sample needs at least two runs")
    mu = deltas.mean(axis=1)
    sigma = deltas.std(axis=1)
    zero = sigma == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        samples = np.where(zero, np.nan, mu / np.where(zero, 1.0, sigma))
    n_excluded = int(zero.sum())
    if n_excluded:
        log.info("excluded %d zero-variance d' samples", n_excluded)
    valid = (~zero).sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(samples, axis=0)
        sd = np.nanstd(samples, axis=0, ddof=1)
    se = np.where(valid > 1, sd / np.sqrt(np.maximum(valid, 1)), np.nan)
    if squeeze:
        return DPrime(mean[0], se[0], samples[:, 0], n_excluded)
    return DPrime(mean, se, samples, n_excluded)


def raw_difference(real, pseudo):
    """Mean real-minus-pseudo score per sample, then averaged over samples.

    Inputs have shape ``(n_samples, runs_per_sample[, n_ages])``. Returns
    ``(mean, se, per_sample)``.
    """
    real = np.asarray(real, dtype=np.float64)
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if real.shape != pseudo.shape:
        raise ValueError(f"shape mismatch {real.shape} vs {pseudo.shape}")
    per_sample = (real - pseudo).mean(axis=1)
    n = per_sample.shape[0]
    se = per_sample.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(per_sample.shape[1:], np.nan)
    return per_sample.mean(axis=0), se, per_sample


# --- decay fits ------------------------------------------------------------

@dataclass
class DecayFit:
    C: float
    beta: float
    r2: float
    ages: np.ndarray

    def predict(self, age):
        return self.C * np.exp(-self.beta * (np.asarray(age) - 1))

    def as_dict(self):
        return {"C": self.C, "beta": self.beta, "r2": self.r2,
                "n_points": int(self.ages.size),
                "age_min": int(self.ages.min()), "age_max": int(self.ages.max())}


def exp_regression(rd, max_age=200, ages=None, min_points=10):
    """Fit ``R.D.(a) = C exp(-beta (a - 1))`` by least squares on ``log R.D.``.

    ``rd[i]`` is the raw difference at age ``ages[i]`` (default ``i + 1``).
    Only ages ``<= max_age`` with strictly positive R.D. enter the fit;
    ``r2`` is the coefficient of determination in log space.
    """
    rd = np.asarray(rd, dtype=np.float64)
    ages = np.arange(1, rd.size + 1) if ages is None else np.asarray(ages)
    use = (ages <= max_age) & (rd > 0) & np.isfinite(rd)
    if use.sum() < min_points:
        raise InsufficientDataError(
            f"only {int(use.sum())} positive R.D. values up to age {max_age}")
    t = ages[use] - 1.0
    y = np.log(rd[use])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (intercept + slope * t)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(C=float(np.exp(intercept)), beta=float(-slope), r2=float(r2),
                    ages=ages[use])


# --- closed-form 1-winner MHN theory ----------------------------------------

def _surplus(n_v, s_v, n_h, c):
    return math.sqrt(2.0 * c * (1.0 - s_v) * math.log(n_h) / n_v)


def cue_threshold(n_v, s_v, n_h, eps=0.5):
    """Lower bound on the cue level under which the decay law is guaranteed.

    Evaluated with the failure probability ``delta = n_h ** -(1 + eps)``.
    """
    k_v = s_v * n_v
    delta = n_h ** -(1.0 + eps)
    inner = -math.expm1(math.log1p(-delta) / (n_h - 1))
    return math.log(inner) / (k_v * math.log(s_v))


def _check_regime(n_v, s_v, n_h, c):
    if n_h < 2:
        raise ValueError("the theory needs n_h >= 2")
    if not 0 < c <= 1:
        raise ValueError(f"cue level must lie in (0, 1], got {c}")
    theta = cue_threshold(n_v, s_v, n_h)
    if c <= theta:
        warnings.warn(f"cue level {c} is at or below the threshold {theta:.3g}; "
                      "the decay law is not guaranteed", RuntimeWarning, stacklevel=3)


def mhn_theory_baseline(n_v, s_v, n_h, c):
    """Expected retrieval score of a 1-winner MHN for a pattern it does not hold."""
    return s_v + _surplus(n_v, s_v, n_h, c)


def mhn_theory_constants(n_v, s_v, n_h, c):
    """``(C, beta)`` of the predicted raw-difference decay of a 1-winner MHN."""
    _check_regime(n_v, s_v, n_h, c)
    C = 1.0 - s_v - _surplus(n_v, s_v, n_h, c)
    beta = -math.log1p(-1.0 / n_h)
    return C, beta


def mhn_theory_rd(n_v, s_v, n_h, c, a):
    """Predicted raw difference at age(s) ``a`` for a 1-winner MHN."""
    C, _ = mhn_theory_constants(n_v, s_v, n_h, c)
    a = np.asarray(a, dtype=np.float64)
    out = C * (1.0 - 1.0 / n_h) ** (a - 1.0)
    return float(out) if out.ndim == 0 else out


# --- significance ----------------------------------------------------------

def significance_segments(a, b, alpha=0.01, paired=False):
    """Per-age flag: +1 where A is significantly higher, -1 where B is, else 0.

    ``a`` and ``b`` hold per-sample values, shape ``(n_samples[, n_ages])``.
    Uses a two-sided Welch t-test (or a paired t-test), uncorrected; NaN
    samples are dropped. Ages where both groups have zero spread are not
    flagged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a, b = a[:, None], b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InsufficientDataError("each group needs at least two samples")
    flags = np.zeros(a.shape[1], dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if paired:
            res = stats.ttest_rel(a, b, axis=0, nan_policy="omit")
        else:
            res = stats.ttest_ind(a, b, axis=0, equal_var=False, nan_policy="omit")
    p = np.asarray(res.pvalue, dtype=np.float64)
    diff = np.nanmean(a, axis=0) - np.nanmean(b, axis=0)
    sig = np.isfinite(p) & (p < alpha)
    flags[sig & (diff > 0)] = A_HIGHER
    flags[sig & (diff < 0)] = B_HIGHER
    return flags[0] if squeeze else flags


def segments(flags, first_age=1):
    """Maximal runs of equal nonzero flags as ``(sign, start_age, end_age)``."""
    out = []
    flags = np.asarray(flags)
    i = 0
    while i < flags.size:
        if flags[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < flags.size and flags[j + 1] == flags[i]:
            j += 1
        out.append((int(flags[i]), i + first_age, j + first_age))
        i = j + 1
    return out


def first_reliable_age(flags, sign=A_HIGHER, min_run=5):
    """First age that starts a run of at least ``min_run`` flags of ``sign``."""
    for s, start, end in segments(flags):
        if s == sign and end - start + 1 >= min_run:
            return start
    return None


def longest_run_fraction(flags, sign, lo, hi):
    """Longest contiguous run of ``sign`` flags within ages [lo, hi], as a
    fraction of the window length."""
    window = np.asarray(flags)[lo - 1:hi]
    best = run = 0
    for f in window:
        run = run + 1 if f == sign else 0
        best = max(best, run)
    return best / window.size
