"""Transport exponents from action-variance series.

Sites are numbered 1..L throughout this module, matching ``filled_base``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .ensemble import VarianceSeries
from .model import ActionAngleState, ChainParams

MIN_SAMPLES = 8
# absorbs rounding in the class-boundary comparisons
_EDGE = 1e-12


class Series(str, enum.Enum):
    FOUR_M = "4m"
    TWO_M = "2m"


class ClassKind(str, enum.Enum):
    EVEN = "even"
    NORMAL = "normal"
    FLAT = "flat"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class Classification:
    kind: ClassKind
    k: Optional[int] = None

    def __str__(self):
        return f"Even({self.k})" if self.kind is ClassKind.EVEN else self.kind.value.capitalize()

    def matches(self, zeta: int) -> bool:
        """True if this class is compatible with the quantized exponent ``zeta``.

        A Flat fit is accepted as ``zeta == 0``.
        """
        if zeta == 0 and self.kind is ClassKind.FLAT:
            return True
        return self.kind is ClassKind.EVEN and self.k == zeta


class WindowTooSparse(ValueError):
    pass


class NonPositiveVariance(ValueError):
    pass


class WindowNotNormal(ValueError):
    pass


def classify(slope: float) -> Classification:
    """Map a log-log slope onto the quantized classes.

    Checked in order: Flat (``|s| <= 0.3``), Normal (``|s - 1| <= 0.3``),
    Even(k) for the nearest even ``k >= 2`` within 0.5, Even(0) for
    ``0.3 < |s| <= 0.5``, otherwise Unclassified.

    >>> str(classify(3.8)), str(classify(0.1)), str(classify(1.2)), str(classify(5.0))
    ('Even(4)', 'Flat', 'Normal', 'Unclassified')
    """
    if not np.isfinite(slope):
        return Classification(ClassKind.UNCLASSIFIED)
    if abs(slope) <= 0.3 + _EDGE:
        return Classification(ClassKind.FLAT)
    if abs(slope - 1.0) <= 0.3 + _EDGE:
        return Classification(ClassKind.NORMAL)
    k = 2 * int(round(slope / 2.0))
    if k >= 2 and abs(slope - k) <= 0.5 + _EDGE:
        return Classification(ClassKind.EVEN, k)
    if abs(slope) <= 0.5 + _EDGE:
        return Classification(ClassKind.EVEN, 0)
    return Classification(ClassKind.UNCLASSIFIED)


@dataclass
class ScalingFit:
    site: int
    window: tuple
    slope: float
    stderr: float
    r2: float
    classified: Classification
    n_samples: int

    def to_dict(self) -> dict:
        return dict(site=self.site, window=list(self.window), slope=self.slope,
                    stderr=self.stderr, r2=self.r2, classified=str(self.classified),
                    n_samples=self.n_samples)


def _check_window(window):
    t_lo, t_hi = map(float, window)
    if not 0 < t_lo < t_hi:
        raise ValueError(f"bad window {window}")
    if np.log10(t_hi / t_lo) < 1 - 1e-9:
        raise ValueError(f"window {window} spans less than one decade")
    return t_lo, t_hi


def _loglog_fit(t, v, site, window) -> ScalingFit:
    if t.size < MIN_SAMPLES:
        raise WindowTooSparse(f"{t.size} samples in {window}, need {MIN_SAMPLES}")
    if np.any(~(v > 0)):
        raise NonPositiveVariance(f"site {site}: variance not positive in {window}")
    res = stats.linregress(np.log(t), np.log(v))
    slope = float(res.slope)
    return ScalingFit(site, tuple(window), slope, float(res.stderr), float(res.rvalue ** 2),
                      classify(slope), int(t.size))


def fit_exponent(series: VarianceSeries, site: int, window) -> ScalingFit:
    """Least-squares slope of ``log var(I_site)`` against ``log t`` on ``window``."""
    t_lo, t_hi = _check_window(window)
    if not 1 <= site <= series.L:
        raise ValueError(f"site {site} outside 1..{series.L}")
    m = series.window(t_lo, t_hi)
    return _loglog_fit(series.times[m], series.var[m, site - 1], site, (t_lo, t_hi))


def fit_all(series: VarianceSeries, window) -> list:
    """``fit_exponent`` for every site; sites that cannot be fitted give None."""
    out = []
    for n in range(1, series.L + 1):
        try:
            out.append(fit_exponent(series, n, window))
        except NonPositiveVariance:
            out.append(None)
    return out


@dataclass(frozen=True)
class ExponentPrediction:
    site: int
    m: int
    zeta: int
    series: Series
    no_transport: bool = False

    def to_dict(self) -> dict:
        return dict(site=self.site, m=self.m, zeta=self.zeta, series=self.series.value,
                    no_transport=self.no_transport)


def rg_exponent(m: int, series: Series = Series.FOUR_M) -> int:
    """Quantized exponent for effective distance ``m``: ``4m`` or ``2m``."""
    if int(m) != m or m < 0:
        raise ValueError("m must be a non-negative integer")
    return (4 if Series(series) is Series.FOUR_M else 2) * int(m)


def filled_sites(I: np.ndarray, fill_threshold: float = 0.1) -> np.ndarray:
    """1-based indices of sites with ``I_n >= fill_threshold * max(I)``."""
    I = np.asarray(I, dtype=float)
    return np.flatnonzero(I >= fill_threshold * I.max()) + 1


def predict_exponents(params: ChainParams, initial: ActionAngleState,
                      series: Series = Series.FOUR_M,
                      fill_threshold: float = 0.1) -> list:
    """Distance-rule exponents for every site.

    ``m = min(|n - n0|, n, L - n)`` over initially filled sites ``n0``: the
    chain ends count as filled.  On a ring every site is marked
    ``no_transport``.
    """
    series = Series(series)
    L = params.L
    if params.periodic:
        return [ExponentPrediction(n, 0, 0, series, True) for n in range(1, L + 1)]
    filled = filled_sites(initial.I, fill_threshold)
    out = []
    for n in range(1, L + 1):
        m = int(min(np.min(np.abs(n - filled)), n, L - n))
        out.append(ExponentPrediction(n, m, rg_exponent(m, series), series))
    return out


@dataclass
class WindowScan:
    """Sliding one-decade log-log fits across a series."""

    t_lo: np.ndarray
    t_hi: np.ndarray
    slope: np.ndarray
    classes: list


def scan_windows(series: VarianceSeries, site: int, decade: float = 1.0,
                 step: float = 0.1) -> WindowScan:
    t = series.times
    v = series.var[:, site - 1]
    pos = t > 0
    lo_all = np.arange(np.log10(t[pos][0]), np.log10(t[-1]) - decade + 1e-9, step)
    los, his, slopes, classes = [], [], [], []
    for lo in lo_all:
        a, b = 10.0 ** lo, 10.0 ** (lo + decade)
        m = (t >= a * (1 - 1e-12)) & (t <= b * (1 + 1e-12))
        try:
            f = _loglog_fit(t[m], v[m], site, (a, b))
        except (WindowTooSparse, NonPositiveVariance):
            s, c = np.nan, Classification(ClassKind.UNCLASSIFIED)
        else:
            s, c = f.slope, f.classified
        los.append(a)
        his.append(b)
        slopes.append(s)
        classes.append(c)
    return WindowScan(np.array(los), np.array(his), np.array(slopes), classes)


def _runs(flags: Sequence[bool]):
    """(start, stop) index pairs of maximal True runs."""
    out, start = [], None
    for i, f in enumerate(list(flags) + [False]):
        if f and start is None:
            start = i
        elif not f and start is not None:
            out.append((start, i))
            start = None
    return out


def detect_crossover(series: VarianceSeries, site: int, decade: float = 1.0,
                     step: float = 0.1):
    """Locate the end of the anomalous regime and the onset of normal diffusion.

    One-decade windows slide by ``step`` decades.  ``t_star`` is the upper
    edge of the longest run of windows (before any normal-diffusion run)
    sharing one even class (Flat counts as Even(0)); ``t_star2`` is the lower
    edge of the last run of Normal windows.  Either is None when absent; the
    whole result is None if the series spans fewer than four decades.
    """
    t = series.times[series.times > 0]
    if t.size < 2 or np.log10(t[-1] / t[0]) < 4 - 1e-9:
        return None
    scan = scan_windows(series, site, decade, step)

    def even_key(c):
        if c.kind is ClassKind.FLAT:
            return 0
        if c.kind is ClassKind.EVEN:
            return c.k
        return None

    normal = [c.kind is ClassKind.NORMAL for c in scan.classes]
    normal_runs = _runs(normal)
    t_star2 = float(scan.t_lo[normal_runs[-1][0]]) if normal_runs else None
    limit = normal_runs[-1][0] if normal_runs else len(scan.classes)

    keys = [even_key(c) for c in scan.classes[:limit]]
    best = None
    i = 0
    while i < len(keys):
        if keys[i] is None:
            i += 1
            continue
        j = i
        while j + 1 < len(keys) and keys[j + 1] == keys[i]:
            j += 1
        if best is None or (j - i) > (best[1] - best[0]):
            best = (i, j)
        i = j + 1
    t_star = float(scan.t_hi[best[1]]) if best is not None else None
    return t_star, t_star2


def fit_diffusion_coefficients(series: VarianceSeries, window, sites: Optional[Sequence[int]] = None,
                               strict: bool = True) -> dict:
    """Linear growth rates of the action variances, ``d var(I_n) / dt``.

    A variance ``2 D t + c`` gives ``2 D`` (no factor is divided out).  Each
    requested site must show a log-log slope within [0.7, 1.3] on the window;
    otherwise WindowNotNormal is raised (``strict``) or NaN is returned.
    Also returns the nearest- and next-nearest-neighbour covariance growth
    rates under ``"cov1"`` and ``"cov2"`` (keyed by the left site).
    """
    t_lo, t_hi = _check_window(window)
    m = series.window(t_lo, t_hi)
    t = series.times[m]
    if t.size < MIN_SAMPLES:
        raise WindowTooSparse(f"{t.size} samples in {window}, need {MIN_SAMPLES}")
    sites = list(range(1, series.L + 1)) if sites is None else list(sites)
    var_rate = {}
    for n in sites:
        f = _loglog_fit(t, series.var[m, n - 1], n, (t_lo, t_hi))
        if not 0.7 <= f.slope <= 1.3:
            if strict:
                raise WindowNotNormal(f"site {n}: log-log slope {f.slope:.3f} outside [0.7, 1.3]")
            var_rate[n] = float("nan")
            continue
        var_rate[n] = float(np.polyfit(t, series.var[m, n - 1], 1)[0])
    out = dict(var=var_rate, cov1={}, cov2={})
    if series.cov is not None:
        for d, key in ((1, "cov1"), (2, "cov2")):
            for n in range(1, series.L + 1 - d):
                out[key][n] = float(np.polyfit(t, series.cov[m, n - 1, n - 1 + d], 1)[0])
    return out
