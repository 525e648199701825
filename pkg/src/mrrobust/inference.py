"""Confidence regions by test inversion, mrLIML and pleiotropy checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .numerics import chi2_sf, sym_inverse
from .robust_tests import TestKind, TestResult, pvalue_grid, q_grid
from .summary_data import SummaryDataError, validate

log = logging.getLogger(__name__)

_THETA_EDGE = 1e-6
_HALF_PI = 0.5 * math.pi


class UnsupportedInputError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, x):
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below

    @property
    def is_bounded(self):
        return math.isfinite(self.lo) and math.isfinite(self.hi)


@dataclass(frozen=True)
class ConfidenceRegion:
    """A finite union of disjoint, sorted intervals (possibly empty)."""

    intervals: tuple
    level: float
    method: TestKind
    grid_points: int

    @property
    def is_empty(self):
        return len(self.intervals) == 0

    @property
    def is_bounded(self):
        return all(iv.is_bounded for iv in self.intervals)

    @property
    def is_unbounded(self):
        return not self.is_bounded

    @property
    def is_whole_line(self):
        return len(self.intervals) == 1 and math.isinf(self.intervals[0].lo) and math.isinf(self.intervals[0].hi)

    def contains(self, x):
        return any(iv.contains(x) for iv in self.intervals)

    def positive_part(self):
        """Intervals intersected with (0, inf)."""
        out = []
        for iv in self.intervals:
            if iv.hi <= 0:
                continue
            if iv.lo < 0:
                out.append(Interval(0.0, iv.hi, False, iv.hi_closed))
            else:
                out.append(iv)
        return tuple(out)

    def as_pairs(self):
        return [(iv.lo, iv.hi) for iv in self.intervals]


@dataclass(frozen=True)
class LimlEstimate:
    beta_hat: float
    min_stat: float
    converged: bool


def _theta_grid(n):
    return np.linspace(-_HALF_PI + _THETA_EDGE, _HALF_PI - _THETA_EDGE, n)


def _ar_stat(data, betas):
    q_s, _, _ = q_grid(data, betas)
    return q_s


def ar_limit_statistic(data):
    """Limit of the mrAR statistic as the null value goes to +-infinity."""
    g = data.gamma_hat
    return float(g @ sym_inverse(data.sigma_gamma) @ g)


def accepts_at_infinity(data, kind, alpha):
    """(accept at -inf, accept at +inf) used to decide unboundedness of a region."""
    kind = TestKind.parse(kind)
    if kind is TestKind.AR:
        ok = chi2_sf(ar_limit_statistic(data), data.n_instruments) >= alpha
        return ok, ok
    ends = np.array([-_HALF_PI + _THETA_EDGE, _HALF_PI - _THETA_EDGE])
    _, p = pvalue_grid(data, kind, np.tan(ends))
    return bool(p[0] >= alpha), bool(p[1] >= alpha)


def region_is_unbounded(data, kind, alpha=0.05):
    lo, hi = accepts_at_infinity(data, kind, alpha)
    return lo or hi


def _accept(data, kind, alpha, thetas):
    _, p = pvalue_grid(data, kind, np.tan(thetas))
    bad = ~np.isfinite(p)
    if bad.any():
        log.info("%s: statistic undefined at %d null values; treated as rejections", kind.value, bad.sum())
    return np.where(bad, False, p >= alpha)


def _refine(data, kind, alpha, lo, hi, lo_accepts, refine_tol, max_iter=200):
    """Vectorised bisection on theta between accept/reject pairs."""
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    for _ in range(max_iter):
        b_lo, b_hi = np.tan(lo), np.tan(hi)
        mid = 0.5 * (lo + hi)
        width = np.abs(b_hi - b_lo)
        done = width <= refine_tol * np.maximum(1.0, np.abs(np.tan(mid)))
        done |= (hi - lo) <= 1e-15
        if done.all():
            break
        idx = np.flatnonzero(~done)
        acc = _accept(data, kind, alpha, mid[idx])
        # move whichever end has the same status as the midpoint
        same_as_lo = acc == lo_accepts[idx]
        lo[idx[same_as_lo]] = mid[idx[same_as_lo]]
        hi[idx[~same_as_lo]] = mid[idx[~same_as_lo]]
    # report the accepted side of each bracket
    return np.tan(np.where(lo_accepts, lo, hi))


def invert_test(data, kind, alpha=0.05, grid_points=4001, refine_tol=1e-8):
    """Collect every null value not rejected at level ``alpha``.

    Null values are scanned on ``beta0 = tan(theta)`` with ``theta`` uniform
    on (-pi/2, pi/2), every accept/reject switch is refined by bisection, and
    the two ends are classified by the behaviour of the test at infinity.
    """
    validate(data)
    kind = TestKind.parse(kind)
    if kind is TestKind.Q:
        raise UnsupportedInputError("the Q statistic does not depend on beta0 and cannot be inverted")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    thetas = _theta_grid(grid_points)
    if kind is TestKind.AR:
        # the sublevel set can be a sliver around the minimiser
        est = mr_liml(data)
        thetas = np.unique(np.append(thetas, math.atan(est.beta_hat)))
    accept = _accept(data, kind, alpha, thetas)
    acc_lo, acc_hi = accepts_at_infinity(data, kind, alpha)

    nodes = np.concatenate(([-_HALF_PI], thetas, [_HALF_PI]))
    status = np.concatenate(([acc_lo], accept, [acc_hi]))
    switch = np.flatnonzero(status[1:] != status[:-1])
    # interior brackets only; tan(+-pi/2) is never evaluated
    left = np.clip(nodes[switch], -_HALF_PI + 1e-15, None)
    right = np.clip(nodes[switch + 1], None, _HALF_PI - 1e-15)
    edges = _refine(data, kind, alpha, left, right, status[switch], refine_tol) if switch.size else np.array([])

    intervals = []
    start = -math.inf if status[0] else None
    for k, idx in enumerate(switch):
        if status[idx]:  # accept -> reject: close the run
            intervals.append(Interval(start, float(edges[k]), not math.isinf(start), True))
            start = None
        else:
            start = float(edges[k])
    if start is not None:
        intervals.append(Interval(start, math.inf, not math.isinf(start), False))
    return ConfidenceRegion(tuple(intervals), 1.0 - alpha, kind, int(grid_points))


def mr_liml(data, coarse_points=2001, tol=1e-10, max_iter=500):
    """Minimiser of the mrAR statistic: coarse tan-grid scan, then golden section."""
    thetas = _theta_grid(coarse_points)
    betas = np.tan(thetas)
    stats = _ar_stat(data, betas)
    best = np.min(stats)
    ties = np.flatnonzero(stats <= best + 1e-12 * max(abs(best), 1e-300))
    i = int(ties[np.argmin(np.abs(betas[ties]))])
    a = thetas[i - 1] if i > 0 else -_HALF_PI + 1e-12
    b = thetas[i + 1] if i < coarse_points - 1 else _HALF_PI - 1e-12

    def f(theta):
        return float(_ar_stat(data, [math.tan(theta)])[0])

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    converged = False
    for _ in range(max_iter):
        beta_mid = math.tan(0.5 * (a + b))
        if abs(math.tan(b) - math.tan(a)) < tol * (1.0 + abs(beta_mid)):
            converged = True
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d), (float(stats[i]), thetas[i])]
    fmin, tmin = min(candidates, key=lambda t: (t[0], abs(math.tan(t[1]))))
    return LimlEstimate(beta_hat=math.tan(tmin), min_stat=fmin, converged=converged)


def detect_invalid_instruments(data, alpha=0.05, grid_points=4001):
    """True when the mrAR confidence region is empty; returns the region too."""
    region = invert_test(data, TestKind.AR, alpha, grid_points=grid_points)
    return region.is_empty, region


def q_pleiotropy(data):
    """Heterogeneity Q test: minimised mrAR statistic against chi-square(L - 1)."""
    validate(data)
    if not data.is_diagonal:
        raise UnsupportedInputError(
            "the Q test needs independent instruments (diagonal covariances); "
            "use detect_invalid_instruments (empty mrAR region) for correlated instruments"
        )
    L = data.n_instruments
    if L < 2:
        raise SummaryDataError(["the Q test needs at least two instruments"])
    est = mr_liml(data)
    return TestResult(TestKind.Q, est.min_stat, chi2_sf(est.min_stat, L - 1), float(L - 1), est.beta_hat)

