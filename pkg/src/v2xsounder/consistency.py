"""Spatial and angular signal-decoherence analysis.

The per-capture amplitude vector (bin magnitudes along the excess-delay
axis) is correlated across location or alignment changes; per-pair
Pearson coefficients are binned by lag and averaged (the ensemble
expectation), then a three-parameter exponential decay with a floor is
fit to the binned coefficients. The floor term captures channels that
never fully decorrelate because a dominant line-of-sight component
persists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geo import GeoFix, distance
from .sounder import ProcessedPdp


class DegenerateVector(ValueError):
    """Amplitude vector with zero variance cannot enter a correlation."""


class InsufficientPoints(ValueError):
    pass


@dataclass(frozen=True)
class AmplitudeVector:
    """Per-delay-bin linear amplitudes of one capture, tagged by location.

    The tag is either a GeoFix (spatial tracks) or a misalignment angle
    in degrees (angular sweeps).
    """

    tag: object
    magnitudes: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.magnitudes) < 0):
            raise ValueError("amplitudes must be >= 0")


@dataclass(frozen=True)
class CorrelationPoint:
    lag: float  # meters (spatial) or degrees (angular)
    rho: float  # in [-1, 1]
    pair_count: int


@dataclass(frozen=True)
class ExpFit:
    """rho(lag) ~ amplitude * exp(-lag / decay_length) + floor."""

    amplitude: float  # in [0, 1]
    decay_length: float  # meters or degrees
    floor: float  # in [0, 1]
    rms_residual: float = 0.0
    length_identified: bool = True  # False when the data carry no decay


def amplitude_vector(processed: ProcessedPdp, tag=None) -> AmplitudeVector:
    """Bin magnitudes (sqrt of linear power) over the full delay axis."""
    linear = np.power(10.0, np.asarray(processed.power_db, dtype=float) / 20.0)
    return AmplitudeVector(tag=tag, magnitudes=linear)


def _lag_between(tag_a, tag_b) -> float:
    if isinstance(tag_a, GeoFix) and isinstance(tag_b, GeoFix):
        return distance(tag_a, tag_b)[1]
    if isinstance(tag_a, GeoFix) or isinstance(tag_b, GeoFix):
        raise TypeError("cannot mix GeoFix and angular tags in one track")
    return abs(float(tag_a) - float(tag_b))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0  # self-pair by definition, exactly
    ca = a - a.mean()
    cb = b - b.mean()
    denom = math.sqrt(float(ca @ ca) * float(cb @ cb))
    if denom == 0.0:
        raise DegenerateVector("zero-variance amplitude vector")
    return float((ca @ cb) / denom)


@dataclass(frozen=True)
class AutocorrResult:
    points: list  # CorrelationPoint per populated lag bin, ascending lag
    skipped_pairs: int  # degenerate (zero-variance) pairs, counted not dropped silently


def autocorr(track, lag_bin_edges, include_self_pairs: bool = True) -> AutocorrResult:
    """Ensemble autocorrelation of amplitude vectors versus lag.

    Every vector pair is assigned the lag between its tags; per-pair
    Pearson correlations (each vector centered by its own delay-axis
    mean) are averaged within each lag bin. Self-pairs contribute the
    exact lag-0 anchor rho = 1.
    """
    track = list(track)
    if len(track) < 2:
        raise ValueError("need at least two amplitude vectors")
    lengths = {len(np.asarray(v.magnitudes)) for v in track}
    if len(lengths) != 1:
        raise ValueError("amplitude vectors must share one delay grid")
    edges = np.asarray(lag_bin_edges, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("lag_bin_edges must be increasing with >= 2 edges")

    sums = np.zeros(edges.size - 1)
    lag_sums = np.zeros(edges.size - 1)
    counts = np.zeros(edges.size - 1, dtype=int)
    skipped = 0
    for i in range(len(track)):
        start = i if include_self_pairs else i + 1
        for j in range(start, len(track)):
            lag = _lag_between(track[i].tag, track[j].tag)
            k = int(np.searchsorted(edges, lag, side="right")) - 1
            if k < 0 or k >= counts.size:
                continue
            try:
                rho = _pearson(
                    np.asarray(track[i].magnitudes, dtype=float),
                    np.asarray(track[j].magnitudes, dtype=float),
                )
            except DegenerateVector:
                skipped += 1
                continue
            sums[k] += rho
            lag_sums[k] += lag
            counts[k] += 1

    points = [
        CorrelationPoint(
            lag=float(lag_sums[k] / counts[k]),
            rho=float(sums[k] / counts[k]),
            pair_count=int(counts[k]),
        )
        for k in range(counts.size)
        if counts[k] > 0
    ]
    return AutocorrResult(points=points, skipped_pairs=skipped)


# ---------------------------------------------------------------------------
# Exponential decay fit
# ---------------------------------------------------------------------------


def _solve_amplitude_floor(decay: np.ndarray, rho: np.ndarray, weights: np.ndarray):
    """Weighted least squares of rho ~ a * decay + c, projected into [0,1]^2."""
    w = weights
    sw = w.sum()
    se = float((w * decay).sum())
    see = float((w * decay * decay).sum())
    sy = float((w * rho).sum())
    sey = float((w * decay * rho).sum())
    det = see * sw - se * se
    if abs(det) < 1e-300:
        a = 0.0
    else:
        a = (sey * sw - se * sy) / det
    a = min(max(a, 0.0), 1.0)
    c = (sy - a * se) / sw
    c = min(max(c, 0.0), 1.0)
    if a + c > 1.0:
        c = 1.0 - a
    return a, c


def _fit_objective(length: float, lags, rho, weights):
    decay = np.exp(-lags / length)
    a, c = _solve_amplitude_floor(decay, rho, weights)
    residual = rho - (a * decay + c)
    return float((weights * residual**2).sum()), a, c


def fit_exponential(points) -> ExpFit:
    """Fit a * exp(-lag / L) + c to correlation points, weighted by pair count.

    Coarse log-spaced sweep over L with a closed-form (a, c) solve per
    candidate, then golden-section refinement between the neighbors of
    the best candidate. A fit with vanishing amplitude leaves L
    meaningless and is flagged via length_identified=False.
    """
    points = list(points)
    lags = np.array([p.lag for p in points], dtype=float)
    if len(points) < 3 or np.unique(lags).size < 3:
        raise InsufficientPoints("need >= 3 points with distinct lags")
    rho = np.array([p.rho for p in points], dtype=float)
    weights = np.array([max(p.pair_count, 1) for p in points], dtype=float)

    positive = lags[lags > 0]
    lo = float(positive.min()) / 10.0 if positive.size else 1e-3
    hi = float(lags.max()) * 10.0 if lags.max() > 0 else 1.0
    grid = np.geomspace(lo, hi, 80)
    scores = [_fit_objective(length, lags, rho, weights)[0] for length in grid]
    best = int(np.argmin(scores))

    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, grid.size - 1)]
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    a_val, b_val = left, right
    for _ in range(80):
        c1 = b_val - golden * (b_val - a_val)
        c2 = a_val + golden * (b_val - a_val)
        if _fit_objective(c1, lags, rho, weights)[0] <= _fit_objective(c2, lags, rho, weights)[0]:
            b_val = c2
        else:
            a_val = c1
    length = 0.5 * (a_val + b_val)
    score, amp, floor = _fit_objective(length, lags, rho, weights)
    if scores[best] < score:
        length = float(grid[best])
        score, amp, floor = _fit_objective(length, lags, rho, weights)
    rms = math.sqrt(score / weights.sum())
    return ExpFit(
        amplitude=float(amp),
        decay_length=float(length),
        floor=float(floor),
        rms_residual=rms,
        length_identified=bool(amp > 1e-9),
    )
