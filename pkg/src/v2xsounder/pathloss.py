"""Measured pathloss, reference urban-macro models, and close-in fitting.

Reference models are transcribed from the external standards texts
(3GPP TR 38.901 Table 7.4.1-1; ITU-R M.2135 Table A1-2, UMa rows) and
locked by hand-evaluated anchors in the test suite. Validity-range
violations are surfaced as warnings, never suppressed and never fatal:
the 28 GHz carrier intentionally sits outside the M.2135 frequency range.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .antenna import AntennaModel, gain_at
from .constants import SPEED_OF_LIGHT
from .sounder import SounderSpec


class OutOfValidityRange(UserWarning):
    """Inputs outside a reference model's stated applicability."""


class ExceedsMeasurable(UserWarning):
    """Computed pathloss above the sounder's maximum measurable value."""


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class LinkGeometry:
    """Tx/Rx geometry and carrier for the reference models."""

    d2d: float  # m
    d3d: float  # m
    h_bs: float = 25.0  # Tx height, m
    h_ut: float = 2.0  # Rx height, m
    fc_ghz: float = 28.0
    street_width_m: float = 20.0  # ITU NLOS only
    avg_building_height_m: float = 20.0  # ITU NLOS only

    def __post_init__(self):
        if not self.d3d >= self.d2d > 0:
            raise ValueError("need d3d >= d2d > 0")
        if not self.h_bs > self.h_ut > 0:
            raise ValueError("need h_bs > h_ut > 0")


@dataclass(frozen=True)
class PathlossSample:
    d2d: float
    d3d: float
    pathloss_db: float
    los_flag: bool | None = None
    time_ns: int | None = None


@dataclass(frozen=True)
class CiFit:
    """Close-in free-space-reference fit: FSPL(d0) + 10 n log10(d/d0)."""

    pathloss_exponent: float
    shadow_sigma_db: float
    reference_distance_m: float


def measured_pathloss(
    spec: SounderSpec,
    tx_antenna: AntennaModel,
    rx_antenna: AntennaModel,
    prx_dbm: float,
    tx_offsets_deg: tuple[float, float] = (0.0, 0.0),
    rx_offsets_deg: tuple[float, float] = (0.0, 0.0),
) -> float:
    """Link-budget pathloss: ptx - cable loss + G_tx + G_rx - prx.

    Antenna gains are evaluated at the supplied (azimuth, elevation)
    misalignment offsets. Values above the sounder's maximum measurable
    pathloss are flagged with an ExceedsMeasurable warning, not an error.
    """
    g_tx = float(gain_at(tx_antenna, *tx_offsets_deg))
    g_rx = float(gain_at(rx_antenna, *rx_offsets_deg))
    pl = spec.tx_power_dbm - spec.cable_loss_db + g_tx + g_rx - prx_dbm
    if pl > spec.max_measurable_pathloss_db:
        warnings.warn(
            f"pathloss {pl:.2f} dB exceeds measurable {spec.max_measurable_pathloss_db} dB",
            ExceedsMeasurable,
            stacklevel=2,
        )
    return pl


def fspl(d_m: float, fc_ghz: float) -> float:
    """Free-space pathloss in dB."""
    if d_m <= 0 or fc_ghz <= 0:
        raise ValueError("distance and frequency must be > 0")
    return 20.0 * math.log10(4.0 * math.pi * d_m * fc_ghz * 1e9 / SPEED_OF_LIGHT)


def breakpoint_distance(g: LinkGeometry, effective_env_height_m: float = 1.0) -> float:
    """Two-segment LOS breakpoint, 4 h'_bs h'_ut f / c with effective heights."""
    return (
        4.0
        * (g.h_bs - effective_env_height_m)
        * (g.h_ut - effective_env_height_m)
        * g.fc_ghz
        * 1e9
        / SPEED_OF_LIGHT
    )


def _check_range(g: LinkGeometry, model: str, fc_lo: float, fc_hi: float, hut_lo: float, hut_hi: float):
    problems = []
    if not 10.0 <= g.d2d <= 5000.0:
        problems.append(f"d2d {g.d2d:.1f} m outside [10, 5000]")
    if not fc_lo <= g.fc_ghz <= fc_hi:
        problems.append(f"fc {g.fc_ghz} GHz outside [{fc_lo}, {fc_hi}]")
    if not hut_lo <= g.h_ut <= hut_hi:
        problems.append(f"h_ut {g.h_ut} m outside [{hut_lo}, {hut_hi}]")
    if problems:
        warnings.warn(f"{model}: " + "; ".join(problems), OutOfValidityRange, stacklevel=3)


def tr38901_uma_los(g: LinkGeometry) -> float:
    """3GPP TR 38.901 UMa LOS pathloss (two-segment, Table 7.4.1-1)."""
    _check_range(g, "TR38.901 UMa", 0.5, 100.0, 1.5, 22.5)
    d_bp = breakpoint_distance(g)
    if g.d2d <= d_bp:
        return 28.0 + 22.0 * math.log10(g.d3d) + 20.0 * math.log10(g.fc_ghz)
    return (
        28.0
        + 40.0 * math.log10(g.d3d)
        + 20.0 * math.log10(g.fc_ghz)
        - 9.0 * math.log10(d_bp**2 + (g.h_bs - g.h_ut) ** 2)
    )


def tr38901_uma_nlos(g: LinkGeometry) -> float:
    """3GPP TR 38.901 UMa NLOS: max(LOS, PL'_NLOS)."""
    nlos = (
        13.54
        + 39.08 * math.log10(g.d3d)
        + 20.0 * math.log10(g.fc_ghz)
        - 0.6 * (g.h_ut - 1.5)
    )
    return max(tr38901_uma_los(g), nlos)


def itu_m2135_uma_los(g: LinkGeometry) -> float:
    """ITU-R M.2135 UMa LOS pathloss (two-segment, Table A1-2).

    The second segment is anchored at the first segment's breakpoint
    value with a 40 log10 slope; the report's independently rounded
    constants would otherwise leave a ~0.05 dB step at the breakpoint.
    """
    _check_range(g, "ITU-R M.2135 UMa", 2.0, 6.0, 1.0, 2.5)
    d_bp = breakpoint_distance(g)
    if g.d2d <= d_bp:
        return 22.0 * math.log10(g.d3d) + 28.0 + 20.0 * math.log10(g.fc_ghz)
    # anchor at the slant distance of the switch point so both segments
    # agree there exactly
    d3d_bp = math.hypot(d_bp, g.h_bs - g.h_ut)
    pl_at_bp = 22.0 * math.log10(d3d_bp) + 28.0 + 20.0 * math.log10(g.fc_ghz)
    return pl_at_bp + 40.0 * (math.log10(g.d3d) - math.log10(d3d_bp))


def itu_m2135_uma_nlos(g: LinkGeometry) -> float:
    """ITU-R M.2135 UMa NLOS pathloss (street width / building height form)."""
    _check_range(g, "ITU-R M.2135 UMa", 2.0, 6.0, 1.0, 2.5)
    w = g.street_width_m
    h = g.avg_building_height_m
    return (
        161.04
        - 7.1 * math.log10(w)
        + 7.5 * math.log10(h)
        - (24.37 - 3.7 * (h / g.h_bs) ** 2) * math.log10(g.h_bs)
        + (43.42 - 3.1 * math.log10(g.h_bs)) * (math.log10(g.d3d) - 3.0)
        + 20.0 * math.log10(g.fc_ghz)
        - (3.2 * (math.log10(11.75 * g.h_ut)) ** 2 - 4.97)
    )


REFERENCE_MODELS = {
    "tr38901_uma_los": tr38901_uma_los,
    "tr38901_uma_nlos": tr38901_uma_nlos,
    "itu_m2135_uma_los": itu_m2135_uma_los,
    "itu_m2135_uma_nlos": itu_m2135_uma_nlos,
}


def fit_ci(samples, d0_m: float = 1.0, fc_ghz: float = 28.0) -> CiFit:
    """Close-in model fit: least-squares exponent about FSPL(d0).

    Minimizes sum (PL_i - FSPL(d0) - 10 n log10(d_i / d0))^2 over n;
    shadow sigma is the RMS residual.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InsufficientSamples("need >= 2 pathloss samples")
    d = np.array([s.d3d for s in samples], dtype=float)
    pl = np.array([s.pathloss_db for s in samples], dtype=float)
    if np.any(d <= d0_m):
        raise InsufficientSamples(f"all sample distances must exceed d0 = {d0_m} m")
    anchor = fspl(d0_m, fc_ghz)
    x = 10.0 * np.log10(d / d0_m)
    y = pl - anchor
    n = float(np.dot(x, y) / np.dot(x, x))
    residuals = y - n * x
    sigma = float(np.sqrt(np.mean(residuals**2)))
    return CiFit(pathloss_exponent=n, shadow_sigma_db=sigma, reference_distance_m=d0_m)


def geometry_for_d2d(d2d: float, h_bs: float = 25.0, h_ut: float = 2.0, fc_ghz: float = 28.0, **kw) -> LinkGeometry:
    """Convenience: build a LinkGeometry with d3d implied by the height gap."""
    d3d = math.sqrt(d2d**2 + (h_bs - h_ut) ** 2)
    return LinkGeometry(d2d=d2d, d3d=d3d, h_bs=h_bs, h_ut=h_ut, fc_ghz=fc_ghz, **kw)
