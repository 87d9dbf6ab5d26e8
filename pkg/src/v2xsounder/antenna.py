"""Directional horn antenna patterns: ingestion, gain lookup, HPBW.

A pattern is described by two principal-plane cuts (azimuth, elevation),
each a normalized dB trace with its peak pinned at exactly 0 dB. The 3D
gain is reconstructed separably from the two cuts, interpolated linearly
in dB.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class NonMonotonicAngles(ValueError):
    """Pattern cut angles must be strictly increasing."""


class EmptyCut(ValueError):
    """Pattern cut contains no samples."""


class NoCrossingFound(ValueError):
    """Pattern never falls 3 dB below its peak on both sides."""


@dataclass(frozen=True)
class PatternCut:
    """One principal-plane cut: angles (deg) vs normalized gain (dB <= 0)."""

    angle_samples: np.ndarray
    normalized_gain: np.ndarray

    @classmethod
    def from_samples(cls, angles, gains_db) -> "PatternCut":
        """Validate and renormalize a raw cut so its peak is exactly 0 dB."""
        ang = np.asarray(angles, dtype=float)
        g = np.asarray(gains_db, dtype=float)
        if ang.size == 0:
            raise EmptyCut("pattern cut has no samples")
        if ang.size != g.size:
            raise ValueError("angle and gain arrays differ in length")
        if ang.size > 1 and not np.all(np.diff(ang) > 0):
            raise NonMonotonicAngles("cut angles must be strictly increasing")
        return cls(angle_samples=ang, normalized_gain=g - g.max())


@dataclass(frozen=True)
class AntennaModel:
    azimuth_cut: PatternCut
    elevation_cut: PatternCut
    boresight_gain: float  # dBi


def wrap_offset(angle_deg):
    """Wrap pattern offsets into [-180, 180); works on scalars and arrays."""
    return np.mod(np.asarray(angle_deg, dtype=float) + 180.0, 360.0) - 180.0


def load_pattern(azimuth_file, elevation_file=None, boresight_gain_dbi: float = 22.0) -> AntennaModel:
    """Load measured pattern cuts from CSV (`angle_deg,gain_db`).

    Either two files (one per cut) or a single file carrying a `cut`
    column with values `azimuth` / `elevation`.
    """
    if elevation_file is not None:
        az = _read_cut_csv(azimuth_file)
        el = _read_cut_csv(elevation_file)
    else:
        az, el = _read_combined_csv(azimuth_file)
    return AntennaModel(azimuth_cut=az, elevation_cut=el, boresight_gain=boresight_gain_dbi)


def _read_cut_csv(path) -> PatternCut:
    angles, gains = [], []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            angles.append(float(row["angle_deg"]))
            gains.append(float(row["gain_db"]))
    return PatternCut.from_samples(angles, gains)


def _read_combined_csv(path) -> tuple[PatternCut, PatternCut]:
    cuts: dict[str, tuple[list, list]] = {"azimuth": ([], []), "elevation": ([], [])}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            name = row["cut"].strip().lower()
            if name not in cuts:
                raise ValueError(f"unknown cut name {row['cut']!r}")
            cuts[name][0].append(float(row["angle_deg"]))
            cuts[name][1].append(float(row["gain_db"]))
    return (
        PatternCut.from_samples(*cuts["azimuth"]),
        PatternCut.from_samples(*cuts["elevation"]),
    )


def cut_gain(cut: PatternCut, offset_deg):
    """Normalized cut gain in dB at an offset, linear interpolation in dB."""
    return np.interp(wrap_offset(offset_deg), cut.angle_samples, cut.normalized_gain)


def gain_at(model: AntennaModel, az_offset_deg, el_offset_deg):
    """Separable gain in dBi at (azimuth, elevation) offsets from boresight."""
    return (
        model.boresight_gain
        + cut_gain(model.azimuth_cut, az_offset_deg)
        + cut_gain(model.elevation_cut, el_offset_deg)
    )


def hpbw(cut: PatternCut) -> float:
    """Half-power beam-width: degrees between the -3 dB crossings around the peak."""
    ang, g = cut.angle_samples, cut.normalized_gain
    peak = int(np.argmax(g))
    level = g[peak] - 3.0

    def crossing(indices) -> float:
        prev = peak
        for i in indices:
            if g[i] < level:
                # sub-sample linear interpolation between prev and i
                frac = (level - g[prev]) / (g[i] - g[prev])
                return float(ang[prev] + frac * (ang[i] - ang[prev]))
            prev = i
        raise NoCrossingFound("pattern never falls 3 dB below its peak")

    right = crossing(range(peak + 1, len(g)))
    left = crossing(range(peak - 1, -1, -1))
    return right - left


def make_gaussian_model(
    boresight_gain_dbi: float = 22.0,
    hpbw_az_deg: float = 10.1,
    hpbw_el_deg: float = 11.5,
    floor_db: float = -40.0,
    step_deg: float = 0.25,
) -> AntennaModel:
    """Synthetic horn surrogate: Gaussian main lobe in dB over a flat floor.

    The dB trace -12 (offset / hpbw)^2 crosses -3 dB at exactly +/- hpbw/2.
    Default widths match the measured principal-cut beam-widths of the
    WR-28 horns, with the published gain at boresight.
    """
    angles = np.arange(-180.0, 180.0 + step_deg / 2, step_deg)

    def cut(width: float) -> PatternCut:
        trace = np.maximum(-12.0 * (angles / width) ** 2, floor_db)
        return PatternCut.from_samples(angles, trace)

    return AntennaModel(
        azimuth_cut=cut(hpbw_az_deg),
        elevation_cut=cut(hpbw_el_deg),
        boresight_gain=boresight_gain_dbi,
    )
