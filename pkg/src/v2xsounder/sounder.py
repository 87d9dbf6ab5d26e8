"""Sliding-correlator capture model and the post-processing chain.

The hardware correlator performs the PN cross-correlation before capture,
so the recorded I/Q stream is already a time-dilated delay profile. This
module turns raw segments into calibrated per-capture power-delay
profiles: low-pass pre-filtering, time-windowing, mapping of the dilated
axis onto the excess-delay grid, noise-floor estimation, peak search, and
calibrated received power.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np


class TruncatedFile(ValueError):
    """I/Q byte stream does not contain a whole number of complex samples."""


class MetadataMismatch(ValueError):
    """Metadata segment bounds are inconsistent with the I/Q file."""


class InvalidCutoff(ValueError):
    pass


class EvenTaps(ValueError):
    pass


class WindowOutOfRange(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class UnknownGainSetting(KeyError):
    pass


class NoPeaksDetected(ValueError):
    """No bins survived thresholding; the capture is an outage."""


@dataclass(frozen=True)
class SounderSpec:
    """Operational constants of the sliding-correlator sounder."""

    carrier_hz: float = 28e9
    pn_length: int = 2047  # chips
    tx_chip_rate_cps: float = 400e6
    rx_chip_rate_cps: float = 399.95e6
    tx_power_dbm: float = 23.0
    antenna_gain_dbi: float = 22.0
    max_measurable_pathloss_db: float = 182.0
    usrp_sampling_rate_sps: float = 2e6
    usrp_gain_db: float = 76.0
    cable_loss_db: float = 0.0  # fixed feed-line loss folded into link budget

    def __post_init__(self):
        if not self.tx_chip_rate_cps > self.rx_chip_rate_cps > 0:
            raise ValueError("need tx_chip_rate > rx_chip_rate > 0")
        if self.pn_length < 1:
            raise ValueError("pn_length must be >= 1")


def slide_factor(spec: SounderSpec) -> float:
    """Time-dilation ratio f_tx / (f_tx - f_rx) of the sliding correlator."""
    return spec.tx_chip_rate_cps / (spec.tx_chip_rate_cps - spec.rx_chip_rate_cps)


def temporal_resolution(spec: SounderSpec) -> float:
    """Excess-delay grid spacing in seconds (one chip duration)."""
    return 1.0 / spec.tx_chip_rate_cps


def max_excess_delay(spec: SounderSpec) -> float:
    """Unambiguous excess-delay span in seconds (one PN period)."""
    return spec.pn_length / spec.tx_chip_rate_cps


def dilated_pn_period(spec: SounderSpec) -> float:
    """Duration of one PN period as seen in the dilated capture stream."""
    return spec.pn_length / (spec.tx_chip_rate_cps - spec.rx_chip_rate_cps)


@dataclass(frozen=True)
class PowerDelayProfile:
    """One recorded (or synthesized) complex capture segment."""

    start_time_ns: int
    sample_rate_sps: float
    samples: np.ndarray  # complex64

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("PDP must contain samples")
        if self.sample_rate_sps <= 0:
            raise ValueError("sample_rate_sps must be > 0")


@dataclass(frozen=True)
class ProcessedPdp:
    """Power-delay profile on the excess-delay grid, with peak annotations."""

    delay_bins: np.ndarray  # seconds, uniformly spaced
    power_db: np.ndarray
    noise_floor_db: float
    peak_mask: np.ndarray  # bool per bin


# ---------------------------------------------------------------------------
# I/Q ingestion
# ---------------------------------------------------------------------------


def load_iq(data_file, metadata_file) -> list[PowerDelayProfile]:
    """Split an interleaved float32 I/Q file into per-segment PDPs.

    Metadata is JSON-lines, one record per segment:
    {"start_time_ns": ..., "num_samples": ..., "sample_rate_sps": ...};
    segments consume the file consecutively in time order.
    """
    nbytes = os.path.getsize(data_file)
    if nbytes % 8 != 0:
        raise TruncatedFile(f"{data_file}: {nbytes} bytes is not a whole number of I/Q pairs")
    raw = np.fromfile(data_file, dtype="<f4")
    iq = raw[0::2].astype(np.complex64)
    iq += 1j * raw[1::2].astype(np.complex64)

    segments = []
    with open(metadata_file) as handle:
        for line in handle:
            line = line.strip()
            if line:
                segments.append(json.loads(line))
    times = [int(seg["start_time_ns"]) for seg in segments]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise MetadataMismatch("metadata segments are not ordered by time")

    pdps = []
    cursor = 0
    for seg in segments:
        n = int(seg["num_samples"])
        if n <= 0 or cursor + n > iq.size:
            raise MetadataMismatch(
                f"segment of {n} samples at offset {cursor} exceeds file of {iq.size}"
            )
        pdps.append(
            PowerDelayProfile(
                start_time_ns=int(seg["start_time_ns"]),
                sample_rate_sps=float(seg["sample_rate_sps"]),
                samples=iq[cursor : cursor + n],
            )
        )
        cursor += n
    return pdps


# A file length check that callers can run before parsing metadata.
def validate_iq_file(data_file) -> int:
    """Return the number of complex samples; raise TruncatedFile on misalignment."""
    raw = np.fromfile(data_file, dtype=np.uint8)
    if raw.size % 8 != 0:
        raise TruncatedFile(f"{data_file}: {raw.size} bytes is not a whole number of I/Q pairs")
    return raw.size // 8


# ---------------------------------------------------------------------------
# Pre-filtering and windowing
# ---------------------------------------------------------------------------


def design_lowpass(cutoff_hz: float, num_taps: int, sample_rate: float) -> np.ndarray:
    """Linear-phase windowed-sinc low-pass (Hamming), unit DC gain.

    Taps are built from a symmetric integer index so c[k] == c[N-1-k]
    holds exactly, not just to rounding.
    """
    if not 0.0 < cutoff_hz < sample_rate / 2.0:
        raise InvalidCutoff(f"cutoff {cutoff_hz} outside (0, {sample_rate / 2})")
    if num_taps % 2 == 0 or num_taps < 1:
        raise EvenTaps("num_taps must be odd")
    half = (num_taps - 1) // 2
    n = np.arange(-half, half + 1, dtype=float)
    taps = np.sinc(2.0 * cutoff_hz / sample_rate * n)
    window = 0.54 + 0.46 * np.cos(np.pi * n / max(half, 1))
    taps *= window
    return taps / taps.sum()


def apply_filter(pdp: PowerDelayProfile, coeffs: np.ndarray) -> PowerDelayProfile:
    """Filter the complex stream with zero-phase compensation.

    The (N-1)/2-sample group delay of the linear-phase kernel is removed,
    so output sample k lines up with input sample k.
    """
    n = len(coeffs)
    delay = (n - 1) // 2
    full = np.convolve(pdp.samples, coeffs, mode="full")
    # stays double precision: only the recorded stream is complex64
    return replace(pdp, samples=full[delay : delay + len(pdp.samples)])


def time_window(pdp: PowerDelayProfile, start_s: float, duration_s: float) -> PowerDelayProfile:
    """Keep only samples in [start_s, start_s + duration_s) of the segment."""
    first = int(round(start_s * pdp.sample_rate_sps))
    count = int(round(duration_s * pdp.sample_rate_sps))
    if first < 0 or count <= 0 or first + count > len(pdp.samples):
        raise WindowOutOfRange(
            f"window [{start_s}, {start_s + duration_s}) outside segment of "
            f"{len(pdp.samples) / pdp.sample_rate_sps} s"
        )
    return replace(
        pdp,
        start_time_ns=pdp.start_time_ns + int(round(first / pdp.sample_rate_sps * 1e9)),
        samples=pdp.samples[first : first + count],
    )


# ---------------------------------------------------------------------------
# Noise elimination and peak search
# ---------------------------------------------------------------------------


def estimate_noise_floor(power_db: np.ndarray, fraction: float = 0.25) -> float:
    """Mean of the lowest `fraction` quantile of per-bin powers."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    ordered = np.sort(np.asarray(power_db, dtype=float))
    k = max(1, int(len(ordered) * fraction))
    return float(ordered[:k].mean())


def detect_peaks(
    power_db: np.ndarray,
    noise_floor_db: float,
    k_db: float = 5.0,
    min_separation_bins: int = 2,
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Local maxima above noise_floor + k_db, greedily thinned by separation.

    Candidates are kept in descending power (ties resolved toward lower
    bin index); a candidate within min_separation_bins of an already-kept
    peak is suppressed. Returns (mask, [(bin, power_db), ...]).
    """
    if k_db <= 0:
        raise ValueError("k_db must be > 0")
    p = np.asarray(power_db, dtype=float)
    threshold = noise_floor_db + k_db
    candidates = []
    for i in range(len(p)):
        if p[i] < threshold:
            continue
        left_ok = i == 0 or p[i] >= p[i - 1]
        right_ok = i == len(p) - 1 or p[i] >= p[i + 1]
        if left_ok and right_ok:
            candidates.append(i)
    candidates.sort(key=lambda i: (-p[i], i))
    kept: list[int] = []
    for i in candidates:
        if all(abs(i - j) >= min_separation_bins for j in kept):
            kept.append(i)
    mask = np.zeros(len(p), dtype=bool)
    mask[kept] = True
    peaks = [(i, float(p[i])) for i in sorted(kept)]
    return mask, peaks


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationMap:
    """Per-USRP-gain linear maps from calculated power to measured power."""

    lines: dict  # gain_setting (float) -> (slope, offset)

    @classmethod
    def identity(cls, gain_settings=(0.0, 76.0)) -> "CalibrationMap":
        return cls(lines={float(g): (1.0, 0.0) for g in gain_settings})


def fit_calibration(points) -> CalibrationMap:
    """Least-squares line per gain setting from (gain, calculated, measured) triples."""
    grouped: dict[float, list[tuple[float, float]]] = {}
    for gain, calculated, measured in points:
        grouped.setdefault(float(gain), []).append((float(calculated), float(measured)))
    lines = {}
    for gain, pairs in grouped.items():
        if len(pairs) < 2:
            raise InsufficientPoints(f"gain setting {gain}: need >= 2 calibration points")
        x = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        slope, offset = np.polyfit(x, y, 1)
        lines[gain] = (float(slope), float(offset))
    return CalibrationMap(lines=lines)


def load_calibration(path) -> CalibrationMap:
    """Fit a calibration map from a `gain_setting_db,calculated_db,measured_db` CSV."""
    import csv

    points = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            points.append(
                (float(row["gain_setting_db"]), float(row["calculated_db"]), float(row["measured_db"]))
            )
    return fit_calibration(points)


def apply_calibration(cal: CalibrationMap, gain_setting: float, calculated_db: float) -> float:
    try:
        slope, offset = cal.lines[float(gain_setting)]
    except KeyError:
        raise UnknownGainSetting(f"no calibration line for gain {gain_setting}") from None
    return slope * calculated_db + offset


def received_power(processed: ProcessedPdp, cal: CalibrationMap, gain_setting: float) -> float:
    """Calibrated received power in dBm: linear sum over peak bins, then map."""
    if not processed.peak_mask.any():
        raise NoPeaksDetected("no peak bins; treat as outage")
    linear = np.power(10.0, processed.power_db[processed.peak_mask] / 10.0)
    calculated_db = 10.0 * np.log10(linear.sum())
    return apply_calibration(cal, gain_setting, float(calculated_db))


# ---------------------------------------------------------------------------
# Full per-segment pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProcessingConfig:
    """Knobs of the post-processing chain, with workable defaults."""

    lowpass_cutoff_hz: float = 250e3
    lowpass_taps: int = 129
    window_start_s: float | None = None  # None: keep the whole segment
    window_duration_s: float | None = None
    noise_fraction: float = 0.25
    threshold_db: float = 5.0
    min_separation_bins: int = 2


def process_pdp(pdp: PowerDelayProfile, spec: SounderSpec, config: ProcessingConfig = ProcessingConfig()) -> ProcessedPdp:
    """Run the full chain: filter, window, delay-map, noise floor, peaks.

    The dilated capture axis is compressed by the slide factor onto the
    excess-delay grid; raw samples are power-averaged within each
    chip-duration cell so delay bins land on the temporal-resolution
    grid. A trailing partial cell is dropped.
    """
    stage = pdp
    if config.lowpass_taps and config.lowpass_cutoff_hz:
        coeffs = design_lowpass(config.lowpass_cutoff_hz, config.lowpass_taps, stage.sample_rate_sps)
        stage = apply_filter(stage, coeffs)
    if config.window_start_s is not None and config.window_duration_s is not None:
        stage = time_window(stage, config.window_start_s, config.window_duration_s)

    power = stage.samples.real.astype(float) ** 2 + stage.samples.imag.astype(float) ** 2
    gamma = slide_factor(spec)
    per_bin = stage.sample_rate_sps * gamma * temporal_resolution(spec)
    samples_per_bin = max(1, int(round(per_bin)))
    num_bins = len(power) // samples_per_bin
    if num_bins == 0:
        raise WindowOutOfRange("segment shorter than one delay bin")
    binned = power[: num_bins * samples_per_bin].reshape(num_bins, samples_per_bin).mean(axis=1)

    with np.errstate(divide="ignore"):
        power_db = 10.0 * np.log10(binned)
    floor = estimate_noise_floor(power_db, config.noise_fraction)
    mask, _ = detect_peaks(power_db, floor, config.threshold_db, config.min_separation_bins)
    delay_bins = np.arange(num_bins) * temporal_resolution(spec)
    return ProcessedPdp(delay_bins=delay_bins, power_db=power_db, noise_floor_db=floor, peak_mask=mask)
