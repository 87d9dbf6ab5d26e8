"""Bundled synthetic fixtures: a drive track for the tracking simulator
and a small end-to-end capture (I/Q, metadata, logs, calibration) for the
processing pipeline. Everything is deterministic for a given seed."""

from __future__ import annotations

import json
import math

import numpy as np

from . import geo, tracksim
from .geo import EnuVector, GeoFix
from .sounder import SounderSpec, dilated_pn_period, slide_factor, temporal_resolution

DEFAULT_CENTER = GeoFix(latitude=40.767, longitude=-111.845, altitude_ellipsoidal=1400.0)


def synthetic_drive(
    num_fixes: int = 1000,
    center: GeoFix = DEFAULT_CENTER,
    radius_m: float = 100.0,
    speed_mps: float = 10.0,
    fix_period_s: float = 0.1,
    accuracy_3d_m: float = 0.17,
    mount_height_m: float = 2.0,
) -> list[GeoFix]:
    """Clockwise circular drive around `center` at constant speed."""
    omega = speed_mps / radius_m  # rad/s
    fixes = []
    for k in range(num_fixes):
        t = k * fix_period_s
        psi = omega * t
        east = radius_m * math.sin(psi)
        north = radius_m * math.cos(psi)
        point = geo.enu_to_ecef(center, EnuVector(east=east, north=north, up=mount_height_m))
        lat, lon, alt = geo.ecef_to_geodetic(point)
        heading = geo.wrap_deg_360(math.degrees(math.atan2(math.cos(psi), -math.sin(psi))))
        fixes.append(
            GeoFix(
                latitude=lat,
                longitude=lon,
                altitude_ellipsoidal=alt,
                speed_horizontal=speed_mps,
                acceleration_horizontal=0.0,
                heading=heading,
                fix_time=int(round(t * 1e9)),
                accuracy_3d=accuracy_3d_m,
            )
        )
    return fixes


def default_scenario(seed: int = 0, num_fixes: int = 1000) -> tracksim.ScenarioConfig:
    """The shipped tracking scenario: rooftop Tx, circular 10 m/s drive."""
    return tracksim.ScenarioConfig(
        tx_fix=DEFAULT_CENTER,
        rx_track=tuple(synthetic_drive(num_fixes=num_fixes)),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Capture fixture for the processing pipeline
# ---------------------------------------------------------------------------


def make_capture_fixture(out_dir, seed: int = 0, num_segments: int = 3):
    """Write a coherent set of pipeline inputs under out_dir.

    One dilated PN period per segment at the stock 2 Msps, a two-path
    channel whose echo fades with distance, an Rx track walking away from
    the Tx, boresight alignment logs for both nodes, and an identity-like
    calibration table. Returns a dict of file paths.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    spec = SounderSpec()
    rng = np.random.default_rng(seed)
    samples_per_segment = int(round(dilated_pn_period(spec) * spec.usrp_sampling_rate_sps))
    samples_per_chip = int(round(spec.usrp_sampling_rate_sps * slide_factor(spec) * temporal_resolution(spec)))

    segments = []
    iq = np.zeros(num_segments * samples_per_segment * 2, dtype="<f4")
    tx = DEFAULT_CENTER
    track = []
    align_rows = []
    segment_gap_ns = 500_000_000
    for s in range(num_segments):
        start_ns = s * segment_gap_ns
        # line-of-sight bump at chip 40 plus an echo at chip 55, fading with s
        base = np.zeros(samples_per_segment, dtype=complex)
        for chip, amplitude in ((40, 0.5 / (1.0 + 0.6 * s)), (55, 0.18 / (1.0 + 0.9 * s))):
            lo = chip * samples_per_chip
            base[lo : lo + samples_per_chip] = amplitude * np.exp(1j * 0.4 * (s + 1))
        base += (
            rng.normal(scale=2e-4, size=samples_per_segment)
            + 1j * rng.normal(scale=2e-4, size=samples_per_segment)
        )
        offset = s * samples_per_segment * 2
        iq[offset : offset + 2 * samples_per_segment : 2] = base.real
        iq[offset + 1 : offset + 2 * samples_per_segment : 2] = base.imag
        segments.append(
            {
                "start_time_ns": start_ns,
                "num_samples": samples_per_segment,
                "sample_rate_sps": spec.usrp_sampling_rate_sps,
            }
        )
        # Rx fix a few ms after each capture starts, stepping away from the Tx
        point = geo.enu_to_ecef(tx, EnuVector(east=0.0, north=60.0 + 40.0 * s, up=2.0))
        lat, lon, alt = geo.ecef_to_geodetic(point)
        track.append(
            GeoFix(
                latitude=lat,
                longitude=lon,
                altitude_ellipsoidal=alt,
                speed_horizontal=5.0,
                heading=0.0,
                fix_time=start_ns + 3_000_000,
                accuracy_3d=0.17,
            )
        )
        align_rows.append((start_ns + 2_000_000, 0.0, 0.0))

    paths = {
        "iq": os.path.join(out_dir, "capture.iq"),
        "metadata": os.path.join(out_dir, "capture.meta.jsonl"),
        "rx_track": os.path.join(out_dir, "rx_track.csv"),
        "align_tx": os.path.join(out_dir, "align_tx.csv"),
        "align_rx": os.path.join(out_dir, "align_rx.csv"),
        "calibration": os.path.join(out_dir, "calibration.csv"),
    }
    iq.tofile(paths["iq"])
    with open(paths["metadata"], "w") as handle:
        for seg in segments:
            handle.write(json.dumps(seg) + "\n")
    geo.write_track(paths["rx_track"], track)
    for key in ("align_tx", "align_rx"):
        with open(paths[key], "w") as handle:
            handle.write("time_ns,yaw_offset_deg,pitch_offset_deg\n")
            for t_ns, yaw, pitch in align_rows:
                handle.write(f"{t_ns},{yaw},{pitch}\n")
    with open(paths["calibration"], "w") as handle:
        handle.write("gain_setting_db,calculated_db,measured_db\n")
        for calculated in (-90.0, -60.0, -30.0):
            handle.write(f"{spec.usrp_gain_db},{calculated},{calculated}\n")
    return paths
