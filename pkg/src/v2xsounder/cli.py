"""Batch entry point: ingest, process, model, estimate, correlate, simulate.

Every subcommand writes tidy CSV/JSON plot data plus a run manifest
(inputs, parameters, seed, versions). Manifests deliberately exclude the
output directory and worker count so reruns of the same recipe are
byte-identical. Exit status is 0 iff no error-level records were logged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, antenna, consistency, geo, pathloss, sage, sounder, synthetic, tracksim

logger = logging.getLogger("v2xsounder")


class NoTemporalOverlap(ValueError):
    """No capture segment has a geo fix within the association skew."""


class _ErrorCounter(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.ERROR)
        self.count = 0

    def emit(self, record):
        self.count += 1


def _write_manifest(out_dir: Path, command: str, inputs: dict, parameters: dict, seed) -> None:
    manifest = {
        "command": command,
        "inputs": inputs,
        "parameters": parameters,
        "seed": seed,
        "versions": {"v2xsounder": __version__, "numpy": np.__version__},
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _load_antenna(args) -> antenna.AntennaModel:
    if getattr(args, "pattern_az", None):
        return antenna.load_pattern(args.pattern_az, args.pattern_el)
    return antenna.make_gaussian_model()


def _nearest_row(target_ns: int, times_ns, max_skew_ns: int):
    """Index of the time closest to target within the skew cap, else None."""
    if len(times_ns) == 0:
        return None
    diffs = [abs(int(t) - int(target_ns)) for t in times_ns]
    best = int(np.argmin(diffs))
    return best if diffs[best] <= max_skew_ns else None


def _read_alignment_csv(path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            rows.append(
                (int(row["time_ns"]), float(row["yaw_offset_deg"]), float(row["pitch_offset_deg"]))
            )
    return rows


# ---------------------------------------------------------------------------
# process
# ---------------------------------------------------------------------------


def cmd_process(args, out_dir: Path) -> None:
    spec = sounder.SounderSpec()
    model = _load_antenna(args)
    cal = (
        sounder.load_calibration(args.calibration)
        if args.calibration
        else sounder.CalibrationMap.identity([spec.usrp_gain_db])
    )
    track = geo.read_track(args.rx_track)
    track_times = [fix.fix_time for fix in track]
    align_tx = _read_alignment_csv(args.align_tx) if args.align_tx else []
    align_rx = _read_alignment_csv(args.align_rx) if args.align_rx else []
    tx_fix = geo.GeoFix(
        latitude=args.tx_lat,
        longitude=args.tx_lon,
        altitude_ellipsoidal=args.tx_alt,
        heading=args.tx_heading,
    )
    pdps = sounder.load_iq(args.iq, args.metadata)
    config = sounder.ProcessingConfig(
        lowpass_cutoff_hz=args.cutoff_hz,
        lowpass_taps=args.taps,
        noise_fraction=args.noise_fraction,
        threshold_db=args.threshold_db,
        min_separation_bins=args.min_separation,
    )
    skew_ns = int(args.max_skew_ms * 1e6)
    los = {"los": "1", "nlos": "0", "unknown": ""}[args.los]

    def offsets_for(segment_ns: int, rows) -> tuple[float, float]:
        idx = _nearest_row(segment_ns, [r[0] for r in rows], skew_ns)
        return (rows[idx][1], rows[idx][2]) if idx is not None else (0.0, 0.0)

    def handle_segment(pdp):
        fix_idx = _nearest_row(pdp.start_time_ns, track_times, skew_ns)
        if fix_idx is None:
            logger.warning("segment at %d ns has no geo fix within skew; skipped", pdp.start_time_ns)
            return None
        rx_fix = track[fix_idx]
        processed = sounder.process_pdp(pdp, spec, config)
        try:
            prx_dbm = sounder.received_power(processed, cal, args.gain_setting)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", pathloss.ExceedsMeasurable)
                pl = pathloss.measured_pathloss(
                    spec,
                    model,
                    model,
                    prx_dbm,
                    tx_offsets_deg=offsets_for(pdp.start_time_ns, align_tx),
                    rx_offsets_deg=offsets_for(pdp.start_time_ns, align_rx),
                )
            pl = min(pl, spec.max_measurable_pathloss_db)
        except sounder.NoPeaksDetected:
            logger.warning(
                "segment at %d ns: outage, substituting max measurable pathloss", pdp.start_time_ns
            )
            pl = spec.max_measurable_pathloss_db
        d2d, d3d = geo.distance(tx_fix, rx_fix)
        return (rx_fix.fix_time, d2d, d3d, pl)

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(handle_segment, pdps))
    else:
        rows = [handle_segment(pdp) for pdp in pdps]
    rows = [r for r in rows if r is not None]
    if not rows:
        raise NoTemporalOverlap("no capture segment matched the geo log within the skew cap")
    rows.sort(key=lambda r: r[0])

    out = out_dir / "pathloss_samples.csv"
    with open(out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["time_ns", "d2d_m", "d3d_m", "pl_db", "los"])
        for time_ns, d2d, d3d, pl in rows:
            writer.writerow([time_ns, repr(d2d), repr(d3d), repr(pl), los])
    logger.info("wrote %d pathloss samples to %s", len(rows), out)
    _write_manifest(
        out_dir,
        "process",
        {
            "iq": args.iq,
            "metadata": args.metadata,
            "calibration": args.calibration,
            "rx_track": args.rx_track,
            "align_tx": args.align_tx,
            "align_rx": args.align_rx,
        },
        {
            "tx": [args.tx_lat, args.tx_lon, args.tx_alt, args.tx_heading],
            "gain_setting": args.gain_setting,
            "max_skew_ms": args.max_skew_ms,
            "los": args.los,
            "cutoff_hz": args.cutoff_hz,
            "taps": args.taps,
            "noise_fraction": args.noise_fraction,
            "threshold_db": args.threshold_db,
            "min_separation": args.min_separation,
        },
        args.seed,
    )


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def cmd_models(args, out_dir: Path) -> None:
    distances = np.geomspace(args.d_min, args.d_max, args.points)
    out = out_dir / "model_curves.csv"
    with open(out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["d_m", "model", "pl_db"])
        for name, fn in pathloss.REFERENCE_MODELS.items():
            for d in distances:
                g = pathloss.geometry_for_d2d(
                    float(d),
                    h_bs=args.h_bs,
                    h_ut=args.h_ut,
                    fc_ghz=args.fc_ghz,
                    street_width_m=args.street_width,
                    avg_building_height_m=args.building_height,
                )
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    value = fn(g)
                for w in caught:
                    logger.warning("%s at %.1f m: %s", name, d, w.message)
                writer.writerow([repr(float(d)), name, repr(value)])
    logger.info("wrote model curves to %s", out)
    _write_manifest(
        out_dir,
        "models",
        {},
        {
            "d_min": args.d_min,
            "d_max": args.d_max,
            "points": args.points,
            "h_bs": args.h_bs,
            "h_ut": args.h_ut,
            "fc_ghz": args.fc_ghz,
            "street_width": args.street_width,
            "building_height": args.building_height,
        },
        args.seed,
    )


# ---------------------------------------------------------------------------
# fitci / calibrate
# ---------------------------------------------------------------------------


def cmd_fitci(args, out_dir: Path) -> None:
    samples = []
    with open(args.samples, newline="") as handle:
        for row in csv.DictReader(handle):
            samples.append(
                pathloss.PathlossSample(
                    d2d=float(row["d2d_m"]),
                    d3d=float(row["d3d_m"]),
                    pathloss_db=float(row["pl_db"]),
                    los_flag={"1": True, "0": False, "": None}.get(row.get("los", ""), None),
                )
            )
    fit = pathloss.fit_ci(samples, d0_m=args.d0, fc_ghz=args.fc_ghz)
    out = out_dir / "ci_fit.json"
    out.write_text(
        json.dumps(
            {
                "pathloss_exponent": fit.pathloss_exponent,
                "shadow_sigma_db": fit.shadow_sigma_db,
                "reference_distance_m": fit.reference_distance_m,
                "sample_count": len(samples),
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    logger.info("CI fit: n=%.3f sigma=%.3f dB", fit.pathloss_exponent, fit.shadow_sigma_db)
    _write_manifest(
        out_dir, "fitci", {"samples": args.samples}, {"d0": args.d0, "fc_ghz": args.fc_ghz}, args.seed
    )


def cmd_calibrate(args, out_dir: Path) -> None:
    cal = sounder.load_calibration(args.points)
    out = out_dir / "calibration_map.json"
    payload = {
        repr(gain): {"slope": slope, "offset": offset} for gain, (slope, offset) in cal.lines.items()
    }
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    logger.info("fit %d calibration lines", len(cal.lines))
    _write_manifest(out_dir, "calibrate", {"points": args.points}, {}, args.seed)


# ---------------------------------------------------------------------------
# sage
# ---------------------------------------------------------------------------


def _schedule_from_config(cfg: dict) -> np.ndarray:
    if "points" in cfg:
        return np.asarray(cfg["points"], dtype=float)
    span = float(cfg.get("span_deg", 12.0))
    step = float(cfg.get("step_deg", 1.0))
    dwell = float(cfg.get("dwell_s", 0.005))
    rows = []
    t = 0.0
    for a in np.arange(-span, span + step / 2, step):
        rows.append((a, 0.0, t))
        t += dwell
    for e in np.arange(-span, span + step / 2, step):
        rows.append((0.0, e, t))
        t += dwell
    return np.asarray(rows)


def _component_from_dict(raw: dict) -> sage.MultipathComponent:
    mag = float(raw["alpha_mag"])
    phase = float(raw.get("alpha_phase_rad", 0.0))
    return sage.MultipathComponent(
        alpha=mag * complex(np.cos(phase), np.sin(phase)),
        tau_s=float(raw["tau_s"]),
        nu_hz=float(raw.get("nu_hz", 0.0)),
        phi_deg=float(raw["phi_deg"]),
        theta_deg=float(raw["theta_deg"]),
    )


def cmd_sage(args, out_dir: Path) -> None:
    cfg = json.loads(Path(args.config).read_text())
    spec = sounder.SounderSpec(**cfg.get("spec", {}))
    model = antenna.make_gaussian_model(**cfg.get("antenna", {}))
    schedule = _schedule_from_config(cfg.get("schedule", {}))
    sage_kwargs = dict(cfg.get("sage", {}))
    for key in ("phi_range_deg", "theta_range_deg", "nu_range_hz"):
        if key in sage_kwargs:
            sage_kwargs[key] = tuple(sage_kwargs[key])
    noise_power = float(cfg.get("noise_power", 0.0))
    runs = cfg.get("runs", [{"seed": args.seed or 0, "components": cfg.get("components", [])}])

    spreads = []
    summary = []
    for k, run in enumerate(runs):
        seed = int(run.get("seed", k))
        truth = [_component_from_dict(c) for c in run["components"]]
        obs = sage.synthesize_observations(truth, schedule, spec, model, noise_power, seed=seed)
        kwargs = dict(sage_kwargs)
        kwargs.setdefault("num_paths", max(len(truth), 1))
        sage_config = sage.SageConfig(**kwargs)
        result = sage.run_sage(obs, sage_config)
        estimates_path = out_dir / f"sage_estimates_{k:03d}.csv"
        sage.write_components_csv(estimates_path, result.components)
        spread = sage.direction_spread(result.components)
        spreads.append(spread)
        summary.append(
            {
                "run": k,
                "seed": seed,
                "converged": result.converged,
                "iterations": result.iterations,
                "direction_spread": spread,
                "objective_trace": [entry["objective"] for entry in result.trace],
            }
        )
    cdf_path = out_dir / "direction_spread_cdf.csv"
    with open(cdf_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sigma_omega", "cum_prob"])
        for value, prob in sage.spread_cdf(spreads):
            writer.writerow([repr(value), repr(prob)])
    (out_dir / "sage_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    logger.info("ran %d SAGE run(s); spreads %s", len(runs), [round(s, 4) for s in spreads])
    _write_manifest(out_dir, "sage", {"config": args.config}, {"runs": len(runs)}, args.seed)


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------


def cmd_consistency(args, out_dir: Path) -> None:
    track = []
    with open(args.vectors) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            tag = raw["tag"]
            if isinstance(tag, dict):
                tag = geo.GeoFix(
                    latitude=tag["lat_deg"],
                    longitude=tag["lon_deg"],
                    altitude_ellipsoidal=tag.get("alt_m", 0.0),
                    fix_time=int(tag.get("time_ns", 0)),
                )
            track.append(
                consistency.AmplitudeVector(tag=tag, magnitudes=np.asarray(raw["magnitudes"], dtype=float))
            )
    max_lag = args.max_lag
    if max_lag is None:
        tags = [v.tag for v in track]
        max_lag = max(
            consistency._lag_between(a, b) for i, a in enumerate(tags) for b in tags[i:]
        )
    edges = np.arange(0.0, max_lag + args.bin_width, args.bin_width)
    result = consistency.autocorr(track, edges)
    if result.skipped_pairs:
        logger.warning("%d degenerate pairs skipped", result.skipped_pairs)

    out = out_dir / "autocorr.csv"
    with open(out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["lag", "rho", "pair_count"])
        for point in result.points:
            writer.writerow([repr(point.lag), repr(point.rho), point.pair_count])
    fit = consistency.fit_exponential(result.points)
    (out_dir / "autocorr_fit.json").write_text(
        json.dumps(
            {
                "a": fit.amplitude,
                "L": fit.decay_length,
                "c": fit.floor,
                "rms_residual": fit.rms_residual,
                "length_identified": fit.length_identified,
                "skipped_pairs": result.skipped_pairs,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    logger.info(
        "autocorr: %d lag bins; fit a=%.3f L=%.3f c=%.3f", len(result.points), fit.amplitude,
        fit.decay_length, fit.floor,
    )
    _write_manifest(
        out_dir,
        "consistency",
        {"vectors": args.vectors},
        {"bin_width": args.bin_width, "max_lag": args.max_lag},
        args.seed,
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args, out_dir: Path) -> None:
    if args.scenario:
        config = tracksim.ScenarioConfig.from_json(Path(args.scenario).read_text())
        if args.seed is not None:
            from dataclasses import replace

            config = replace(config, seed=args.seed)
    else:
        config = synthetic.default_scenario(seed=args.seed or 0, num_fixes=args.num_fixes)
    log, metrics = tracksim.run_scenario(config)
    log.to_jsonl(out_dir / "events.jsonl")
    (out_dir / "metrics.json").write_text(metrics.to_json() + "\n")
    logger.info(
        "simulated %d events; mean error %.3f deg; mean response %.1f ms",
        len(log.events),
        metrics.mean_alignment_error_deg or float("nan"),
        1e3 * (metrics.mean_response_time_s or float("nan")),
    )
    _write_manifest(
        out_dir,
        "simulate",
        {"scenario": args.scenario},
        {"num_fixes": args.num_fixes if not args.scenario else None},
        args.seed,
    )


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2xsounder",
        description="Channel-sounding analysis toolkit and V2X tracking simulator",
    )
    parser.add_argument("--out-dir", default="out", help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=None, help="seed recorded in the manifest")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process", help="I/Q captures to per-location pathloss samples")
    p.add_argument("--iq", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--calibration")
    p.add_argument("--rx-track", required=True)
    p.add_argument("--align-tx")
    p.add_argument("--align-rx")
    p.add_argument("--pattern-az")
    p.add_argument("--pattern-el")
    p.add_argument("--tx-lat", type=float, required=True)
    p.add_argument("--tx-lon", type=float, required=True)
    p.add_argument("--tx-alt", type=float, required=True)
    p.add_argument("--tx-heading", type=float, default=0.0)
    p.add_argument("--gain-setting", type=float, default=76.0)
    p.add_argument("--max-skew-ms", type=float, default=50.0)
    p.add_argument("--los", choices=("los", "nlos", "unknown"), default="unknown")
    p.add_argument("--cutoff-hz", type=float, default=250e3)
    p.add_argument("--taps", type=int, default=129)
    p.add_argument("--noise-fraction", type=float, default=0.25)
    p.add_argument("--threshold-db", type=float, default=5.0)
    p.add_argument("--min-separation", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("models", help="reference pathloss curves over a distance grid")
    p.add_argument("--d-min", type=float, default=10.0)
    p.add_argument("--d-max", type=float, default=5000.0)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--h-bs", type=float, default=25.0)
    p.add_argument("--h-ut", type=float, default=2.0)
    p.add_argument("--fc-ghz", type=float, default=28.0)
    p.add_argument("--street-width", type=float, default=20.0)
    p.add_argument("--building-height", type=float, default=20.0)
    p.set_defaults(func=cmd_models)

    p = sub.add_parser("fitci", help="close-in model fit from pathloss samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--d0", type=float, default=1.0)
    p.add_argument("--fc-ghz", type=float, default=28.0)
    p.set_defaults(func=cmd_fitci)

    p = sub.add_parser("calibrate", help="fit per-gain calibration lines")
    p.add_argument("--points", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sage", help="synthesize observations and estimate multipath")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sage)

    p = sub.add_parser("consistency", help="amplitude-vector autocorrelation and decay fit")
    p.add_argument("--vectors", required=True)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--max-lag", type=float, default=None)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("simulate", help="run a tracking scenario")
    p.add_argument("--scenario", help="ScenarioConfig JSON (default: shipped synthetic drive)")
    p.add_argument("--num-fixes", type=int, default=1000)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    counter = _ErrorCounter()
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(
            stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    root.addHandler(counter)
    try:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            args.func(args, out_dir)
        except Exception as exc:
            logger.error("%s failed: %s", args.command, exc)
        return 0 if counter.count == 0 else 1
    finally:
        root.removeHandler(counter)


if __name__ == "__main__":
    sys.exit(main())
