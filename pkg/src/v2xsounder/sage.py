"""Specular multipath synthesis and SAGE-style iterative estimation.

Signal model shared by the generator and the estimator: with a single
mechanically steered horn, angular information enters only through the
pattern gain across the pointing schedule. Snapshot k, taken at time t_k
with the boresight at (az_k, el_k), observes on delay bin b

    s_k[b] = sum_i alpha_i g(phi_i - az_k, theta_i - el_k)
                     sinc((tau_b - tau_i) / dt) exp(j 2 pi nu_i t_k)
             + circular complex Gaussian noise,

where g is the amplitude-domain antenna gain and dt the delay grid
spacing. Each path is refined one at a time against the residual with
all other paths cancelled, cycling until the parameter deltas fall below
the configured thresholds. Every coordinate update evaluates its current
value alongside the grid and the parabolic vertex, so the matched-filter
objective never decreases.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .antenna import AntennaModel, cut_gain
from .sounder import SounderSpec, max_excess_delay, temporal_resolution


class ComponentOutOfGrid(ValueError):
    """Path delay outside the observable excess-delay grid."""


@dataclass(frozen=True)
class MultipathComponent:
    """One specular path: complex amplitude, delay, Doppler, arrival angles."""

    alpha: complex
    tau_s: float
    nu_hz: float
    phi_deg: float  # azimuth AoA, [-180, 180)
    theta_deg: float  # elevation AoA, [-90, 90]

    def __post_init__(self):
        if self.tau_s < 0:
            raise ValueError("tau_s must be >= 0")
        if abs(self.alpha) == 0:
            raise ValueError("alpha must be nonzero")


@dataclass(frozen=True)
class ObservationSet:
    """Beam-steered snapshots sharing one delay grid."""

    pointing_az_deg: np.ndarray  # (K,)
    pointing_el_deg: np.ndarray  # (K,)
    times_s: np.ndarray  # (K,) capture instants
    data: np.ndarray  # (K, B) complex baseband
    spec: SounderSpec
    antenna: AntennaModel
    noise_power: float

    @property
    def delay_bins(self) -> np.ndarray:
        return np.arange(self.data.shape[1]) * temporal_resolution(self.spec)

    @property
    def num_snapshots(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SageConfig:
    num_paths: int = 1
    max_iterations: int = 20
    # convergence thresholds, one per parameter
    delta_tau_s: float = 1e-10
    delta_nu_hz: float = 0.5
    delta_angle_deg: float = 0.1
    delta_alpha_rel: float = 1e-3
    # search grids
    tau_step_bins: int = 1
    phi_step_deg: float = 1.0
    theta_step_deg: float = 1.0
    nu_step_hz: float | None = None  # None: 1 / (2 * observation span)
    phi_range_deg: tuple[float, float] = (-30.0, 30.0)
    theta_range_deg: tuple[float, float] = (-20.0, 20.0)
    nu_range_hz: tuple[float, float] = (-100.0, 100.0)

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        for name in ("delta_tau_s", "delta_nu_hz", "delta_angle_deg", "delta_alpha_rel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class SageResult:
    components: list
    converged: bool  # False signals non-convergence; best-so-far returned
    iterations: int
    trace: list  # per-iteration {"iteration", "objective", "residual_energy"}


# ---------------------------------------------------------------------------
# Shared model pieces
# ---------------------------------------------------------------------------


def amplitude_gains(obs: ObservationSet, phi_deg, theta_deg) -> np.ndarray:
    """Amplitude-domain pattern gain per snapshot for arrival (phi, theta).

    Accepts scalars (returns (K,)) or arrays of m candidate angles
    (returns (m, K)).
    """
    phi = np.asarray(phi_deg, dtype=float)
    theta = np.asarray(theta_deg, dtype=float)
    az_off = phi[..., None] - obs.pointing_az_deg[None, :] if phi.ndim else phi - obs.pointing_az_deg
    el_off = (
        theta[..., None] - obs.pointing_el_deg[None, :]
        if theta.ndim
        else theta - obs.pointing_el_deg
    )
    gain_db = (
        obs.antenna.boresight_gain
        + cut_gain(obs.antenna.azimuth_cut, az_off)
        + cut_gain(obs.antenna.elevation_cut, el_off)
    )
    return np.power(10.0, gain_db / 20.0)


def delay_kernel(delay_bins: np.ndarray, tau_s: float, dt: float) -> np.ndarray:
    """Band-limited delay signature: unit sinc on the excess-delay grid."""
    return np.sinc((delay_bins - tau_s) / dt)


def model_snapshot_matrix(obs: ObservationSet, comp: MultipathComponent) -> np.ndarray:
    """The (K, B) contribution of one path with its current parameters."""
    g = amplitude_gains(obs, comp.phi_deg, comp.theta_deg)
    rotation = np.exp(2j * np.pi * comp.nu_hz * obs.times_s)
    kernel = delay_kernel(obs.delay_bins, comp.tau_s, temporal_resolution(obs.spec))
    return comp.alpha * (g * rotation)[:, None] * kernel[None, :]


def synthesize_observations(
    components,
    pointing_schedule,
    spec: SounderSpec,
    antenna: AntennaModel,
    noise_power: float = 0.0,
    seed: int = 0,
) -> ObservationSet:
    """Ground-truth generator for the estimator.

    pointing_schedule is a sequence of (az_deg, el_deg, time_s); the delay
    grid spans the spec's full excess-delay range.
    """
    schedule = np.asarray(pointing_schedule, dtype=float)
    if schedule.ndim != 2 or schedule.shape[1] != 3:
        raise ValueError("pointing_schedule must be (K, 3): az_deg, el_deg, time_s")
    num_bins = spec.pn_length
    obs = ObservationSet(
        pointing_az_deg=schedule[:, 0].copy(),
        pointing_el_deg=schedule[:, 1].copy(),
        times_s=schedule[:, 2].copy(),
        data=np.zeros((len(schedule), num_bins), dtype=complex),
        spec=spec,
        antenna=antenna,
        noise_power=float(noise_power),
    )
    data = obs.data  # fill the shared array in place
    limit = max_excess_delay(spec)
    for comp in components:
        if not 0.0 <= comp.tau_s <= limit:
            raise ComponentOutOfGrid(f"tau {comp.tau_s} outside [0, {limit}]")
        data += model_snapshot_matrix(obs, comp)
    if noise_power > 0.0:
        rng = np.random.default_rng(seed)
        scale = math.sqrt(noise_power / 2.0)
        data += rng.normal(0.0, scale, data.shape) + 1j * rng.normal(0.0, scale, data.shape)
    return obs


# ---------------------------------------------------------------------------
# SAGE steps
# ---------------------------------------------------------------------------


def _matched_energy(x: np.ndarray, w: np.ndarray, kernel: np.ndarray) -> float:
    """|<m, x>|^2 / ||m||^2 for m[k, b] = w_k kernel_b."""
    projected = x @ kernel  # (K,)
    numerator = np.vdot(w, projected)
    denominator = float(np.sum(np.abs(w) ** 2)) * float(kernel @ kernel)
    if denominator == 0.0:
        return 0.0
    return float(abs(numerator) ** 2 / denominator)


def _nu_grid(obs: ObservationSet, cfg: SageConfig) -> np.ndarray:
    span = float(obs.times_s.max() - obs.times_s.min()) if obs.num_snapshots > 1 else 0.0
    step = cfg.nu_step_hz if cfg.nu_step_hz is not None else (
        1.0 / (2.0 * span) if span > 0 else None
    )
    if step is None:
        return np.array([0.0])
    return _grid(cfg.nu_range_hz, step)


def initialize(obs: ObservationSet, num_paths: int, config: SageConfig | None = None) -> list:
    """Successive cancellation on the (tau, phi, theta) grid.

    The cell search uses envelope correlation power across snapshots,
    (sum_k g_k |x_k|)^2 / sum_k g_k^2: Doppler is unknown at this stage
    and a coherent sum with an assumed zero shift decoheres across the
    schedule, while the envelope form peaks exactly at the true gain
    profile (Cauchy-Schwarz). At the selected cell a coarse Doppler is
    picked on the standard grid, then alpha follows by closed-form
    projection and the path is subtracted before the next round.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    cfg = config or SageConfig(num_paths=num_paths)
    phi_grid = _grid(cfg.phi_range_deg, cfg.phi_step_deg)
    theta_grid = _grid(cfg.theta_range_deg, cfg.theta_step_deg)
    angles = np.array([(p, t) for p in phi_grid for t in theta_grid])
    gains = amplitude_gains(obs, angles[:, 0], angles[:, 1])  # (A, K)
    gain_norms = np.sum(gains**2, axis=1)  # (A,)
    nu_candidates = _nu_grid(obs, cfg)

    residual = obs.data.copy()
    components = []
    tau_bins = obs.delay_bins[:: max(1, cfg.tau_step_bins)]
    bin_index = np.arange(obs.data.shape[1])[:: max(1, cfg.tau_step_bins)]
    for _ in range(num_paths):
        envelope = np.abs(residual[:, bin_index])  # (K, n_tau)
        objective = (gains @ envelope) ** 2 / gain_norms[:, None]
        a, b = np.unravel_index(int(np.argmax(objective)), objective.shape)
        g = gains[a]
        y = residual[:, bin_index[b]]
        rotations = np.exp(-2j * np.pi * np.outer(nu_candidates, obs.times_s))
        coherent = np.abs(rotations @ (g * y)) ** 2
        nu = float(nu_candidates[int(np.argmax(coherent))])
        w = g * np.exp(2j * np.pi * nu * obs.times_s)
        alpha = complex(np.vdot(w, y) / gain_norms[a])
        comp = MultipathComponent(
            alpha=alpha if alpha != 0 else 1e-30 + 0j,
            tau_s=float(tau_bins[b]),
            nu_hz=nu,
            phi_deg=float(angles[a, 0]),
            theta_deg=float(angles[a, 1]),
        )
        residual -= model_snapshot_matrix(obs, comp)
        components.append(comp)
    return components


def e_step(obs: ObservationSet, estimates, i: int) -> np.ndarray:
    """Expected per-path observation: data minus all other paths' models."""
    x = obs.data.copy()
    for j, comp in enumerate(estimates):
        if j != i:
            x -= model_snapshot_matrix(obs, comp)
    return x


def _grid(bounds: tuple[float, float], step: float) -> np.ndarray:
    lo, hi = bounds
    return np.arange(lo, hi + step / 2.0, step)


def _parabolic_vertex(xs, ys) -> float | None:
    """Vertex of the parabola through three points; None when degenerate."""
    y0, y1, y2 = ys
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) < 1e-30:
        return None
    delta = 0.5 * (y0 - y2) / denom
    if not -1.0 <= delta <= 1.0:
        return None
    return xs[1] + delta * (xs[2] - xs[1])


def _refine_1d(evaluate, grid: np.ndarray, current: float, lo: float, hi: float) -> float:
    """Grid search plus parabolic refinement; never worse than `current`."""
    values = [float(evaluate(v)) for v in grid]
    best = int(np.argmax(values))
    candidates = [(values[best], float(grid[best])), (float(evaluate(current)), current)]
    if 0 < best < len(grid) - 1:
        vertex = _parabolic_vertex(grid[best - 1 : best + 2], values[best - 1 : best + 2])
        if vertex is not None:
            clipped = min(max(vertex, lo), hi)
            candidates.append((float(evaluate(clipped)), clipped))
    candidates.sort(key=lambda pair: pair[0])
    return float(candidates[-1][1])


def m_step(obs: ObservationSet, x_i: np.ndarray, comp: MultipathComponent, config: SageConfig) -> MultipathComponent:
    """Coordinate-wise maximization of the matched-filter energy.

    tau, nu, phi, theta in that order (1-D grid then parabolic
    refinement each), closed-form least-squares alpha last.
    """
    dt = temporal_resolution(obs.spec)
    bins = obs.delay_bins
    tau, nu, phi, theta = comp.tau_s, comp.nu_hz, comp.phi_deg, comp.theta_deg

    def weights(phi_v, theta_v, nu_v):
        g = amplitude_gains(obs, phi_v, theta_v)
        return g * np.exp(2j * np.pi * nu_v * obs.times_s)

    # tau
    w = weights(phi, theta, nu)
    tau_grid = bins[:: max(1, config.tau_step_bins)]
    tau = _refine_1d(
        lambda t: _matched_energy(x_i, w, delay_kernel(bins, t, dt)),
        tau_grid,
        tau,
        float(bins[0]),
        float(bins[-1]),
    )

    # nu
    kernel = delay_kernel(bins, tau, dt)
    span = float(obs.times_s.max() - obs.times_s.min()) if obs.num_snapshots > 1 else 0.0
    nu_step = config.nu_step_hz if config.nu_step_hz is not None else (
        1.0 / (2.0 * span) if span > 0 else None
    )
    if nu_step is not None:
        g = amplitude_gains(obs, phi, theta)
        nu_grid = _grid(config.nu_range_hz, nu_step)
        nu = _refine_1d(
            lambda v: _matched_energy(x_i, g * np.exp(2j * np.pi * v * obs.times_s), kernel),
            nu_grid,
            nu,
            config.nu_range_hz[0],
            config.nu_range_hz[1],
        )

    # phi
    rotation = np.exp(2j * np.pi * nu * obs.times_s)
    phi = _refine_1d(
        lambda p: _matched_energy(x_i, amplitude_gains(obs, p, theta) * rotation, kernel),
        _grid(config.phi_range_deg, config.phi_step_deg),
        phi,
        config.phi_range_deg[0],
        config.phi_range_deg[1],
    )

    # theta
    theta = _refine_1d(
        lambda t: _matched_energy(x_i, amplitude_gains(obs, phi, t) * rotation, kernel),
        _grid(config.theta_range_deg, config.theta_step_deg),
        theta,
        config.theta_range_deg[0],
        config.theta_range_deg[1],
    )

    # alpha, closed form
    w = weights(phi, theta, nu)
    projected = x_i @ kernel
    denom = float(np.sum(np.abs(w) ** 2)) * float(kernel @ kernel)
    alpha = complex(np.vdot(w, projected) / denom) if denom > 0 else comp.alpha
    if alpha == 0:
        alpha = 1e-30 + 0j
    return MultipathComponent(alpha=alpha, tau_s=tau, nu_hz=nu, phi_deg=phi, theta_deg=theta)


def _deltas_below_thresholds(old: MultipathComponent, new: MultipathComponent, cfg: SageConfig) -> bool:
    def wrapped(a):
        return (a + 180.0) % 360.0 - 180.0

    alpha_scale = max(abs(old.alpha), 1e-30)
    return (
        abs(new.tau_s - old.tau_s) < cfg.delta_tau_s
        and abs(new.nu_hz - old.nu_hz) < cfg.delta_nu_hz
        and abs(wrapped(new.phi_deg - old.phi_deg)) < cfg.delta_angle_deg
        and abs(wrapped(new.theta_deg - old.theta_deg)) < cfg.delta_angle_deg
        and abs(abs(new.alpha) - abs(old.alpha)) / alpha_scale < cfg.delta_alpha_rel
    )


def run_sage(obs: ObservationSet, config: SageConfig) -> SageResult:
    """Cycle E/M over paths until every parameter delta is below threshold.

    On hitting max_iterations first, the best-so-far estimates are
    returned with converged=False (the non-convergence flag).
    """
    components = initialize(obs, config.num_paths, config)
    total_energy = float(np.sum(np.abs(obs.data) ** 2))
    trace: list[dict] = []
    converged = False
    iterations = 0
    for iteration in range(1, config.max_iterations + 1):
        iterations = iteration
        previous = list(components)
        for i in range(len(components)):
            x_i = e_step(obs, components, i)
            components[i] = m_step(obs, x_i, components[i], config)
        residual = obs.data - sum(model_snapshot_matrix(obs, c) for c in components)
        residual_energy = float(np.sum(np.abs(residual) ** 2))
        trace.append(
            {
                "iteration": iteration,
                "objective": total_energy - residual_energy,
                "residual_energy": residual_energy,
            }
        )
        if all(
            _deltas_below_thresholds(old, new, config)
            for old, new in zip(previous, components)
        ):
            converged = True
            break
    return SageResult(components=components, converged=converged, iterations=iterations, trace=trace)


# ---------------------------------------------------------------------------
# Direction-spread statistics
# ---------------------------------------------------------------------------


def direction_spread(components) -> float:
    """Power-weighted RMS dispersion of unit arrival vectors, in [0, 1].

    sqrt(sum P_i ||e_i - mu||^2 / sum P_i) with mu the power-weighted
    mean arrival vector; algebraically sqrt(1 - ||mu||^2) for unit e_i.
    """
    components = list(components)
    if not components:
        raise ValueError("need at least one component")
    powers = np.array([abs(c.alpha) ** 2 for c in components])
    weights = powers / powers.sum()
    phi = np.radians([c.phi_deg for c in components])
    theta = np.radians([c.theta_deg for c in components])
    vectors = np.stack(
        [np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=1
    )
    mu = (weights[:, None] * vectors).sum(axis=0)
    # definitional form (not sqrt(1 - |mu|^2)): exact zero for one path
    dispersion = float(np.sum(weights * np.sum((vectors - mu) ** 2, axis=1)))
    return math.sqrt(min(1.0, max(0.0, dispersion)))


def spread_cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative probability) steps.

    Duplicate values collapse into a single step carrying their whole mass.
    """
    ordered = sorted(values)
    if not ordered:
        raise ValueError("need at least one value")
    n = len(ordered)
    steps: list[tuple[float, float]] = []
    for rank, value in enumerate(ordered, start=1):
        if steps and steps[-1][0] == value:
            steps[-1] = (value, rank / n)
        else:
            steps.append((value, rank / n))
    return steps


# ---------------------------------------------------------------------------
# Interchange
# ---------------------------------------------------------------------------

COMPONENT_FIELDS = ("path_id", "alpha_mag", "alpha_phase_rad", "tau_s", "nu_hz", "phi_deg", "theta_deg")


def write_components_csv(path, components) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(COMPONENT_FIELDS)
        for idx, comp in enumerate(components):
            writer.writerow(
                [
                    idx,
                    repr(abs(comp.alpha)),
                    repr(math.atan2(comp.alpha.imag, comp.alpha.real)),
                    repr(comp.tau_s),
                    repr(comp.nu_hz),
                    repr(comp.phi_deg),
                    repr(comp.theta_deg),
                ]
            )


def read_components_csv(path) -> list[MultipathComponent]:
    out = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            mag = float(row["alpha_mag"])
            phase = float(row["alpha_phase_rad"])
            out.append(
                MultipathComponent(
                    alpha=mag * complex(math.cos(phase), math.sin(phase)),
                    tau_s=float(row["tau_s"]),
                    nu_hz=float(row["nu_hz"]),
                    phi_deg=float(row["phi_deg"]),
                    theta_deg=float(row["theta_deg"]),
                )
            )
    return out
