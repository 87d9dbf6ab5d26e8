import cmath
import math

import numpy as np
import pytest

from v2xsounder import sage
from v2xsounder.antenna import make_gaussian_model
from v2xsounder.sage import MultipathComponent, SageConfig
from v2xsounder.sounder import SounderSpec, temporal_resolution

SPEC = SounderSpec(pn_length=64)
ANTENNA = make_gaussian_model()
DT = temporal_resolution(SPEC)
BORESIGHT_AMP = 10.0 ** (22.0 / 20.0)


def cross_schedule(span=12.0, step=2.0, dwell_s=0.005):
    """Azimuth sweep at el 0 followed by elevation sweep at az 0."""
    rows = []
    t = 0.0
    for a in np.arange(-span, span + step / 2, step):
        rows.append((a, 0.0, t))
        t += dwell_s
    for e in np.arange(-span, span + step / 2, step):
        rows.append((0.0, e, t))
        t += dwell_s
    return np.array(rows)


def path(alpha=1.0, tau_bins=10, nu=0.0, phi=4.0, theta=-2.0):
    return MultipathComponent(alpha=alpha, tau_s=tau_bins * DT, nu_hz=nu, phi_deg=phi, theta_deg=theta)


def config(**kw):
    defaults = dict(
        num_paths=1,
        max_iterations=20,
        phi_range_deg=(-25.0, 25.0),
        theta_range_deg=(-15.0, 15.0),
        nu_range_hz=(-120.0, 120.0),
    )
    defaults.update(kw)
    return SageConfig(**defaults)


class TestSynthesize:
    def test_single_path_boresight_kernel_peak(self):
        comp = path(alpha=0.8, tau_bins=10)
        schedule = [(comp.phi_deg, comp.theta_deg, 0.0)]
        obs = sage.synthesize_observations([comp], schedule, SPEC, ANTENNA, 0.0, seed=1)
        magnitudes = np.abs(obs.data[0])
        assert int(np.argmax(magnitudes)) == 10
        assert magnitudes[10] == pytest.approx(0.8 * BORESIGHT_AMP, rel=1e-12)
        off_peak = np.delete(magnitudes, 10)
        assert np.all(off_peak < 1e-9)

    def test_two_separated_paths_two_peaks(self):
        comps = [path(tau_bins=10, phi=0.0, theta=0.0), path(tau_bins=20, phi=0.0, theta=0.0)]
        obs = sage.synthesize_observations(comps, [(0.0, 0.0, 0.0)], SPEC, ANTENNA)
        magnitudes = np.abs(obs.data[0])
        peaks = sorted(np.argsort(magnitudes)[-2:])
        assert peaks == [10, 20]

    def test_seed_reproducibility(self):
        comps = [path()]
        schedule = cross_schedule()
        a = sage.synthesize_observations(comps, schedule, SPEC, ANTENNA, 0.5, seed=9)
        b = sage.synthesize_observations(comps, schedule, SPEC, ANTENNA, 0.5, seed=9)
        assert np.array_equal(a.data, b.data)

    def test_component_out_of_grid(self):
        bad = MultipathComponent(alpha=1.0, tau_s=1.0, nu_hz=0.0, phi_deg=0.0, theta_deg=0.0)
        with pytest.raises(sage.ComponentOutOfGrid):
            sage.synthesize_observations([bad], [(0.0, 0.0, 0.0)], SPEC, ANTENNA)


def brute_force_best_cell(obs, phi_grid, theta_grid):
    """Independent noncoherent correlation search: plain loops only."""
    best = (None, -1.0)
    for phi in phi_grid:
        for theta in theta_grid:
            gains = []
            for az, el in zip(obs.pointing_az_deg, obs.pointing_el_deg):
                g_db = (
                    obs.antenna.boresight_gain
                    + np.interp(
                        (phi - az + 180) % 360 - 180,
                        obs.antenna.azimuth_cut.angle_samples,
                        obs.antenna.azimuth_cut.normalized_gain,
                    )
                    + np.interp(
                        (theta - el + 180) % 360 - 180,
                        obs.antenna.elevation_cut.angle_samples,
                        obs.antenna.elevation_cut.normalized_gain,
                    )
                )
                gains.append(10 ** (g_db / 20))
            gains = np.array(gains)
            for b in range(obs.data.shape[1]):
                corr = np.sum(gains * np.abs(obs.data[:, b])) ** 2 / np.sum(gains**2)
                if corr > best[1]:
                    best = ((phi, theta, b), corr)
    return best[0]


class TestInitialize:
    def test_single_path_exact_cell(self):
        comp = path(alpha=1.0, tau_bins=10, phi=4.0, theta=-2.0)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        [est] = sage.initialize(obs, 1, config())
        assert est.tau_s == pytest.approx(comp.tau_s)
        assert est.phi_deg == pytest.approx(4.0)
        assert est.theta_deg == pytest.approx(-2.0)

    def test_matches_brute_force_oracle(self):
        comp = path(alpha=1.0, tau_bins=13, phi=6.0, theta=0.0)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA, 0.05, seed=3)
        cfg = config(phi_range_deg=(-10.0, 10.0), theta_range_deg=(-6.0, 6.0))
        [est] = sage.initialize(obs, 1, cfg)
        oracle = brute_force_best_cell(
            obs, np.arange(-10.0, 10.5, 1.0), np.arange(-6.0, 6.5, 1.0)
        )
        assert est.phi_deg == pytest.approx(oracle[0])
        assert est.theta_deg == pytest.approx(oracle[1])
        assert est.tau_s == pytest.approx(oracle[2] * DT)

    def test_two_equal_paths_found(self):
        comps = [
            path(alpha=1.0, tau_bins=10, phi=-10.0, theta=0.0),
            path(alpha=1.0, tau_bins=20, phi=10.0, theta=0.0),
        ]
        obs = sage.synthesize_observations(comps, cross_schedule(span=16), SPEC, ANTENNA)
        estimates = sage.initialize(obs, 2, config(num_paths=2))
        found_bins = sorted(round(e.tau_s / DT) for e in estimates)
        assert found_bins == [10, 20]

    def test_pure_noise_returns_a_cell(self):
        obs = sage.synthesize_observations([], cross_schedule(), SPEC, ANTENNA, 1.0, seed=5)
        [est] = sage.initialize(obs, 1, config())
        assert 0.0 <= est.tau_s <= SPEC.pn_length * DT


class TestESteps:
    def test_single_path_estimate_passes_raw(self):
        comp = path()
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA, 0.1, seed=2)
        x = sage.e_step(obs, [comp], 0)
        assert np.array_equal(x, obs.data)

    def test_exact_two_path_cancellation(self):
        comps = [
            path(alpha=1.0, tau_bins=10, phi=-8.0, theta=0.0),
            path(alpha=0.5, tau_bins=20, phi=8.0, theta=0.0),
        ]
        obs = sage.synthesize_observations(comps, cross_schedule(), SPEC, ANTENNA)
        x0 = sage.e_step(obs, comps, 0)
        only_first = sage.synthesize_observations([comps[0]], cross_schedule(), SPEC, ANTENNA)
        leak = np.sum(np.abs(x0 - only_first.data) ** 2) / np.sum(np.abs(obs.data) ** 2)
        assert leak < 1e-9

    def test_negligible_estimate_does_not_perturb(self):
        comp = path()
        ghost = MultipathComponent(alpha=1e-30, tau_s=0.0, nu_hz=0.0, phi_deg=0.0, theta_deg=0.0)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        x = sage.e_step(obs, [comp, ghost], 0)
        assert np.allclose(x, obs.data, atol=1e-20)


class TestMStep:
    def test_recovers_perturbed_delay(self):
        comp = path(alpha=1.0, tau_bins=10)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        perturbed = sage.MultipathComponent(
            alpha=comp.alpha, tau_s=11 * DT, nu_hz=0.0, phi_deg=comp.phi_deg, theta_deg=comp.theta_deg
        )
        updated = sage.m_step(obs, obs.data, perturbed, config())
        assert updated.tau_s == pytest.approx(10 * DT, abs=0.05 * DT)

    def test_alpha_closed_form_accuracy(self):
        comp = path(alpha=0.7 * cmath.exp(0.3j), tau_bins=12)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        kernel = sage.delay_kernel(obs.delay_bins, comp.tau_s, DT)
        w = sage.amplitude_gains(obs, comp.phi_deg, comp.theta_deg) * np.exp(
            2j * np.pi * comp.nu_hz * obs.times_s
        )
        projected = obs.data @ kernel
        alpha_hat = complex(np.vdot(w, projected) / (np.sum(np.abs(w) ** 2) * (kernel @ kernel)))
        assert abs(alpha_hat - comp.alpha) / abs(comp.alpha) < 1e-9

    def test_doppler_recovery_within_refinement_tolerance(self):
        # 2 ms dwell keeps the 100 Hz shift well inside the +/-250 Hz
        # unambiguous Doppler range of the snapshot cadence
        comp = path(alpha=1.0, tau_bins=10, nu=100.0, phi=0.0, theta=0.0)
        obs = sage.synthesize_observations([comp], cross_schedule(dwell_s=0.002), SPEC, ANTENNA)
        start = sage.MultipathComponent(
            alpha=comp.alpha, tau_s=comp.tau_s, nu_hz=0.0, phi_deg=0.0, theta_deg=0.0
        )
        cfg = config(nu_range_hz=(-150.0, 150.0))
        updated = sage.m_step(obs, obs.data, start, cfg)
        span = float(obs.times_s.max() - obs.times_s.min())
        nu_step = 1.0 / (2.0 * span)
        assert abs(updated.nu_hz - 100.0) <= nu_step


class TestRunSage:
    def test_noiseless_single_path_exact(self):
        comp = path(alpha=0.9 * cmath.exp(0.5j), tau_bins=10, nu=40.0)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        result = sage.run_sage(obs, config())
        [est] = result.components
        assert abs(est.tau_s - comp.tau_s) < 0.1 * DT
        assert abs(est.phi_deg - comp.phi_deg) < 0.1
        assert abs(est.theta_deg - comp.theta_deg) < 0.1
        assert abs(est.nu_hz - comp.nu_hz) < 1.0
        assert abs(abs(est.alpha) - abs(comp.alpha)) / abs(comp.alpha) < 1e-3

    def test_noiseless_two_paths_grid_precision(self):
        comps = [
            path(alpha=1.0, tau_bins=10, phi=-10.0, theta=0.0),
            path(alpha=1.0, tau_bins=13, phi=20.0, theta=0.0),
        ]
        obs = sage.synthesize_observations(comps, cross_schedule(span=24, step=2), SPEC, ANTENNA)
        result = sage.run_sage(obs, config(num_paths=2))
        by_tau = sorted(result.components, key=lambda c: c.tau_s)
        for est, true in zip(by_tau, comps):
            assert abs(est.tau_s - true.tau_s) <= DT
            assert abs(est.phi_deg - true.phi_deg) <= 1.0
            assert abs(est.theta_deg - true.theta_deg) <= 1.0

    def test_zero_iterations_returns_initialization(self):
        comp = path()
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        cfg = config(max_iterations=0)
        result = sage.run_sage(obs, cfg)
        assert not result.converged
        assert result.iterations == 0
        assert result.components == sage.initialize(obs, 1, cfg)

    def test_objective_monotone_under_noise(self):
        comp = path(alpha=1.0, tau_bins=10)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA, 0.5, seed=21)
        result = sage.run_sage(obs, config())
        objectives = [entry["objective"] for entry in result.trace]
        for a, b in zip(objectives, objectives[1:]):
            assert b >= a - 1e-9 * max(abs(a), 1.0)

    def test_global_phase_rotation_invariance(self):
        comp = path(alpha=0.8, tau_bins=10, nu=20.0)
        obs = sage.synthesize_observations([comp], cross_schedule(), SPEC, ANTENNA)
        rotated = sage.ObservationSet(
            pointing_az_deg=obs.pointing_az_deg,
            pointing_el_deg=obs.pointing_el_deg,
            times_s=obs.times_s,
            data=obs.data * cmath.exp(0.9j),
            spec=obs.spec,
            antenna=obs.antenna,
            noise_power=obs.noise_power,
        )
        base = sage.run_sage(obs, config()).components[0]
        rot = sage.run_sage(rotated, config()).components[0]
        assert rot.tau_s == pytest.approx(base.tau_s, abs=1e-12)
        assert rot.phi_deg == pytest.approx(base.phi_deg, abs=1e-9)
        assert abs(rot.alpha) == pytest.approx(abs(base.alpha), rel=1e-9)
        phase_shift = cmath.phase(rot.alpha / base.alpha)
        assert phase_shift == pytest.approx(0.9, abs=1e-6)

    def test_monte_carlo_snr20_smoke(self):
        # small-N rehearsal of the acceptance Monte-Carlo criterion
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            comp = path(alpha=1.0, tau_bins=10, nu=40.0, phi=2.0, theta=-1.0)
            noise_power = (abs(comp.alpha) * BORESIGHT_AMP) ** 2 / 100.0
            obs = sage.synthesize_observations(
                [comp], cross_schedule(), SPEC, ANTENNA, noise_power, seed=seed
            )
            est = sage.run_sage(obs, config()).components[0]
            ok = (
                abs(est.tau_s - comp.tau_s) <= DT
                and abs(est.phi_deg - comp.phi_deg) <= 1.0
                and abs(est.theta_deg - comp.theta_deg) <= 1.0
                and abs(abs(est.alpha) - 1.0) <= 0.05
            )
            hits += ok
        assert hits >= 9


class TestDirectionSpread:
    def c(self, alpha, phi, theta=0.0):
        return MultipathComponent(alpha=alpha, tau_s=0.0, nu_hz=0.0, phi_deg=phi, theta_deg=theta)

    def test_single_path_zero(self):
        assert sage.direction_spread([self.c(1.0, 37.0, 12.0)]) == 0.0

    def test_antipodal_paths_unity(self):
        spread = sage.direction_spread([self.c(1.0, 0.0), self.c(1.0, 180.0)])
        assert spread == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_paths(self):
        spread = sage.direction_spread([self.c(1.0, 0.0), self.c(1.0, 90.0)])
        assert spread == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def test_bounded_and_scale_invariant(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            n = int(rng.integers(1, 8))
            comps = [
                self.c(
                    float(rng.uniform(0.05, 3.0)),
                    float(rng.uniform(-180, 179.9)),
                    float(rng.uniform(-90, 90)),
                )
                for _ in range(n)
            ]
            spread = sage.direction_spread(comps)
            assert 0.0 <= spread <= 1.0
            scaled = [
                MultipathComponent(c.alpha * 7.3, c.tau_s, c.nu_hz, c.phi_deg, c.theta_deg)
                for c in comps
            ]
            assert sage.direction_spread(scaled) == pytest.approx(spread, abs=1e-12)


class TestSpreadCdf:
    def test_single_value(self):
        assert sage.spread_cdf([0.4]) == [(0.4, 1.0)]

    def test_two_distinct(self):
        assert sage.spread_cdf([0.7, 0.2]) == [(0.2, 0.5), (0.7, 1.0)]

    def test_duplicates_collapse(self):
        assert sage.spread_cdf([0.5, 0.5, 0.9, 0.1]) == [(0.1, 0.25), (0.5, 0.75), (0.9, 1.0)]


class TestComponentCsv:
    def test_roundtrip(self, tmp_path):
        comps = [
            path(alpha=0.8 * cmath.exp(1.1j), tau_bins=3, nu=12.5, phi=-7.0, theta=2.0),
            path(alpha=0.2, tau_bins=9, nu=-4.0, phi=14.0, theta=-3.0),
        ]
        out = tmp_path / "components.csv"
        sage.write_components_csv(out, comps)
        loaded = sage.read_components_csv(out)
        for a, b in zip(comps, loaded):
            assert abs(a.alpha - b.alpha) < 1e-12
            assert a.tau_s == b.tau_s
            assert a.nu_hz == b.nu_hz
