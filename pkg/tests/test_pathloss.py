import math
import warnings

import numpy as np
import pytest

from v2xsounder import antenna, pathloss
from v2xsounder.pathloss import CiFit, LinkGeometry, PathlossSample
from v2xsounder.sounder import SounderSpec


def geometry(d2d=100.0, d3d=100.0, **kw):
    return LinkGeometry(d2d=d2d, d3d=d3d, **kw)


class TestMeasuredPathloss:
    def test_boresight_link_budget(self):
        # ptx 23 + 22 + 22 - (-100) = 167
        model = antenna.make_gaussian_model()
        pl = pathloss.measured_pathloss(SounderSpec(), model, model, prx_dbm=-100.0)
        assert pl == pytest.approx(167.0)

    def test_zero_pathloss_point(self):
        model = antenna.make_gaussian_model()
        pl = pathloss.measured_pathloss(SounderSpec(), model, model, prx_dbm=23.0 + 44.0)
        assert pl == pytest.approx(0.0)

    def test_exceeds_measurable_flag(self):
        model = antenna.make_gaussian_model()
        with pytest.warns(pathloss.ExceedsMeasurable):
            pl = pathloss.measured_pathloss(SounderSpec(), model, model, prx_dbm=-123.0)
        assert pl == pytest.approx(190.0)

    def test_misalignment_reduces_gain(self):
        model = antenna.make_gaussian_model()
        aligned = pathloss.measured_pathloss(SounderSpec(), model, model, -100.0)
        off = pathloss.measured_pathloss(
            SounderSpec(), model, model, -100.0, tx_offsets_deg=(10.1 / 2, 0.0)
        )
        assert off == pytest.approx(aligned - 3.0, abs=0.1)


class TestFspl:
    def test_one_meter_anchor(self):
        # frozen closed-form oracle with c = 299792458
        assert pathloss.fspl(1.0, 28.0) == pytest.approx(61.39094384872776, abs=0.01)

    def test_decade_law(self):
        base = pathloss.fspl(1.0, 28.0)
        assert pathloss.fspl(10.0, 28.0) == pytest.approx(base + 20.0, abs=1e-9)
        assert pathloss.fspl(100.0, 28.0) == pytest.approx(base + 40.0, abs=1e-9)


class TestTr38901:
    def test_los_anchor_100m(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pl = pathloss.tr38901_uma_los(geometry())
        assert pl == pytest.approx(100.94, abs=0.01)

    def test_breakpoint_distance(self):
        g = geometry(h_bs=25.0, h_ut=2.0, fc_ghz=28.0)
        d_bp = pathloss.breakpoint_distance(g)
        assert d_bp == pytest.approx(4 * 24 * 1 * 28e9 / 299792458, abs=1e-9)
        assert d_bp > 5000.0  # whole evaluated range is pre-breakpoint

    def test_nlos_anchor_100m(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pl = pathloss.tr38901_uma_nlos(geometry())
        assert pl == pytest.approx(120.34, abs=0.01)

    def test_nlos_lower_bounded_by_los(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for d in np.geomspace(10, 5000, 60):
                g = pathloss.geometry_for_d2d(float(d))
                assert pathloss.tr38901_uma_nlos(g) >= pathloss.tr38901_uma_los(g)

    def test_los_continuous_at_breakpoint(self):
        # lower frequency pulls the breakpoint inside the evaluated range
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g0 = pathloss.geometry_for_d2d(100.0, fc_ghz=2.0)
            d_bp = pathloss.breakpoint_distance(g0)
            below = pathloss.geometry_for_d2d(d_bp * (1 - 1e-12), fc_ghz=2.0)
            above = pathloss.geometry_for_d2d(d_bp * (1 + 1e-12), fc_ghz=2.0)
            assert pathloss.tr38901_uma_los(below) == pytest.approx(
                pathloss.tr38901_uma_los(above), abs=1e-6
            )


class TestItuM2135:
    def test_los_prebreakpoint_anchor(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pl = pathloss.itu_m2135_uma_los(geometry(h_ut=1.5))
        assert pl == pytest.approx(100.94, abs=0.01)

    def test_los_continuous_at_breakpoint(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g0 = pathloss.geometry_for_d2d(100.0, h_ut=1.5, fc_ghz=28.0)
            d_bp = pathloss.breakpoint_distance(g0)
            below = pathloss.geometry_for_d2d(d_bp * (1 - 1e-12), h_ut=1.5)
            above = pathloss.geometry_for_d2d(d_bp * (1 + 1e-12), h_ut=1.5)
            assert pathloss.itu_m2135_uma_los(below) == pytest.approx(
                pathloss.itu_m2135_uma_los(above), abs=1e-6
            )

    def test_nlos_hand_evaluated_anchor(self):
        # frozen independent hand evaluation at W=20, h=20, h_bs=25, h_ut=1.5,
        # d=100 m, fc=28 GHz
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pl = pathloss.itu_m2135_uma_nlos(geometry(h_ut=1.5))
        assert pl == pytest.approx(120.66062962814561, abs=0.01)

    def test_28ghz_out_of_range_warning_surfaced(self):
        with pytest.warns(pathloss.OutOfValidityRange):
            pathloss.itu_m2135_uma_los(geometry(h_ut=1.5, fc_ghz=28.0))


class TestModelProperties:
    def test_monotone_in_distance(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            distances = np.arange(10.0, 5001.0, 1.0)
            for name, model in pathloss.REFERENCE_MODELS.items():
                previous = -np.inf
                for d in distances:
                    value = model(pathloss.geometry_for_d2d(float(d)))
                    assert value >= previous - 1e-12, f"{name} not monotone at {d}"
                    previous = value


class TestFitCi:
    @staticmethod
    def synth_samples(n_exp, d0, fc, distances, sigma=0.0, rng=None):
        anchor = pathloss.fspl(d0, fc)
        samples = []
        for d in distances:
            pl = anchor + 10.0 * n_exp * math.log10(d / d0)
            if sigma > 0:
                pl += float(rng.normal(0.0, sigma))
            samples.append(PathlossSample(d2d=d, d3d=d, pathloss_db=pl))
        return samples

    def test_exact_recovery(self):
        distances = np.geomspace(10, 1000, 40)
        fit = pathloss.fit_ci(self.synth_samples(2.0, 1.0, 28.0, distances), 1.0, 28.0)
        assert fit.pathloss_exponent == pytest.approx(2.0, abs=1e-9)
        assert fit.shadow_sigma_db == pytest.approx(0.0, abs=1e-9)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(77)
        distances = np.geomspace(10, 2000, 1000)
        fit = pathloss.fit_ci(
            self.synth_samples(3.1, 1.0, 28.0, distances, sigma=4.0, rng=rng), 1.0, 28.0
        )
        assert fit.pathloss_exponent == pytest.approx(3.1, abs=0.05)
        assert fit.shadow_sigma_db == pytest.approx(4.0, abs=0.3)

    def test_two_point_algebra(self):
        samples = self.synth_samples(2.7, 1.0, 28.0, [50.0, 500.0])
        fit = pathloss.fit_ci(samples, 1.0, 28.0)
        assert fit.pathloss_exponent == pytest.approx(2.7, abs=1e-9)

    def test_zero_mean_residuals_noiseless(self):
        distances = np.geomspace(20, 800, 64)
        samples = self.synth_samples(2.4, 1.0, 28.0, distances)
        fit = pathloss.fit_ci(samples, 1.0, 28.0)
        anchor = pathloss.fspl(1.0, 28.0)
        residuals = [
            s.pathloss_db - anchor - 10 * fit.pathloss_exponent * math.log10(s.d3d)
            for s in samples
        ]
        assert abs(float(np.mean(residuals))) < 0.01

    def test_insufficient_samples(self):
        with pytest.raises(pathloss.InsufficientSamples):
            pathloss.fit_ci([PathlossSample(10, 10, 100.0)], 1.0, 28.0)
        with pytest.raises(pathloss.InsufficientSamples):
            pathloss.fit_ci(
                [PathlossSample(0.5, 0.5, 60.0), PathlossSample(10, 10, 100.0)], 1.0, 28.0
            )
