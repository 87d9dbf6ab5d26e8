import math

import numpy as np
import pytest

from v2xsounder import antenna


def write_cut(path, rows, header="angle_deg,gain_db"):
    path.write_text(header + "\n" + "\n".join(f"{a},{g}" for a, g in rows) + "\n")


class TestLoadPattern:
    def test_two_point_cut_plus_mirror(self, tmp_path):
        az = tmp_path / "az.csv"
        el = tmp_path / "el.csv"
        write_cut(az, [(-90, -20), (0, -0.0), (90, -20)])
        write_cut(el, [(-90, -20), (0, -0.0), (90, -20)])
        model = antenna.load_pattern(az, el)
        assert model.azimuth_cut.normalized_gain.max() == 0.0
        assert antenna.cut_gain(model.azimuth_cut, 0.0) == 0.0

    def test_renormalizes_offset_peak(self, tmp_path):
        az = tmp_path / "az.csv"
        el = tmp_path / "el.csv"
        write_cut(az, [(-90, -23), (0, -3.0), (90, -23)])
        write_cut(el, [(-90, -20), (0, 0.0), (90, -20)])
        model = antenna.load_pattern(az, el)
        assert model.azimuth_cut.normalized_gain.max() == 0.0
        assert antenna.cut_gain(model.azimuth_cut, -90.0) == pytest.approx(-20.0)

    def test_out_of_order_angles(self, tmp_path):
        az = tmp_path / "az.csv"
        write_cut(az, [(0, 0.0), (-90, -20), (90, -20)])
        with pytest.raises(antenna.NonMonotonicAngles):
            antenna._read_cut_csv(az)

    def test_empty_cut(self, tmp_path):
        az = tmp_path / "az.csv"
        az.write_text("angle_deg,gain_db\n")
        with pytest.raises(antenna.EmptyCut):
            antenna._read_cut_csv(az)

    def test_combined_file_with_cut_column(self, tmp_path):
        combined = tmp_path / "pattern.csv"
        rows = ["angle_deg,gain_db,cut"]
        for a in (-90, 0, 90):
            rows.append(f"{a},{-20 if a else 0.0},azimuth")
            rows.append(f"{a},{-15 if a else 0.0},elevation")
        combined.write_text("\n".join(rows) + "\n")
        model = antenna.load_pattern(combined)
        assert antenna.cut_gain(model.elevation_cut, 90.0) == pytest.approx(-15.0)


class TestGainAt:
    def test_boresight_is_published_gain(self):
        model = antenna.make_gaussian_model()
        assert antenna.gain_at(model, 0.0, 0.0) == pytest.approx(22.0)

    def test_half_power_at_half_hpbw(self):
        model = antenna.make_gaussian_model()
        for offset in (10.1 / 2, -10.1 / 2):
            assert antenna.gain_at(model, offset, 0.0) == pytest.approx(22.0 - 3.0, abs=0.1)
        for offset in (11.5 / 2, -11.5 / 2):
            assert antenna.gain_at(model, 0.0, offset) == pytest.approx(22.0 - 3.0, abs=0.1)

    def test_linear_interpolation_midpoint(self):
        # oracle: midpoint of (-90, -20) and (0, 0) is -10 dB
        az = antenna.PatternCut.from_samples([-90, 0, 90], [-20.0, 0.0, -20.0])
        assert antenna.cut_gain(az, -45.0) == pytest.approx(-10.0)

    def test_never_exceeds_boresight(self):
        model = antenna.make_gaussian_model()
        rng = np.random.default_rng(2)
        offsets = rng.uniform(-360, 360, size=(500, 2))
        gains = antenna.gain_at(model, offsets[:, 0], offsets[:, 1])
        assert np.all(gains <= model.boresight_gain + 1e-12)

    def test_continuity(self):
        model = antenna.make_gaussian_model()
        eps = 1e-6
        for x in np.linspace(-179.5, 179.5, 101):
            a = antenna.gain_at(model, x, 0.0)
            b = antenna.gain_at(model, x + eps, 0.0)
            assert abs(a - b) < 1e-3


class TestHpbw:
    def test_gaussian_cut_analytic_width(self):
        # analytic -3 dB width of the synthetic trace is the configured hpbw
        model = antenna.make_gaussian_model(hpbw_az_deg=10.1, hpbw_el_deg=11.5)
        assert antenna.hpbw(model.azimuth_cut) == pytest.approx(10.1, abs=0.05)
        assert antenna.hpbw(model.elevation_cut) == pytest.approx(11.5, abs=0.05)

    def test_triangular_cut(self):
        # 1 dB per degree slope crosses -3 dB at +/- 3 deg: width 6
        angles = np.arange(-30.0, 31.0)
        cut = antenna.PatternCut.from_samples(angles, -np.abs(angles))
        assert antenna.hpbw(cut) == pytest.approx(6.0)

    def test_flat_cut_has_no_crossing(self):
        cut = antenna.PatternCut.from_samples([-180, 0, 179], [0.0, 0.0, 0.0])
        with pytest.raises(antenna.NoCrossingFound):
            antenna.hpbw(cut)

    def test_invariant_under_uniform_offset(self):
        angles = np.linspace(-40, 40, 161)
        trace = -12.0 * (angles / 9.0) ** 2
        w0 = antenna.hpbw(antenna.PatternCut.from_samples(angles, trace))
        w1 = antenna.hpbw(antenna.PatternCut.from_samples(angles, trace - 17.3))
        assert w0 == pytest.approx(w1, abs=1e-12)
