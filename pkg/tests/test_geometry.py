import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uadbo import geometry as g

ZERO = g.AirfoilShape(np.zeros(10), np.zeros(10))
UNIT_UPPER = g.AirfoilShape(np.ones(10), np.zeros(10))
coef = st.lists(st.floats(-0.5, 0.5), min_size=10, max_size=10)


class TestEvaluate:
    def test_zero_shape(self):
        yu, yl = g.cst_evaluate(ZERO)
        np.testing.assert_array_equal(yu, 0.0)
        np.testing.assert_array_equal(yl, 0.0)

    def test_leading_edge_vanishes(self):
        s = g.baseline_airfoil()
        yu, yl = g.cst_evaluate(s, np.array([0.0]))
        assert yu[0] == 0.0 and yl[0] == 0.0

    def test_partition_of_unity(self):
        yu, _ = g.cst_evaluate(g.AirfoilShape(np.ones(10), np.ones(10)), np.array([0.25]))
        assert yu[0] == pytest.approx(0.375, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(coef, coef, st.floats(-3, 3))
    def test_linear(self, up, lo, a):
        s = g.AirfoilShape(up, lo)
        yu, yl = g.cst_evaluate(s)
        yu2, yl2 = g.cst_evaluate(s.scaled(a))
        np.testing.assert_allclose(yu2, a * yu, atol=1e-12)
        np.testing.assert_allclose(yl2, a * yl, atol=1e-12)

    def test_tc_rescale(self):
        s = g.AirfoilShape(g.BASELINE_COEFFS["upper"], g.BASELINE_COEFFS["lower"], tc_max=0.12)
        assert g.max_thickness(s) == pytest.approx(0.12, abs=1e-14)

    def test_slopes_match_finite_differences(self):
        s = g.baseline_airfoil()
        x = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        su, sl = g.cst_slopes(s, x)
        yp, lp = g.cst_evaluate(s, x + h)
        ym, lm = g.cst_evaluate(s, x - h)
        np.testing.assert_allclose(su, (yp - ym) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(sl, (lp - lm) / (2 * h), atol=1e-7)

    @pytest.mark.parametrize("n_up,n_lo", [(9, 10), (10, 11)])
    def test_wrong_coefficient_count(self, n_up, n_lo):
        with pytest.raises(ValueError):
            g.AirfoilShape(np.zeros(n_up), np.zeros(n_lo))

    @pytest.mark.parametrize("tc", [0.0, 0.25, -0.1])
    def test_bad_thickness_scale(self, tc):
        with pytest.raises(ValueError):
            g.AirfoilShape(np.zeros(10), np.zeros(10), tc_max=tc)


class TestThicknessArea:
    def test_zero(self):
        assert g.thickness_at(ZERO, 0.3) == 0.0
        assert g.section_area(ZERO) == 0.0

    def test_hand_value(self):
        assert g.thickness_at(UNIT_UPPER, 0.15) == pytest.approx(np.sqrt(0.15) * 0.85, abs=1e-12)
        assert g.thickness_at(UNIT_UPPER, 0.15) == pytest.approx(0.32918, abs=1e-4)

    def test_symmetric(self):
        up = np.linspace(0.1, 0.2, 10)
        s = g.AirfoilShape(up, -up)
        yu, _ = g.cst_evaluate(s, np.array([0.4]))
        assert g.thickness_at(s, 0.4) == pytest.approx(2 * yu[0])

    def test_beta_integral(self):
        assert abs(g.section_area(UNIT_UPPER) - 4.0 / 15.0) < 1e-3

    def test_area_linear(self):
        s = g.baseline_airfoil()
        assert g.section_area(s.scaled(2.0)) == pytest.approx(2 * g.section_area(s), rel=1e-14)


class TestStations:
    def test_grid(self):
        x = g.STATIONS
        assert x.size == 101 and x[0] == 0.0 and x[-1] == 1.0
        assert np.all(np.diff(x) > 0)

    def test_clustering(self):
        d = np.diff(g.STATIONS)
        assert d[0] < 0.25 * (1.0 / 100) and d[-1] < 0.25 * (1.0 / 100)


class TestPerturb:
    def test_zero_amplitude_identity(self):
        b = g.baseline_airfoil()
        s = g.perturb_and_refit(b, amplitude=0.0, seed=3)
        np.testing.assert_allclose(s.upper, b.upper, atol=1e-10)
        np.testing.assert_allclose(s.lower, b.lower, atol=1e-10)

    def test_representable_recovery(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(-0.3, 0.3, 10)
        y = g.cst_basis(g.STATIONS) @ w
        fit, rms = g.fit_cst(y)
        np.testing.assert_allclose(fit, w, atol=1e-8)
        assert rms < 1e-12

    def test_refit_is_projection(self):
        s = g.perturb_and_refit(g.baseline_airfoil(), seed=7)
        yu, _ = g.cst_evaluate(s)
        again, _ = g.fit_cst(yu)
        np.testing.assert_allclose(again, s.upper, atol=1e-8)

    def test_deterministic(self):
        a = g.perturb_and_refit(g.baseline_airfoil(), seed=11)
        b = g.perturb_and_refit(g.baseline_airfoil(), seed=11)
        assert a == b
        assert a != g.perturb_and_refit(g.baseline_airfoil(), seed=12)

    def test_rms_rejection(self):
        with pytest.raises(RuntimeError):
            g.perturb_and_refit(g.baseline_airfoil(), amplitude=0.5, seed=0,
                                max_rms=1e-9, max_tries=3)

    def test_negative_amplitude(self):
        with pytest.raises(ValueError):
            g.perturb_and_refit(g.baseline_airfoil(), amplitude=-1.0)

    def test_bump_peak(self):
        x = np.linspace(0, 1, 100001)
        for c in (0.2, 0.5, 0.8):
            assert x[np.argmax(g.hicks_henne(x, c, 0.5))] == pytest.approx(c, abs=1e-4)


def test_csv_round_trip(tmp_path):
    s = g.baseline_airfoil(0.12)
    path = tmp_path / "a.csv"
    g.write_airfoil_csv(s, path)
    assert path.read_text().splitlines()[0] == g.CSV_HEADER
    x, yu, yl = g.read_airfoil_csv(path)
    eu, el = g.cst_evaluate(s)
    np.testing.assert_array_equal(x, g.STATIONS)
    np.testing.assert_array_equal(yu, eu)
    np.testing.assert_array_equal(yl, el)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("x,y\n0,0\n")
    with pytest.raises(ValueError):
        g.read_airfoil_csv(path)


def test_shape_vector_round_trip():
    s = g.baseline_airfoil(0.1)
    assert g.AirfoilShape.from_vector(s.vector()) == s
    assert hash(g.AirfoilShape.from_vector(s.vector())) == hash(s)
