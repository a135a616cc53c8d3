import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uadbo import dataset as ds, geometry as g, objective as ob, oracle as o, surrogate as sg, uq

BASE = g.baseline_airfoil()


def quadratic_falloff(a=0.1, alpha0=0.0, c_b=0.05, brk=2.0, step=0.05, lo=-1.0, hi=5.0):
    aoa = np.arange(lo, hi + 1e-9, step)
    return aoa, o.LiftLaw(a, alpha0, brk, c_b).cl(aoa)


class OracleWrapper:
    """Evaluator that forwards everything to the oracle, as a surrogate would."""

    uncertainty = False

    def __init__(self):
        self.inner = ob.OracleEvaluator()

    def drag(self, shapes, states, problem):
        return self.inner.drag(shapes, states, problem)

    def lift_curves(self, shapes, states, problem):
        return self.inner.lift_curves(shapes, states, problem)


class TestMeanDrag:
    def test_constant(self):
        assert ob.mean_drag(np.full(6, 100.0)) == 100.0

    def test_hand_mean(self):
        assert ob.mean_drag([100, 102, 104, 106, 108, 110]) == 105.0

    def test_mach_set(self):
        assert ob.MACH_SET == (0.71, 0.72, 0.73, 0.74, 0.75, 0.76)

    @pytest.mark.parametrize("n", [1, 5, 7])
    def test_count(self, n):
        with pytest.raises(ValueError, match="exactly 6"):
            ob.mean_drag(np.ones(n))

    def test_batched_axis(self):
        np.testing.assert_array_equal(ob.mean_drag(np.arange(12.0).reshape(6, 2)), [5.0, 6.0])


class TestBuffetOnset:
    def test_closed_form(self):
        a_star, cl_star = ob.buffet_onset(*quadratic_falloff())
        assert a_star == pytest.approx(2.0 + np.sqrt(0.1 * 0.1 / 0.05), abs=1e-4)
        assert a_star == pytest.approx(2.44721, abs=1e-4)
        assert cl_star == pytest.approx(0.23472, abs=1e-4)

    def test_doubling_cb(self):
        a1, _ = ob.buffet_onset(*quadratic_falloff(c_b=0.05))
        a2, _ = ob.buffet_onset(*quadratic_falloff(c_b=0.1))
        assert (a2 - 2.0) / (a1 - 2.0) == pytest.approx(1 / np.sqrt(2), abs=1e-4)

    def test_linear_has_no_buffet(self):
        aoa = np.linspace(-1, 5, 40)
        with pytest.raises(ob.NoBuffetError):
            ob.buffet_onset(aoa, 0.1 * aoa + 0.2)

    @pytest.mark.parametrize("bad", [
        (np.arange(5.0), np.arange(5.0)),
        (np.arange(10.0)[::-1], np.arange(10.0)),
        (np.arange(10.0), np.arange(9.0)),
    ])
    def test_bad_input(self, bad):
        with pytest.raises(ValueError):
            ob.buffet_onset(*bad)

    def test_short_linear_prefix(self):
        aoa = np.linspace(0, 5, 20)
        with pytest.raises(ValueError, match="shorter than 3"):
            ob.buffet_onset(aoa, -np.exp(aoa))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.06, 0.14), st.floats(-2.0, 0.5), st.floats(0.02, 0.2), st.floats(0.5, 2.5))
    def test_oracle_family(self, a, alpha0, c_b, brk):
        a_star, cl_star = ob.buffet_onset(*quadratic_falloff(a, alpha0, c_b, brk, lo=brk - 3, hi=brk + 3))
        assert a_star > brk
        assert a_star == pytest.approx(brk + np.sqrt(0.1 * a / c_b), abs=1e-4)

    def test_quarter_degree_grid(self):
        law = o.lift_law(BASE, 0.73)
        aoa = o.trim(BASE, 0.73, 0.824) + np.array(ob.BUFFET_OFFSETS)
        a_star, _ = ob.buffet_onset(aoa, law.cl(aoa))
        assert a_star == pytest.approx(law.aoa_break + np.sqrt(0.1 * law.slope / law.c_b), abs=1e-3)


class TestConstraints:
    def test_violation_kinds(self):
        assert ob.Constraint("x", "lower", (1.0, None), 0.5).violation == 0.5
        assert ob.Constraint("x", "upper", (None, 1.0), 1.5).violation == 0.5
        assert ob.Constraint("x", "band", (1.0, 5.0), 3.0).violation == 0.0
        assert ob.Constraint("x", "band", (1.0, 5.0), 5.25).violation == 0.25

    def test_trim_failure_total(self):
        cs = ob.ConstraintSet([], trim_failed=True)
        assert cs.total == ob.TRIM_VIOLATION and not cs.feasible

    @pytest.mark.parametrize("kind", ["drag", "buffet"])
    def test_baseline_feasible(self, kind):
        p = ob.Problem(kind, BASE)
        m, cs = ob.evaluate_candidate(BASE, p, ob.OracleEvaluator())
        assert cs.feasible, cs.to_dict()
        assert all(c.violation == 0 for c in cs.items)

    def test_thinner_shape(self):
        thin = g.AirfoilShape(0.8 * BASE.upper, 0.8 * BASE.lower)
        p = ob.Problem("drag", BASE)
        _, cs = ob.evaluate_candidate(thin, p, ob.OracleEvaluator())
        t0 = g.thickness_at(BASE, 0.15)
        t15 = {c.name: c for c in cs.items}["t_015c"]
        assert t15.violation == pytest.approx(0.1 * t0, rel=1e-9)

    def test_drag_constraint_set(self):
        p = ob.Problem("drag", BASE)
        _, cs = ob.evaluate_candidate(BASE, p, ob.OracleEvaluator())
        assert [c.name for c in cs.items] == ["area", "cm_cruise", "aoa_cruise", "t_015c"]
        assert {c.name: c for c in cs.items}["aoa_cruise"].bounds == (1.0, 5.0)

    def test_buffet_bands(self):
        p = ob.Problem("buffet", BASE)
        _, cs = ob.evaluate_candidate(BASE, p, ob.OracleEvaluator())
        c = {c.name: c for c in cs.items}
        tm = g.max_thickness(BASE)
        assert c["t_max"].bounds == pytest.approx((0.98 * tm, 1.02 * tm))
        lo, hi = c["cm_cruise"].bounds
        assert lo < hi
        assert p.t15_factor == 0.95

    def test_unknown_problem(self):
        with pytest.raises(ValueError):
            ob.Problem("lift", BASE)


class TestEvaluatePopulation:
    def test_oracle_wrapper_equivalence(self):
        shapes = [BASE] + [g.AirfoilShape.from_vector(v)
                           for v in BASE.vector() + np.random.default_rng(0).normal(0, 2e-3, (3, 20))]
        for kind in ("drag", "buffet"):
            p = ob.Problem(kind, BASE)
            a = ob.evaluate_population(shapes, p, ob.OracleEvaluator())
            b = ob.evaluate_population(shapes, p, OracleWrapper())
            for (ma, ca, fa), (mb, cb, fb) in zip(a, b):
                assert ma.to_dict() == mb.to_dict()
                assert ca.total == cb.total
                np.testing.assert_array_equal(fa, fb)

    def test_drag_objective_is_mean_drag(self):
        p = ob.Problem("drag", BASE)
        (m, cs, f), = ob.evaluate_population([BASE], p, ob.OracleEvaluator())
        cds = [o.evaluate(BASE, o.OperatingCondition(mk, target_cl=0.824)).cd for mk in ob.MACH_SET]
        assert f[0] == pytest.approx(np.mean(cds) * 1e4, rel=1e-12)
        assert 100 < m.cd_bar < 300

    def test_buffet_objectives(self):
        p = ob.Problem("buffet", BASE)
        (m, cs, f), = ob.evaluate_population([BASE], p, ob.OracleEvaluator())
        np.testing.assert_allclose(f, [-m.ld_cruise, -m.cl_buffet])
        assert m.cl_buffet > 0.824

    def test_trim_failure_marked(self):
        flat = g.AirfoilShape(np.full(10, 0.001), np.full(10, 0.05))
        p = ob.Problem("drag", BASE, cruise_cl=3.0)
        (m, cs, f), = ob.evaluate_population([flat], p, ob.OracleEvaluator())
        assert f is None and cs.trim_failed and cs.total == ob.TRIM_VIOLATION


class TestObjectives:
    def test_ub_arithmetic(self):
        m = ob.PerformanceMetrics(cd_bar=100.0, bounds={"cd_bar": (96.5, 103.5)})
        assert ob.uadbo_objective(m, ob.Problem("drag", BASE))[0] == 103.5
        assert ob.dbo_objective(m, ob.Problem("drag", BASE))[0] == 100.0

    def test_buffet_uses_lb(self):
        m = ob.PerformanceMetrics(ld_cruise=60.0, cl_buffet=0.9, bounds={"cl_buffet": (0.85, 0.95)})
        np.testing.assert_allclose(ob.uadbo_objective(m, ob.Problem("buffet", BASE)), [-60.0, -0.85])
        np.testing.assert_allclose(ob.dbo_objective(m, ob.Problem("buffet", BASE)), [-60.0, -0.9])

    def test_zero_uncertainty_matches_dbo(self):
        m = ob.PerformanceMetrics(cd_bar=120.0)
        p = ob.Problem("drag", BASE)
        np.testing.assert_array_equal(ob.uadbo_objective(m, p), ob.dbo_objective(m, p))

    def test_weighted_sum_equivalence(self):
        samples = np.random.default_rng(0).normal(100, 8, 16)
        d = uq.PredictiveDistribution(samples)
        f = uq.CalibrationFactors(0.8, 1.3)
        w = ob.weighted_sum_weight(f, 16, 0.9)
        assert uq.interval(d, 0.9, f).ub == pytest.approx(d.mean + w * d.std, rel=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-50, 50))
    def test_argmin_shift_invariance(self, c):
        rng = np.random.default_rng(1)
        s = rng.normal(100, 5, (16, 8)) * rng.uniform(0.1, 1, 8)
        f = uq.CalibrationFactors(1.1, 1.4)
        ub = uq.interval(uq.PredictiveDistribution(s), 0.9, f).ub
        ub2 = uq.interval(uq.PredictiveDistribution(s + c), 0.9, f).ub
        np.testing.assert_allclose(ub2 - ub, c, atol=1e-9)
        assert np.argmin(ub) == np.argmin(ub2)


@pytest.fixture(scope="module")
def tiny_model():
    recs = ds.build_dataset(ds.sample_designs(3, 0), 4, seed=0)
    _, stats = ds.normalize(recs)
    return sg.Surrogate(sg.ModelConfig(mode="gsed", channels=(4, 4, 4), hidden=(8, 8, 8)), stats, seed=0)


class TestModelEvaluator:
    def test_uncalibrated_warns(self, tiny_model):
        with pytest.warns(UserWarning, match="not calibrated"):
            ev = ob.ModelEvaluator(tiny_model, uncertainty=True)
        assert ev.warnings and ev.factors == uq.CalibrationFactors()

    def test_zero_spread_ua_equals_dbo(self, tiny_model, monkeypatch):
        mu, logvar, skips = tiny_model.latent(np.zeros((1, 3, ds.SEQ_LEN)))
        orig = tiny_model.latent

        def collapsed(x):
            m, lv, sk = orig(x)
            return m, np.full_like(lv, -np.inf), sk
        monkeypatch.setattr(tiny_model, "latent", collapsed)
        p = ob.Problem("drag", BASE)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ua = ob.evaluate_population([BASE], p, ob.ModelEvaluator(tiny_model, uncertainty=True))
        dbo = ob.evaluate_population([BASE], p, ob.ModelEvaluator(tiny_model, uncertainty=False))
        assert ua[0][2][0] == pytest.approx(dbo[0][2][0], rel=1e-12)

    def test_ua_objective_is_upper_bound(self, tiny_model):
        p = ob.Problem("drag", BASE)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            (m, cs, f), = ob.evaluate_population([BASE], p, ob.ModelEvaluator(tiny_model, uncertainty=True, seed=3))
        lb, ub = m.bounds["cd_bar"]
        assert f[0] == ub and lb <= m.cd_bar <= ub

    def test_cruise_from_oracle(self, tiny_model):
        p = ob.Problem("drag", BASE)
        (m, _, _), = ob.evaluate_population([BASE], p, ob.ModelEvaluator(tiny_model))
        (mo, _, _), = ob.evaluate_population([BASE], p, ob.OracleEvaluator())
        assert (m.cm_cruise, m.aoa_cruise, m.ld_cruise) == (mo.cm_cruise, mo.aoa_cruise, mo.ld_cruise)
