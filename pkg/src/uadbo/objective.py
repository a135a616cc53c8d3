"""Performance metrics, constraints and DBO / UA-DBO objective assembly.

Cruise quantities always come from the oracle (one exact evaluation per
candidate); off-design quantities come from the oracle or from a surrogate.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import geometry as geo
from . import oracle
from . import uq

log = logging.getLogger(__name__)

MACH_SET = (0.71, 0.72, 0.73, 0.74, 0.75, 0.76)
BUFFET_OFFSETS = tuple(np.round(np.arange(-1.0, 4.0 + 1e-9, 0.25), 2))
BUFFET_SHIFT = 0.1
LINEAR_RMS = 1e-3
TRIM_VIOLATION = 1e6


class NoBuffetError(ValueError):
    pass


def mean_drag(cd_per_mach):
    v = np.asarray(cd_per_mach, dtype=np.float64)
    if v.shape[0] != len(MACH_SET):
        raise ValueError(f"mean drag needs exactly {len(MACH_SET)} values, got {v.shape[0]}")
    return v.mean(axis=0)


def _linear_prefix(aoa, cl, rms_tol, min_points, z=4.0):
    k = 0
    for n in range(min_points, aoa.size + 1):
        c = np.polyfit(aoa[:n], cl[:n], 1)
        if np.sqrt(np.mean((np.polyval(c, aoa[:n]) - cl[:n]) ** 2)) > rms_tol:
            break
        k = n
    if k < min_points:
        raise ValueError(f"linear lift segment shorter than {min_points} points")
    # points just past the break pass the RMS test but tilt the fit; regrow
    # from the leading half and stop at the first point falling below the line
    m = max(min_points, k // 2)
    floor = 1e-9 * (1.0 + np.abs(cl).max())
    while m < k:
        c = np.polyfit(aoa[:m], cl[:m], 1)
        res = cl[:m] - np.polyval(c, aoa[:m])
        s = np.sqrt(np.sum(res ** 2) / max(m - 2, 1))
        if cl[m] - np.polyval(c, aoa[m]) < -max(z * s, floor):
            break
        m += 1
    return m


def buffet_onset(aoa, cl, shift=BUFFET_SHIFT, rms_tol=LINEAR_RMS, min_points=3):
    """Lift-curve-break buffet onset: (aoa*, cl_buffet).

    The linear segment is the longest low-aoa prefix whose least-squares line
    fits with RMS <= ``rms_tol``, trimmed of trailing points that fall
    significantly below it. The line is shifted right by ``shift`` degrees and
    intersected with a local three-point quadratic through the crossing.
    """
    aoa = np.asarray(aoa, dtype=np.float64)
    cl = np.asarray(cl, dtype=np.float64)
    if aoa.size < 8 or aoa.size != cl.size:
        raise ValueError("buffet onset needs at least 8 (aoa, cl) points")
    if np.any(np.diff(aoa) <= 0):
        raise ValueError("aoa must be strictly increasing")
    m = _linear_prefix(aoa, cl, rms_tol, min_points)
    slope, icpt = np.polyfit(aoa[:m], cl[:m], 1)
    gap = cl - (slope * (aoa - shift) + icpt)
    for i in range(m - 1, aoa.size - 1):
        if gap[i] > 0 >= gap[i + 1]:
            lo, hi = aoa[i], aoa[i + 1]
            j = i if i + 2 < aoa.size else i - 1
            roots = np.roots(np.polyfit(aoa[j:j + 3], gap[j:j + 3], 2))
            roots = roots[np.abs(roots.imag) < 1e-12].real
            roots = roots[(roots >= lo - 1e-12) & (roots <= hi + 1e-12)]
            if roots.size:
                a_star = float(np.clip(roots.min(), lo, hi))
            else:
                a_star = float(lo + gap[i] / (gap[i] - gap[i + 1]) * (hi - lo))
            cl_star = float(np.polyval(np.polyfit(aoa[j:j + 3], cl[j:j + 3], 2), a_star))
            return a_star, cl_star
    raise NoBuffetError("shifted linear segment does not intersect the lift curve in the sampled range")


# problems ----------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    name: str
    kind: str  # lower, upper, band
    bounds: tuple
    value: float

    @property
    def violation(self):
        lo, hi = self.bounds
        v = 0.0
        if lo is not None and self.value < lo:
            v = lo - self.value
        if hi is not None and self.value > hi:
            v = max(v, self.value - hi)
        return float(v)


@dataclass
class ConstraintSet:
    items: list
    trim_failed: bool = False

    @property
    def total(self):
        if self.trim_failed:
            return TRIM_VIOLATION
        return float(sum(c.violation for c in self.items))

    @property
    def feasible(self):
        return self.total == 0.0

    def to_dict(self):
        return {"trim_failed": self.trim_failed, "total": self.total,
                "items": [{"name": c.name, "kind": c.kind, "bounds": list(c.bounds), "value": c.value,
                           "violation": c.violation} for c in self.items]}


@dataclass
class PerformanceMetrics:
    cd_bar: float = None          # counts
    cl_buffet: float = None
    ld_cruise: float = None
    cm_cruise: float = None
    aoa_cruise: float = None
    area: float = None
    t_015c: float = None
    t_max: float = None
    bounds: dict = field(default_factory=dict)  # metric -> (lb, ub) from the model

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("cd_bar", "cl_buffet", "ld_cruise", "cm_cruise",
                                           "aoa_cruise", "area", "t_015c", "t_max")}
        d["bounds"] = {k: list(v) for k, v in self.bounds.items()}
        return d


@dataclass(frozen=True)
class Problem:
    """``drag``: minimize mean drag over MACH_SET at fixed cruise cl.
    ``buffet``: maximize cruise L/D and buffet-onset cl at the cruise Mach."""
    kind: str
    baseline: geo.AirfoilShape
    cruise_mach: float = 0.73
    cruise_cl: float = 0.824
    t15_factor: float = None

    def __post_init__(self):
        if self.kind not in ("drag", "buffet"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.t15_factor is None:
            object.__setattr__(self, "t15_factor", 0.9 if self.kind == "drag" else 0.95)

    @property
    def n_objectives(self):
        return 1 if self.kind == "drag" else 2

    def reference(self):
        return _reference(self)


_REF_CACHE = {}


def _reference(problem):
    key = (problem.kind, problem.baseline, problem.cruise_mach, problem.cruise_cl)
    if key not in _REF_CACHE:
        b = problem.baseline
        r = oracle.evaluate(b, oracle.OperatingCondition(problem.cruise_mach, target_cl=problem.cruise_cl))
        _REF_CACHE[key] = {"area": geo.section_area(b), "t_015c": geo.thickness_at(b, 0.15),
                           "t_max": geo.max_thickness(b), "cm": r.cm, "aoa": r.aoa}
    return _REF_CACHE[key]


def constraints(problem, metrics):
    ref = problem.reference()
    if problem.kind == "drag":
        items = [Constraint("area", "lower", (ref["area"], None), metrics.area),
                 Constraint("cm_cruise", "lower", (ref["cm"], None), metrics.cm_cruise),
                 Constraint("aoa_cruise", "band", (1.0, 5.0), metrics.aoa_cruise),
                 Constraint("t_015c", "lower", (problem.t15_factor * ref["t_015c"], None), metrics.t_015c)]
    else:
        cm_lo, cm_hi = sorted((0.9 * ref["cm"], 1.1 * ref["cm"]))
        items = [Constraint("t_max", "band", (0.98 * ref["t_max"], 1.02 * ref["t_max"]), metrics.t_max),
                 Constraint("t_015c", "lower", (problem.t15_factor * ref["t_015c"], None), metrics.t_015c),
                 Constraint("aoa_cruise", "band", (ref["aoa"] - 0.5, ref["aoa"] + 0.5), metrics.aoa_cruise),
                 Constraint("cm_cruise", "band", (cm_lo, cm_hi), metrics.cm_cruise)]
    return ConstraintSet(items)


# evaluators --------------------------------------------------------------

class OracleEvaluator:
    """Off-design quantities from the analytic oracle (CFD-based mode)."""

    uncertainty = False

    def drag(self, shapes, cruise_states, problem):
        out = np.empty((len(shapes), len(MACH_SET)))
        for i, s in enumerate(shapes):
            for k, m in enumerate(MACH_SET):
                out[i, k] = oracle.evaluate(s, oracle.OperatingCondition(m, target_cl=problem.cruise_cl)).cd
        return mean_drag(out.T) * 1e4, None

    def lift_curves(self, shapes, cruise_states, problem):
        offs = np.array(BUFFET_OFFSETS)
        return [oracle.lift_curve(s, problem.cruise_mach, st.aoa + offs) for s, st in zip(shapes, cruise_states)], None


class ModelEvaluator:
    """Off-design quantities from a surrogate.

    With ``uncertainty`` the metric distribution is propagated with shared
    latent draws across all off-design conditions (UA-DBO); otherwise the
    deterministic prediction is used (DBO).
    """

    def __init__(self, model, uncertainty=False, alpha=0.9, n_samples=16, seed=0):
        self.model = model
        self.uncertainty = uncertainty
        self.alpha = alpha
        self.n_samples = n_samples
        self.seed = seed
        self.factors = uq.factors_of(model)
        if uncertainty and not (model.calibration or {}).get("calibrated"):
            msg = "model is not calibrated; using kappa_L = kappa_U = 1"
            warnings.warn(msg)
            log.warning(msg)
            self.warnings = [msg]
        else:
            self.warnings = []

    def _inputs(self, shapes, cruise_states):
        st = self.model.stats
        x = np.stack([ds.encoder_input(s, c, st) for s, c in zip(shapes, cruise_states)])
        prior = x[:, 1:]
        return x, prior

    def drag(self, shapes, cruise_states, problem):
        x, prior = self._inputs(shapes, cruise_states)

        def b(outputs):  # (K, N) cd -> (N,) mean drag in counts
            return mean_drag(outputs) * 1e4
        if not self.uncertainty:
            return b(uq.deterministic_outputs(self.model, x, prior, MACH_SET)), None
        dist = uq.propagate(self.model, x, MACH_SET, b, self.n_samples, self.seed, prior)
        return dist.mean, uq.interval(dist, self.alpha, self.factors)

    def lift_curves(self, shapes, cruise_states, problem):
        x, prior = self._inputs(shapes, cruise_states)
        offs = np.array(BUFFET_OFFSETS)
        geoms = [geo.cst_evaluate(s) for s in shapes]
        aoas = np.array([c.aoa for c in cruise_states])
        if self.uncertainty:
            out = uq.sample_outputs(self.model, x, prior, list(offs), self.n_samples, self.seed)
        else:
            out = uq.deterministic_outputs(self.model, x, prior, list(offs))[None]
        # out: (S, K, N, 2, 2, 101) -> lift per draw, condition, shape
        cls = np.empty(out.shape[:3])
        for s in range(out.shape[0]):
            for k in range(out.shape[1]):
                for i in range(out.shape[2]):
                    cls[s, k, i] = oracle.integrate_coefficients(out[s, k, i, 0], out[s, k, i, 1],
                                                                 aoas[i] + offs[k], geoms[i])[0]
        return [cls[:, :, i] for i in range(len(shapes))], True


def _cruise(shape, problem):
    return oracle.evaluate(shape, oracle.OperatingCondition(problem.cruise_mach, target_cl=problem.cruise_cl))


def _buffet_stats(curves, cruise_states, evaluator, n_draws_used):
    """Per-shape buffet cl statistic (mean, lb, ub) from oracle or model curves."""
    offs = np.array(BUFFET_OFFSETS)
    out = []
    for curve, st in zip(curves, cruise_states):
        aoas = st.aoa + offs
        try:
            if curve.ndim == 1:
                out.append((buffet_onset(aoas, curve)[1], None, None))
                continue
            draws = np.array([buffet_onset(aoas, c)[1] for c in curve])
        except ValueError as exc:
            out.append(exc)
            continue
        if draws.size == 1:
            out.append((float(draws[0]), None, None))
        else:
            dist = uq.PredictiveDistribution(draws)
            ci = uq.interval(dist, evaluator.alpha, evaluator.factors)
            out.append((float(dist.mean), float(ci.lb), float(ci.ub)))
    return out


def evaluate_population(shapes, problem, evaluator):
    """Metrics, constraints and minimization objectives for a batch of shapes.

    Returns a list of (PerformanceMetrics, ConstraintSet, objectives or None).
    Trim failures and metric failures yield infeasible entries.
    """
    results = [None] * len(shapes)
    ok_idx, ok_shapes, states = [], [], []
    for i, s in enumerate(shapes):
        m = PerformanceMetrics(area=geo.section_area(s), t_015c=geo.thickness_at(s, 0.15),
                               t_max=geo.max_thickness(s))
        try:
            r = _cruise(s, problem)
        except (oracle.TrimError, ValueError) as exc:
            log.debug("candidate %d: cruise trim failed (%s)", i, exc)
            results[i] = (m, ConstraintSet(constraints_placeholder(problem), trim_failed=True), None)
            continue
        m.cm_cruise, m.aoa_cruise, m.ld_cruise = float(r.cm), float(r.aoa), float(r.cl / r.cd)
        results[i] = (m, None, None)
        ok_idx.append(i)
        ok_shapes.append(s)
        states.append(r)
    if ok_shapes:
        if problem.kind == "drag":
            mean, ci = evaluator.drag(ok_shapes, states, problem)
            for j, i in enumerate(ok_idx):
                m = results[i][0]
                m.cd_bar = float(mean[j])
                obj = m.cd_bar
                if ci is not None:
                    m.bounds["cd_bar"] = (float(ci.lb[j]), float(ci.ub[j]))
                    obj = float(ci.ub[j])
                results[i] = (m, constraints(problem, m), np.array([obj]))
        else:
            curves, _ = evaluator.lift_curves(ok_shapes, states, problem)
            stats = _buffet_stats(curves, states, evaluator, None)
            for j, i in enumerate(ok_idx):
                m = results[i][0]
                cs = constraints(problem, m)
                if isinstance(stats[j], Exception):
                    log.debug("candidate %d: buffet onset failed (%s)", i, stats[j])
                    cs.trim_failed = True
                    results[i] = (m, cs, None)
                    continue
                mean, lb, ub = stats[j]
                m.cl_buffet = mean
                cl_obj = mean
                if lb is not None:
                    m.bounds["cl_buffet"] = (lb, ub)
                    cl_obj = lb
                results[i] = (m, cs, np.array([-m.ld_cruise, -cl_obj]))
    return results


def constraints_placeholder(problem):
    return []


def evaluate_candidate(shape, problem, evaluator):
    return evaluate_population([shape], problem, evaluator)[0][:2]


def dbo_objective(metrics, problem):
    """Model-predicted metric(s) in minimization form."""
    if problem.kind == "drag":
        return np.array([metrics.cd_bar])
    return np.array([-metrics.ld_cruise, -metrics.cl_buffet])


def uadbo_objective(metrics, problem):
    """Calibrated confidence-pessimal bounds: UB for minimized, LB for maximized metrics."""
    if problem.kind == "drag":
        lb, ub = metrics.bounds.get("cd_bar", (metrics.cd_bar, metrics.cd_bar))
        return np.array([ub])
    lb, ub = metrics.bounds.get("cl_buffet", (metrics.cl_buffet, metrics.cl_buffet))
    return np.array([-metrics.ld_cruise, -lb])


def weighted_sum_weight(factors, n_samples, alpha):
    """w in mu + w sigma equivalent to the calibrated upper bound."""
    return factors.kappa_u * uq.t_quantile(0.5 * (1 + alpha), n_samples - 1) / np.sqrt(n_samples)
