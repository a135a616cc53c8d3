"""Constrained differential evolution, Pareto utilities and optimization runs.

The DE core works on plain design vectors so it can be exercised on standard
benchmarks; :func:`run` wraps it for CST shapes, oracle- or model-based
objectives, trajectory logging and oracle verification.
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import kernels
from . import objective as obj

log = logging.getLogger(__name__)

DEFAULT_F = 0.5
DEFAULT_CR = 0.9
BOUND_HALF_WIDTH = 0.15
MODES = ("cfd-oracle", "dbo", "ua-dbo")


class OptimizationError(RuntimeError):
    pass


# dominance and selection -------------------------------------------------

def dominates(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def deb_better(fa, va, fb, vb):
    """Deb's rules for scalar objectives: True if a is at least as good as b."""
    if va == 0.0 and vb == 0.0:
        return fa <= fb
    if va == 0.0 or vb == 0.0:
        return va == 0.0
    return va <= vb


def select_survivors(f, v, k):
    """Indices of ``k`` survivors: feasible first (non-dominated rank, then
    crowding distance), infeasible after by increasing violation."""
    f = np.asarray(f, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    feas = np.flatnonzero(v == 0.0)
    order = []
    if feas.size:
        ranks = kernels.nondominated_ranks(f[feas])
        for r in range(int(ranks.max()) + 1):
            front = feas[ranks == r]
            if len(order) + front.size <= k:
                order.extend(front.tolist())
                continue
            cd = kernels.crowding_distance(f[front])
            pick = np.lexsort((front, -cd))[: k - len(order)]
            order.extend(front[pick].tolist())
            break
    if len(order) < k:
        infeas = np.flatnonzero(v != 0.0)
        infeas = infeas[np.lexsort((infeas, v[infeas]))]
        order.extend(infeas[: k - len(order)].tolist())
    return np.array(order, dtype=np.int64)


def pareto_mask(f):
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return kernels.nondominated_ranks(f) == 0


def hypervolume(points, ref):
    """Dominated hypervolume of minimization ``points`` w.r.t. ``ref``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, len(ref))
    ref = np.asarray(ref, dtype=np.float64)
    p = p[np.all(p < ref, axis=1)]
    if p.shape[0] == 0:
        return 0.0
    p = p[pareto_mask(p)]
    return float(_hv(p, ref))


def _hv(p, ref):
    if p.shape[1] == 1:
        return ref[0] - p[:, 0].min()
    p = p[np.argsort(p[:, -1], kind="stable")]
    total = 0.0
    for i in range(p.shape[0]):
        top = p[i + 1, -1] if i + 1 < p.shape[0] else ref[-1]
        if top > p[i, -1]:
            total += _hv(p[: i + 1, :-1], ref[:-1]) * (top - p[i, -1])
    return total


# DE core -----------------------------------------------------------------

def de_trials(x, F, CR, rng, lo, hi):
    """DE/rand/1/bin trial vectors, one per target, with bounce-back bounds."""
    n, d = x.shape
    if n < 4:
        raise ValueError("DE needs a population of at least 4")
    r = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        r[i] = rng.choice(others, 3, replace=False)
    donor = x[r[:, 0]] + F * (x[r[:, 1]] - x[r[:, 2]])
    mask = rng.random((n, d)) < CR
    mask[np.arange(n), rng.integers(0, d, n)] = True
    trial = np.where(mask, donor, x)
    trial = np.where(trial < lo, 0.5 * (x + lo), trial)
    trial = np.where(trial > hi, 0.5 * (x + hi), trial)
    return trial, r


def de_step(x, f, v, evaluate, F=DEFAULT_F, CR=DEFAULT_CR, rng=None, lo=None, hi=None):
    """One DE generation.

    ``evaluate(trials) -> (f, v)`` with f of shape (n, m) and violations (n,).
    Single-objective problems use one-to-one greedy selection under Deb's
    rules; multi-objective problems select from parents plus trials by
    constrained non-dominated sorting and crowding.
    Returns (x, f, v, info) where info holds the trial data and survivor map.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    lo = np.full(x.shape[1], -np.inf) if lo is None else lo
    hi = np.full(x.shape[1], np.inf) if hi is None else hi
    trial, parents = de_trials(x, F, CR, rng, lo, hi)
    tf, tv = evaluate(trial)
    tf = np.asarray(tf, dtype=np.float64).reshape(x.shape[0], -1)
    tv = np.asarray(tv, dtype=np.float64)
    if tf.shape[1] == 1:
        take = np.array([deb_better(tf[i, 0], tv[i], f[i, 0], v[i]) for i in range(x.shape[0])])
        src = np.where(take, np.arange(x.shape[0]) + x.shape[0], np.arange(x.shape[0]))
    else:
        src = select_survivors(np.vstack([f, tf]), np.concatenate([v, tv]), x.shape[0])
    allx, allf, allv = np.vstack([x, trial]), np.vstack([f, tf]), np.concatenate([v, tv])
    info = {"trial": trial, "trial_f": tf, "trial_v": tv, "parents": parents, "source": src}
    return allx[src], allf[src], allv[src], info


def minimize(fun, lo, hi, pop_size=32, max_evals=50000, seed=0, F=DEFAULT_F, CR=DEFAULT_CR, target=None):
    """Unconstrained DE on a vector objective; ``fun(x) -> (m,)`` or scalar.

    Returns (x, f, n_evals) for the final population.
    """
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = lo + (hi - lo) * rng.random((pop_size, lo.size))

    def ev(xs):
        fs = np.array([np.atleast_1d(fun(xi)) for xi in xs], dtype=np.float64)
        return fs, np.zeros(len(xs))
    f, v = ev(x)
    n = pop_size
    while n + pop_size <= max_evals:
        x, f, v, _ = de_step(x, f, v, ev, F, CR, rng, lo, hi)
        n += pop_size
        if target is not None and f.shape[1] == 1 and f.min() <= target:
            break
    return x, f, n


# shape-level runs --------------------------------------------------------

@dataclass
class Individual:
    shape: geo.AirfoilShape
    objectives: np.ndarray = None
    violation: float = 0.0
    metrics: obj.PerformanceMetrics = None
    constraints: obj.ConstraintSet = None
    provenance: dict = field(default_factory=dict)
    truth: dict = None

    @property
    def feasible(self):
        return self.violation == 0.0 and self.objectives is not None

    def fitness(self, m):
        if self.objectives is None:
            return np.full(m, np.inf)
        return self.objectives

    def to_dict(self):
        return {"upper": [float(c) for c in self.shape.upper], "lower": [float(c) for c in self.shape.lower],
                "objectives": None if self.objectives is None else [float(c) for c in self.objectives],
                "violation": float(self.violation),
                "metrics": None if self.metrics is None else self.metrics.to_dict(),
                "constraints": None if self.constraints is None else self.constraints.to_dict(),
                "provenance": self.provenance, "truth": self.truth}


def _individuals(shapes, problem, evaluator, provenance):
    res = obj.evaluate_population(shapes, problem, evaluator)
    return [Individual(s, o, c.total, m, c, p) for s, (m, c, o), p in zip(shapes, res, provenance)]


def init_population(baseline, size=64, seed=0, problem=None, evaluator=None, amplitude=0.002,
                    half_width=BOUND_HALF_WIDTH):
    """Baseline plus ``size - 1`` bump-perturbed, refitted variants, evaluated.

    Variants are clipped into the baseline +/- ``half_width`` design box.
    """
    if problem is None:
        problem = obj.Problem("drag", baseline)
    evaluator = evaluator or obj.OracleEvaluator()
    base = baseline.vector()
    shapes = [baseline]
    for i in range(1, size):
        s = geo.perturb_and_refit(baseline, amplitude=amplitude, rng=np.random.default_rng([seed, 0, i]))
        shapes.append(geo.AirfoilShape.from_vector(np.clip(s.vector(), base - half_width, base + half_width)))
    prov = [{"generation": 0, "parents": [], "seed": [seed, 0, i]} for i in range(size)]
    pop = _individuals(shapes, problem, evaluator, prov)
    failed = sum(1 for p in pop if p.constraints.trim_failed)
    if failed > size // 2:
        raise OptimizationError(f"{failed} of {size} initial candidates failed to trim; bounds are likely wrong")
    return pop


def verify_population(individuals, problem, mode=None):
    """Attach oracle-truth metrics and objectives to every individual."""
    if mode == "cfd-oracle":
        for ind in individuals:
            ind.truth = _truth_dict(ind.metrics, ind.constraints, ind.objectives)
        return individuals
    res = obj.evaluate_population([i.shape for i in individuals], problem, obj.OracleEvaluator())
    for ind, (m, c, o) in zip(individuals, res):
        ind.truth = _truth_dict(m, c, o)
    return individuals


def _truth_dict(m, c, o):
    return {"metrics": m.to_dict(), "violation": c.total,
            "objectives": None if o is None else [float(v) for v in o]}


def actual_best(individuals):
    """Verified member with the lowest truth objective among truth-feasible ones."""
    ok = [i for i in individuals if i.truth and i.truth["violation"] == 0.0 and i.truth["objectives"]]
    if not ok:
        return None
    return min(ok, key=lambda i: i.truth["objectives"][0])


def pareto_front(individuals):
    ind = [i for i in individuals if i.objectives is not None]
    if not ind:
        return []
    mask = pareto_mask(np.array([i.objectives for i in ind]))
    return [i for i, k in zip(ind, mask) if k]


def _predicted_metric(problem):
    return "cd_bar" if problem.kind == "drag" else "cl_buffet"


def model_best(population):
    feas = [i for i in population if i.feasible]
    pool = feas or [i for i in population if i.objectives is not None]
    if not pool:
        return None
    return min(pool, key=lambda i: (i.objectives[0], float(i.violation)))


@dataclass
class OptimizationRun:
    config: dict
    trajectory: list
    populations: list
    pareto: list
    n_evaluations: int
    warnings: list = field(default_factory=list)

    @property
    def final_population(self):
        return self.populations[-1]

    def summary(self, problem=None):
        final = self.final_population
        best = model_best(final)
        out = {"n_evaluations": self.n_evaluations, "generations": len(self.populations) - 1,
               "n_pareto": len(self.pareto), "warnings": self.warnings}
        key = self.config["metric"]
        if best is not None:
            out["model_best"] = {"objectives": [float(c) for c in best.objectives],
                                 "predicted": getattr(best.metrics, key),
                                 "bounds": list(best.metrics.bounds.get(key, ())),
                                 "truth": None if best.truth is None else best.truth["metrics"][key]}
        verified = [i for i in final if i.truth and i.truth["metrics"].get(key) is not None
                    and getattr(i.metrics, key) is not None]
        if verified:
            err = [abs(getattr(i.metrics, key) - i.truth["metrics"][key]) for i in verified]
            out["prediction_mae"] = float(np.mean(err))
        ab = actual_best(final)
        out["actual_best"] = None if ab is None else ab.truth["objectives"]
        return out

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(json.dumps({"config": self.config, "summary": self.summary()},
                                                 sort_keys=True, indent=1) + "\n")
        with open(out / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "pred_best", "lb", "ub", "oracle_best"])
            for t in self.trajectory:
                w.writerow([t["generation"]] + [_fmt(t[k]) for k in ("pred_best", "lb", "ub", "oracle_best")])
        for g, pop in enumerate(self.populations):
            with open(out / f"population_{g}.jsonl", "w") as fh:
                for ind in pop:
                    fh.write(json.dumps(ind.to_dict(), sort_keys=True) + "\n")
        with open(out / "pareto.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            m = len(self.pareto[0].objectives) if self.pareto else 0
            w.writerow([f"f{k}" for k in range(m)] + [f"upper{k}" for k in range(geo.N_COEF)]
                       + [f"lower{k}" for k in range(geo.N_COEF)])
            for ind in self.pareto:
                w.writerow([_fmt(c) for c in ind.objectives] + [_fmt(c) for c in ind.shape.upper]
                           + [_fmt(c) for c in ind.shape.lower])
        return out


def _fmt(v):
    return "" if v is None else repr(float(v))


def _evaluator(mode, model, alpha, n_samples, seed):
    if mode not in MODES:
        raise ValueError(f"unknown optimization mode {mode!r}")
    if mode == "cfd-oracle":
        return obj.OracleEvaluator()
    if model is None:
        raise ValueError(f"mode {mode!r} needs a trained model")
    sample_seed = int(np.random.SeedSequence([seed, 3]).generate_state(1)[0])
    return obj.ModelEvaluator(model, uncertainty=(mode == "ua-dbo"), alpha=alpha,
                              n_samples=n_samples, seed=sample_seed)


def run(problem, mode="cfd-oracle", model=None, iterations=50, pop_size=32, init_size=64, seed=0,
        F=DEFAULT_F, CR=DEFAULT_CR, alpha=0.9, n_samples=16, verify=True, out_dir=None, amplitude=0.002):
    """Full optimization run; objective failures quarantine candidates.

    Total evaluations are ``init_size + iterations * pop_size``. Within a run
    the UA-DBO latent draws are common to all candidates, so the objective is
    a deterministic function of the shape.
    """
    evaluator = _evaluator(mode, model, alpha, n_samples, seed)
    base = problem.baseline.vector()
    lo, hi = base - BOUND_HALF_WIDTH, base + BOUND_HALF_WIDTH
    m = problem.n_objectives
    key = _predicted_metric(problem)

    initial = init_population(problem.baseline, init_size, seed, problem, evaluator, amplitude)
    n_eval = init_size
    f0 = np.array([p.fitness(m) for p in initial])
    v0 = np.array([p.violation for p in initial])
    keep = select_survivors(f0, v0, pop_size)
    pop = [initial[i] for i in keep]
    feas0 = f0[v0 == 0.0]
    ref = np.max(feas0, axis=0) + 0.1 * (np.ptp(feas0, axis=0) + 1e-12) if feas0.size else None

    # populations[0] is the full evaluated initial set; later entries are survivors
    populations = [initial]
    trajectory = [_trajectory_row(0, pop, problem, key, verify, mode, ref)]
    for g in range(1, iterations + 1):
        rng = np.random.default_rng([seed, g])
        x = np.array([p.shape.vector() for p in pop])
        f = np.array([p.fitness(m) for p in pop])
        v = np.array([p.violation for p in pop])
        born = []

        def ev(trials):
            shapes = [geo.AirfoilShape.from_vector(t) for t in trials]
            prov = [{"generation": g, "parents": [], "seed": [seed, g]} for _ in shapes]
            born[:] = _individuals(shapes, problem, evaluator, prov)
            return np.array([b.fitness(m) for b in born]), np.array([b.violation for b in born])
        x, f, v, info = de_step(x, f, v, ev, F, CR, rng, lo, hi)
        for k, b in enumerate(born):
            b.provenance["parents"] = [k] + [int(c) for c in info["parents"][k]]
        n_eval += len(born)
        merged = pop + born
        pop = [merged[i] for i in info["source"]]
        populations.append(pop)
        trajectory.append(_trajectory_row(g, pop, problem, key, verify, mode, ref))
        log.info("generation %d: %s", g, trajectory[-1])

    if verify:
        verify_population(initial, problem, mode)
        verify_population(pop, problem, mode)
    feas = [p for p in pop if p.feasible]
    config = {"problem": problem.kind, "mode": mode, "iterations": iterations, "pop_size": pop_size,
              "init_size": init_size, "seed": seed, "F": F, "CR": CR, "alpha": alpha, "n_samples": n_samples,
              "verify": verify, "metric": key, "cruise_mach": problem.cruise_mach, "cruise_cl": problem.cruise_cl}
    out = OptimizationRun(config, trajectory, populations, pareto_front(feas), n_eval,
                          list(getattr(evaluator, "warnings", [])))
    if out_dir is not None:
        out.write(out_dir)
    return out


def _trajectory_row(g, pop, problem, key, verify, mode, ref):
    row = {"generation": g, "pred_best": None, "lb": None, "ub": None, "oracle_best": None}
    if problem.n_objectives == 1:
        best = model_best(pop)
        if best is None:
            return row
        row["pred_best"] = getattr(best.metrics, key)
        if key in best.metrics.bounds:
            row["lb"], row["ub"] = best.metrics.bounds[key]
        if verify:
            if mode == "cfd-oracle":
                row["oracle_best"] = row["pred_best"]
            else:
                (m, c, o), = obj.evaluate_population([best.shape], problem, obj.OracleEvaluator())
                row["oracle_best"] = getattr(m, key)
        return row
    # multi-objective: hypervolume of the predicted feasible front
    front = pareto_front([p for p in pop if p.feasible])
    if ref is None or not front:
        return row
    row["pred_best"] = hypervolume([p.objectives for p in front], ref)
    if verify:
        if mode == "cfd-oracle":
            row["oracle_best"] = row["pred_best"]
        else:
            res = obj.evaluate_population([p.shape for p in front], problem, obj.OracleEvaluator())
            pts = [o for (_, c, o) in res if o is not None and c.total == 0.0]
            row["oracle_best"] = hypervolume(pts, ref) if pts else 0.0
    return row
