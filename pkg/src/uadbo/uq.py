"""Monte Carlo predictive distributions, Student-t intervals and calibration.

Intervals follow h = t_{(1+a)/2, N_s-1} / sqrt(N_s) * sigma,
lb = mu - kappa_L h, ub = mu + kappa_U h, where the kappa factors come from
empirical quantiles of normalized residuals on a calibration set.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import exp, lgamma, log, sqrt

import numpy as np

from . import dataset as ds

ECE_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 10))


class CalibrationError(ValueError):
    pass


class PropagationError(RuntimeError):
    pass


# Student t ---------------------------------------------------------------

def _betacf(a, b, x, max_iter=100000, tol=1e-16):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log(1.0 - x)
    if x < (a + 1.0) / (a + b + 2.0):
        return exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, dof):
    x = dof / (dof + t * t)
    tail = 0.5 * betainc(0.5 * dof, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


@lru_cache(maxsize=1024)
def t_quantile(p, dof):
    """Inverse Student-t CDF by bisection on the incomplete-beta CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, dof)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# distributions -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    samples: np.ndarray  # (N_s, ...)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim < 1 or s.shape[0] < 2:
            raise ValueError("a predictive distribution needs at least 2 samples")
        object.__setattr__(self, "samples", s)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def mean(self):
        return self.samples.mean(axis=0)

    @property
    def std(self):
        return self.samples.std(axis=0, ddof=1)


@dataclass(frozen=True)
class CalibrationFactors:
    kappa_l: float = 1.0
    kappa_u: float = 1.0
    alpha: float = None
    n: int = 0

    def __post_init__(self):
        if not (self.kappa_l > 0 and self.kappa_u > 0):
            raise ValueError(f"calibration factors must be positive, got {self.kappa_l}, {self.kappa_u}")

    def to_dict(self):
        return {"kappa_l": self.kappa_l, "kappa_u": self.kappa_u, "alpha": self.alpha,
                "n": self.n, "calibrated": self.n > 0}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["kappa_l"]), float(d["kappa_u"]), d.get("alpha"), int(d.get("n", 0)))


@dataclass(frozen=True, eq=False)
class ConfidenceInterval:
    lb: np.ndarray
    ub: np.ndarray
    mean: np.ndarray
    alpha: float
    kappa_l: float
    kappa_u: float


def half_width(std, n_samples, alpha):
    return t_quantile(0.5 * (1.0 + alpha), n_samples - 1) / sqrt(n_samples) * np.asarray(std)


def interval(dist, alpha, factors=None):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    f = factors or CalibrationFactors()
    h = half_width(dist.std, dist.n_samples, alpha)
    mu = dist.mean
    return ConfidenceInterval(mu - f.kappa_l * h, mu + f.kappa_u * h, mu, alpha, f.kappa_l, f.kappa_u)


# model sampling ----------------------------------------------------------

def _cond_channel(model):
    return "mach" if model.config.decoder == "scalar" else "daoa"


def _to_physical(model, out):
    """Normalized decoder output (..., 1) or (..., 2, 202) -> physical units.

    Scalar: cd with the trailing axis dropped. Field: (..., 2, 2, 101) indexed
    [cp|cf][upper|lower][station].
    """
    st = model.stats
    if model.config.decoder == "scalar":
        return st.denormalize("cd", out[..., 0])
    cp = st.denormalize("cp", out[..., 0, :])
    cf = st.denormalize("cf", out[..., 1, :])
    return np.stack([np.stack(ds.unwrap_surfaces(cp), axis=-2),
                     np.stack(ds.unwrap_surfaces(cf), axis=-2)], axis=-3)


def _conditions(model, conditions, n):
    """Physical condition values -> list of (n, 1) normalized arrays.

    Each entry is a scalar shared by all inputs or a length-n vector.
    """
    ch = _cond_channel(model)
    out = []
    for c in conditions:
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), (n,))
        out.append(model.stats.normalize(ch, c)[:, None])
    return out


def deterministic_outputs(model, x, prior, conditions):
    """(K, N, ...) physical predictions at the latent mean (or ensemble mean)."""
    x = np.asarray(x)
    if hasattr(model, "members"):
        return np.mean([deterministic_outputs(m, x, prior, conditions) for m in model.members], axis=0)
    mu, _, skips = model.latent(x)
    return np.stack([_to_physical(model, model.decode_numpy(mu, c, skips, prior))
                     for c in _conditions(model, conditions, x.shape[0])])


def sample_outputs(model, x, prior, conditions, n_samples, seed):
    """(N_s, K, N, ...) physical predictions; one latent draw is shared by all
    K conditions of an input (sample-coupled propagation)."""
    x = np.asarray(x)
    n = x.shape[0]
    conds = _conditions(model, conditions, n)
    if hasattr(model, "members"):
        per_member = []
        for m in model.members:
            mu, _, sk = m.latent(x)
            per_member.append(np.stack([_to_physical(m, m.decode_numpy(mu, c, sk, prior)) for c in conds]))
        return np.stack(per_member)
    if not model.stochastic:
        raise ValueError("no uncertainty available from a deterministic (ed) model")
    if n_samples < 2:
        raise ValueError("N_s must be at least 2")
    mu, logvar, skips = model.latent(x)
    eps = np.random.default_rng(seed).standard_normal((n_samples, n, mu.shape[1]))
    z = (mu[None] + np.exp(0.5 * logvar)[None] * eps).reshape(n_samples * n, -1)
    tile = lambda a: None if a is None else np.concatenate([a] * n_samples, axis=0)  # noqa: E731
    sk = [tile(s) for s in skips]
    pr = tile(prior)
    outs = []
    for c in conds:
        o = _to_physical(model, model.decode_numpy(z, tile(c), sk, pr))
        outs.append(o.reshape((n_samples, n) + o.shape[1:]))
    return np.stack(outs, axis=1)


def mc_predict(model, x, condition, n_samples=16, seed=0, prior=None):
    """Predictive distribution at one condition per input: samples (N_s, N, ...)."""
    return PredictiveDistribution(sample_outputs(model, x, prior, [condition], n_samples, seed)[:, 0])


def propagate(model, x, conditions, postprocess, n_samples=16, seed=0, prior=None):
    """Distribution of a metric Y = B(outputs at all conditions) per draw.

    ``postprocess`` maps one draw's (K, N, ...) outputs to (N,) metric values.
    """
    out = sample_outputs(model, x, prior, conditions, n_samples, seed)
    vals = []
    for s in range(out.shape[0]):
        try:
            v = np.asarray(postprocess(out[s]), dtype=np.float64)
        except Exception as exc:
            raise PropagationError(f"postprocess failed on draw {s}: {exc}") from exc
        if not np.all(np.isfinite(v)):
            raise PropagationError(f"postprocess returned non-finite values on draw {s}")
        vals.append(v)
    return PredictiveDistribution(np.stack(vals))


# calibration and metrics -------------------------------------------------

def normalized_residuals(truth, mean, h):
    h = np.asarray(h, dtype=np.float64)
    if np.any(h <= 0):
        raise CalibrationError(f"{int(np.sum(h <= 0))} calibration samples have zero predicted spread")
    return (np.asarray(truth) - np.asarray(mean)) / h


def calibrate_residuals(residuals, alpha, min_size=50):
    """kappa factors from normalized residuals (truth - mu) / h."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if r.size < min_size:
        raise CalibrationError(f"calibration needs at least {min_size} samples, got {r.size}")
    tail = 0.5 * (1.0 - alpha)
    ku = float(np.quantile(r, 1.0 - tail))
    kl = float(-np.quantile(r, tail))
    if kl <= 0 or ku <= 0:
        raise CalibrationError(
            f"negative calibration factor (kappa_l={kl:.4g}, kappa_u={ku:.4g}): residual median "
            f"{np.median(r):.4g} places more than {100 * (1 - tail):.0f}% of truths on one side of the mean")
    return CalibrationFactors(kl, ku, alpha, int(r.size))


def calibrate(truth, dist, alpha=0.9, min_size=50):
    h = half_width(dist.std, dist.n_samples, alpha)
    return calibrate_residuals(normalized_residuals(truth, dist.mean, h), alpha, min_size)


def coverage(truth, lb, ub):
    truth = np.asarray(truth)
    below = float(np.mean(truth < lb))
    above = float(np.mean(truth > ub))
    return below, 1.0 - below - above, above


def coverage_report(truth, dist, alpha, factors=None):
    ci = interval(dist, alpha, factors)
    return coverage(truth, ci.lb, ci.ub)


def ece_from_coverage(coverages, levels=ECE_LEVELS):
    return float(sum(abs(c - a) for c, a in zip(coverages, levels)) / len(levels))


def ece(truth, dist, factors=None, levels=ECE_LEVELS):
    return ece_from_coverage([coverage_report(truth, dist, a, factors)[1] for a in levels], levels)


def factors_of(model):
    c = getattr(model, "calibration", None) or {}
    if not c.get("calibrated"):
        return CalibrationFactors()
    return CalibrationFactors.from_dict(c)


def metrics_report(truth, dist, factors, alpha=0.9, mae_metric=None):
    """Metrics JSON dictionary in the documented layout."""
    below, inside, above = coverage_report(truth, dist, alpha, factors)
    return {"mae_all": float(np.mean(np.abs(dist.mean - truth))),
            "mae_metric": None if mae_metric is None else float(mae_metric),
            "ece": ece(truth, dist, factors),
            "coverage": {"below": below, "inside": inside, "above": above},
            "alpha": alpha, "n_samples": int(dist.n_samples)}

