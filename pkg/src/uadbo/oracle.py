"""Analytic transonic aerodynamics used as ground truth in place of CFD.

Scalar laws:

* lift   cl = a (aoa - alpha0) - c_b max(0, aoa - aoa_break)^2
* drag   cd = cd0(smoothness) + k1 cl^2 + 20 max(0, M - M_dd)^4,
  with M_dd = kappa_A - t/c - cl/10

Surface C_p / C_f fields on the station grid are constructed so that panel
integration of the fields reproduces cl, cd and gives cm.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import geometry as geo

KAPPA_A = 0.95
K_INDUCED = 0.02
WAVE_COEF = 20.0
CD0_RANGE = (0.004, 0.012)
SMOOTHNESS_REF = 0.5
SHOCK_STEEPNESS = 40.0
AOA_TRIM_RANGE = (-4.0, 12.0)
MACH_RANGE = (0.3, 0.95)


class TrimError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatingCondition:
    mach: float
    target_cl: float = None
    aoa: float = None

    def __post_init__(self):
        if not MACH_RANGE[0] <= self.mach <= MACH_RANGE[1]:
            raise ValueError(f"mach {self.mach} outside {MACH_RANGE}")
        if (self.target_cl is None) == (self.aoa is None):
            raise ValueError("specify exactly one of target_cl or aoa")


@dataclass(frozen=True)
class OracleResult:
    mach: float
    aoa: float
    cl: float
    cd: float
    cm: float
    cp: np.ndarray  # (2, N_STATIONS): upper, lower
    cf: np.ndarray


@dataclass(frozen=True)
class ShapeFeatures:
    tc: float
    camber: float
    alpha0: float  # degrees
    smoothness: float
    yu: np.ndarray
    yl: np.ndarray


@lru_cache(maxsize=8192)
def features(shape):
    yu, yl = geo.cst_evaluate(shape)
    su, sl = geo.cst_slopes(shape)
    # thin-airfoil zero-lift angle; stations are uniform in the Glauert angle
    theta = np.pi * np.linspace(0.0, 1.0, geo.N_STATIONS)
    integrand = 0.5 * (su + sl) * (np.cos(theta) - 1.0)
    alpha0 = -np.degrees(np.trapezoid(integrand, theta) / np.pi)
    yc = 0.5 * (yu + yl)
    for a in (yu, yl):
        a.setflags(write=False)
    return ShapeFeatures(tc=float(np.max(yu - yl)), camber=float(np.max(yc)),
                         alpha0=float(alpha0), smoothness=geo.smoothness(shape), yu=yu, yl=yl)


@dataclass(frozen=True)
class LiftLaw:
    slope: float  # per degree
    alpha0: float
    aoa_break: float
    c_b: float

    def cl(self, aoa):
        aoa = np.asarray(aoa, dtype=np.float64)
        return self.slope * (aoa - self.alpha0) - self.c_b * np.maximum(0.0, aoa - self.aoa_break) ** 2

    @property
    def aoa_peak(self):
        return self.aoa_break + self.slope / (2.0 * self.c_b)


def lift_law(shape, mach):
    f = features(shape)
    slope = 0.11 * (1.0 + 0.7 * f.tc) / np.sqrt(1.0 - mach ** 2)
    cl_break = 1.05 + 1.5 * (f.tc - 0.11) + 3.0 * (f.camber - 0.02) - 2.5 * (mach - 0.73)
    c_b = 0.03 + 0.25 * f.tc
    return LiftLaw(slope=slope, alpha0=f.alpha0, aoa_break=f.alpha0 + cl_break / slope, c_b=c_b)


def lift_curve(shape, mach, aoas):
    aoas = np.asarray(aoas, dtype=np.float64)
    if aoas.size == 0:
        raise ValueError("empty aoa list")
    return lift_law(shape, mach).cl(aoas)


def drag_divergence_mach(tc, cl, kappa_a=KAPPA_A):
    return kappa_a - tc - cl / 10.0


def wave_drag(mach, ma_dd):
    return WAVE_COEF * max(0.0, mach - ma_dd) ** 4


def profile_drag(smoothness):
    # quadratic near zero so small, smooth perturbations cost little friction
    lo, hi = CD0_RANGE
    s2 = smoothness * smoothness
    return lo + (hi - lo) * s2 / (s2 + SMOOTHNESS_REF ** 2)


def trim(shape, mach, target_cl, tol=1e-10):
    """Angle of attack (deg) reaching ``target_cl`` on the rising lift branch."""
    law = lift_law(shape, mach)
    lo = AOA_TRIM_RANGE[0]
    hi = min(AOA_TRIM_RANGE[1], law.aoa_peak)
    cl_lo, cl_hi = float(law.cl(lo)), float(law.cl(hi))
    if not cl_lo <= target_cl <= cl_hi:
        raise TrimError(f"target cl {target_cl:.4f} outside reachable range "
                        f"[{cl_lo:.4f}, {cl_hi:.4f}] at mach {mach}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cm = float(law.cl(mid))
        if abs(cm - target_cl) <= tol:
            return mid
        if cm < target_cl:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def integrate_coefficients(cp, cf, aoa, geometry=None, x=geo.STATIONS):
    """Panel integration of (2, N) surface fields into (cl, cd, cm).

    Without ``geometry`` (yu, yl) the section is treated as a flat plate and
    pressure only contributes normal force.
    """
    cp = np.asarray(cp, dtype=np.float64)
    cf = np.asarray(cf, dtype=np.float64)
    n = len(x)
    if cp.shape != (2, n) or cf.shape != (2, n):
        raise ValueError(f"fields must have shape (2, {n}); got {cp.shape} and {cf.shape}")
    dx = np.diff(x)
    mid = lambda f: 0.5 * (f[1:] + f[:-1])  # noqa: E731
    xm = mid(x)
    load = mid(cp[1]) - mid(cp[0])
    cn = float(np.sum(load * dx))
    cm = float(-np.sum(load * (xm - 0.25) * dx))
    ca = float(np.sum((mid(cf[0]) + mid(cf[1])) * dx))
    if geometry is not None:
        yu, yl = geometry
        ca += float(np.sum(mid(cp[0]) * np.diff(yu)) - np.sum(mid(cp[1]) * np.diff(yl)))
    a = np.radians(aoa)
    return cn * np.cos(a) - ca * np.sin(a), cn * np.sin(a) + ca * np.cos(a), cm


def _base_fields(f, mach, cl, ma_dd, cd0):
    x = geo.STATIONS
    stag = np.exp(-x / 0.003)
    xs = float(np.clip(0.35 + 2.0 * (mach - ma_dd), 0.2, 0.8))
    strength = 0.05 + np.logaddexp(0.0, (0.25 + 3.0 * (mach - ma_dd) + 2.0 * f.camber) / 0.05) * 0.05
    h = 1.0 / (1.0 + np.exp(-SHOCK_STEEPNESS * (x - xs)))
    pre = -(0.7 + 0.3 * x)
    post = (-(0.7 + 0.3 * xs) + strength) * ((1.0 - x) / (1.0 - xs)) ** 0.7 \
        + 0.15 * np.clip((x - xs) / (1.0 - xs), 0.0, None)
    cp_u = stag + (1.0 - stag) * ((1.0 - h) * pre + h * post)
    cp_l = stag + (1.0 - stag) * (-0.05 + 0.25 * x)
    # friction carries the profile drag: integral of cf over both surfaces = cd0
    turb = (x + 0.02) ** -0.2 * (1.0 - stag)
    cf_u = turb * (1.0 - 0.5 * h * min(strength, 1.0))
    cf_l = turb
    mid = lambda a: 0.5 * (a[1:] + a[:-1])  # noqa: E731
    total = float(np.sum((mid(cf_u) + mid(cf_l)) * np.diff(x)))
    cf_u, cf_l = cf_u * (cd0 / total), cf_l * (cd0 / total)
    load_shape = np.sqrt(1.0 - x) * (1.0 - stag)
    suction = (1.0 - stag) * np.exp(-x / 0.03)
    return cp_u, cp_l, cf_u, cf_l, load_shape, suction


def _fields(f, mach, aoa, cl, cd, ma_dd, cd0):
    cp_u, cp_l, cf_u, cf_l, phi, psi = _base_fields(f, mach, cl, ma_dd, cd0)
    cf = np.vstack([cf_u, cf_l])
    geom = (f.yu, f.yl)
    a = np.radians(aoa)
    cn_t = cl * np.cos(a) + cd * np.sin(a)
    ca_t = -cl * np.sin(a) + cd * np.cos(a)

    def normal_axial(cp):
        # rotate a unit-aoa-free evaluation back to body axes
        l0, d0, _ = integrate_coefficients(cp, cf, 0.0, geom)
        return l0, d0

    base = np.vstack([cp_u, cp_l])
    n0, a0 = normal_axial(base)
    d_load = np.vstack([-0.5 * phi, 0.5 * phi])
    d_suc = np.vstack([psi, np.zeros_like(psi)])
    n1, a1 = normal_axial(base + d_load)
    n2, a2 = normal_axial(base + d_suc)
    m = np.array([[n1 - n0, n2 - n0], [a1 - a0, a2 - a0]])
    lam = np.linalg.solve(m, np.array([cn_t - n0, ca_t - a0]))
    cp = base + lam[0] * d_load + lam[1] * d_suc
    return cp, cf


def evaluate(shape, condition, noise=0.0, rng=None):
    """Ground-truth coefficients and surface fields for one condition.

    ``noise`` (drag counts) adds heteroscedastic observation noise to cd that
    grows beyond drag divergence; requires ``rng``.
    """
    f = features(shape)
    mach = condition.mach
    if condition.target_cl is not None:
        aoa = trim(shape, mach, condition.target_cl)
        cl = float(condition.target_cl)
    else:
        aoa = float(condition.aoa)
        cl = float(lift_law(shape, mach).cl(aoa))
    ma_dd = drag_divergence_mach(f.tc, cl)
    cd0 = profile_drag(f.smoothness)
    cd = cd0 + K_INDUCED * cl ** 2 + wave_drag(mach, ma_dd)
    cp, cf = _fields(f, mach, aoa, cl, cd, ma_dd, cd0)
    _, _, cm = integrate_coefficients(cp, cf, aoa, (f.yu, f.yl))
    if noise:
        if rng is None:
            raise ValueError("noise requires an rng")
        cd += 1e-4 * noise * (1.0 + 20.0 * max(0.0, mach - ma_dd)) * rng.standard_normal()
    cp.setflags(write=False)
    cf.setflags(write=False)
    return OracleResult(mach=mach, aoa=aoa, cl=cl, cd=float(cd), cm=cm, cp=cp, cf=cf)
