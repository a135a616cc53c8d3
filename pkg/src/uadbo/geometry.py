"""CST airfoil parameterization on a fixed cosine-clustered station grid."""
from dataclasses import dataclass
from math import comb

import numpy as np

N_COEF = 10
N_STATIONS = 101
CSV_HEADER = "# ua-dbo airfoil v1"


def station_grid(n=N_STATIONS):
    """Cosine-clustered chordwise stations, dense near both edges."""
    s = np.linspace(0.0, 1.0, n)
    x = 0.5 * (1.0 - np.cos(np.pi * s))
    x[0], x[-1] = 0.0, 1.0
    return x


STATIONS = station_grid()
STATIONS.setflags(write=False)


@dataclass(frozen=True, eq=False)
class AirfoilShape:
    upper: np.ndarray
    lower: np.ndarray
    tc_max: float = None

    def __post_init__(self):
        up = np.array(self.upper, dtype=np.float64).ravel()
        lo = np.array(self.lower, dtype=np.float64).ravel()
        if up.size != N_COEF or lo.size != N_COEF:
            raise ValueError(f"need {N_COEF} CST coefficients per surface, "
                             f"got {up.size} and {lo.size}")
        if self.tc_max is not None and not 0.0 < self.tc_max < 0.25:
            raise ValueError(f"tc_max must lie in (0, 0.25), got {self.tc_max}")
        up.setflags(write=False)
        lo.setflags(write=False)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "lower", lo)
        if self.tc_max is not None:
            object.__setattr__(self, "tc_max", float(self.tc_max))

    def vector(self):
        v = np.concatenate([self.upper, self.lower])
        if self.tc_max is not None:
            v = np.append(v, self.tc_max)
        return v

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        tc = float(v[2 * N_COEF]) if v.size > 2 * N_COEF else None
        return cls(v[:N_COEF], v[N_COEF: 2 * N_COEF], tc)

    def __eq__(self, other):
        return (isinstance(other, AirfoilShape) and self.tc_max == other.tc_max
                and np.array_equal(self.upper, other.upper)
                and np.array_equal(self.lower, other.lower))

    def __hash__(self):
        return hash((self.upper.tobytes(), self.lower.tobytes(), self.tc_max))

    def scaled(self, factor):
        return AirfoilShape(self.upper * factor, self.lower * factor, self.tc_max)


def bernstein(x, n=N_COEF - 1):
    x = np.asarray(x, dtype=np.float64)[:, None]
    i = np.arange(n + 1)[None, :]
    binom = np.array([comb(n, k) for k in range(n + 1)], dtype=np.float64)[None, :]
    return binom * x ** i * (1.0 - x) ** (n - i)


def cst_basis(x):
    """Columns are class function sqrt(x)(1-x) times each Bernstein term."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sqrt(x) * (1.0 - x))[:, None] * bernstein(x)


def cst_basis_derivative(x):
    """d/dx of :func:`cst_basis`; infinite at x=0 is replaced by 0 there."""
    x = np.asarray(x, dtype=np.float64)
    n = N_COEF - 1
    b = bernstein(x)
    bm = bernstein(x, n - 1)
    db = np.zeros_like(b)
    db[:, 1:] += n * bm
    db[:, :-1] -= n * bm
    with np.errstate(divide="ignore", invalid="ignore"):
        dc = np.where(x > 0, 0.5 / np.sqrt(np.where(x > 0, x, 1.0)) - 1.5 * np.sqrt(x), 0.0)
    c = np.sqrt(x) * (1.0 - x)
    return dc[:, None] * b + c[:, None] * db


def _raw(shape, x):
    basis = cst_basis(x)
    return basis @ shape.upper, basis @ shape.lower


def _thickness_scale(shape):
    if shape.tc_max is None:
        return 1.0
    yu, yl = _raw(shape, STATIONS)
    t = float(np.max(yu - yl))
    if t <= 0:
        raise ValueError("cannot rescale an airfoil with non-positive thickness")
    return shape.tc_max / t


def cst_evaluate(shape, x=STATIONS):
    """Upper and lower surface y (chord fractions) at stations ``x``."""
    yu, yl = _raw(shape, x)
    s = _thickness_scale(shape)
    return yu * s, yl * s


def cst_slopes(shape, x=STATIONS):
    d = cst_basis_derivative(x)
    s = _thickness_scale(shape)
    return d @ shape.upper * s, d @ shape.lower * s


def thickness_at(shape, x):
    yu, yl = cst_evaluate(shape, np.atleast_1d(float(x)))
    return float(yu[0] - yl[0])


def max_thickness(shape):
    yu, yl = cst_evaluate(shape)
    return float(np.max(yu - yl))


def section_area(shape):
    yu, yl = cst_evaluate(shape)
    return float(np.trapezoid(yu - yl, STATIONS))


def camber_line(shape, x=STATIONS):
    yu, yl = cst_evaluate(shape, x)
    return 0.5 * (yu + yl)


def smoothness(shape):
    """Sum of squared second differences of both coefficient sequences."""
    return float(np.sum(np.diff(shape.upper, 2) ** 2) + np.sum(np.diff(shape.lower, 2) ** 2))


def fit_cst(y, x=STATIONS):
    """Least-squares CST coefficients for surface ordinates ``y`` at ``x``.

    Returns (coefficients, residual RMS).
    """
    basis = cst_basis(x)
    coef, *_ = np.linalg.lstsq(basis, np.asarray(y, dtype=np.float64), rcond=None)
    rms = float(np.sqrt(np.mean((basis @ coef - y) ** 2)))
    return coef, rms


def hicks_henne(x, center, width):
    """Unit bump sin(pi x^m)^t peaking at ``center``; larger width is broader."""
    m = np.log(0.5) / np.log(center)
    return np.sin(np.pi * np.asarray(x) ** m) ** (1.0 / width)


def perturb_and_refit(baseline, bump_count=4, amplitude=0.002, seed=None, rng=None,
                      max_rms=5e-3, max_tries=200):
    """Add random Hicks-Henne bumps to both surfaces and refit onto CST.

    Samples whose refit RMS exceeds ``max_rms`` (chord fractions) are redrawn.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    rng = np.random.default_rng(seed) if rng is None else rng
    # bumps perturb the unscaled coordinates; tc_max (if any) is kept as is
    raw = AirfoilShape(baseline.upper, baseline.lower)
    yu0, yl0 = cst_evaluate(raw)
    for _ in range(max_tries):
        surfaces = []
        ok = True
        for y0 in (yu0, yl0):
            centers = rng.uniform(0.05, 0.95, bump_count)
            widths = rng.uniform(0.3, 1.0, bump_count)
            amps = rng.uniform(-amplitude, amplitude, bump_count)
            y = y0.copy()
            for c, w, a in zip(centers, widths, amps):
                y += a * hicks_henne(STATIONS, c, w)
            coef, rms = fit_cst(y)
            if rms > max_rms:
                ok = False
                break
            surfaces.append(coef)
        if ok:
            return AirfoilShape(surfaces[0], surfaces[1], baseline.tc_max)
    raise RuntimeError(f"no bump perturbation refit within {max_rms} RMS after {max_tries} tries")


def write_airfoil_csv(shape, path):
    yu, yl = cst_evaluate(shape)
    lines = [CSV_HEADER]
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in zip(STATIONS, yu)]
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in zip(STATIONS, yl)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_airfoil_csv(path):
    """Returns (x, y_upper, y_lower) as written by :func:`write_airfoil_csv`."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: not an airfoil file (header {header!r})")
        data = np.loadtxt(fh, delimiter=",")
    n = data.shape[0] // 2
    return data[:n, 0], data[:n, 1], data[n:, 1]


# supercritical-like section, t/c about 0.10; the alternating high-order
# weights mimic a least-squares CST fit of measured coordinates
BASELINE_COEFFS = {
    "upper": [0.16, 0.09, 0.19, 0.10, 0.21, 0.12, 0.23, 0.14, 0.24, 0.14],
    "lower": [-0.15, -0.09, -0.17, -0.09, -0.15, -0.03, -0.05, 0.05, 0.0, 0.05],
}


def baseline_airfoil(tc_max=None):
    """Reference section used by the optimization problems.

    ``tc_max`` rescales it in y, like the thickness variants of the benchmark.
    """
    base = AirfoilShape(BASELINE_COEFFS["upper"], BASELINE_COEFFS["lower"])
    if tc_max is None:
        return base
    return base.scaled(tc_max / max_thickness(base))
