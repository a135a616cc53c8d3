"""Design sampling, oracle-labelled records, normalization, splits and files.

Two tasks share the record layout:

* ``drag``: off-design Mach numbers at the cruise lift coefficient; the model
  predicts cd from geometry, cruise fields and Mach.
* ``buffet``: off-design angles of attack at the cruise Mach number; the model
  predicts surface fields from geometry, cruise fields and the aoa offset.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import oracle

log = logging.getLogger(__name__)

FORMAT = "ua-dbo-dataset"
VERSION = 1
UPPER_BOUNDS = (0.05, 0.35)
LOWER_BOUNDS = (-0.35, 0.05)
CRUISE = {"drag": (0.73, 0.824), "buffet": (0.73, 0.75)}
MACH_RANGE = (0.65, 0.80)
AOA_RANGE = (-3.0, 5.0)
TASK_CHANNELS = {
    "drag": ("y", "cp", "cf", "mach", "cd"),
    "buffet": ("y", "cp", "cf", "daoa"),
}
SEQ_LEN = 2 * geo.N_STATIONS


def default_bounds():
    lo = np.array([UPPER_BOUNDS[0]] * geo.N_COEF + [LOWER_BOUNDS[0]] * geo.N_COEF)
    hi = np.array([UPPER_BOUNDS[1]] * geo.N_COEF + [LOWER_BOUNDS[1]] * geo.N_COEF)
    return lo, hi


def sample_designs(count, seed, bounds=None):
    """Latin hypercube over the 20 CST coefficients."""
    if count < 1:
        raise ValueError("count must be at least 1")
    lo, hi = default_bounds() if bounds is None else (np.asarray(b, dtype=np.float64) for b in bounds)
    if lo.shape != (2 * geo.N_COEF,) or hi.shape != lo.shape:
        raise ValueError(f"bounds must each have {2 * geo.N_COEF} entries")
    if np.any(hi <= lo):
        raise ValueError("degenerate coefficient bounds (upper <= lower)")
    rng = np.random.default_rng(seed)
    d = lo.size
    strata = np.stack([rng.permutation(count) for _ in range(d)], axis=1)
    u = (strata + rng.random((count, d))) / count
    return [geo.AirfoilShape.from_vector(lo + (hi - lo) * row) for row in u]


@dataclass(frozen=True, eq=False)
class FlowState:
    mach: float
    aoa: float
    cl: float
    cd: float
    cm: float
    cp: np.ndarray
    cf: np.ndarray

    @classmethod
    def from_result(cls, r):
        return cls(r.mach, r.aoa, r.cl, r.cd, r.cm, r.cp, r.cf)

    def to_dict(self):
        return {"mach": self.mach, "aoa": self.aoa, "cl": self.cl, "cd": self.cd, "cm": self.cm,
                "cp": self.cp.tolist(), "cf": self.cf.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mach"]), float(d["aoa"]), float(d["cl"]), float(d["cd"]), float(d["cm"]),
                   np.array(d["cp"], dtype=np.float64), np.array(d["cf"], dtype=np.float64))

    def __eq__(self, other):
        return (isinstance(other, FlowState)
                and (self.mach, self.aoa, self.cl, self.cd, self.cm)
                == (other.mach, other.aoa, other.cl, other.cd, other.cm)
                and np.array_equal(self.cp, other.cp) and np.array_equal(self.cf, other.cf))


@dataclass(frozen=True, eq=True)
class SampleRecord:
    airfoil_id: int
    shape: geo.AirfoilShape
    cruise: FlowState
    target: FlowState

    def to_dict(self):
        return {"airfoil_id": self.airfoil_id,
                "cst_upper": self.shape.upper.tolist(),
                "cst_lower": self.shape.lower.tolist(),
                "tc_max": self.shape.tc_max,
                "cruise": self.cruise.to_dict(),
                "target": self.target.to_dict()}

    @classmethod
    def from_dict(cls, d):
        shape = geo.AirfoilShape(d["cst_upper"], d["cst_lower"], d["tc_max"])
        return cls(int(d["airfoil_id"]), shape, FlowState.from_dict(d["cruise"]),
                   FlowState.from_dict(d["target"]))


def _airfoil_records(args):
    airfoil_id, shape, n_cond, task, seed, cruise, mach_range, aoa_range = args
    mach_c, cl_c = cruise
    try:
        prior = FlowState.from_result(oracle.evaluate(shape, oracle.OperatingCondition(mach_c, target_cl=cl_c)))
    except oracle.TrimError as exc:
        log.info("airfoil %d skipped: cruise trim failed (%s)", airfoil_id, exc)
        return []
    rng = np.random.default_rng([seed, airfoil_id])
    out = []
    for _ in range(n_cond):
        if task == "drag":
            cond = oracle.OperatingCondition(float(rng.uniform(*mach_range)), target_cl=cl_c)
        else:
            cond = oracle.OperatingCondition(mach_c, aoa=float(rng.uniform(*aoa_range)))
        try:
            r = oracle.evaluate(shape, cond)
        except oracle.TrimError as exc:
            log.info("airfoil %d condition skipped: %s", airfoil_id, exc)
            continue
        out.append(SampleRecord(airfoil_id, shape, prior, FlowState.from_result(r)))
    return out


def build_dataset(designs, machs_per_airfoil=10, mach_range=MACH_RANGE, seed=0, task="drag",
                  cruise=None, aoa_range=AOA_RANGE, jobs=1, id_offset=0):
    """Oracle-labelled records, one per (airfoil, off-design condition).

    ``machs_per_airfoil`` counts the off-design conditions per airfoil (angles
    of attack for the buffet task). Each airfoil draws from its own seeded
    substream, so results do not depend on ``jobs``.
    """
    if task not in TASK_CHANNELS:
        raise ValueError(f"unknown task {task!r}")
    cruise = CRUISE[task] if cruise is None else tuple(cruise)
    tasks = [(id_offset + i, s, machs_per_airfoil, task, seed, cruise, tuple(mach_range), tuple(aoa_range))
             for i, s in enumerate(designs)]
    if machs_per_airfoil <= 0:
        return []
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(_airfoil_records, tasks, chunksize=8))
    else:
        parts = [_airfoil_records(t) for t in tasks]
    return [r for p in parts for r in p]


# normalization ---------------------------------------------------------------

def wrap_surfaces(upper, lower):
    """(…, 101) upper and lower samples -> (…, 202): lower TE->LE, then upper LE->TE."""
    return np.concatenate([lower[..., ::-1], upper], axis=-1)


def unwrap_surfaces(seq):
    n = geo.N_STATIONS
    return seq[..., n:], seq[..., :n][..., ::-1]


@dataclass
class NormalizationStats:
    ranges: dict

    def _get(self, channel):
        try:
            return self.ranges[channel]
        except KeyError:
            raise KeyError(f"no normalization range for channel {channel!r}") from None

    def normalize(self, channel, values):
        lo, hi = self._get(channel)
        return 2.0 * (np.asarray(values, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def denormalize(self, channel, values):
        lo, hi = self._get(channel)
        return (np.asarray(values, dtype=np.float64) + 1.0) * 0.5 * (hi - lo) + lo

    def scale(self, channel):
        """Physical units per normalized unit."""
        lo, hi = self._get(channel)
        return 0.5 * (hi - lo)

    def to_dict(self):
        return {k: [float(v[0]), float(v[1])] for k, v in sorted(self.ranges.items())}

    @classmethod
    def from_dict(cls, d):
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def _channel_values(records, channel):
    if channel == "y":
        return np.concatenate([np.concatenate(geo.cst_evaluate(r.shape)) for r in records])
    if channel in ("cp", "cf"):
        return np.concatenate([np.ravel(getattr(s, channel)) for r in records for s in (r.cruise, r.target)])
    if channel == "daoa":
        return np.array([r.target.aoa - r.cruise.aoa for r in records])
    return np.array([getattr(r.target, channel) for r in records])


def compute_stats(records, task="drag"):
    if not records:
        raise ValueError("cannot compute normalization statistics of an empty record set")
    ranges = {}
    for ch in TASK_CHANNELS[task]:
        v = _channel_values(records, ch)
        lo, hi = float(v.min()), float(v.max())
        if not hi > lo:
            raise ValueError(f"channel {ch!r} is constant ({lo}); cannot normalize")
        ranges[ch] = (lo, hi)
    return NormalizationStats(ranges)


@dataclass
class ModelArrays:
    """Normalized network tensors for a record set.

    x: (N, 3, 202) geometry-y, cruise cp, cruise cf; cond: (N, 1);
    y: (N, 1) cd for the drag task or (N, 2, 202) target cp/cf fields;
    prior: (N, 2, 202) cruise cp/cf (residual-learning base).
    """
    x: np.ndarray
    cond: np.ndarray
    y: np.ndarray
    prior: np.ndarray
    airfoil_ids: np.ndarray
    task: str = "drag"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return ModelArrays(self.x[idx], self.cond[idx], self.y[idx], self.prior[idx],
                           self.airfoil_ids[idx], self.task, dict(self.meta))


def geometry_channel(shape, stats):
    yu, yl = geo.cst_evaluate(shape)
    return stats.normalize("y", wrap_surfaces(yu, yl))


def field_channels(state, stats):
    cp = stats.normalize("cp", wrap_surfaces(state.cp[0], state.cp[1]))
    cf = stats.normalize("cf", wrap_surfaces(state.cf[0], state.cf[1]))
    return np.stack([cp, cf])


def encoder_input(shape, cruise, stats):
    return np.concatenate([geometry_channel(shape, stats)[None], field_channels(cruise, stats)])


def to_arrays(records, stats, task="drag"):
    n = len(records)
    if n == 0:
        raise ValueError("empty record set")
    x = np.empty((n, 3, SEQ_LEN))
    prior = np.empty((n, 2, SEQ_LEN))
    geo_cache = {}
    for i, r in enumerate(records):
        if r.airfoil_id not in geo_cache:
            geo_cache[r.airfoil_id] = (geometry_channel(r.shape, stats), field_channels(r.cruise, stats))
        g, f = geo_cache[r.airfoil_id]
        x[i, 0], x[i, 1:] = g, f
        prior[i] = f
    if task == "drag":
        cond = stats.normalize("mach", [[r.target.mach] for r in records])
        y = stats.normalize("cd", [[r.target.cd] for r in records])
    else:
        cond = stats.normalize("daoa", [[r.target.aoa - r.cruise.aoa] for r in records])
        y = np.stack([field_channels(r.target, stats) for r in records])
    ids = np.array([r.airfoil_id for r in records], dtype=np.int64)
    return ModelArrays(x, cond, y, prior, ids, task)


def normalize(records, task="drag", stats=None):
    """(ModelArrays, stats); statistics come from ``records`` unless given."""
    stats = compute_stats(records, task) if stats is None else stats
    return to_arrays(records, stats, task), stats


def denormalize(values, stats, channel):
    return stats.denormalize(channel, values)


# splits ----------------------------------------------------------------------

def split(records, train_fraction=0.82, val_fraction=0.10, seed=0):
    """Partition by airfoil id into (train, val, test) record lists."""
    for name, f in (("train_fraction", train_fraction), ("val_fraction", val_fraction)):
        if not 0.0 < f < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {f}")
    ids = np.array(sorted({r.airfoil_id for r in records}))
    rng = np.random.default_rng(seed)
    ids = ids[rng.permutation(ids.size)]
    n_test = int(round(ids.size * (1.0 - train_fraction)))
    pool = ids[n_test:]
    n_val = int(round(pool.size * val_fraction))
    if n_test < 1 or n_val < 1 or pool.size - n_val < 1:
        raise ValueError(f"{ids.size} airfoils are too few for nonempty train/val/test splits")
    test_ids, val_ids = set(ids[:n_test].tolist()), set(pool[:n_val].tolist())
    train, val, test = [], [], []
    for r in records:
        (test if r.airfoil_id in test_ids else val if r.airfoil_id in val_ids else train).append(r)
    return train, val, test


def resplit_validation(records, val_fraction, seed):
    """Redraw the validation subset from a train pool (for cross-validation runs)."""
    ids = np.array(sorted({r.airfoil_id for r in records}))
    rng = np.random.default_rng(seed)
    ids = ids[rng.permutation(ids.size)]
    n_val = max(1, int(round(ids.size * val_fraction)))
    if ids.size - n_val < 1:
        raise ValueError("too few airfoils to hold out a validation subset")
    val_ids = set(ids[:n_val].tolist())
    return ([r for r in records if r.airfoil_id not in val_ids],
            [r for r in records if r.airfoil_id in val_ids])


# files -----------------------------------------------------------------------

def write_dataset(path, records, task="drag"):
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": FORMAT, "version": VERSION, "task": task}) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_dataset(path):
    """Returns (records, task)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT or header.get("version") != VERSION:
            raise ValueError(f"{path}: not a {FORMAT} v{VERSION} file")
        records = [SampleRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return records, header.get("task", "drag")


def write_stats(path, stats):
    with open(path, "w") as fh:
        json.dump(stats.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_stats(path):
    with open(path) as fh:
        return NormalizationStats.from_dict(json.load(fh))
