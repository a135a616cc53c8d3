"""Encoder-decoder surrogates: deterministic (ED), Gaussian stochastic (GS-ED)
and deep ensembles of ED members, with training and JSON checkpoints.

The encoder reads three wrapped surface channels (geometry y, cruise cp,
cruise cf) of length 202 through three conv/pool blocks and maps them to an
18-dimensional latent. The scalar decoder concatenates the operating
condition and predicts normalized cd. The field decoder predicts target cp
and cf with two U-Net style decoders and optional residual learning on the
cruise fields.
"""
import base64
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dataset as ds
from . import diffcore as dc
from .diffcore import tensor as T

log = logging.getLogger(__name__)

FORMAT = "ua-dbo-ckpt"
VERSION = 1
MODES = ("ed", "gsed", "ensemble")
DECODERS = ("scalar", "field")
DIVERGENCE_LOSS = 1e6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "gsed"
    beta: float = 1e-5
    n_l: int = 4
    ensemble_n: int = 3
    decoder: str = "scalar"
    residual: bool = True
    latent_dim: int = 18
    channels: tuple = (16, 32, 64)
    hidden: tuple = (128, 256, 128)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.n_l < 1:
            raise ValueError("n_l must be at least 1")
        if self.mode == "ensemble" and self.ensemble_n < 2:
            raise ValueError("an ensemble needs at least 2 members")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "hidden", tuple(self.hidden))

    @property
    def task(self):
        return "drag" if self.decoder == "scalar" else "buffet"

    def to_dict(self):
        d = asdict(self)
        d["channels"], d["hidden"] = list(self.channels), list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 30
    schedule: dc.LrSchedule = field(default_factory=dc.LrSchedule)


# topology --------------------------------------------------------------------

def _encoder_lengths(length=ds.SEQ_LEN):
    """Feature-map lengths after each encoder block."""
    out = []
    for _ in range(3):
        length = (length + 2 - 3) // 2 + 1  # conv k3 s2 p1
        length //= 2                        # avgpool 2
        out.append(length)
    return out


def build_topology(config):
    """Named layer chains; evaluation order is fixed by the model code."""
    c0 = 3
    chains = {}
    for i, c in enumerate(config.channels):
        chains[f"enc{i + 1}"] = [dc.conv1d(c0, c, 3, stride=2), dc.avgpool1d(2), dc.leakyrelu(0.2)]
        c0 = c
    lengths = _encoder_lengths()
    flat = config.channels[-1] * lengths[-1]
    chains["mu"] = [dc.flatten(), dc.dense(flat, config.latent_dim)]
    if config.mode == "gsed":
        chains["logvar"] = [dc.flatten(), dc.dense(flat, config.latent_dim)]
    n_in = config.latent_dim + 1
    if config.decoder == "scalar":
        layers = [dc.concat("c")]
        for h in config.hidden:
            layers += [dc.dense(n_in, h), dc.batchnorm1d(h), dc.leakyrelu(0.2)]
            n_in = h
        layers.append(dc.dense(n_in, 1))
        chains["dec"] = layers
    else:
        ch = config.channels
        for name in ("cp", "cf"):
            chains[f"{name}.fc"] = [dc.concat("c"), dc.dense(n_in, flat)]
            chains[f"{name}.b1"] = [dc.leakyrelu(0.2), dc.concat("s3"), dc.upsample1d(size=lengths[1]),
                                    dc.conv1d(2 * ch[2], ch[1]), dc.leakyrelu(0.2)]
            chains[f"{name}.b2"] = [dc.concat("s2"), dc.upsample1d(size=lengths[0]),
                                    dc.conv1d(2 * ch[1], ch[0]), dc.leakyrelu(0.2)]
            chains[f"{name}.b3"] = [dc.concat("s1"), dc.upsample1d(size=ds.SEQ_LEN),
                                    dc.conv1d(2 * ch[0], ch[0]), dc.leakyrelu(0.2),
                                    dc.conv1d(ch[0], 1)]
    return chains


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps (numpy arrays)."""
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(eps)


def kl_divergence(mu, logvar):
    """Per-instance KL(q || N(0, I)) summed over latent dimensions (numpy)."""
    mu, logvar = np.asarray(mu), np.asarray(logvar)
    return -0.5 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar), axis=-1)


class Surrogate:
    """One encoder-decoder network with its normalization and calibration."""

    def __init__(self, config, stats, seed=0, store=None):
        if config.mode == "ensemble":
            raise ValueError("use Ensemble for ensemble mode; members are ed networks")
        self.config = config
        self.stats = stats
        self.topology = build_topology(config)
        if store is None:
            store = dc.ParamStore()
            rng = np.random.default_rng(seed)
            for name, specs in self.topology.items():
                dc.init_params(specs, store, rng, prefix=f"{name}.")
        self.store = store
        self.calibration = default_calibration()
        self.metadata = {}

    @property
    def stochastic(self):
        return self.config.mode == "gsed"

    def parameter_count(self):
        return self.store.count()

    def _run(self, name, x, training, context=None):
        return dc.forward(self.topology[name], x, self.store, prefix=f"{name}.",
                          training=training, context=context)

    # network pieces ------------------------------------------------------
    def encode(self, x, training=False):
        """Returns (mu, logvar or None, skip feature maps) as Tensors."""
        x = T.as_tensor(x)
        if x.data.ndim != 3 or x.shape[1:] != (3, ds.SEQ_LEN):
            raise ValueError(f"encoder expects (N, 3, {ds.SEQ_LEN}) inputs, got {x.shape}")
        skips = []
        h = x
        for i in range(len(self.config.channels)):
            h = self._run(f"enc{i + 1}", h, training)
            skips.append(h)
        mu = self._run("mu", h, training)
        logvar = self._run("logvar", h, training) if self.stochastic else None
        return mu, logvar, skips

    def decode(self, z, cond, skips=None, prior=None, training=False):
        z, cond = T.as_tensor(z), T.as_tensor(cond)
        if z.data.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ValueError(f"latent must be (N, {self.config.latent_dim}), got {z.shape}")
        ctx = {"c": cond}
        if self.config.decoder == "scalar":
            return self._run("dec", z, training, ctx)
        if skips is None:
            raise ValueError("field decoder needs encoder skip feature maps")
        for i, s in enumerate(skips):
            ctx[f"s{i + 1}"] = T.as_tensor(s)
        outs = []
        c_last, l_last = self.config.channels[-1], _encoder_lengths()[-1]
        for name in ("cp", "cf"):
            h = self._run(f"{name}.fc", z, training, ctx)
            h = T.reshape(h, (h.shape[0], c_last, l_last))
            for b in ("b1", "b2", "b3"):
                h = self._run(f"{name}.{b}", h, training, ctx)
            outs.append(h)
        out = T.concat(outs, axis=1)
        if self.config.residual:
            if prior is None:
                raise ValueError("residual field decoder needs the cruise (prior) fields")
            out = T.add(out, T.as_tensor(prior))
        return out

    # numpy inference -----------------------------------------------------
    def latent(self, x):
        mu, logvar, skips = self.encode(x, training=False)
        return mu.data, None if logvar is None else logvar.data, [s.data for s in skips]

    def decode_numpy(self, z, cond, skips=None, prior=None):
        return self.decode(z, cond, skips, prior, training=False).data

    def predict(self, x, cond, prior=None):
        """Deterministic prediction at the latent mean (normalized units)."""
        mu, _, skips = self.latent(x)
        return self.decode_numpy(mu, cond, skips, prior)

    def checkpoint(self):
        return _network_dict(self) | {"format": FORMAT, "version": VERSION,
                                      "calibration": dict(self.calibration)}


def default_calibration():
    return {"kappa_l": 1.0, "kappa_u": 1.0, "alpha": None, "n": 0, "calibrated": False}


class Ensemble:
    """Deep ensemble of independently trained ED members."""

    def __init__(self, members, config=None):
        if len(members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        self.members = list(members)
        base = members[0].config
        self.config = config or replace(base, mode="ensemble")
        self.stats = members[0].stats
        self.calibration = default_calibration()
        self.metadata = {}

    stochastic = True

    def parameter_count(self):
        return sum(m.parameter_count() for m in self.members)

    def predict(self, x, cond, prior=None):
        return np.mean([m.predict(x, cond, prior) for m in self.members], axis=0)

    def checkpoint(self):
        return {"format": FORMAT, "version": VERSION, "config": self.config.to_dict(),
                "members": [_network_dict(m) for m in self.members],
                "calibration": dict(self.calibration), "metadata": dict(self.metadata)}


# loss and training -------------------------------------------------------

def _tile(a, n):
    return T.repeat_rows(T.as_tensor(a), n) if n > 1 else T.as_tensor(a)


def reconstruction(pred, y):
    """Per-row half squared error averaged over output elements, then rows."""
    diff = T.add(pred, T.neg(T.as_tensor(y)))
    per_elem = int(np.prod(pred.shape[1:]))
    return T.mul(T.tsum(T.square(diff)), 0.5 / (pred.shape[0] * per_elem))


def gsed_loss(model, x, cond, y, prior, eps, beta, training=True, batch_index=None):
    """Monte Carlo reconstruction over N_l draws plus beta-weighted KL.

    ``eps`` has shape (N_l, B, latent); draws are stacked block-major so the
    decoder sees one batch of N_l * B rows (one batch-norm statistics pass).
    ED models ignore ``eps`` and ``beta``.
    """
    mu, logvar, skips = model.encode(x, training)
    if logvar is None:
        pred = model.decode(mu, cond, skips, prior, training)
        loss = reconstruction(pred, y)
    else:
        n_l = eps.shape[0]
        mu_t, lv_t = _tile(mu, n_l), _tile(logvar, n_l)
        e = T.Tensor(eps.reshape(-1, eps.shape[-1]))
        z = T.add(mu_t, T.mul(T.exp(T.mul(lv_t, 0.5)), e))
        st = [_tile(s, n_l) for s in skips]
        pred = model.decode(z, _tile(cond, n_l), st, None if prior is None else _tile(prior, n_l), training)
        rec = reconstruction(pred, np.concatenate([y] * n_l, axis=0))
        kl_terms = T.add(T.add(T.add(T.mul(logvar, -1.0), T.square(mu)), T.exp(logvar)), -1.0)
        kl = T.mul(T.tsum(kl_terms), 0.5 / mu.shape[0])
        loss = T.add(rec, T.mul(kl, beta))
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss in batch {batch_index}")
    return loss


def _instance_eps(seed, tag, idx, n_l, dim):
    return np.stack([np.random.default_rng([seed, tag, int(i)]).standard_normal((n_l, dim))
                     for i in idx], axis=1)


def _batch(arr, idx):
    return arr.x[idx], arr.cond[idx], arr.y[idx], arr.prior[idx] if arr.task == "buffet" else None


def evaluate_loss(model, arr, seed, batch_size=256):
    """Validation-style loss in evaluation mode with fixed per-instance draws."""
    total, n = 0.0, len(arr)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        eps = _instance_eps(seed, 2 ** 31 - 1, idx, model.config.n_l, model.config.latent_dim)
        x, c, y, p = _batch(arr, idx)
        total += float(gsed_loss(model, x, c, y, p, eps, model.config.beta, training=False).data) * idx.size
    return total / n


def train(config, train_arr, val_arr, seed=0, stats=None, train_config=None):
    """Fit one ED or GS-ED network; returns the best-validation model."""
    if config.mode == "ensemble":
        raise ValueError("use ensemble_train for ensemble mode")
    if len(train_arr) == 0 or len(val_arr) == 0:
        raise ValueError("training and validation sets must be nonempty")
    tc = train_config or TrainConfig()
    model = Surrogate(config, stats, seed=seed)
    rng = np.random.default_rng([seed, 1])
    params = [t for t in model.store.params.values()]
    state = dc.AdamState.for_params([p.data for p in params])
    best, best_flat, best_epoch, stale = np.inf, model.store.flat(), -1, 0
    history = []
    n = len(train_arr)
    epoch = 0
    for epoch in range(tc.max_epochs):
        lr = dc.lr_at(tc.schedule, epoch)
        order = rng.permutation(n)
        batches = [order[i: i + tc.batch_size] for i in range(0, n, tc.batch_size)]
        if len(batches) > 1 and batches[-1].size < 2:
            batches[-2] = np.concatenate([batches[-2], batches.pop()])
        running = 0.0
        for b, idx in enumerate(batches):
            eps = _instance_eps(seed, epoch, idx, config.n_l, config.latent_dim)
            x, c, y, p = _batch(train_arr, idx)
            model.store.zero_grad()
            loss = gsed_loss(model, x, c, y, p, eps, config.beta, training=True, batch_index=b)
            value = float(loss.data)
            if value > DIVERGENCE_LOSS:
                raise TrainingError(f"training diverged at epoch {epoch}, batch {b}: loss {value:.3e}")
            loss.backward()
            grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in params]
            arrays = [t.data for t in params]
            dc.adam_step(arrays, grads, state, lr)
            running += value * idx.size
        val = evaluate_loss(model, val_arr, seed)
        history.append((running / n, val))
        if val < best:
            best, best_flat, best_epoch, stale = val, model.store.flat(), epoch, 0
        else:
            stale += 1
        log.debug("epoch %d lr %.2e train %.5f val %.5f", epoch, lr, running / n, val)
        if stale >= tc.patience:
            break
    model.store.load_flat(best_flat)
    model.metadata = {"mode": config.mode, "beta": config.beta, "n_l": config.n_l, "seed": int(seed),
                      "epochs": epoch + 1, "best_epoch": best_epoch, "val_loss": best,
                      "n_train": n, "n_val": len(val_arr),
                      "history": [[float(a), float(b)] for a, b in history]}
    return model


def ensemble_train(config, train_arr, val_arr, seed=0, stats=None, train_config=None):
    """n ED members on distinct 90% subsamples with distinct init seeds."""
    if config.ensemble_n < 2:
        raise ValueError("ensemble_n must be at least 2")
    member_cfg = replace(config, mode="ed")
    members, subsets = [], []
    n = len(train_arr)
    for k in range(config.ensemble_n):
        rng = np.random.default_rng([seed, 7, k])
        idx = np.sort(rng.choice(n, size=max(1, int(round(0.9 * n))), replace=False))
        subsets.append(idx)
        m = train(member_cfg, train_arr.subset(idx), val_arr, seed=int(rng.integers(2 ** 31)),
                  stats=stats, train_config=train_config)
        m.metadata["subsample_hash"] = hashlib.sha256(idx.tobytes()).hexdigest()[:16]
        members.append(m)
    ens = Ensemble(members, config)
    ens.metadata = {"mode": "ensemble", "n": config.ensemble_n, "seed": int(seed)}
    ens.subsets = subsets
    return ens


# checkpoints -------------------------------------------------------------

def _network_dict(m):
    flat = np.ascontiguousarray(m.store.flat(), dtype="<f8")
    return {"config": m.config.to_dict(),
            "topology": {k: [s.to_dict() for s in v] for k, v in m.topology.items()},
            "params": [[k, list(t.shape)] for k, t in m.store.params.items()],
            "buffers": [[k, list(b.shape)] for k, b in m.store.buffers.items()],
            "weights": base64.b64encode(flat.tobytes()).decode("ascii"),
            "stats": None if m.stats is None else m.stats.to_dict(),
            "metadata": dict(m.metadata)}


def _network_from_dict(d):
    config = ModelConfig.from_dict(d["config"])
    stats = None if d["stats"] is None else ds.NormalizationStats.from_dict(d["stats"])
    model = Surrogate(config, stats, seed=0)
    topo = {k: [dc.LayerSpec.from_dict(s) for s in v] for k, v in d["topology"].items()}
    if topo != model.topology:
        raise ValueError("checkpoint topology does not match its model configuration")
    names = [p[0] for p in d["params"]]
    if names != model.store.names():
        raise ValueError("checkpoint parameter layout does not match the topology")
    flat = np.frombuffer(base64.b64decode(d["weights"]), dtype="<f8").astype(np.float64)
    model.store.load_flat(flat)
    model.metadata = dict(d.get("metadata", {}))
    return model


def to_json(model):
    return json.dumps(model.checkpoint(), sort_keys=True, separators=(",", ":"))


def from_json(text):
    d = json.loads(text)
    if d.get("format") != FORMAT or d.get("version") != VERSION:
        raise ValueError(f"not a {FORMAT} v{VERSION} checkpoint")
    if "members" in d:
        model = Ensemble([_network_from_dict(m) for m in d["members"]], ModelConfig.from_dict(d["config"]))
        model.metadata = dict(d.get("metadata", {}))
    else:
        model = _network_from_dict(d)
    model.calibration = dict(d.get("calibration") or default_calibration())
    return model


def save(model, path):
    with open(path, "w") as fh:
        fh.write(to_json(model) + "\n")


def load(path):
    with open(path) as fh:
        return from_json(fh.read())


def weight_hash(model):
    return hashlib.sha256(model.store.flat().tobytes()).hexdigest()
