"""Layer specifications, parameter stores, and chained forward evaluation."""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

KINDS = ("dense", "conv1d", "avgpool1d", "interp-upsample1d", "batchnorm1d",
         "leakyrelu", "concat", "flatten")

_REQUIRED = {
    "dense": ("in_features", "out_features"),
    "conv1d": ("in_channels", "out_channels"),
    "avgpool1d": ("factor",),
    "interp-upsample1d": (),
    "batchnorm1d": ("num_features",),
    "leakyrelu": (),
    "concat": ("source",),
    "flatten": (),
}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind} layer missing hyperparameters {missing}")
        p = self.params
        if self.kind == "conv1d":
            k = p.get("kernel_size", 3)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"conv1d kernel_size must be odd, got {k}")
            if p.get("stride", 1) < 1:
                raise ValueError("conv1d stride must be >= 1")
        if self.kind == "avgpool1d" and p["factor"] < 1:
            raise ValueError("avgpool1d factor must be >= 1")
        if self.kind == "interp-upsample1d" and not ("factor" in p or "size" in p):
            raise ValueError("interp-upsample1d needs 'factor' or 'size'")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d["params"]))


def dense(n_in, n_out):
    return LayerSpec("dense", {"in_features": n_in, "out_features": n_out})


def conv1d(c_in, c_out, kernel_size=3, stride=1, padding=None):
    if padding is None:
        padding = kernel_size // 2
    return LayerSpec("conv1d", {"in_channels": c_in, "out_channels": c_out,
                                "kernel_size": kernel_size, "stride": stride,
                                "padding": padding})


def avgpool1d(factor):
    return LayerSpec("avgpool1d", {"factor": factor})


def upsample1d(factor=None, size=None):
    p = {}
    if factor is not None:
        p["factor"] = factor
    if size is not None:
        p["size"] = size
    return LayerSpec("interp-upsample1d", p)


def batchnorm1d(n):
    return LayerSpec("batchnorm1d", {"num_features": n})


def leakyrelu(slope=0.2):
    return LayerSpec("leakyrelu", {"slope": slope})


def concat(source, axis=1):
    return LayerSpec("concat", {"source": source, "axis": axis})


def flatten():
    return LayerSpec("flatten", {})


class ParamStore:
    """Named trainable tensors plus non-trainable buffers (batch-norm stats)."""

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True)

    def names(self):
        return list(self.params)

    def arrays(self):
        return [t.data for t in self.params.values()]

    def grads(self):
        return [np.zeros_like(t.data) if t.grad is None else t.grad
                for t in self.params.values()]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def count(self):
        return int(sum(t.data.size for t in self.params.values()))

    def flat(self):
        parts = [t.data.ravel() for t in self.params.values()]
        parts += [b.ravel() for b in self.buffers.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        expected = self.count() + sum(b.size for b in self.buffers.values())
        if vec.size != expected:
            raise ValueError(f"weight count {vec.size} does not match topology ({expected})")
        i = 0
        for t in self.params.values():
            n = t.data.size
            t.data = vec[i: i + n].reshape(t.data.shape).copy()
            i += n
        for name, b in self.buffers.items():
            n = b.size
            self.buffers[name] = vec[i: i + n].reshape(b.shape).copy()
            i += n

    def copy(self):
        other = ParamStore()
        for name, t in self.params.items():
            other.params[name] = Tensor(t.data.copy(), requires_grad=True)
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other


def init_params(specs, store, rng, prefix=""):
    """Kaiming-uniform weights scaled by fan-in; batch norm starts at identity."""
    for i, spec in enumerate(specs):
        p = spec.params
        key = f"{prefix}{i}"
        if spec.kind == "dense":
            fan_in = p["in_features"]
            bound = np.sqrt(6.0 / ((1 + 0.2 ** 2) * fan_in))
            store.add(f"{key}.weight", rng.uniform(-bound, bound, (fan_in, p["out_features"])))
            store.add(f"{key}.bias", rng.uniform(-1, 1, p["out_features"]) / np.sqrt(fan_in))
        elif spec.kind == "conv1d":
            k = p.get("kernel_size", 3)
            fan_in = p["in_channels"] * k
            bound = np.sqrt(6.0 / ((1 + 0.2 ** 2) * fan_in))
            store.add(f"{key}.weight",
                      rng.uniform(-bound, bound, (p["out_channels"], p["in_channels"], k)))
            store.add(f"{key}.bias", rng.uniform(-1, 1, p["out_channels"]) / np.sqrt(fan_in))
        elif spec.kind == "batchnorm1d":
            n = p["num_features"]
            store.add(f"{key}.weight", np.ones(n))
            store.add(f"{key}.bias", np.zeros(n))
            store.buffers[f"{key}.running_mean"] = np.zeros(n)
            store.buffers[f"{key}.running_var"] = np.ones(n)


def param_count(specs):
    total = 0
    for spec in specs:
        p = spec.params
        if spec.kind == "dense":
            total += (p["in_features"] + 1) * p["out_features"]
        elif spec.kind == "conv1d":
            total += (p["in_channels"] * p.get("kernel_size", 3) + 1) * p["out_channels"]
        elif spec.kind == "batchnorm1d":
            total += 2 * p["num_features"]
    return total


def forward(specs, x, params, prefix="", training=False, context=None):
    """Apply a chain of layers; ``context`` supplies named tensors for concat."""
    x = T.as_tensor(x)
    for i, spec in enumerate(specs):
        try:
            x = _apply(spec, x, params, f"{prefix}{i}", training, context)
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ShapeError):
                raise
            raise ShapeError(f"layer {i} ({spec.kind}, prefix {prefix!r}): {exc}") from exc
    return x


def _apply(spec, x, params, key, training, context):
    p = spec.params
    kind = spec.kind
    if kind == "dense":
        if x.data.ndim != 2 or x.shape[1] != p["in_features"]:
            raise ValueError(f"expected (N, {p['in_features']}), got {x.shape}")
        return T.linear(x, params[f"{key}.weight"], params[f"{key}.bias"])
    if kind == "conv1d":
        if x.data.ndim != 3 or x.shape[1] != p["in_channels"]:
            raise ValueError(f"expected (N, {p['in_channels']}, L), got {x.shape}")
        return T.conv1d(x, params[f"{key}.weight"], params[f"{key}.bias"],
                        stride=p.get("stride", 1),
                        padding=p.get("padding", p.get("kernel_size", 3) // 2))
    if kind == "avgpool1d":
        if x.data.ndim != 3:
            raise ValueError(f"expected (N, C, L), got {x.shape}")
        return T.avgpool1d(x, p["factor"])
    if kind == "interp-upsample1d":
        if x.data.ndim != 3:
            raise ValueError(f"expected (N, C, L), got {x.shape}")
        size = p.get("size") or x.shape[2] * p["factor"]
        return T.interp_upsample1d(x, size)
    if kind == "batchnorm1d":
        if x.shape[1] != p["num_features"]:
            raise ValueError(f"expected {p['num_features']} channels, got {x.shape}")
        return T.batchnorm(x, params[f"{key}.weight"], params[f"{key}.bias"],
                           params.buffers[f"{key}.running_mean"],
                           params.buffers[f"{key}.running_var"], training)
    if kind == "leakyrelu":
        return T.leaky_relu(x, p.get("slope", 0.2))
    if kind == "concat":
        if context is None or p["source"] not in context:
            raise ValueError(f"concat source {p['source']!r} not provided")
        return T.concat([x, context[p["source"]]], axis=p.get("axis", 1))
    if kind == "flatten":
        return T.reshape(x, (x.shape[0], -1))
    raise ValueError(kind)
