"""Fixed-shape multilayer perceptrons with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row
vectors goes through ``x @ W + b``. Everything is float64.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("an MLP needs input, at least one hidden layer and output")
        if min(sizes) < 1:
            raise ValueError(f"layer widths must be >= 1, got {sizes}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {ACTIVATIONS}")
        if self.output_activation != "linear":
            raise ValueError("only a linear output layer is supported")

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class MlpNet:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params()]
            self.v = [np.zeros_like(p) for p in self.params()]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpNet":
        return MlpNet(
            self.spec,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            [a.copy() for a in self.m],
            [a.copy() for a in self.v],
            self.step,
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.params() + self.m + self.v)


def init_weights(spec: MlpSpec, seed) -> MlpNet:
    """Weights uniform in +-sqrt(1/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNet(spec, weights, biases)


def forward(net: MlpNet, x):
    """Returns ``(output, cache)``; accepts one vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.spec.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != {net.spec.layer_sizes[0]}")
    acts = [x]
    h = x
    last = len(net.weights) - 1
    tanh = net.spec.hidden_activation == "tanh"
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W
        h += b
        if i < last:
            if tanh:
                np.tanh(h, out=h)
            else:
                np.maximum(h, 0.0, out=h)
        acts.append(h)
    out = h[0] if single else h
    return out, (single, acts)


def backward(net: MlpNet, cache, output_grad, param_grads: bool = True):
    """Gradients of ``sum(output_grad * output)``.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` laid out like
    :meth:`MlpNet.params`. With ``param_grads=False`` only the input
    gradient is computed and the first element is ``None``.
    """
    single, acts = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != acts[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {acts[-1].shape}")
    grads = [None] * (2 * len(net.weights))
    tanh = net.spec.hidden_activation == "tanh"
    for i in range(len(net.weights) - 1, -1, -1):
        if param_grads:
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            h = acts[i]
            g = g * (1.0 - h * h) if tanh else g * (h > 0.0)
    return (grads if param_grads else None), (g[0] if single else g)


def adam_step(net: MlpNet, grads, config: AdamConfig = AdamConfig()) -> MlpNet:
    """In-place bias-corrected Adam update; returns ``net``."""
    params = net.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient passed to adam_step")
    net.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** net.step
    bc2 = 1.0 - b2 ** net.step
    for p, g, m, v in zip(params, grads, net.m, net.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
    return net


def polyak_update(target: MlpNet, source: MlpNet, tau: float) -> None:
    for t, s in zip(target.params(), source.params()):
        t *= 1.0 - tau
        t += tau * s


# -- checkpoints ---------------------------------------------------------

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def write_archive(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Zip of ``.npy`` members plus ``meta.json`` with fixed timestamps.

    Identical inputs give identical bytes, and ``numpy.load`` can read it.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_FIXED_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_FIXED_DATE), buf.getvalue())


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return meta, arrays


def net_to_arrays(net: MlpNet, prefix: str) -> tuple[dict, dict[str, np.ndarray]]:
    arrays = {}
    for kind, group in (("p", net.params()), ("m", net.m), ("v", net.v)):
        for i, a in enumerate(group):
            arrays[f"{prefix}/{kind}{i}"] = a
    return {"spec": net.spec.to_dict(), "step": net.step}, arrays


def net_from_arrays(meta: dict, arrays: dict, prefix: str) -> MlpNet:
    spec = MlpSpec(tuple(meta["spec"]["layer_sizes"]), meta["spec"]["hidden_activation"], meta["spec"]["output_activation"])
    n = 2 * (len(spec.layer_sizes) - 1)
    try:
        p = [arrays[f"{prefix}/p{i}"] for i in range(n)]
        m = [arrays[f"{prefix}/m{i}"] for i in range(n)]
        v = [arrays[f"{prefix}/v{i}"] for i in range(n)]
    except KeyError as exc:
        raise ValueError(f"checkpoint is missing array {exc} for network {prefix!r}") from None
    net = MlpNet(spec, p[0::2], p[1::2], m, v, int(meta["step"]))
    for (fan_in, fan_out), W, b in zip(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]), net.weights, net.biases):
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ValueError(f"network {prefix!r}: parameter shapes do not match {spec.layer_sizes}")
    return net


def save_net(net: MlpNet, path) -> None:
    meta, arrays = net_to_arrays(net, "net")
    write_archive(path, {"version": CHECKPOINT_VERSION, "kind": "mlp", "net": meta}, arrays)


def load_net(path) -> MlpNet:
    meta, arrays = read_archive(path)
    if meta.get("version") != CHECKPOINT_VERSION or meta.get("kind") != "mlp":
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} MLP checkpoint")
    return net_from_arrays(meta["net"], arrays, "net")
