"""Dense feed-forward network with manual backprop, Adam and neuron removal.

Layers carry no bias.  A hidden layer is ``x @ W -> [batch norm] -> relu``;
the output layer is a bare linear map whose outputs are softmax logits.
Parameters are addressed by dotted names (``layers.0.weights``,
``layers.0.bn.gamma`` ...) so gradients and Adam moments are plain dicts.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateNetworkError, InvalidSizeError, ShapeError
from .linalg import SeededRng

CHECKPOINT_VERSION = 1


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, width: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=np.ones(width),
            beta=np.zeros(width),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class DenseLayer:
    weights: np.ndarray  # fan_in x fan_out
    bn: BatchNormState | None = None
    activation: str = "relu"

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class Network:
    layers: list
    optimizer: AdamState = field(default_factory=AdamState)

    def __post_init__(self):
        for i in range(len(self.layers) - 1):
            if self.layers[i].fan_out != self.layers[i + 1].fan_in:
                raise ShapeError(
                    f"layer {i} fan_out {self.layers[i].fan_out} does not chain "
                    f"into layer {i + 1} fan_in {self.layers[i + 1].fan_in}"
                )

    def parameters(self) -> dict:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layers.{i}.weights"] = layer.weights
            if layer.bn is not None:
                params[f"layers.{i}.bn.gamma"] = layer.bn.gamma
                params[f"layers.{i}.bn.beta"] = layer.bn.beta
        return params

    @property
    def hidden_widths(self) -> list:
        return [layer.fan_out for layer in self.layers[:-1]]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def copy(self) -> "Network":
        return copy.deepcopy(self)


@dataclass
class ForwardCache:
    mode: str
    inputs: list  # per layer input
    pre: list  # x @ W
    xhat: list
    inv_std: list
    post: list  # after batch norm, before activation
    logits: np.ndarray


def xavier_init(fan_in: int, fan_out: int, rng: SeededRng) -> np.ndarray:
    """Uniform Glorot initialisation in ``[-sqrt(6/(fan_in+fan_out)), +...]``."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidSizeError(f"xavier_init: dimensions must be >= 1, got {fan_in}x{fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator.uniform(-bound, bound, size=(fan_in, fan_out))


def build_network(
    sizes,
    rng: SeededRng,
    use_batchnorm: bool = True,
    lr: float = 0.001,
    bn_momentum: float = 0.1,
    bn_eps: float = 1e-5,
) -> Network:
    """Network with layer widths ``sizes`` (input first, classes last)."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise InvalidSizeError("build_network: need at least input and output sizes")
    layers = []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        hidden = i < len(sizes) - 2
        layers.append(
            DenseLayer(
                weights=xavier_init(fi, fo, rng.child("init", i)),
                bn=BatchNormState.fresh(fo, bn_momentum, bn_eps) if hidden and use_batchnorm else None,
                activation="relu" if hidden else "none",
            )
        )
    return Network(layers, AdamState(lr=lr))


def forward(net: Network, batch, mode: str = "train"):
    """Run the network; returns ``(logits, cache)``.

    Train mode normalises with batch statistics and updates the running
    statistics (running variance uses the unbiased batch variance).  Eval
    mode uses the running statistics and leaves the network untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layers[0].fan_in:
        raise ShapeError(f"forward: batch shape {x.shape} does not match fan_in {net.layers[0].fan_in}")
    cache = ForwardCache(mode, [], [], [], [], [], None)
    for layer in net.layers:
        cache.inputs.append(x)
        z = x @ layer.weights
        cache.pre.append(z)
        bn = layer.bn
        if bn is None:
            xhat = inv_std = None
            a = z
        else:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                n = z.shape[0]
                unbiased = var * (n / (n - 1)) if n > 1 else var
                bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu
                bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * unbiased
            else:
                mu, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + bn.eps)
            xhat = (z - mu) * inv_std
            a = bn.gamma * xhat + bn.beta
        cache.xhat.append(xhat)
        cache.inv_std.append(inv_std)
        cache.post.append(a)
        x = np.maximum(a, 0.0) if layer.activation == "relu" else a
    cache.logits = x
    return x, cache


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n_rows} rows")
    if labels.size and (np.any(labels != np.round(labels)) or labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must be integers in [0, {n_classes - 1}]")
    return labels.astype(np.int64)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -float(log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def loss_and_grads(net: Network, cache: ForwardCache, labels):
    """Mean softmax cross-entropy and gradients for every parameter."""
    loss, d = softmax_cross_entropy(cache.logits, labels)
    grads = {}
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.activation == "relu":
            d = d * (cache.post[i] > 0)
        bn = layer.bn
        if bn is not None:
            xhat, inv_std = cache.xhat[i], cache.inv_std[i]
            grads[f"layers.{i}.bn.gamma"] = (d * xhat).sum(axis=0)
            grads[f"layers.{i}.bn.beta"] = d.sum(axis=0)
            dxhat = d * bn.gamma
            if cache.mode == "train":
                n = dxhat.shape[0]
                d = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                d = dxhat * inv_std
        grads[f"layers.{i}.weights"] = cache.inputs[i].T @ d
        if i > 0:
            d = d @ layer.weights.T
    return loss, grads


def adam_update(params: dict, grads: dict, state: AdamState) -> None:
    """In-place Adam step with bias correction over the named arrays."""
    for name in params:
        if name not in grads:
            raise ShapeError(f"adam: missing gradient for {name}")
        if np.shape(grads[name]) != params[name].shape:
            raise ShapeError(
                f"adam: gradient shape {np.shape(grads[name])} != parameter shape {params[name].shape} for {name}"
            )
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(net: Network, grads: dict) -> None:
    adam_update(net.parameters(), grads, net.optimizer)


def train_step(net: Network, images, labels) -> float:
    logits, cache = forward(net, images, "train")
    loss, grads = loss_and_grads(net, cache, labels)
    adam_step(net, grads)
    return loss


def remove_neurons(net: Network, layer_idx: int, keep) -> None:
    """Shrink hidden layer ``layer_idx`` to the neurons in ``keep``.

    Slices the layer's output columns, its batch-norm vectors, the next
    layer's input rows and the matching Adam moments.  Retained values are
    copied unchanged.
    """
    if not 0 <= layer_idx < len(net.layers) - 1:
        raise ShapeError(f"remove_neurons: {layer_idx} is not a hidden layer index")
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    if keep.size == 0:
        raise DegenerateNetworkError(f"remove_neurons: empty keep set for layer {layer_idx}")
    layer, nxt = net.layers[layer_idx], net.layers[layer_idx + 1]
    if keep[0] < 0 or keep[-1] >= layer.fan_out:
        raise ShapeError(f"remove_neurons: keep indices out of range [0, {layer.fan_out})")

    layer.weights = layer.weights[:, keep]
    nxt.weights = nxt.weights[keep, :]
    if layer.bn is not None:
        bn = layer.bn
        bn.gamma, bn.beta = bn.gamma[keep], bn.beta[keep]
        bn.running_mean, bn.running_var = bn.running_mean[keep], bn.running_var[keep]

    opt = net.optimizer
    slices = {
        f"layers.{layer_idx}.weights": (slice(None), keep),
        f"layers.{layer_idx}.bn.gamma": (keep,),
        f"layers.{layer_idx}.bn.beta": (keep,),
        f"layers.{layer_idx + 1}.weights": (keep, slice(None)),
    }
    for name, idx in slices.items():
        for moments in (opt.m, opt.v):
            if name in moments:
                moments[name] = moments[name][idx]


def predict(net: Network, images, chunk: int = 2000) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = [forward(net, images[i : i + chunk], "eval")[0].argmax(axis=1) for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, images, labels) -> float:
    """Eval-mode accuracy: fraction of rows whose argmax matches the label."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("evaluate: empty test set")
    return float(np.mean(predict(net, images) == labels))


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(net: Network, path, config_digest: str = "") -> None:
    """Write parameters, batch-norm stats and Adam state to an ``.npz`` file."""
    opt = net.optimizer
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_digest": config_digest,
        "layers": [
            {
                "activation": layer.activation,
                "bn": None if layer.bn is None else {"momentum": layer.bn.momentum, "eps": layer.bn.eps},
            }
            for layer in net.layers
        ],
        "adam": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step},
        "moments": sorted(opt.m),
    }
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays[f"layers.{i}.weights"] = layer.weights
        if layer.bn is not None:
            for attr in ("gamma", "beta", "running_mean", "running_var"):
                arrays[f"layers.{i}.bn.{attr}"] = getattr(layer.bn, attr)
    for name in opt.m:
        arrays[f"adam.m.{name}"] = opt.m[name]
        arrays[f"adam.v.{name}"] = opt.v[name]
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(network, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')}")
        layers = []
        for i, info in enumerate(meta["layers"]):
            bn = None
            if info["bn"] is not None:
                bn = BatchNormState(
                    *(data[f"layers.{i}.bn.{a}"] for a in ("gamma", "beta", "running_mean", "running_var")),
                    momentum=info["bn"]["momentum"],
                    eps=info["bn"]["eps"],
                )
            layers.append(DenseLayer(data[f"layers.{i}.weights"], bn, info["activation"]))
        opt = AdamState(**meta["adam"])
        for name in meta["moments"]:
            opt.m[name] = data[f"adam.m.{name}"]
            opt.v[name] = data[f"adam.v.{name}"]
    return Network(layers, opt), meta
