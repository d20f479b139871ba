"""Small dense-network toolkit: feed-forward nets with exact backprop, Adam, gradient checks.

Everything runs in float64. Networks operate on batches of row vectors; a 1-D
input is treated as a batch of one and the output is squeezed back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    """log(sigmoid(x)) = -softplus(-x)."""
    x = np.asarray(x, dtype=np.float64)
    return -(np.logaddexp(0.0, -x))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_inplace(name, z):
    # variant for forward passes that do not need the pre-activation afterwards
    if name == "tanh":
        return np.tanh(z, out=z)
    if name == "relu":
        return np.maximum(z, 0.0, out=z)
    return z


def _act_grad(name, z, a, upstream):
    if name == "tanh":
        d = np.multiply(a, a)
        np.subtract(1.0, d, out=d)
        return np.multiply(d, upstream, out=d)
    if name == "relu":
        return np.where(z > 0.0, upstream, 0.0)
    return upstream


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    preacts: list
    outputs: list
    squeeze: bool


class FeedForwardNet:
    """Multilayer perceptron with per-layer activation.

    ``forward`` stores its intermediate values on the instance so a following
    ``backward`` call can reuse them. When the same network is evaluated
    several times before backprop (two label branches, two latents, ...) use
    ``forward_cached`` / ``backward(..., cache=...)`` instead.
    """

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ValueError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if k and layers[k - 1].out_dim != layer.in_dim:
                raise ValueError(
                    f"layer {k}: input dim {layer.in_dim} does not chain with previous output "
                    f"{layers[k - 1].out_dim}"
                )
        self.layers = list(layers)
        self._cache: ForwardCache | None = None

    @classmethod
    def build(cls, sizes: Sequence[int], activation="tanh", out_activation="identity", rng=None):
        """Glorot-uniform initialised net with layer widths ``sizes`` (input first)."""
        rng = np.random.default_rng(rng)
        layers = []
        n = len(sizes) - 1
        for k in range(n):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
            act = activation if k < n - 1 else out_activation
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        inputs, preacts, outputs = [], [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weight.T
            z += layer.bias
            h = _act(layer.activation, z)
            preacts.append(z)
            outputs.append(h)
        cache = ForwardCache(inputs, preacts, outputs, squeeze)
        return (h[0] if squeeze else h), cache

    def forward(self, x):
        y, self._cache = self.forward_cached(x)
        return y

    __call__ = forward

    def predict(self, x):
        """Forward pass without touching the stored cache."""
        x = np.asarray(x, dtype=np.float64)
        h = x[None, :] if x.ndim == 1 else x
        if h.shape[-1] != self.input_dim:
            raise ValueError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        for layer in self.layers:
            z = h @ layer.weight.T
            z += layer.bias
            h = _act_inplace(layer.activation, z)
        return h[0] if x.ndim == 1 else h

    def backward(self, upstream, cache: ForwardCache | None = None, input_grad=True):
        """Reverse-mode gradient of sum(upstream * output).

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :meth:`params`; the input gradient is None when ``input_grad`` is false.
        """
        cache = cache if cache is not None else self._cache
        if cache is None:
            raise RuntimeError("backward called before forward")
        g = np.asarray(upstream, dtype=np.float64)
        if cache.squeeze and g.ndim == 1:
            g = g[None, :]
        if g.shape != cache.outputs[-1].shape:
            raise ValueError(f"upstream shape {g.shape} != output shape {cache.outputs[-1].shape}")
        grads: list[np.ndarray] = []
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            g = _act_grad(layer.activation, cache.preacts[k], cache.outputs[k], g)
            grads.append(g.sum(axis=0))
            grads.append(g.T @ cache.inputs[k])
            if k or input_grad:
                g = g @ layer.weight
        grads.reverse()  # now [W0, b0, W1, b1, ...]
        if not input_grad:
            return grads, None
        return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    step: int
    m: list
    v: list
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list, grads: list, state: AdamState) -> list:
    """Bias-corrected Adam update, applied in place. Returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state have different lengths")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Thin holder binding a parameter list to an :class:`AdamState`."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState.zeros_like(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads):
        adam_step(self.params, grads, self.state)


def clip_grad_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


@dataclass
class GradCheckReport:
    max_rel_error: float
    errors: list = field(default_factory=list)  # per parameter array: max relative error
    tolerance: float = 1e-4
    checked: int = 0
    refined: int = 0  # entries that needed a smaller step

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    params: list,
    loss_fn: Callable[[], tuple],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    rng=None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return ``(loss, grads)`` for the current values of
    ``params`` (which are perturbed in place and restored). With
    ``max_entries`` set, a random subset of that many entries per parameter
    array is checked. Entries whose gradients are both below ``floor`` are
    compared in absolute terms, since central differences carry round-off of
    order 1e-11 at the default step.
    """
    rng = np.random.default_rng(rng)
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    errors = []
    checked = refined = 0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for j in idx:
            old = flat[j]
            # a relu kink inside [-step, step] spoils the difference; a real gradient error
            # persists as the step shrinks, a kink crossing does not
            err = np.inf
            for step in (h, h / 10.0, h / 100.0):
                flat[j] = old + step
                lp = loss_fn()[0]
                flat[j] = old - step
                lm = loss_fn()[0]
                flat[j] = old
                num = (lp - lm) / (2.0 * step)
                err = min(err, float(relative_error(g.reshape(-1)[j], num, floor)))
                if err < tolerance:
                    break
                refined += 1
            worst = max(worst, err)
            checked += 1
        errors.append(worst)
    return GradCheckReport(max(errors) if errors else 0.0, errors, tolerance, checked, refined)


def net_to_dict(net: FeedForwardNet) -> dict:
    return {
        "layers": [
            {
                "shape": list(l.weight.shape),
                "activation": l.activation,
                "weight": l.weight.reshape(-1).tolist(),
                "bias": l.bias.tolist(),
            }
            for l in net.layers
        ]
    }


def net_from_dict(d: dict) -> FeedForwardNet:
    layers = []
    for k, rec in enumerate(d["layers"]):
        shape = tuple(rec["shape"])
        w = np.asarray(rec["weight"], dtype=np.float64)
        if w.size != shape[0] * shape[1]:
            raise ValueError(f"layer {k}: {w.size} weights do not match shape {shape}")
        b = np.asarray(rec["bias"], dtype=np.float64)
        layers.append(Layer(w.reshape(shape), b, rec["activation"]))
    return FeedForwardNet(layers)
