"""Small fully connected networks in numpy with hand-written backprop."""

from __future__ import annotations

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    # log(1 + exp(x)) without overflow
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_layers(sizes: list[int], rng: np.random.Generator, out_scale: float = 1.0):
    """He-uniform weights ``(out, in)`` and zero biases; last layer scaled."""
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == len(sizes) - 2:
            w *= out_scale
        layers.append([w, np.zeros(fan_out)])
    return layers


def mlp_forward(layers, x):
    """Forward pass over a batch ``x`` of shape (B, in).

    Hidden layers use ReLU; the last layer is linear. Returns the output and
    the list of (pre-activation, input) pairs needed by :func:`mlp_backward`.
    """
    cache = []
    a = x
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        cache.append((a, z))
        a = relu(z) if i < len(layers) - 1 else z
    return a, cache


def mlp_backward(layers, cache, dout):
    """Gradients of ``sum(dout * output)`` with respect to every layer."""
    grads = [None] * len(layers)
    d = dout
    for i in range(len(layers) - 1, -1, -1):
        a, z = cache[i]
        if i < len(layers) - 1:
            d = d * (z > 0)
        w, _ = layers[i]
        grads[i] = [d.T @ a, d.sum(axis=0)]
        d = d @ w
    return grads


def flatten(layers) -> np.ndarray:
    return np.concatenate([p.ravel() for layer in layers for p in layer])


def unflatten_into(layers, vec: np.ndarray) -> None:
    pos = 0
    for layer in layers:
        for p in layer:
            k = p.size
            p[...] = vec[pos:pos + k].reshape(p.shape)
            pos += k
    if pos != len(vec):
        raise ValueError(f"parameter vector has {len(vec)} entries, expected {pos}")


class Adam:
    """Adam over a nested list of parameter arrays, updated in place."""

    def __init__(self, layers, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.layers = layers
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.v = [[np.zeros_like(p) for p in layer] for layer in layers]
        self.t = 0

    def step(self, grads, ascent: bool = False):
        self.t += 1
        sign = 1.0 if ascent else -1.0
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for layer, glayer, mlayer, vlayer in zip(self.layers, grads, self.m, self.v):
            for p, g, m, v in zip(layer, glayer, mlayer, vlayer):
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    """Plain gradient steps with the same interface as :class:`Adam`."""

    def __init__(self, layers, lr=1e-2):
        self.layers = layers
        self.lr = lr

    def step(self, grads, ascent: bool = False):
        sign = 1.0 if ascent else -1.0
        for layer, glayer in zip(self.layers, grads):
            for p, g in zip(layer, glayer):
                p += sign * self.lr * g


def format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_layers(fh, header: list, layers) -> None:
    fh.write(" ".join(str(h) for h in header) + "\n")
    for layer in layers:
        for p in layer:
            fh.write(format_floats(p.ravel()) + "\n")


def read_layers(lines: list[str], shapes: list[tuple]) -> list:
    """Read parameter rows written by :func:`write_layers` (header removed)."""
    flat = [np.array([float(x) for x in ln.split()], dtype=float) for ln in lines if ln.strip()]
    if len(flat) != len(shapes):
        raise ValueError(f"expected {len(shapes)} parameter rows, found {len(flat)}")
    arrs = []
    for vec, shape in zip(flat, shapes):
        if vec.size != int(np.prod(shape)):
            raise ValueError(f"parameter row has {vec.size} values, expected shape {shape}")
        arrs.append(vec.reshape(shape))
    return [arrs[i:i + 2] for i in range(0, len(arrs), 2)]
