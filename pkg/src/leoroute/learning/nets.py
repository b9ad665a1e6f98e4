"""Small feed-forward Q-networks in numpy with hand-written backprop."""
from __future__ import annotations

from pathlib import Path

import numpy as np

FORMAT_TAG = "leoroute-qnet v1"


class MLP:
    """Dense ReLU network; ``dims=(26, 128, 128, 4)`` gives three weight layers, linear output."""

    def __init__(self, dims, seed=0, params=None):
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dims")
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
                bound = np.sqrt(6.0 / fan_in)
                params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                params.append(np.zeros(fan_out))
            # small output layer keeps early Q estimates near zero
            params[-2] *= 0.1
        self.params = [np.array(p, dtype=float) for p in params]

    @property
    def n_layers(self):
        return len(self.dims) - 1

    def flops(self) -> int:
        return int(sum(2 * a * b for a, b in zip(self.dims[:-1], self.dims[1:])))

    def copy(self) -> "MLP":
        return MLP(self.dims, params=[p.copy() for p in self.params])

    def load_from(self, other: "MLP"):
        for p, q in zip(self.params, other.params):
            p[...] = q

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def __call__(self, x):
        return self.forward(x)[0]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        acts = [x]
        h = x
        last = self.n_layers - 1
        for k in range(self.n_layers):
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            h = z if k == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. every parameter."""
        grads = [None] * len(self.params)
        g = grad_out
        for k in reversed(range(self.n_layers)):
            h_in = acts[k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k:
                g = (g @ self.params[2 * k].T) * (acts[k] > 0)
        return grads


def huber(x, delta=1.0):
    a = np.abs(x)
    return np.where(a <= delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def huber_grad(x, delta=1.0):
    return np.clip(x, -delta, delta)


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def save_mlp(net: MLP, path, seed=0, step=0, extra=None):
    """Text header (dims, seed, step, extras) then row-major values, one per line."""
    lines = [f"# {FORMAT_TAG}", "dims " + " ".join(map(str, net.dims)), f"seed {seed}", f"step {step}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k} {v}")
    lines.append("params")
    body = "\n".join(repr(float(x)) for x in net.flat())
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def load_mlp(path):
    """Returns (net, header dict)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != f"# {FORMAT_TAG}":
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    header = {}
    i = 1
    while text[i] != "params":
        key, _, val = text[i].partition(" ")
        header[key] = val
        i += 1
    dims = tuple(int(x) for x in header["dims"].split())
    values = np.array([float(x) for x in text[i + 1:]], dtype=float)
    net = MLP(dims, params=[np.zeros((a, b)) if k % 2 == 0 else np.zeros(b)
                            for a, b in zip(dims[:-1], dims[1:]) for k in (0, 1)])
    expected = sum(p.size for p in net.params)
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {values.size}")
    off = 0
    for p in net.params:
        p[...] = values[off:off + p.size].reshape(p.shape)
        off += p.size
    header["seed"] = int(header.get("seed", 0))
    header["step"] = int(header.get("step", 0))
    return net, header
