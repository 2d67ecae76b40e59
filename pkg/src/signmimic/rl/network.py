"""Dense feed-forward networks with hand-written backpropagation, and Adam."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericalError

ACTIVATIONS = ("relu", "tanh")


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


class MLP:
    """Fully connected network, activation on hidden layers, linear output."""

    def __init__(self, weights, biases, activation: str = "relu", name: str = "mlp"):
        if activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activation = activation
        self.name = name
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("weights and biases must be non-empty and of equal count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ContractError(f"{name} layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ContractError(f"{name} layer {i}: input size {w.shape[0]} != previous output "
                                    f"{self.weights[i - 1].shape[1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ContractError(f"{name} layer {i} has non-finite parameters")

    @classmethod
    def create(cls, sizes, rng: np.random.Generator, activation: str = "relu", final_scale: float = 1.0,
               name: str = "mlp") -> "MLP":
        sizes = [int(s) for s in sizes]
        hidden_gain = np.sqrt(2.0) if activation == "relu" else 1.0
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = final_scale if i == len(sizes) - 2 else hidden_gain
            weights.append(orthogonal(rng, n_in, n_out, gain))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, activation, name)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def layer_names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"{self.name}.{i}.weight", f"{self.name}.{i}.bias"]
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation, self.name)

    def forward(self, x):
        """Return the output and the cache needed by :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        """Gradients (same order as :meth:`parameters`) and the input gradient."""
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(dout, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                a = cache[i + 1]
                g = g * (a > 0.0) if self.activation == "relu" else g * (1.0 - a * a)
            x = cache[i]
            grads[2 * i] = x.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def check_finite(grads, names):
    for g, n in zip(grads, names):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in layer {n}")


class Adam:
    """Adaptive-moment optimizer updating a list of arrays in place."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
