"""Small dense networks with hand-written reverse-mode gradients.

Hidden layers use tanh (smooth everywhere, so analytic gradients can be
checked against central finite differences to tight tolerances); the output
layer is linear. Parameters live in plain numpy arrays; ``flat``/``set_flat``
expose them as one vector for gradient checks and checkpointing.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np


class Mlp:
    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng or np.random.default_rng(0)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray):
        """Batched forward pass; returns (output, cache for backward)."""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        activations = [a]
        for i in range(self.n_layers):
            z = a @ self.weights[i].T + self.biases[i]
            a = np.tanh(z) if i < self.n_layers - 1 else z
            activations.append(a)
        return activations[-1], activations

    def backward(self, cache: List[np.ndarray], grad_out: np.ndarray):
        """Backpropagate grad_out; returns (param grads, input grad).

        param grads come as a list of (dW, db) matching layer order.
        """
        grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        for i in range(self.n_layers - 1, -1, -1):
            a_prev = cache[i]
            if i < self.n_layers - 1:
                # cache[i+1] holds tanh(z); d tanh = 1 - tanh^2
                g = g * (1.0 - cache[i + 1] ** 2)
            grads[i] = (g.T @ a_prev, g.sum(axis=0))
            g = g @ self.weights[i]
        return grads, g

    # ------------------------------------------------------------- flat params

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError("expected %d params, got %d" % (self.n_params, vec.size))
        k = 0
        for i in range(self.n_layers):
            w, b = self.weights[i], self.biases[i]
            self.weights[i] = vec[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = vec[k : k + b.size].copy()
            k += b.size

    def flat_grads(self, grads) -> np.ndarray:
        parts = []
        for dw, db in grads:
            parts.append(dw.ravel())
            parts.append(db.ravel())
        return np.concatenate(parts)

    def copy_from(self, other: "Mlp") -> None:
        for i in range(self.n_layers):
            self.weights[i] = other.weights[i].copy()
            self.biases[i] = other.biases[i].copy()

    def zero_(self) -> None:
        for i in range(self.n_layers):
            self.weights[i][:] = 0.0
            self.biases[i][:] = 0.0


class Adam:
    """Adam with bias correction; operates in place on an Mlp's parameters."""

    def __init__(self, net: Mlp, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for pair in zip(net.weights, net.biases) for p in pair]
        self.v = [np.zeros_like(p) for pair in zip(net.weights, net.biases) for p in pair]

    def step(self, grads) -> None:
        flat_params = []
        for w, b in zip(self.net.weights, self.net.biases):
            flat_params.extend([w, b])
        flat_grads = []
        for dw, db in grads:
            flat_grads.extend([dw, db])
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(flat_params, flat_grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def flat_state(self) -> np.ndarray:
        parts = [np.array([float(self.t)])]
        parts.extend(m.ravel() for m in self.m)
        parts.extend(v.ravel() for v in self.v)
        return np.concatenate(parts)

    def set_flat_state(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        expected = 1 + 2 * sum(m.size for m in self.m)
        if vec.size != expected:
            raise ValueError("expected %d optimizer values, got %d" % (expected, vec.size))
        self.t = int(vec[0])
        k = 1
        for m in self.m:
            m[:] = vec[k : k + m.size].reshape(m.shape)
            k += m.size
        for v in self.v:
            v[:] = vec[k : k + v.size].reshape(v.shape)
            k += v.size


class ScalarAdam:
    """Adam for a single scalar (the entropy temperature)."""

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = 0.0
        self.v = 0.0

    def step(self, value: float, grad: float) -> float:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def ema_update(target: Mlp, source: Mlp, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target."""
    for i in range(target.n_layers):
        target.weights[i] = tau * source.weights[i] + (1.0 - tau) * target.weights[i]
        target.biases[i] = tau * source.biases[i] + (1.0 - tau) * target.biases[i]
