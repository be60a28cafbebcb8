"""Fully-connected classifier with exact gradients and growable output heads.

The reference architecture is input -> hidden layers (tanh) -> flat logit
vector.  Everything runs in float64 so that analytic gradients can be
checked against central finite differences at tight tolerances.  The
parameter vector is exposed flat (concatenation of weight matrices and
bias vectors in declaration order) for snapshotting, perturbation probes,
and checkpointing.

Checkpoint file layout (little-endian):
    magic  b"XDERNET1"  (8 bytes)
    uint32 version (= 1)
    uint32 number of layer sizes
    uint32 layer sizes (input, hidden..., output)
    float64 parameters, flat, in declaration order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

_MAGIC = b"XDERNET1"
_VERSION = 1


@dataclass
class SGDConfig:
    """Plain stochastic gradient descent with optional classical momentum.

    The update is ``v <- momentum * v + (g + weight_decay * theta)`` followed
    by ``theta <- theta - lr * v``.
    """

    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


class MLP:
    """Multi-layer perceptron over float64 with a growable final layer."""

    def __init__(self, input_dim: int, hidden_sizes, output_dim: int, seed: int = 0):
        if input_dim < 1 or output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        self.input_dim = int(input_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.output_dim = int(output_dim)
        self._rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        sizes = [self.input_dim, *self.hidden_sizes, self.output_dim]
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(
                Tensor(self._rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            )
            self.biases.append(
                Tensor(self._rng.uniform(-bound, bound, size=fan_out))
            )
        self._velocity: np.ndarray | None = None

    # -- basic introspection ---------------------------------------------------

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    @property
    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # -- forward -----------------------------------------------------------------

    def forward(self, x) -> Tensor:
        """Differentiable forward pass; returns the (n, output_dim) logits."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of shape (n, {self.input_dim}), got {x.shape}"
            )
        h = Tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = h.tanh()
        return h

    def logits(self, x) -> np.ndarray:
        """Forward pass without recording a graph (evaluation only)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of shape (n, {self.input_dim}), got {x.shape}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.tanh(h)
        return h

    # -- gradients / updates --------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def gradient(self, loss: Tensor) -> np.ndarray:
        """Flat gradient of ``loss`` with respect to every parameter."""
        self.zero_grad()
        loss.backward()
        pieces = []
        for p in self.parameters():
            if p.grad is None:
                raise ValueError("loss is not connected to the model parameters")
            pieces.append(p.grad.ravel())
        return np.concatenate(pieces)

    def sgd_step(self, grad: np.ndarray, opt: SGDConfig) -> None:
        """Apply one SGD update from a flat gradient vector."""
        grad = np.asarray(grad, dtype=np.float64)
        theta = self.get_flat()
        if grad.shape != theta.shape:
            raise ValueError(
                f"gradient length {grad.size} != parameter count {theta.size}"
            )
        update = grad + opt.weight_decay * theta
        if opt.momentum > 0.0:
            if self._velocity is None or self._velocity.shape != update.shape:
                self._velocity = np.zeros_like(update)
            self._velocity = opt.momentum * self._velocity + update
            update = self._velocity
        self.set_flat(theta - opt.lr * update)

    # -- flat parameter view -------------------------------------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.num_parameters:
            raise ValueError(
                f"expected {self.num_parameters} parameters, got {theta.size}"
            )
        offset = 0
        for p in self.parameters():
            n = p.data.size
            p.data = theta[offset:offset + n].reshape(p.data.shape).copy()
            offset += n

    def snapshot(self) -> np.ndarray:
        return self.get_flat()

    def restore(self, theta: np.ndarray) -> None:
        self.set_flat(theta)

    def clone(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.input_dim = self.input_dim
        other.hidden_sizes = self.hidden_sizes
        other.output_dim = self.output_dim
        other._rng = np.random.default_rng()
        other.weights = [Tensor(w.data.copy()) for w in self.weights]
        other.biases = [Tensor(b.data.copy()) for b in self.biases]
        other._velocity = None if self._velocity is None else self._velocity.copy()
        return other

    # -- head growth -----------------------------------------------------------------

    def grow_head(self, count: int) -> None:
        """Append ``count`` output logits; existing parameters are untouched."""
        if count < 0:
            raise ValueError("count must be non-negative")
        if count == 0:
            return
        fan_in = self.hidden_sizes[-1] if self.hidden_sizes else self.input_dim
        bound = 1.0 / np.sqrt(fan_in)
        new_w = self._rng.uniform(-bound, bound, size=(fan_in, count))
        new_b = self._rng.uniform(-bound, bound, size=count)
        self.weights[-1] = Tensor(np.concatenate([self.weights[-1].data, new_w], axis=1))
        self.biases[-1] = Tensor(np.concatenate([self.biases[-1].data, new_b]))
        self.output_dim += count
        self._velocity = None  # shape changed; momentum state restarts

    # -- perturbation ------------------------------------------------------------------

    def perturb(self, alpha: float, seed: int) -> np.ndarray:
        """Gaussian parameter noise with per-coordinate scale alpha * |theta_i|.

        Returns the perturbed flat vector; the model itself is unchanged.
        """
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        theta = self.get_flat()
        if alpha == 0.0:
            return theta
        rng = np.random.default_rng(seed)
        return theta + rng.normal(0.0, 1.0, size=theta.shape) * (alpha * np.abs(theta))

    # -- checkpoint io -------------------------------------------------------------------

    def save(self, path) -> None:
        sizes = self.layer_sizes
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _VERSION, len(sizes)))
            fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
            fh.write(self.get_flat().astype("<f8").tobytes())

    @classmethod
    def from_flat(cls, layer_sizes, theta: np.ndarray) -> "MLP":
        model = cls(layer_sizes[0], layer_sizes[1:-1], layer_sizes[-1], seed=0)
        model.set_flat(theta)
        return model

    @classmethod
    def load(cls, path) -> "MLP":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
            version, n_sizes = struct.unpack("<II", fh.read(8))
            if version != _VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
            flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
        model = cls(sizes[0], sizes[1:-1], sizes[-1], seed=0)
        model.set_flat(flat)
        return model


def finite_difference_gradient(fn, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        hi = fn(bumped)
        bumped[i] = theta[i] - step
        lo = fn(bumped)
        grad[i] = (hi - lo) / (2.0 * step)
    return grad
