"""Gaussian policies and value networks as explicit numpy computations.

Everything is float64 and deterministic.  Networks expose their parameters as
one flat vector with a frozen layout — layer-major from input to output, each
layer's weight matrix in row-major order followed by its bias, and (for the
Gaussian head) the log-std vector last — so optimizers and checkpoints can
treat a network as an opaque vector.

Gradients are hand-written reverse mode for exactly the compositions used
here: losses that are functions of value outputs or of per-sample Gaussian
log-probabilities.  `finite_diff_gradient` provides the independent check.
"""

from __future__ import annotations

import math

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


def _check_finite(layer_index: int, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"layer {layer_index} produced non-finite values")


class Mlp:
    """Fully connected network, tanh hidden activations, identity output."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ValueError(f"need >= 2 positive layer sizes, got {self.layer_sizes}")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            if self.weights[i].shape != (fan_in, fan_out) or self.biases[i].shape != (fan_out,):
                raise ValueError(
                    f"layer {i}: expected weight {(fan_in, fan_out)} and bias ({fan_out},), "
                    f"got {self.weights[i].shape} and {self.biases[i].shape}"
                )

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator) -> "Mlp":
        """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""
        sizes = tuple(int(s) for s in layer_sizes)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"expected input of shape (N, {self.layer_sizes[0]}), got {x.shape}"
            )
        return x

    def forward_cached(self, x) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run the network, keeping each layer's input for the backward pass."""
        a = self._check_input(x)
        activations = [a]
        for i in range(self.n_layers):
            z = a @ self.weights[i] + self.biases[i]
            _check_finite(i, z)
            a = np.tanh(z) if i < self.n_layers - 1 else z
            if i < self.n_layers - 1:
                activations.append(a)
        return a, activations

    def forward(self, x) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_value(self, x) -> np.ndarray:
        """Scalar-output convenience: (N, 1) squeezed to (N,)."""
        if self.layer_sizes[-1] != 1:
            raise ValueError(f"value network must have output size 1, has {self.layer_sizes[-1]}")
        return self.forward(x)[:, 0]

    def backward_from_output(self, activations, grad_output) -> np.ndarray:
        """Flat parameter gradient given d(loss)/d(network output)."""
        g = np.asarray(grad_output, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            a_prev = activations[i]
            grads_w[i] = a_prev.T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                # a_prev is a tanh output for every layer after the first,
                # so the activation Jacobian is 1 - a_prev^2.
                g = (g @ self.weights[i].T) * (1.0 - a_prev**2)
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)])

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size


class GaussianPolicyHead:
    """Diagonal Gaussian policy: Mlp mean plus a state-independent log-std.

    log_prob(s, a) = sum_d [ -(a_d - mu_d)^2 / (2 sigma_d^2) - log sigma_d ]
                     - dim/2 * log(2 pi).

    Flat layout: mean-network parameters first, then the log-std vector.
    """

    def __init__(self, mean_net: Mlp, log_std):
        self.mean_net = mean_net
        self.log_std = np.asarray(log_std, dtype=float).copy()
        if self.log_std.shape != (self.action_dim,):
            raise ValueError(
                f"log_std shape {self.log_std.shape} does not match action dim {self.action_dim}"
            )

    @classmethod
    def initialize(cls, obs_dim, action_dim, hidden_sizes, rng) -> "GaussianPolicyHead":
        mean_net = Mlp.initialize((obs_dim, *hidden_sizes, action_dim), rng)
        return cls(mean_net, np.zeros(action_dim))

    @property
    def action_dim(self) -> int:
        return self.mean_net.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return self.mean_net.n_params + self.log_std.size

    def mean_action(self, states) -> np.ndarray:
        return self.mean_net.forward(states)

    def sample(self, states, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw actions and return them with their log-probabilities."""
        mu = self.mean_net.forward(states)
        sigma = np.exp(self.log_std)
        z = rng.standard_normal(mu.shape)
        actions = mu + sigma * z
        logp = -0.5 * np.sum(z**2, axis=1) - self.log_std.sum() - 0.5 * mu.shape[1] * LOG_2PI
        return actions, logp

    def log_prob_cached(self, states, actions):
        mu, activations = self.mean_net.forward_cached(states)
        actions = np.asarray(actions, dtype=float)
        if actions.shape != mu.shape:
            raise ValueError(f"actions shape {actions.shape} does not match mean {mu.shape}")
        inv_var = np.exp(-2.0 * self.log_std)
        diff = actions - mu
        logp = (
            -0.5 * np.sum(diff**2 * inv_var, axis=1)
            - self.log_std.sum()
            - 0.5 * mu.shape[1] * LOG_2PI
        )
        cache = (activations, diff, inv_var)
        return logp, cache

    def log_prob(self, states, actions) -> np.ndarray:
        logp, _ = self.log_prob_cached(states, actions)
        return logp

    def backward_log_prob(self, cache, dlogp) -> np.ndarray:
        """Flat gradient (mean net, then log_std) given d(loss)/d(log_prob)."""
        activations, diff, inv_var = cache
        dlogp = np.asarray(dlogp, dtype=float)
        # d logp / d mu = (a - mu) / sigma^2
        dmu = dlogp[:, None] * diff * inv_var
        mean_grad = self.mean_net.backward_from_output(activations, dmu)
        # d logp / d log_std_d = (a_d - mu_d)^2 / sigma_d^2 - 1
        dstd = (diff**2 * inv_var - 1.0) * dlogp[:, None]
        return np.concatenate([mean_grad, dstd.sum(axis=0)])

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.get_flat(), self.log_std])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        split = self.mean_net.n_params
        self.mean_net.set_flat(flat[:split])
        self.log_std = flat[split:].copy()


def loss_value(network, loss, batch) -> float:
    """Forward-only evaluation of a loss definition on a network."""
    if isinstance(network, GaussianPolicyHead):
        states, actions = batch
        logp = network.log_prob(states, actions)
        value, _ = loss.value_and_grad(logp)
    else:
        out, _ = network.forward_cached(batch)
        value, _ = loss.value_and_grad(out)
    return float(value)


def backward(network, loss, batch) -> np.ndarray:
    """Analytic gradient of a loss definition w.r.t. flat parameters.

    `loss` supplies value_and_grad(outputs) -> (scalar, d(scalar)/d(outputs));
    outputs are per-sample log-probabilities for a GaussianPolicyHead and raw
    network outputs for a plain Mlp.
    """
    if isinstance(network, GaussianPolicyHead):
        states, actions = batch
        logp, cache = network.log_prob_cached(states, actions)
        _, dlogp = loss.value_and_grad(logp)
        return network.backward_log_prob(cache, dlogp)
    out, cache = network.forward_cached(batch)
    _, dout = loss.value_and_grad(out)
    return network.backward_from_output(cache, dout)


def finite_diff_gradient(network, loss, batch, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    flat = network.get_flat()
    grad = np.zeros_like(flat)
    try:
        for i in range(flat.size):
            step = np.zeros_like(flat)
            step[i] = h
            network.set_flat(flat + step)
            f_plus = loss_value(network, loss, batch)
            network.set_flat(flat - step)
            f_minus = loss_value(network, loss, batch)
            grad[i] = (f_plus - f_minus) / (2.0 * h)
    finally:
        network.set_flat(flat)
    return grad


def gradient_discrepancy(analytic, numeric, abs_floor: float = 1e-8) -> tuple[float, float]:
    """(max relative gap on significant entries, max absolute gap on tiny ones).

    Entries with |analytic| < abs_floor carry no meaningful relative scale and
    are compared absolutely instead.
    """
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    if analytic.shape != numeric.shape:
        raise ValueError("gradient shapes differ")
    gap = np.abs(numeric - analytic)
    big = np.abs(analytic) >= abs_floor
    max_rel = float(np.max(gap[big] / np.abs(analytic)[big])) if big.any() else 0.0
    max_abs = float(np.max(gap[~big])) if (~big).any() else 0.0
    return max_rel, max_abs
