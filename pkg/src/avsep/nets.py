"""Small dense networks with hand-written backprop, plus Adam.

Everything is numpy and batched: inputs are (B, d_in), hidden layers apply
tanh (or relu), and the output head is one of

  plain  -> raw affine output (B, d_out)
  logvar -> positive variances exp(y) clamped below at var_floor, (B, d_out)
  gauss  -> (mean, var) pair, each (B, d_out), from a doubled final layer

forward returns a cache that backward consumes; backward returns the gradient
with respect to the input and per-layer (dW, db) pairs in layer order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

HEADS = ("plain", "logvar", "gauss")
ACTIVATIONS = ("tanh", "relu")

# exp() argument cap: keeps variances finite; gradients are zero beyond it
_LOGVAR_MAX = 60.0


@dataclass
class DenseNet:
    dims: tuple          # (d_in, hidden..., d_out); d_out is the logical size
    head: str
    weights: list = field(repr=False)
    biases: list = field(repr=False)
    activation: str = "tanh"
    var_floor: float = 1e-6

    @classmethod
    def create(cls, dims, head, rng, activation="tanh", var_floor=1e-6):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigError("dims must be >= 2 positive sizes, got %s" % (dims,))
        if head not in HEADS:
            raise ConfigError("unknown head %r" % (head,))
        if activation not in ACTIVATIONS:
            raise ConfigError("unknown activation %r" % (activation,))
        if var_floor <= 0.0:
            raise ConfigError("var_floor must be positive, got %g" % var_floor)
        fan_outs = list(dims[1:])
        if head == "gauss":
            fan_outs[-1] *= 2  # mean and log-variance side by side
        weights, biases = [], []
        fan_in = dims[0]
        for fan_out in fan_outs:
            std = np.sqrt(2.0 / (fan_in + fan_out))
            weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
            fan_in = fan_out
        return cls(dims=dims, head=head, weights=weights, biases=biases,
                   activation=activation, var_floor=var_floor)

    @property
    def d_in(self):
        return self.dims[0]

    @property
    def d_out(self):
        return self.dims[-1]

    def params(self):
        """Live parameter arrays, alternating weight/bias in layer order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x):
        """Head output for batch `x` (B, d_in), plus the cache for backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ConfigError(
                "input shape %s does not match d_in=%d" % (x.shape, self.d_in)
            )
        acts = [x]
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = a @ w + b
            a = np.tanh(h) if self.activation == "tanh" else np.maximum(h, 0.0)
            acts.append(a)
        y = a @ self.weights[-1] + self.biases[-1]
        if self.head == "plain":
            out = y
            cache = (acts, None)
        elif self.head == "logvar":
            raw = np.exp(np.minimum(y, _LOGVAR_MAX))
            var = np.maximum(raw, self.var_floor)
            # gradient flows only where neither the floor nor the cap bit
            live = (raw > self.var_floor) & (y < _LOGVAR_MAX)
            out = var
            cache = (acts, (var, live))
        else:  # gauss
            d = self.d_out
            mean = y[:, :d]
            raw = np.exp(np.minimum(y[:, d:], _LOGVAR_MAX))
            var = np.maximum(raw, self.var_floor)
            live = (raw > self.var_floor) & (y[:, d:] < _LOGVAR_MAX)
            out = (mean, var)
            cache = (acts, (var, live))
        return out, cache

    def backward(self, cache, grad_out):
        """Backprop `grad_out` (matching the head's output structure).

        Returns (grad_x, grads) with grads a list of (dW, db) per layer.
        """
        acts, head_cache = cache
        if self.head == "plain":
            d_y = np.asarray(grad_out)
        elif self.head == "logvar":
            var, live = head_cache
            d_y = np.asarray(grad_out) * var * live
        else:
            d_mean, d_var = grad_out
            var, live = head_cache
            d_y = np.concatenate([np.asarray(d_mean),
                                  np.asarray(d_var) * var * live], axis=1)
        grads = [None] * len(self.weights)
        d_a = d_y
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            grads[i] = (a_prev.T @ d_a, d_a.sum(axis=0))
            d_prev = d_a @ self.weights[i].T
            if i > 0:
                a = acts[i]
                if self.activation == "tanh":
                    d_prev = d_prev * (1.0 - a * a)
                else:
                    d_prev = d_prev * (a > 0.0)
            d_a = d_prev
        return d_a, grads


def zero_grads(net: DenseNet):
    """(dW, db) zeros matching `net`, for accumulation."""
    return [(np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(net.weights, net.biases)]


def add_grads(acc, extra):
    """Elementwise sum of two per-layer gradient lists (returns a new list)."""
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(acc, extra)]


def scale_grads(grads, factor):
    return [(w * factor, b * factor) for w, b in grads]


def flatten_grads(grads):
    """Per-layer (dW, db) list -> flat array list matching DenseNet.params order."""
    out = []
    for dw, db in grads:
        out.extend([dw, db])
    return out


class Adam:
    """Adam over a list of live parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0.0:
            raise ConfigError("learning rate must be positive, got %g" % lr)
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        """One update from `grads`, a flat array list matching `params`."""
        if len(grads) != len(self.params):
            raise ConfigError(
                "got %d gradient arrays for %d parameters"
                % (len(grads), len(self.params))
            )
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
