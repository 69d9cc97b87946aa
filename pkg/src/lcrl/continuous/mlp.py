"""One-hidden-layer tanh network with a linear scalar output, trained by Rprop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAMS = ("W1", "b1", "w2", "b2")


class Mlp:
    """``f(x) = w2 . tanh(W1 x + b1) + b2``."""

    def __init__(self, n_in: int, hidden: int = 16, rng=None, scale: float = 0.5):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in = n_in
        self.hidden = hidden
        self.W1 = rng.uniform(-scale, scale, size=(hidden, n_in))
        self.b1 = rng.uniform(-scale, scale, size=hidden)
        self.w2 = rng.uniform(-scale, scale, size=hidden)
        self.b2 = np.zeros(1)

    def params(self) -> list:
        return [self.W1, self.b1, self.w2, self.b2]

    def copy(self) -> "Mlp":
        out = Mlp.__new__(Mlp)
        out.n_in, out.hidden = self.n_in, self.hidden
        out.W1, out.b1, out.w2, out.b2 = (p.copy() for p in self.params())
        return out

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.tanh(X @ self.W1.T + self.b1) @ self.w2 + self.b2[0]


def mlp_forward(net: Mlp, X) -> np.ndarray:
    return net.forward(X)


def mlp_loss(net: Mlp, X, y) -> float:
    err = net.forward(X) - np.asarray(y, dtype=float)
    return float(err @ err)


def mlp_gradient(net: Mlp, X, y) -> list:
    """Gradient of the summed squared error ``sum (f(x) - y)^2`` per parameter."""
    X = np.atleast_2d(X)
    H = np.tanh(X @ net.W1.T + net.b1)
    err = 2.0 * (H @ net.w2 + net.b2[0] - np.asarray(y, dtype=float))
    gw2 = H.T @ err
    gb2 = np.array([err.sum()])
    dpre = np.outer(err, net.w2) * (1.0 - H * H)
    gW1 = dpre.T @ X
    gb1 = dpre.sum(axis=0)
    return [gW1, gb1, gw2, gb2]


@dataclass
class RpropState:
    """Per-weight step sizes and last gradients for Rprop without weight backtracking."""
    steps: list
    prev: list
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    step_min: float = 1e-6
    step_max: float = 50.0

    @classmethod
    def for_net(cls, net: Mlp, step0: float = 0.1, **kw) -> "RpropState":
        return cls(steps=[np.full_like(p, step0) for p in net.params()],
                   prev=[np.zeros_like(p) for p in net.params()], **kw)


def rprop_step(net: Mlp, state: RpropState, grads: list) -> None:
    for p, g, step, prev in zip(net.params(), grads, state.steps, state.prev):
        g = g.copy()
        agree = prev * g
        grow = agree > 0
        flip = agree < 0
        step[grow] = np.minimum(step[grow] * state.eta_plus, state.step_max)
        step[flip] = np.maximum(step[flip] * state.eta_minus, state.step_min)
        g[flip] = 0.0
        p -= np.sign(g) * step
        prev[...] = g


def rprop_fit(net: Mlp, X, y, epochs: int, state: RpropState = None) -> RpropState:
    """Full-batch Rprop epochs on ``(X, y)``."""
    state = RpropState.for_net(net) if state is None else state
    for _ in range(epochs):
        rprop_step(net, state, mlp_gradient(net, X, y))
    return state
