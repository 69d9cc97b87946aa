"""Fitted value iteration over the product with a kernel averager and Monte Carlo backups."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..automaton import REJECTED
from ..product import ProductRuntime, ProductState


@dataclass
class FviParams:
    k: int = 100          # centres per automaton state, laid out on a square grid
    Z: int = 25           # Monte Carlo successors per centre and action
    h: float = 0.18       # kernel smoothing in normalised coordinates
    sweeps: int = 40
    tol: float = 0.0      # stop early once a sweep changes no value by more than this
    greedy_Z: int = 50    # lookahead samples per action when acting greedily
    seed: int = 0

    def __post_init__(self):
        if self.Z < 1:
            raise ValueError("Z must be at least 1")
        if not self.h > 0:
            raise ValueError("smoothing h must be positive")
        n = math.isqrt(self.k)
        if n * n != self.k or self.k < 1:
            raise ValueError("k must be a positive square number")


class CountingSampler:
    """Generative access to the environment that counts successor draws."""

    def __init__(self, env):
        self.env = env
        self.calls = 0

    def __call__(self, point, a: int, rng):
        self.calls += 1
        return self.env.step(point, a, rng)


def grid_centres(k: int) -> np.ndarray:
    """``k`` cell-centred points of a square grid over the unit square."""
    n = math.isqrt(k)
    ticks = (np.arange(n) + 0.5) / n
    xs, ys = np.meshgrid(ticks, ticks, indexing="xy")
    return np.column_stack([xs.ravel(), ys.ravel()])


def kernel_weights(centres: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    """Row-normalised weights ``exp(-|x - c_i| / h)``; each row is a convex combination."""
    d = np.linalg.norm(np.atleast_2d(points)[:, None, :] - centres[None, :, :], axis=2)
    w = np.exp(-(d - d.min(axis=1, keepdims=True)) / h)
    return w / w.sum(axis=1, keepdims=True)


class KernelValueFn:
    """Per automaton state, values at fixed centres averaged by an exponential kernel."""

    def __init__(self, centres: np.ndarray, values: np.ndarray, h: float, scale, r_n: float = 0.0):
        self.centres = centres
        self.values = values          # (n_states, k)
        self.h = h
        self.scale = np.asarray(scale, float)
        self.r_n = r_n

    def __call__(self, points, q: int) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        if q == REJECTED:
            return np.full(len(points), self.r_n)
        return kernel_weights(self.centres, points / self.scale, self.h) @ self.values[q]


def fvi_run(rt: ProductRuntime, hp: FviParams = FviParams(), sampler=None):
    """Returns ``(value function, sampler)``; ``sampler.calls`` is the sample count.

    Centres of accepting automaton states keep their initial value and are
    not sampled.  Sweeps go from the highest automaton state down.
    """
    if rt.K is not None:
        raise ValueError("fitted value iteration does not support a Kripke clock")
    A = rt.A
    env = rt.env
    sampler = CountingSampler(env) if sampler is None else sampler
    rng = np.random.default_rng([hp.seed, 3])
    scale = np.array([env.width, env.height], float)
    C = grid_centres(hp.k)
    r_p, r_n = rt.reward.M, 0.0
    accepting = [A.is_accepting(q) for q in range(A.n_states)]
    values = np.array([[r_p if accepting[q] else r_n] * hp.k for q in range(A.n_states)])
    vf = KernelValueFn(C, values, hp.h, scale, r_n)
    points = C * scale
    # averaged kernel matrices: backup[q] is a list over actions of {q': (k, k)}
    backup = {}
    for q in range(A.n_states):
        if accepting[q]:
            continue
        per_action = []
        for a in range(rt.n_env):
            ys = np.empty((hp.k * hp.Z, 2))
            qs = np.empty(hp.k * hp.Z, int)
            for i, p in enumerate(points):
                for z in range(hp.Z):
                    y = sampler(tuple(p), a, rng)
                    ys[i * hp.Z + z] = y
                    qs[i * hp.Z + z] = A.step(q, env.labels(y))
            W = kernel_weights(C, ys / scale, hp.h)
            mats = {}
            for q2 in np.unique(qs):
                if q2 == REJECTED:
                    continue
                Wq = np.where((qs == q2)[:, None], W, 0.0)
                mats[int(q2)] = Wq.reshape(hp.k, hp.Z, hp.k).mean(axis=1)
            per_action.append(mats)
        # epsilon moves are deterministic: the centre itself in the target slice
        for t in A.epsilon[q]:
            per_action.append({t: kernel_weights(C, C, hp.h)})
        backup[q] = per_action
    for _ in range(hp.sweeps):
        change = 0.0
        for q in range(A.n_states - 1, -1, -1):
            if accepting[q]:
                continue
            I = np.array([sum((M @ values[q2] for q2, M in mats.items()), np.zeros(hp.k))
                          for mats in backup[q]])
            new = I.max(axis=0)
            change = max(change, float(np.abs(new - values[q]).max()))
            values[q] = new
        if change <= hp.tol:
            break
    return vf, sampler


def expected_samples(hp: FviParams, n_env_actions: int, n_states: int, n_accepting: int) -> int:
    return hp.k * hp.Z * n_env_actions * (n_states - n_accepting)


def fvi_greedy(vf: KernelValueFn, rt: ProductRuntime, Z: int, rng) -> Callable:
    """Policy picking the action with the best Monte Carlo mean of successor values."""
    A, env = rt.A, rt.env

    def policy(ps: ProductState) -> int:
        acts = rt.available_actions(ps)
        env_acts = [a for a in acts if a < rt.n_env]
        ys = [env.step(ps.env, a, rng) for a in env_acts for _ in range(Z)]
        qs = np.array([A.step(ps.q, env.labels(y)) for y in ys], int)
        vals = np.full(len(ys), vf.r_n)
        ys = np.asarray(ys, float).reshape(len(ys), -1)
        for q2 in np.unique(qs):
            sel = qs == q2
            vals[sel] = vf(ys[sel], int(q2))
        scores = list(vals.reshape(len(env_acts), Z).mean(axis=1)) if env_acts else []
        scores += [float(vf(ps.env, a - rt.n_env)[0]) for a in acts if a >= rt.n_env]
        return acts[int(np.argmax(scores))]
    return policy


def value_rows(vf: KernelValueFn) -> list:
    """``(q, index, x, y, value)`` rows in normalised coordinates for CSV output."""
    return [(q, i, *vf.centres[i].tolist(), float(vf.values[q, i]))
            for q in range(vf.values.shape[0]) for i in range(vf.values.shape[1])]
