"""Episodic Voronoi quantisation: a codebook per automaton state grown online, with Q-learning over cells."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..automaton import REJECTED
from ..product import ProductRuntime, ProductState


@dataclass
class VqParams:
    episodes: int = 20000
    steps: int = 200              # step budget per episode
    mu: float = 0.1
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    seed: int = 0

    def epsilon(self, episode: int) -> float:
        span = max(1, int(self.episodes * self.eps_decay_frac))
        if episode >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * episode / span


class VoronoiCodebook:
    """Per automaton state, centroids in normalised coordinates with one Q row each."""

    def __init__(self, n_states: int, n_actions: int, scale, delta: float):
        if not delta > 0:
            raise ValueError("resolution must be positive")
        self.delta = delta
        self.n_actions = n_actions
        self.scale = np.asarray(scale, float)
        self.centroids = [np.zeros((0, len(self.scale))) for _ in range(n_states)]
        self.Q = [np.zeros((0, n_actions)) for _ in range(n_states)]

    def size(self, q: int) -> int:
        return len(self.centroids[q])

    def append(self, q: int, point) -> int:
        x = np.asarray(point, float) / self.scale
        self.centroids[q] = np.vstack([self.centroids[q], x])
        self.Q[q] = np.vstack([self.Q[q], np.zeros(self.n_actions)])
        return len(self.centroids[q]) - 1

    def nearest(self, q: int, point) -> tuple:
        """``(index, distance)`` of the nearest centroid in ``C^q``; index -1 if empty."""
        C = self.centroids[q]
        if len(C) == 0:
            return -1, np.inf
        d = np.linalg.norm(C - np.asarray(point, float) / self.scale, axis=1)
        i = int(np.argmin(d))
        return i, float(d[i])

    def row(self, q: int, i: int) -> np.ndarray:
        return self.Q[q][i]

    def min_pairwise(self, q: int) -> float:
        C = self.centroids[q]
        if len(C) < 2:
            return np.inf
        D = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=2)
        D[np.diag_indices(len(C))] = np.inf
        return float(D.min())


def vq_train(rt: ProductRuntime, delta: float, hp: VqParams = VqParams(),
             start: Optional[Callable] = None) -> VoronoiCodebook:
    """Grow the codebook while Q-learning over its cells.

    A step whose nearest centroid is the current one but lies farther than
    ``delta`` away opens a new cell; a step into an empty automaton slice opens
    its first cell.  Every other step updates Q(c, a) towards the nearest
    centroid of the landing point, including steps that stay in ``c``.
    ``start(rng) -> (point, q)`` enables exploring starts.
    """
    A = rt.A
    rng = np.random.default_rng([hp.seed, 2])
    rt.reseed(hp.seed)
    book = VoronoiCodebook(A.n_states, rt.n_actions, (rt.env.width, rt.env.height), delta)
    acts_of = [np.array(rt.available_actions(ProductState(None, q)), int) for q in range(A.n_states)]
    s0 = rt.reset()
    book.append(s0.q, s0.env)
    for ep in range(hp.episodes):
        eps = hp.epsilon(ep)
        if start is None:
            ps = rt.reset()
        else:
            point, q = start(rng)
            ps = rt.reset(point, q)
        cq = ps.q
        ci, _ = book.nearest(cq, ps.env)
        if ci < 0:
            ci = book.append(cq, ps.env)
        for _ in range(hp.steps):
            acts = acts_of[cq]
            row = book.row(cq, ci)
            if rng.random() < eps:
                a = int(acts[int(rng.integers(len(acts)))])
            else:
                a = int(acts[int(np.argmax(row[acts]))])
            nxt, r, flags = rt.step(a)
            q2 = nxt.q
            if q2 == REJECTED or q2 in rt.sinks:
                row[a] = (1 - hp.mu) * row[a] + hp.mu * r
                break
            ni, dist = book.nearest(q2, nxt.env)
            if ni < 0:
                ci, cq = book.append(q2, nxt.env), q2
            elif q2 == cq and ni == ci and dist > delta:
                ci = book.append(q2, nxt.env)
            else:
                target = r + hp.gamma * book.row(q2, ni)[acts_of[q2]].max()
                row[a] = (1 - hp.mu) * row[a] + hp.mu * target
                ci, cq = ni, q2
    return book


def vq_greedy(book: VoronoiCodebook, rt: ProductRuntime) -> Callable:
    """Greedy policy reading the Q row of the nearest centroid; lowest action on ties."""
    acts_of = {}

    def policy(ps: ProductState) -> int:
        acts = acts_of.get(ps.q)
        if acts is None:
            acts = acts_of[ps.q] = np.array(rt.available_actions(ps), int)
        i, _ = book.nearest(ps.q, ps.env)
        if i < 0:
            return int(acts[0])
        return int(acts[int(np.argmax(book.row(ps.q, i)[acts]))])
    return policy


def codebook_rows(book: VoronoiCodebook) -> list:
    """``(q, index, x, y, Q...)`` rows in normalised coordinates for CSV output."""
    rows = []
    for q, C in enumerate(book.centroids):
        for i, c in enumerate(C):
            rows.append((q, i, *c.tolist(), *book.Q[q][i].tolist()))
    return rows
