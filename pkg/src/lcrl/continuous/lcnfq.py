"""Logically-constrained neural fitted Q-iteration with one network per automaton state."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..automaton import REJECTED
from ..product import ProductRuntime, ProductState
from .mlp import Mlp, RpropState, rprop_fit

log = logging.getLogger(__name__)


@dataclass
class Buffer:
    """Experience arrays; automaton state ``q`` of the source picks the training net."""
    s: np.ndarray      # (N, dim) environment points
    q: np.ndarray
    a: np.ndarray
    s2: np.ndarray
    q2: np.ndarray
    r: np.ndarray
    episodes: list     # episode lengths

    def __len__(self) -> int:
        return len(self.r)


def explore_collect(rt: ProductRuntime, th: int, episodes: int, rng,
                    start: Optional[Callable] = None) -> Buffer:
    """Random-action episodes ended by a positive reward, a sink, or ``th`` steps.

    ``start(rng) -> (point, q)`` draws exploring starts; by default every
    episode starts from the runtime's initial state.
    """
    rows = []
    lengths = []
    for _ in range(episodes):
        if start is None:
            ps = rt.reset()
        else:
            point, q = start(rng)
            ps = rt.reset(point, q)
        n = 0
        while n < th:
            if ps.q in rt.sinks:
                break
            acts = rt.available_actions(ps)
            a = acts[int(rng.integers(len(acts)))]
            nxt, r, flags = rt.step(a)
            rows.append((ps.env, ps.q, a, nxt.env, nxt.q, r))
            n += 1
            ps = nxt
            if flags.accepting or flags.sink:
                break
        lengths.append(n)
    if not rows:
        return Buffer(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0, int),
                      np.zeros((0, 2)), np.zeros(0, int), np.zeros(0), lengths)
    s, q, a, s2, q2, r = zip(*rows)
    return Buffer(np.array(s, float), np.array(q), np.array(a), np.array(s2, float),
                  np.array(q2), np.array(r, float), lengths)


def uniform_starts(env, states) -> Callable:
    """Exploring-start sampler: a uniform point paired with a uniform automaton state."""
    states = list(states)

    def draw(rng):
        return env.sample_point(rng), states[int(rng.integers(len(states)))]
    return draw


def consistent_starts(env, automaton, states=None, tries: int = 10_000) -> Callable:
    """Exploring starts whose point labels keep the drawn automaton state alive.

    An automaton state is drawn uniformly from ``states`` (default: non-sink
    states), then points are drawn uniformly until the state's own transition
    on the point's labels does not reject.
    """
    if states is None:
        states = [q for q in range(automaton.n_states) if q not in automaton.sinks]
    states = list(states)

    def draw(rng):
        q = states[int(rng.integers(len(states)))]
        for _ in range(tries):
            p = env.sample_point(rng)
            if automaton.step(q, env.labels(p)) != REJECTED:
                return p, q
        raise ValueError(f"no point keeps automaton state {q} alive")
    return draw


@dataclass
class LcnfqParams:
    gamma: float = 0.9
    hidden: int = 16
    sweeps: int = 40           # outer cycles over the bank
    epochs: int = 300          # Rprop epochs per net per cycle
    init_epochs: int = 50
    tol: float = 1e-4          # stop once targets drift less than this
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.hidden < 1 or self.sweeps < 0 or self.epochs < 0:
            raise ValueError("hidden, sweeps and epochs must be positive")


class HybridQ:
    """Bank of networks, one per automaton state, each mapping (point, action) to a value."""

    def __init__(self, nets: list, n_actions: int, scale, actions_of_q: list):
        self.nets = nets
        self.n_actions = n_actions
        self.scale = np.asarray(scale, float)
        self.actions_of_q = actions_of_q

    def features(self, points: np.ndarray, actions) -> np.ndarray:
        points = np.atleast_2d(points) / self.scale
        actions = np.asarray(actions)
        out = np.zeros((len(points), points.shape[1] + self.n_actions))
        out[:, :points.shape[1]] = points
        out[np.arange(len(points)), points.shape[1] + actions] = 1.0
        return out

    def values(self, points: np.ndarray, q: int, actions=None) -> np.ndarray:
        """``(N, len(actions))`` Q-values of net ``q``."""
        points = np.atleast_2d(points)
        actions = self.actions_of_q[q] if actions is None else actions
        n = len(points)
        X = self.features(np.repeat(points, len(actions), axis=0), np.tile(actions, n))
        return self.nets[q].forward(X).reshape(n, len(actions))

    def max_value(self, points: np.ndarray, q: int) -> np.ndarray:
        return self.values(points, q).max(axis=1)


def hybridq_greedy(bank: HybridQ, ps: ProductState) -> int:
    acts = bank.actions_of_q[ps.q]
    vals = bank.values(np.asarray(ps.env, float), ps.q, acts)[0]
    return acts[int(np.argmax(vals))]


def _targets(bank: HybridQ, buf: Buffer, idx: np.ndarray, gamma: float, dead) -> np.ndarray:
    t = buf.r[idx].copy()
    if gamma == 0:
        return t
    q2 = buf.q2[idx]
    for q in np.unique(q2):
        if q == REJECTED or q in dead:
            continue
        sel = q2 == q
        t[sel] += gamma * bank.max_value(buf.s2[idx][sel], int(q))
    return t


def lcnfq_train(buf: Buffer, rt: ProductRuntime, hp: LcnfqParams = LcnfqParams(),
                s0=None) -> HybridQ:
    """Fit the bank to the experience buffer, sweeping from the highest automaton state down."""
    if len(buf) == 0:
        raise ValueError("empty experience buffer")
    A = rt.A
    rng = np.random.default_rng(hp.seed)
    scale = (rt.env.width, rt.env.height)
    actions_of_q = [rt.available_actions(ProductState(None, q)) for q in range(A.n_states)]
    dim = buf.s.shape[1]
    nets = [Mlp(dim + rt.n_actions, hp.hidden, rng) for _ in range(A.n_states)]
    bank = HybridQ(nets, rt.n_actions, scale, actions_of_q)
    s0 = buf.s[0] if s0 is None else np.asarray(s0, float)
    for q, net in enumerate(nets):
        acts = actions_of_q[q]
        a = acts[int(rng.integers(len(acts)))]
        rprop_fit(net, bank.features(s0, [a]), np.zeros(1), hp.init_epochs)
    groups = {q: np.flatnonzero(buf.q == q) for q in range(A.n_states)}
    for q, idx in groups.items():
        if len(idx) == 0:
            log.info("no experience for automaton state %d; its net keeps its initialisation", q)
    dead = rt.sinks
    prev = {}
    for sweep in range(hp.sweeps):
        drift = 0.0
        for q in range(A.n_states - 1, -1, -1):
            idx = groups[q]
            if len(idx) == 0:
                continue
            target = _targets(bank, buf, idx, hp.gamma, dead)
            if q in prev:
                drift = max(drift, float(np.abs(target - prev[q]).max()))
            else:
                drift = np.inf
            prev[q] = target
            rprop_fit(nets[q], bank.features(buf.s[idx], buf.a[idx]), target, hp.epochs)
        if drift < hp.tol:
            log.info("targets settled after %d sweeps", sweep + 1)
            break
    return bank


def dump_hybridq(bank: HybridQ) -> str:
    """Flat text dump: per net its topology then row-major weights at 17 significant digits."""
    fmt = lambda arr: " ".join(f"{v:.17g}" for v in np.ravel(arr))
    lines = [f"hybridq nets {len(bank.nets)} actions {bank.n_actions}",
             "scale " + fmt(bank.scale)]
    for q, net in enumerate(bank.nets):
        lines.append(f"net {q} inputs {net.n_in} hidden {net.hidden}")
        lines.append("actions " + " ".join(map(str, bank.actions_of_q[q])))
        for name, arr in zip(("W1", "b1", "w2", "b2"), net.params()):
            lines.append(f"{name} " + fmt(arr))
    return "\n".join(lines) + "\n"


def load_hybridq(text: str) -> HybridQ:
    lines = iter(text.splitlines())
    head = next(lines).split()
    n_nets, n_actions = int(head[2]), int(head[4])
    scale = [float(v) for v in next(lines).split()[1:]]
    nets, acts = [], []
    for _ in range(n_nets):
        h = next(lines).split()
        n_in, hidden = int(h[3]), int(h[5])
        acts.append([int(v) for v in next(lines).split()[1:]])
        net = Mlp(n_in, hidden)
        for arr in net.params():
            vals = np.array([float(v) for v in next(lines).split()[1:]])
            arr[...] = vals.reshape(arr.shape)
        nets.append(net)
    return HybridQ(nets, n_actions, scale, acts)
