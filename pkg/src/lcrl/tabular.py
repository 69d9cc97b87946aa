"""Tabular logically-constrained Q-learning with online satisfaction-probability estimates.

The learner walks the on-the-fly product, updates Q-values, keeps visit counts
from which an empirical kernel is read, and refreshes the probability of
satisfying the property (PSP) at each visited state by a Gauss-Seidel local
update over that empirical kernel.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .automaton import REJECTED
from .product import ProductRuntime, ProductState


@dataclass
class Hyperparams:
    mu: float = 0.9                 # learning rate
    gamma: float = 0.9              # constant discount
    eta: Optional[float] = None     # set to use the state-dependent discount
    episodes: int = 1000
    it_threshold: int = 200         # max steps per episode
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5     # fraction of episodes over which epsilon decays
    lr_decay: float = 0.0           # mu / (1 + lr_decay * observations of (s, a))
    stable_tol: Optional[float] = None  # stop after 10 episodes with max |dQ| below this
    stable_window: int = 10
    transfer: bool = False          # cross-clock Q propagation (needs a Kripke clock)
    random_start: bool = False      # start episodes from a uniformly drawn environment state
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mu <= 1:
            raise ValueError("mu must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.eta is not None and not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.episodes < 0 or self.it_threshold < 0:
            raise ValueError("episode budget must be non-negative")

    def epsilon(self, episode: int) -> float:
        span = max(1, int(self.episodes * self.eps_decay_frac))
        if episode >= span:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * episode / span


class QTable:
    """Q-values per product state over the joint action index space, default 0."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.values: dict = {}

    def row(self, ps) -> np.ndarray:
        r = self.values.get(ps)
        if r is None:
            r = np.zeros(self.n_actions)
            self.values[ps] = r
        return r

    def get(self, ps, a: int) -> float:
        r = self.values.get(ps)
        return 0.0 if r is None else float(r[a])

    def max_over(self, ps, actions) -> float:
        r = self.values.get(ps)
        if r is None or not actions:
            return 0.0
        return float(r[actions].max())

    def argmax_over(self, ps, actions) -> int:
        r = self.values.get(ps)
        if r is None:
            return actions[0]
        vals = r[actions]
        return actions[int(np.argmax(vals))]  # first maximum: lowest action index

    def copy(self) -> "QTable":
        out = QTable(self.n_actions)
        out.values = {k: v.copy() for k, v in self.values.items()}
        return out


class Counts:
    """Visit counters: ``Psi[(s, a)]`` starts at 1, ``psi[(s, a)][s']`` at 0."""

    def __init__(self):
        self.Psi: dict = defaultdict(lambda: 1)
        self.psi: dict = defaultdict(lambda: defaultdict(int))
        self.visits: dict = defaultdict(int)   # actions taken from each state

    def observations(self, ps, a) -> int:
        return self.Psi.get((ps, a), 1) - 1

    def kernel(self, ps, a) -> dict:
        """Empirical successor distribution; empty if (s, a) was never tried."""
        total = self.Psi.get((ps, a), 1)
        if total < 2:
            return {}
        return {t: c / total for t, c in self.psi[(ps, a)].items()}

    def tried_actions(self, ps, actions):
        return [a for a in actions if self.Psi.get((ps, a), 1) >= 2]


def count_update(counts: Counts, ps, a, nxt) -> None:
    key = (ps, a)
    counts.visits[ps] += 1
    counts.Psi[key] += 1
    if counts.Psi[key] == 2:
        # first observation: full belief in the observed successor
        counts.psi[key][nxt] = 2
    else:
        counts.psi[key][nxt] += 1


def effective_gamma(r: float, hp: Hyperparams) -> float:
    if hp.eta is None:
        return hp.gamma
    return hp.eta if r > 0 else 1.0


def q_update(Q: QTable, ps, a: int, r: float, nxt, next_actions, hp: Hyperparams,
             mu: Optional[float] = None) -> float:
    mu = hp.mu if mu is None else mu
    row = Q.row(ps)
    target = r + effective_gamma(r, hp) * Q.max_over(nxt, next_actions)
    row[a] += mu * (target - row[a])
    return float(row[a])


class PspVector:
    """Sparse satisfaction-probability estimates; unseen states read 1, sinks 0."""

    def __init__(self, sinks):
        self.sinks = frozenset(sinks)
        self.values: dict = {}

    def initial(self, ps) -> float:
        return 0.0 if ps.q in self.sinks else 1.0

    def get(self, ps) -> float:
        v = self.values.get(ps)
        return self.initial(ps) if v is None else v

    def __getitem__(self, ps) -> float:
        return self.get(ps)


def psp_local_update(psp: PspVector, ps, counts: Counts, actions) -> float:
    """Max over tried actions of the empirical expectation of neighbour PSP values."""
    if ps.q in psp.sinks:
        psp.values[ps] = 0.0
        return 0.0
    best = None
    for a in actions:
        dist = counts.kernel(ps, a)
        if not dist:
            continue
        v = sum(p * psp.get(t) for t, p in dist.items())
        if best is None or v > best:
            best = v
    if best is None:
        return psp.get(ps)
    best = min(1.0, max(0.0, best))
    psp.values[ps] = best
    return best


def psp_sweep(psp: PspVector, counts: Counts, actions_of: Callable, states=None,
              tol: float = 1e-10, max_sweeps: int = 100_000) -> int:
    """Repeat Gauss-Seidel local updates over ``states`` until the change is below ``tol``."""
    states = list(psp.values) if states is None else list(states)
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for ps in states:
            old = psp.get(ps)
            change = max(change, abs(psp_local_update(psp, ps, counts, actions_of(ps)) - old))
        if change < tol:
            return sweep
    return max_sweeps


def psp_from_counts(counts: Counts, sinks, actions_of: Callable, tol: float = 1e-10) -> PspVector:
    """Fresh Gauss-Seidel solve from the all-ones start over the current empirical kernel.

    Online local updates can settle below this fixed point when a state's value
    drops before its self-loop action is first observed; a fresh solve does not.
    """
    psp = PspVector(sinks)
    states = list(counts.visits)
    for ps in states:
        psp.values[ps] = psp.initial(ps)
    psp_sweep(psp, counts, actions_of, states, tol=tol)
    return psp


def transfer_update(Q: QTable, ps: ProductState, a: int, n_clock: int) -> None:
    """Echo ``Q(s, q, k, a)`` to every other clock value ``k'`` through a max."""
    v = Q.get(ps, a)
    for k2 in range(n_clock):
        if k2 == ps.k:
            continue
        other = ProductState(ps.env, ps.q, k2)
        row = Q.row(other)
        if v > row[a]:
            row[a] = v


def greedy_policy(Q: QTable, actions_of: Callable) -> Callable:
    """Deterministic argmax policy; ties go to the lowest action index."""
    def policy(ps):
        return Q.argmax_over(ps, actions_of(ps))
    return policy


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    total_reward: float
    frontier_resets: int
    sink_hit: bool


@dataclass
class LcqlResult:
    Q: QTable
    psp: PspVector
    counts: Counts
    curve: list = field(default_factory=list)
    steps: int = 0

    def actions_of(self, rt: ProductRuntime) -> Callable:
        return action_lister(rt)

    def policy(self, rt: ProductRuntime) -> Callable:
        return greedy_policy(self.Q, action_lister(rt))


def action_lister(rt: ProductRuntime) -> Callable:
    cache = {}

    def actions_of(ps):
        a = cache.get(ps.q)
        if a is None:
            a = rt.available_actions(ps)
            cache[ps.q] = a
        return a
    return actions_of


def lcql_train(rt: ProductRuntime, hp: Hyperparams,
               checkpoint: Optional[Callable] = None, checkpoint_every=0,
               Q: Optional[QTable] = None) -> LcqlResult:
    """Episodic Q-learning over the product with online PSP refreshes.

    ``checkpoint(episode, result)`` is invoked after every ``checkpoint_every``
    episodes, or after each episode count listed when a collection is given.
    """
    if isinstance(checkpoint_every, int):
        marks = (set(range(checkpoint_every, hp.episodes + 1, checkpoint_every))
                 if checkpoint_every > 0 else set())
    else:
        marks = set(checkpoint_every)
    if not getattr(rt.env, "finite", False):
        raise ValueError("tabular learning needs a finite environment")
    rt.reseed(hp.seed)
    rng = np.random.default_rng([hp.seed, 1])
    Q = QTable(rt.n_actions) if Q is None else Q
    counts = Counts()
    psp = PspVector(rt.sinks)
    res = LcqlResult(Q, psp, counts)
    actions_of = action_lister(rt)
    sinks = rt.sinks
    n_clock = rt.K.n_states if (hp.transfer and rt.K is not None) else 0
    starts = list(rt.env.states()) if hp.random_start else None
    quiet = 0
    for ep in range(hp.episodes):
        eps = hp.epsilon(ep)
        ps = rt.reset(starts[int(rng.integers(len(starts)))] if starts else None)
        total = 0.0
        resets = 0
        sink_hit = ps.q in sinks
        max_change = 0.0
        t = 0
        while not sink_hit and t < hp.it_threshold:
            acts = actions_of(ps)
            if rng.random() < eps:
                a = acts[int(rng.integers(len(acts)))]
            else:
                a = Q.argmax_over(ps, acts)
            nxt, r, flags = rt.step(a)
            count_update(counts, ps, a, nxt)
            mu = hp.mu
            if hp.lr_decay:
                mu = hp.mu / (1.0 + hp.lr_decay * (counts.Psi[(ps, a)] - 2))
            old = Q.get(ps, a)
            new = q_update(Q, ps, a, r, nxt,
                           actions_of(nxt) if nxt.q != REJECTED else [], hp, mu)
            max_change = max(max_change, abs(new - old))
            if n_clock:
                transfer_update(Q, ps, a, n_clock)
            psp_local_update(psp, ps, counts, acts)
            total += r
            resets += flags.reset
            sink_hit = flags.sink
            ps = nxt
            t += 1
        if sink_hit:
            psp.values[ps] = 0.0
        res.steps += t
        res.curve.append(EpisodeRecord(ep, t, total, resets, sink_hit))
        if checkpoint is not None and ep + 1 in marks:
            checkpoint(ep + 1, res)
        if hp.stable_tol is not None:
            quiet = quiet + 1 if max_change < hp.stable_tol else 0
            if quiet >= hp.stable_window:
                break
    return res


def first_success_episode(curve) -> Optional[int]:
    """Index of the first episode whose frontier was refilled at least once."""
    for rec in curve:
        if rec.frontier_resets > 0:
            return rec.episode
    return None
