"""On-the-fly product of an environment, an LDBA and an optional periodic obstacle.

Actions ``0 .. n_env-1`` are environment actions.  Action ``n_env + q`` is the
epsilon move that jumps the automaton to ``q`` without touching the
environment.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .automaton import REJECTED, Ldba, advance_frontier
from .environments import KripkeStructure, timed_labels


class ProductState(NamedTuple):
    env: object
    q: int
    k: Optional[int] = None


@dataclass(frozen=True)
class RewardParams:
    M: float = 1.0
    m: float = 0.05
    y: int = 0

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not 0 < self.m < self.M:
            raise ValueError("need 0 < m < M")
        if self.y not in (0, 1):
            raise ValueError("y must be 0 or 1")

    @property
    def bound(self) -> float:
        return self.M + self.y * self.m


class StepFlags(NamedTuple):
    sink: bool
    reset: bool       # the frontier was refilled on this step
    accepting: bool   # positive reward was paid


def reward_of(A: Ldba, q: int, frontier: int, params: RewardParams, rng) -> float:
    """Positive reward iff ``q`` lies in an accepting set still in the frontier."""
    noise = params.y * params.m * rng.random() if params.y else 0.0
    if any(frontier >> j & 1 for j in A.sets_of(q)):
        return params.M + noise
    return noise


class ProductRuntime:
    """Stateful product simulator owning its random stream and frontier."""

    def __init__(self, env, automaton: Ldba, kripke: Optional[KripkeStructure] = None,
                 reward: RewardParams = RewardParams(), seed: int = 0):
        self.env = env
        self.A = automaton
        self.K = kripke
        self.reward = reward
        self.sinks = automaton.sinks
        self.n_env = env.n_actions
        self.rng = np.random.default_rng(seed)
        self.frontier = automaton.full_frontier
        self.env_steps = 0
        self.state: Optional[ProductState] = None

    @property
    def n_actions(self) -> int:
        """Size of the joint action index space."""
        return self.n_env + self.A.n_states

    def reseed(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def reset(self, env_state=None, q: Optional[int] = None) -> ProductState:
        """Start a run; ``q`` overrides the automaton start (exploring starts)."""
        s0 = self.env.initial_state(self.rng) if env_state is None else env_state
        k0 = self.K.initial if self.K is not None else None
        self.frontier = self.A.full_frontier
        self.state = ProductState(s0, self.A.initial if q is None else q, k0)
        return self.state

    def available_actions(self, ps: ProductState) -> list[int]:
        if ps.q == REJECTED:
            return []
        return list(range(self.n_env)) + [self.n_env + t for t in self.A.epsilon[ps.q]]

    def is_sink(self, q: int) -> bool:
        return q in self.sinks

    def labels(self, s, k):
        if self.K is None:
            return self.env.labels(s)
        return timed_labels(self.env, self.K, s, k)

    def successor(self, ps: ProductState, a: int, env_next):
        """Product successor once the environment outcome ``env_next`` is known."""
        k2 = self.K.successor(ps.k) if self.K is not None else None
        if a >= self.n_env:
            return ProductState(ps.env, a - self.n_env, k2)
        return ProductState(env_next, self.A.step(ps.q, self.labels(env_next, k2)), k2)

    def step(self, a: int, ps: Optional[ProductState] = None):
        """Advance one step; returns ``(state', reward, flags)``."""
        ps = self.state if ps is None else ps
        n_env = self.n_env
        if a < n_env:
            env_next = self.env.step(ps.env, a, self.rng)
            self.env_steps += 1
        else:
            if ps.q == REJECTED or a - n_env not in self.A.epsilon[ps.q]:
                raise ValueError(f"action {a} not available at {ps}")
            env_next = ps.env
        nxt = self.successor(ps, a, env_next)
        r = reward_of(self.A, nxt.q, self.frontier, self.reward, self.rng)
        after, reset = advance_frontier(self.A, nxt.q, self.frontier)
        self.frontier = after
        self.state = nxt
        flags = StepFlags(sink=nxt.q in self.sinks, reset=reset,
                          accepting=r >= self.reward.M)
        return nxt, r, flags


@dataclass
class Rollout:
    success: bool
    steps: int
    resets: int
    sink: bool
    trajectory: list   # (step, state, action, reward)


def rollout(rt: ProductRuntime, policy, horizon: int, env_state=None,
            record: bool = False) -> Rollout:
    """Follow ``policy`` for ``horizon`` steps.

    Success means the frontier was refilled at least once and no sink was
    entered within the horizon.
    """
    ps = rt.reset(env_state)
    traj = []
    resets = 0
    t = 0
    while t < horizon:
        if ps.q in rt.sinks:
            break
        a = policy(ps)
        nxt, r, flags = rt.step(a)
        if record:
            traj.append((t, ps, a, r))
        resets += flags.reset
        ps = nxt
        t += 1
    sink = ps.q in rt.sinks
    if record:
        traj.append((t, ps, None, 0.0))
    return Rollout(success=resets > 0 and not sink, steps=t, resets=resets,
                   sink=sink, trajectory=traj)


def success_rate(rt: ProductRuntime, policy, horizon: int = 1000, rollouts: int = 100) -> float:
    if rollouts <= 0:
        return 0.0
    wins = sum(rollout(rt, policy, horizon).success for _ in range(rollouts))
    return wins / rollouts
