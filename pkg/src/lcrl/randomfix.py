"""Random finite fixtures with known structure, used by the property checks."""
from __future__ import annotations

import numpy as np

from .environments import FiniteMDP


def layered_reach_avoid(rng, layers: int = 3, width: int = 4, n_actions: int = 3,
                        branching: int = 2) -> FiniteMDP:
    """Layered DAG that ends in an absorbing target ``t`` or an absorbing trap ``u``.

    Every path from the start reaches a terminal after exactly ``layers + 1``
    steps, so discounted return is proportional to the probability of reaching
    ``t``.  The last layer reaches ``t`` with probability strictly inside (0, 1)
    under every action, hence the optimum is strictly between 0 and 1.
    """
    n = 1 + layers * width + 2
    T, U = n - 2, n - 1
    P = np.zeros((n, n_actions, n))
    layer_states = [[0]] + [list(range(1 + i * width, 1 + (i + 1) * width)) for i in range(layers)]
    for i, layer in enumerate(layer_states):
        for s in layer:
            for a in range(n_actions):
                if i + 1 < len(layer_states):
                    nxt = rng.choice(layer_states[i + 1], size=branching, replace=False)
                    w = rng.dirichlet(np.ones(branching))
                    P[s, a, nxt] = w
                else:
                    pt = rng.uniform(0.05, 0.95)
                    P[s, a, T] = pt
                    P[s, a, U] = 1.0 - pt
    P[T, :, T] = 1.0
    P[U, :, U] = 1.0
    labels = [frozenset()] * n
    labels[T] = frozenset({"t"})
    labels[U] = frozenset({"u"})
    return FiniteMDP(P=P, state_labels=tuple(labels), initial=0)


def chain_with_blocked_set(rng, length: int = 6, n_actions: int = 3) -> FiniteMDP:
    """Random walk world where ``a`` is reachable but ``b`` never occurs.

    States form a line with left / right / stay actions and a random slip per
    state.  The ``a`` state sits at a random position and is absorbing, so a
    policy meets ``a`` recurrently iff it reaches it; stay-loops elsewhere are
    end components that meet no accepting set.
    """
    n = length
    P = np.zeros((n, n_actions, n))
    for s in range(n):
        slip = rng.uniform(0.0, 0.3)
        for a, d in enumerate((-1, 1, 0)[:n_actions]):
            t = min(max(s + d, 0), n - 1)
            P[s, a, t] += 1.0 - slip
            P[s, a, s] += slip / 2
            P[s, a, min(max(s + (1 if d <= 0 else -1), 0), n - 1)] += slip / 2
    a_pos = int(rng.integers(1, n))
    P[a_pos] = 0.0
    P[a_pos, :, a_pos] = 1.0
    labels = [frozenset()] * n
    labels[a_pos] = frozenset({"a"})
    return FiniteMDP(P=P, state_labels=tuple(labels), initial=0)
