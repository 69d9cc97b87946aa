"""Exact certification oracle for finite products.

Builds the reachable product explicitly, decomposes it into maximal end
components, and computes maximal reachability of the accepting ones as well
as the satisfaction probability of a fixed memoryless policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import networkx as nx
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .automaton import REJECTED, Ldba
from .environments import KripkeStructure, timed_labels
from .product import ProductState

REJECTED_STATE = ProductState(None, REJECTED, None)


@dataclass
class ExplicitProduct:
    states: list                      # index -> ProductState
    index: dict                       # ProductState -> index
    actions: list                     # index -> list of joint action ids
    succ: list                        # index -> {action: [(j, p), ...]}
    accepting: list                   # per accepting set: frozenset of indices
    sink: np.ndarray                  # bool per index
    initial: int = 0
    n_env_actions: int = 0

    @property
    def n(self) -> int:
        return len(self.states)

    def rows(self):
        """Flattened (state, action, successors) triples."""
        for i in range(self.n):
            for a in self.actions[i]:
                yield i, a, self.succ[i][a]

    def matrix(self):
        """Sparse row-per-(state, action) kernel plus the owning state of each row."""
        data, cols, indptr, owner, acts = [], [], [0], [], []
        for i, a, dist in self.rows():
            for j, p in dist:
                cols.append(j)
                data.append(p)
            indptr.append(len(cols))
            owner.append(i)
            acts.append(a)
        P = sp.csr_matrix((data, cols, indptr), shape=(len(owner), self.n))
        return P, np.asarray(owner), np.asarray(acts)


def build_explicit_product(env, A: Ldba, kripke: Optional[KripkeStructure] = None) -> ExplicitProduct:
    if not getattr(env, "finite", False) or not hasattr(env, "transition"):
        raise ValueError("oracle unavailable: the environment exposes no exact kernel")
    n_env = env.n_actions
    k0 = kripke.initial if kripke is not None else None
    s0 = ProductState(env.initial_state(None), A.initial, k0)
    states = [s0]
    index = {s0: 0}
    actions, succ = [], []
    label_cache = {}

    def labels(s, k):
        key = (s, k)
        v = label_cache.get(key)
        if v is None:
            v = env.labels(s) if kripke is None else timed_labels(env, kripke, s, k)
            label_cache[key] = v
        return v

    def idx(ps):
        j = index.get(ps)
        if j is None:
            j = len(states)
            index[ps] = j
            states.append(ps)
        return j

    i = 0
    while i < len(states):
        ps = states[i]
        if ps.q == REJECTED:
            actions.append([0])
            succ.append({0: [(i, 1.0)]})
            i += 1
            continue
        k2 = kripke.successor(ps.k) if kripke is not None else None
        acts = list(range(n_env)) + [n_env + t for t in A.epsilon[ps.q]]
        row = {}
        for a in acts:
            if a >= n_env:
                row[a] = [(idx(ProductState(ps.env, a - n_env, k2)), 1.0)]
                continue
            dist: dict = {}
            for s2, p in env.transition(ps.env, a):
                q2 = A.step(ps.q, labels(s2, k2))
                nxt = REJECTED_STATE if q2 == REJECTED else ProductState(s2, q2, k2)
                j = idx(nxt)
                dist[j] = dist.get(j, 0.0) + p
            row[a] = list(dist.items())
        actions.append(acts)
        succ.append(row)
        i += 1
    accepting = [frozenset(i for i, ps in enumerate(states) if ps.q in F) for F in A.accepting]
    sink = np.array([ps.q in A.sinks for ps in states], dtype=bool)
    return ExplicitProduct(states, index, actions, succ, accepting, sink, 0, n_env)


# --------------------------------------------------------------------------
# End components
# --------------------------------------------------------------------------

@dataclass
class Mec:
    states: frozenset
    actions: dict          # state index -> frozenset of actions staying inside
    accepting: bool = False


def end_components_within(p: ExplicitProduct, allowed: dict) -> list:
    """Maximal end components of the sub-MDP given by ``allowed`` (state -> actions)."""
    allowed = {s: set(acts) for s, acts in allowed.items() if acts}
    while True:
        G = nx.DiGraph()
        G.add_nodes_from(allowed)
        for s, acts in allowed.items():
            for a in acts:
                for j, _ in p.succ[s][a]:
                    if j in allowed:
                        G.add_edge(s, j)
        comp = {}
        for c, members in enumerate(nx.strongly_connected_components(G)):
            for s in members:
                comp[s] = c
        changed = False
        for s in list(allowed):
            keep = {a for a in allowed[s]
                    if all(j in comp and comp[j] == comp[s] for j, _ in p.succ[s][a])}
            if keep != allowed[s]:
                changed = True
                allowed[s] = keep
            if not keep:
                del allowed[s]
        if not changed:
            break
    groups: dict = {}
    for s in allowed:
        groups.setdefault(comp[s], set()).add(s)
    return [Mec(frozenset(g), {s: frozenset(allowed[s]) for s in g}) for g in groups.values()]


def compute_mecs(p: ExplicitProduct) -> list:
    mecs = end_components_within(p, {i: p.actions[i] for i in range(p.n)})
    for m in mecs:
        m.accepting = all(m.states & F for F in p.accepting)
    mecs.sort(key=lambda m: min(m.states))
    return mecs


def accepting_targets(p: ExplicitProduct, mecs=None) -> frozenset:
    mecs = compute_mecs(p) if mecs is None else mecs
    out = set()
    for m in mecs:
        if m.accepting:
            out |= m.states
    return frozenset(out)


# --------------------------------------------------------------------------
# Reachability
# --------------------------------------------------------------------------

def can_reach(p: ExplicitProduct, targets) -> np.ndarray:
    """States with a graph path into ``targets`` (under some action choice)."""
    pred = [[] for _ in range(p.n)]
    for i, a, dist in p.rows():
        for j, _ in dist:
            pred[j].append(i)
    mask = np.zeros(p.n, dtype=bool)
    stack = [int(t) for t in targets]
    mask[stack] = True
    while stack:
        j = stack.pop()
        for i in pred[j]:
            if not mask[i]:
                mask[i] = True
                stack.append(i)
    return mask


def bellman_T(p: ExplicitProduct, x: np.ndarray, P=None, owner=None) -> np.ndarray:
    """One synchronous application of ``max_a sum_s' P(s, a, s') x(s')``."""
    if P is None:
        P, owner, _ = p.matrix()
    vals = P @ x
    out = np.full(p.n, -np.inf)
    np.maximum.at(out, owner, vals)
    return out


def max_reach_vi(p: ExplicitProduct, targets, tol: float = 1e-9, method: str = "jacobi",
                 max_iter: int = 1_000_000, check_monotone: bool = False) -> np.ndarray:
    """Maximal probability of reaching ``targets`` from every product state."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    targets = np.asarray(sorted(targets), dtype=int)
    x = np.zeros(p.n)
    if targets.size == 0:
        return x
    reach = can_reach(p, targets)
    pinned = ~reach
    pinned[targets] = True
    x[targets] = 1.0
    free = np.flatnonzero(~pinned)
    if method == "jacobi":
        P, owner, _ = p.matrix()
        for _ in range(max_iter):
            y = bellman_T(p, x, P, owner)
            y[pinned] = x[pinned]
            if check_monotone and np.any(y < x - 1e-15):
                raise AssertionError("value iteration decreased")
            delta = np.max(np.abs(y - x)) if y.size else 0.0
            x = y
            if delta < tol:
                break
        return x
    if method == "gauss-seidel":
        for _ in range(max_iter):
            delta = 0.0
            for i in free:
                best = max(sum(q * x[j] for j, q in p.succ[i][a]) for a in p.actions[i])
                delta = max(delta, abs(best - x[i]))
                x[i] = best
            if delta < tol:
                break
        return x
    raise ValueError(f"unknown method {method!r}")


def oracle_psp(p: ExplicitProduct, tol: float = 1e-9) -> np.ndarray:
    """Maximal satisfaction probability per product state."""
    return max_reach_vi(p, accepting_targets(p), tol=tol)


def greedy_from_values(p: ExplicitProduct, x: np.ndarray, targets=()) -> dict:
    """A memoryless policy that attains the values ``x``.

    Inside accepting end components it plays actions that stay inside; the
    rest is chosen by attractor layering over value-optimal actions, so the
    policy actually progresses toward the targets instead of idling.
    """
    policy = {}
    mecs = compute_mecs(p)
    done = set()
    for m in mecs:
        if m.accepting:
            # in-tree towards an accepting representative; exact for one accepting set
            root = min(m.states & p.accepting[0])
            G = nx.DiGraph()
            for s in m.states:
                for a in m.actions[s]:
                    for j, _ in p.succ[s][a]:
                        G.add_edge(j, s, action=a)
            order = nx.bfs_edges(G, root)
            for u, v in order:
                if v not in policy:
                    policy[v] = G.edges[u, v]["action"]
            policy[root] = min(m.actions[root])
            done |= m.states
    frontier = set(done)
    remaining = set(range(p.n)) - done
    opt = {}
    for i in remaining:
        vals = {a: sum(q * x[j] for j, q in p.succ[i][a]) for a in p.actions[i]}
        best = max(vals.values())
        opt[i] = [a for a, v in vals.items() if v >= best - 1e-9]
    while True:
        added = False
        for i in sorted(remaining):
            if x[i] <= 0:
                continue
            for a in opt[i]:
                if any(j in frontier for j, _ in p.succ[i][a]):
                    policy[i] = a
                    frontier.add(i)
                    remaining.discard(i)
                    added = True
                    break
        if not added:
            break
    for i in remaining:
        policy[i] = opt[i][0]
    return policy


# --------------------------------------------------------------------------
# Fixed policies
# --------------------------------------------------------------------------

def _induced_chain(p: ExplicitProduct, policy: Callable):
    choice = {}
    stack = [p.initial]
    seen = {p.initial}
    while stack:
        i = stack.pop()
        a = policy(p.states[i])
        if a not in p.succ[i]:
            a = p.actions[i][0]
        choice[i] = a
        for j, _ in p.succ[i][a]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return choice


def _bsccs(p: ExplicitProduct, choice: dict):
    G = nx.DiGraph()
    G.add_nodes_from(choice)
    for i, a in choice.items():
        for j, _ in p.succ[i][a]:
            G.add_edge(i, j)
    C = nx.condensation(G)
    return G, [frozenset(C.nodes[c]["members"]) for c in C.nodes if C.out_degree(c) == 0]


def _as_callable(p: ExplicitProduct, policy):
    """Accept a callable, a dict keyed by product state, or a dict keyed by state index."""
    if callable(policy):
        return policy
    if policy and all(isinstance(k, (int, np.integer)) for k in policy):
        return lambda ps: policy[p.index[ps]]
    return lambda ps: policy[ps]


def policy_satisfaction(p: ExplicitProduct, policy, return_all: bool = False):
    """Probability that the memoryless ``policy`` satisfies the property from the start."""
    choice = _induced_chain(p, _as_callable(p, policy))
    G, bottoms = _bsccs(p, choice)
    good = set()
    for b in bottoms:
        if all(b & F for F in p.accepting):
            good |= b
    order = sorted(choice)
    pos = {s: k for k, s in enumerate(order)}
    x = np.zeros(len(order))
    if good:
        reach = set(good)
        for g in good:
            reach |= nx.ancestors(G, g)
        unknown = [s for s in order if s in reach and s not in good]
        for s in good:
            x[pos[s]] = 1.0
        if unknown:
            upos = {s: k for k, s in enumerate(unknown)}
            rows, cols, vals = [], [], []
            b = np.zeros(len(unknown))
            for s in unknown:
                r = upos[s]
                rows.append(r)
                cols.append(r)
                vals.append(1.0)
                for j, q in p.succ[s][choice[s]]:
                    if j in good:
                        b[r] += q
                    elif j in upos:
                        rows.append(r)
                        cols.append(upos[j])
                        vals.append(-q)
            M = sp.csc_matrix((vals, (rows, cols)), shape=(len(unknown), len(unknown)))
            sol = spla.spsolve(M, b)
            for s in unknown:
                x[pos[s]] = sol[upos[s]]
    x = np.clip(x, 0.0, 1.0)
    if return_all:
        return {p.states[s]: x[pos[s]] for s in order}
    return float(x[pos[p.initial]])


def accepting_sets_touched(p: ExplicitProduct, policy) -> int:
    """Max over reachable recurrent classes of the number of accepting sets met."""
    choice = _induced_chain(p, _as_callable(p, policy))
    _, bottoms = _bsccs(p, choice)
    return max((sum(1 for F in p.accepting if b & F) for b in bottoms), default=0)


def max_accepting_sets_touchable(p: ExplicitProduct) -> int:
    """Largest number of accepting sets any end component reachable from the start meets."""
    reach = nx.descendants(_graph(p), p.initial) | {p.initial}
    best = 0
    for m in compute_mecs(p):
        if m.states & reach:
            best = max(best, sum(1 for F in p.accepting if m.states & F))
    return best


def _graph(p: ExplicitProduct) -> nx.DiGraph:
    G = nx.DiGraph()
    G.add_nodes_from(range(p.n))
    for i, a, dist in p.rows():
        for j, _ in dist:
            G.add_edge(i, j)
    return G


def psp_diff(p: ExplicitProduct, oracle: np.ndarray, learned: dict) -> list:
    """``(state, learned, oracle, abs_err)`` rows for every state with a learned value."""
    rows = []
    for ps, v in learned.items():
        i = p.index.get(ps)
        if i is None:
            continue
        rows.append((ps, v, float(oracle[i]), abs(v - float(oracle[i]))))
    return rows
