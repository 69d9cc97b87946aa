"""Limit-deterministic generalised Buchi automata.

Guards are Boolean formulas over atomic propositions, parsed from the
``! > & > |`` grammar.  Automata are loaded from a small line-oriented text
format (see :func:`load_automaton`) and are immutable once built.

Accepting sets are 1-indexed in files and 0-indexed in code.  The accepting
frontier is an ``int`` bit set over those 0-based indices.
"""
from __future__ import annotations

import itertools
import re
import shlex
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import networkx as nx

# Virtual state entered when no guard matches; always part of the sinks.
REJECTED = -1

_IDENT = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")


class GuardParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class AutomatonError(ValueError):
    """Raised when an automaton document is malformed or not limit-deterministic."""


class LimitDeterminismError(AutomatonError):
    """The document parses but breaks the limit-deterministic structure."""


# --------------------------------------------------------------------------
# Guards
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Atom:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not:
    arg: "Guard"

    def __str__(self):
        return f"!{_wrap(self.arg, 3)}"


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"

    def __str__(self):
        return f"{_wrap(self.left, 2)} & {_wrap(self.right, 3)}"


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"

    def __str__(self):
        return f"{_wrap(self.left, 1)} | {_wrap(self.right, 2)}"


Guard = Union[Const, Atom, Not, And, Or]
TRUE = Const(True)
FALSE = Const(False)

_BINDING = {Or: 1, And: 2, Not: 3, Atom: 4, Const: 4}


def _wrap(g: Guard, level: int) -> str:
    # Left-nested chains of the same operator print without parentheses; a
    # right operand of equal binding needs them to keep the tree shape.
    s = str(g)
    return s if _BINDING[type(g)] >= level else f"({s})"


def _tokenize(text: str):
    tokens = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "!&|()":
            tokens.append((c, i))
            i += 1
        else:
            m = _IDENT.match(text, i)
            if m is None:
                raise GuardParseError(f"unexpected character {c!r}", i)
            tokens.append((m.group(), i))
            i = m.end()
    tokens.append(("<end>", len(text)))
    return tokens


class _GuardParser:
    def __init__(self, text: str, props: Iterable[str]):
        self.tokens = _tokenize(text)
        self.props = set(props)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Guard:
        if self.peek()[0] == "<end>":
            raise GuardParseError("empty guard", 0)
        g = self.disjunction()
        tok, pos = self.peek()
        if tok != "<end>":
            raise GuardParseError(f"unexpected {tok!r}", pos)
        return g

    def disjunction(self) -> Guard:
        g = self.conjunction()
        while self.peek()[0] == "|":
            self.take()
            g = Or(g, self.conjunction())
        return g

    def conjunction(self) -> Guard:
        g = self.unary()
        while self.peek()[0] == "&":
            self.take()
            g = And(g, self.unary())
        return g

    def unary(self) -> Guard:
        tok, pos = self.take()
        if tok == "!":
            return Not(self.unary())
        if tok == "(":
            g = self.disjunction()
            close, cpos = self.take()
            if close != ")":
                raise GuardParseError("unbalanced parenthesis, expected ')'", cpos)
            return g
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if tok in ("<end>", ")", "&", "|"):
            raise GuardParseError(f"expected operand, found {tok!r}", pos)
        if tok not in self.props:
            raise GuardParseError(f"unknown atom {tok!r}", pos)
        return Atom(tok)


def parse_guard(text: str, props: Iterable[str]) -> Guard:
    """Parse a guard such as ``"!u & t"`` over the given proposition names."""
    return _GuardParser(text, props).parse()


def eval_guard(g: Guard, labels) -> bool:
    if isinstance(g, Atom):
        return g.name in labels
    if isinstance(g, Not):
        return not eval_guard(g.arg, labels)
    if isinstance(g, And):
        return eval_guard(g.left, labels) and eval_guard(g.right, labels)
    if isinstance(g, Or):
        return eval_guard(g.left, labels) or eval_guard(g.right, labels)
    return g.value


def guard_atoms(g: Guard) -> set[str]:
    if isinstance(g, Atom):
        return {g.name}
    if isinstance(g, Not):
        return guard_atoms(g.arg)
    if isinstance(g, (And, Or)):
        return guard_atoms(g.left) | guard_atoms(g.right)
    return set()


# --------------------------------------------------------------------------
# Automaton
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ldba:
    aps: tuple[str, ...]
    n_states: int
    initial: int
    transitions: tuple[tuple[tuple[Guard, int], ...], ...]
    epsilon: tuple[tuple[int, ...], ...]
    accepting: tuple[frozenset, ...]
    nondet: frozenset = field(default_factory=frozenset)
    det: frozenset = field(default_factory=frozenset)

    @property
    def n_sets(self) -> int:
        return len(self.accepting)

    @property
    def full_frontier(self) -> int:
        return (1 << len(self.accepting)) - 1

    @cached_property
    def _ap_bit(self) -> dict:
        return {a: 1 << i for i, a in enumerate(self.aps)}

    @cached_property
    def _table(self) -> tuple[tuple[int, ...], ...]:
        # Successor for every (state, valuation bitmask); REJECTED if no guard holds.
        rows = []
        for q in range(self.n_states):
            row = []
            for mask in range(1 << len(self.aps)):
                labels = self.valuation(mask)
                tgt = REJECTED
                for g, t in self.transitions[q]:
                    if eval_guard(g, labels):
                        tgt = t
                        break
                row.append(tgt)
            rows.append(tuple(row))
        return tuple(rows)

    @cached_property
    def _membership(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(j for j, F in enumerate(self.accepting) if q in F)
            for q in range(self.n_states))

    @cached_property
    def sinks(self) -> frozenset:
        return compute_sinks(self)

    def valuation(self, mask: int) -> frozenset:
        return frozenset(a for i, a in enumerate(self.aps) if mask >> i & 1)

    def label_mask(self, labels) -> int:
        bits = self._ap_bit
        mask = 0
        for a in labels:
            mask |= bits.get(a, 0)
        return mask

    def step(self, q: int, labels) -> int:
        if q == REJECTED:
            return REJECTED
        return self._table[q][self.label_mask(labels)]

    def sets_of(self, q: int) -> tuple[int, ...]:
        """0-based indices of the accepting sets containing ``q``."""
        if q == REJECTED:
            return ()
        return self._membership[q]

    def is_accepting(self, q: int) -> bool:
        return bool(self.sets_of(q))

    def successors(self, q: int) -> set[int]:
        """Explicit successors through guarded and epsilon edges."""
        return {t for _, t in self.transitions[q]} | set(self.epsilon[q])

    def state_name(self, q: int) -> str:
        return "REJECTED" if q == REJECTED else f"q{q}"


def ldba_step(A: Ldba, q: int, labels) -> int:
    return A.step(q, labels)


def accepting_frontier(A: Ldba, q: int, frontier: int) -> int:
    """Remove from ``frontier`` every set containing ``q``, resetting when it would empty.

    Sets containing ``q`` are processed in ascending index order.  When the
    frontier is exactly ``{j}`` it becomes all sets except ``j``; with a single
    accepting set that complement is empty, so the full family is restored.
    """
    return advance_frontier(A, q, frontier)[0]


def advance_frontier(A: Ldba, q: int, frontier: int) -> tuple[int, bool]:
    """:func:`accepting_frontier` plus whether a reset (refill) happened."""
    full = A.full_frontier
    reset = False
    for j in A.sets_of(q):
        bit = 1 << j
        if frontier == bit:
            frontier = (full & ~bit) or full
            reset = True
        else:
            frontier &= ~bit
    return frontier, reset


def frontier_members(frontier: int) -> list[int]:
    return [j for j in range(frontier.bit_length()) if frontier >> j & 1]


def _graph(A: Ldba) -> nx.DiGraph:
    G = nx.DiGraph()
    G.add_nodes_from(range(A.n_states))
    for q in range(A.n_states):
        for t in A.successors(q):
            G.add_edge(q, t)
    return G


def compute_sinks(A: Ldba) -> frozenset:
    """Union of bottom SCCs that cannot visit every accepting set, plus REJECTED.

    A bottom SCC made of one state without a self-loop cannot be visited
    infinitely often and is reported as a sink as well.
    """
    G = _graph(A)
    C = nx.condensation(G)
    sinks = {REJECTED}
    for c in C.nodes:
        if C.out_degree(c) > 0:
            continue
        members = C.nodes[c]["members"]
        recurrent = len(members) > 1 or any(G.has_edge(q, q) for q in members)
        if not recurrent or any(not (F & members) for F in A.accepting):
            sinks |= members
    return frozenset(sinks)


def validate_limit_determinism(A: Ldba) -> list[str]:
    """Every violated invariant as a readable message; empty iff valid."""
    report = []
    n = A.n_states
    if n < 1:
        report.append("automaton has no states")
        return report
    if not 0 <= A.initial < n:
        report.append(f"initial state {A.initial} out of range")
    if not A.accepting:
        report.append("no accepting sets")
    for q in range(n):
        for _, t in A.transitions[q]:
            if not 0 <= t < n:
                report.append(f"transition target {t} of q{q} out of range")
        for t in A.epsilon[q]:
            if not 0 <= t < n:
                report.append(f"epsilon target {t} of q{q} out of range")
    for j, F in enumerate(A.accepting, start=1):
        for q in sorted(F):
            if not 0 <= q < n:
                report.append(f"accepting set F{j} names state {q} out of range")
    if report:
        return report

    everything = frozenset(range(n))
    if A.det | A.nondet != everything or A.det & A.nondet:
        report.append("partition: Q_N and Q_D must split the states")
    for j, F in enumerate(A.accepting, start=1):
        for q in sorted(F - A.det):
            report.append(f"accepting state q{q} of F{j} outside Q_D")
    for q in sorted(A.det):
        if A.epsilon[q]:
            report.append(f"epsilon out of Q_D at q{q}")
        for _, t in A.transitions[q]:
            if t not in A.det:
                report.append(f"transition q{q} -> q{t} leaves Q_D")
    for q in range(n):
        edges = A.transitions[q]
        for (g1, t1), (g2, t2) in itertools.combinations(edges, 2):
            witness = _overlap_witness(A.aps, g1, g2)
            if witness is not None:
                shown = "{" + ",".join(sorted(witness)) + "}"
                report.append(
                    f"nondeterministic guards at q{q}: '{g1}'->q{t1} and "
                    f"'{g2}'->q{t2} both hold on {shown}")
    return report


def _overlap_witness(aps: Sequence[str], g1: Guard, g2: Guard):
    for bits in itertools.product((False, True), repeat=len(aps)):
        labels = frozenset(a for a, b in zip(aps, bits) if b)
        if eval_guard(g1, labels) and eval_guard(g2, labels):
            return labels
    return None


def infer_partition(n: int, transitions, epsilon, accepting) -> tuple[frozenset, frozenset]:
    """(Q_N, Q_D) for a file without a ``partition:`` line.

    Without epsilon edges the automaton is deterministic and every state is in
    Q_D.  Otherwise Q_D is the forward closure of the accepting states and the
    epsilon targets.
    """
    if not any(epsilon):
        return frozenset(), frozenset(range(n))
    seeds = set().union(*accepting) | {t for ts in epsilon for t in ts}
    det = set(seeds)
    stack = list(seeds)
    while stack:
        q = stack.pop()
        for t in [t for _, t in transitions[q]] + list(epsilon[q]):
            if t not in det:
                det.add(t)
                stack.append(t)
    det = frozenset(det)
    return frozenset(range(n)) - det, det


def _int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise AutomatonError(f"line {lineno}: {what} must be an integer, got {value!r}") from None


def _state_set(text: str, lineno: int) -> frozenset:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise AutomatonError(f"line {lineno}: expected a set like {{0,1}}, got {text!r}")
    body = text[1:-1].strip()
    if not body:
        return frozenset()
    return frozenset(_int(x.strip(), "state", lineno) for x in body.split(","))


def load_automaton(source: str) -> Ldba:
    """Build and validate an :class:`Ldba` from the text format::

        aps: t u
        states: 3
        initial: 0
        partition: N={} D={0,1,2}     # optional
        accept: F1={1}
        trans: 0 "(!u)&t" 1
        eps: 1 2
    """
    aps = None
    n = None
    initial = 0
    partition = None
    accepting: dict[int, frozenset] = {}
    raw_trans = []
    raw_eps = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise AutomatonError(f"line {lineno}: expected 'key: value', got {line!r}")
        key = key.strip()
        rest = rest.strip()
        if key == "aps":
            aps = tuple(rest.split())
            for a in aps:
                if not _IDENT.fullmatch(a) or a in ("true", "false"):
                    raise AutomatonError(f"line {lineno}: invalid proposition name {a!r}")
            if len(set(aps)) != len(aps):
                raise AutomatonError(f"line {lineno}: duplicate proposition names")
        elif key == "states":
            n = _int(rest, "states", lineno)
        elif key == "initial":
            initial = _int(rest, "initial", lineno)
        elif key == "partition":
            m = re.fullmatch(r"N\s*=\s*(\{[^}]*\})\s+D\s*=\s*(\{[^}]*\})", rest)
            if m is None:
                raise AutomatonError(f"line {lineno}: expected 'N={{...}} D={{...}}'")
            partition = (_state_set(m.group(1), lineno), _state_set(m.group(2), lineno))
        elif key == "accept":
            for item in rest.split():
                m = re.fullmatch(r"F(\d+)=(\{[^}]*\})", item)
                if m is None:
                    raise AutomatonError(f"line {lineno}: bad accepting set {item!r}")
                accepting[int(m.group(1))] = _state_set(m.group(2), lineno)
        elif key == "trans":
            parts = shlex.split(rest)
            if len(parts) != 3:
                raise AutomatonError(f"line {lineno}: expected 'trans: SRC \"GUARD\" DST'")
            raw_trans.append((lineno, _int(parts[0], "source", lineno), parts[1],
                              _int(parts[2], "target", lineno)))
        elif key == "eps":
            parts = rest.split()
            if len(parts) != 2:
                raise AutomatonError(f"line {lineno}: expected 'eps: SRC DST'")
            raw_eps.append((_int(parts[0], "source", lineno), _int(parts[1], "target", lineno)))
        else:
            raise AutomatonError(f"line {lineno}: unknown key {key!r}")

    if aps is None:
        raise AutomatonError("missing 'aps:' line")
    if n is None or n < 1:
        raise AutomatonError("missing or invalid 'states:' line")
    if sorted(accepting) != list(range(1, len(accepting) + 1)):
        raise AutomatonError("accepting sets must be numbered F1..Ff without gaps")

    trans: list[list] = [[] for _ in range(n)]
    eps: list[list] = [[] for _ in range(n)]
    for lineno, src, text, dst in raw_trans:
        if not 0 <= src < n:
            raise AutomatonError(f"line {lineno}: source state {src} out of range")
        try:
            g = parse_guard(text, aps)
        except GuardParseError as e:
            raise AutomatonError(f"line {lineno}: guard {text!r}: {e}") from None
        trans[src].append((g, dst))
    for src, dst in raw_eps:
        if not 0 <= src < n:
            raise AutomatonError(f"epsilon source state {src} out of range")
        if dst not in eps[src]:
            eps[src].append(dst)
    acc = tuple(accepting[j] for j in range(1, len(accepting) + 1))
    if partition is None:
        nondet, det = infer_partition(n, trans, eps, acc)
    else:
        nondet, det = partition

    A = Ldba(aps=aps, n_states=n, initial=initial,
             transitions=tuple(tuple(t) for t in trans),
             epsilon=tuple(tuple(e) for e in eps),
             accepting=acc, nondet=frozenset(nondet), det=frozenset(det))
    report = validate_limit_determinism(A)
    if report:
        raise LimitDeterminismError("invalid automaton: " + "; ".join(report))
    return A


def load_automaton_file(path) -> Ldba:
    with open(path) as fh:
        return load_automaton(fh.read())


def describe(A: Ldba) -> str:
    lines = [
        f"propositions: {' '.join(A.aps)}",
        f"states: {A.n_states} (initial q{A.initial})",
        f"Q_N: {_fmt(A.nondet)}",
        f"Q_D: {_fmt(A.det)}",
        f"accepting sets: {len(A.accepting)}",
    ]
    for j, F in enumerate(A.accepting, start=1):
        lines.append(f"  F{j} = {_fmt(F)}")
    lines.append(f"sinks: {_fmt(A.sinks - {REJECTED})} (+ implicit REJECTED)")
    for q in range(A.n_states):
        for g, t in A.transitions[q]:
            lines.append(f"  q{q} --{g}--> q{t}")
        for t in A.epsilon[q]:
            lines.append(f"  q{q} --eps--> q{t}")
    return "\n".join(lines)


def _fmt(states) -> str:
    return "{" + ", ".join(f"q{q}" for q in sorted(states)) + "}"
