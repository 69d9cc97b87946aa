"""Benchmark environments: slippery grid, continuous labelled world, explicit finite MDP.

All environments share a small duck-typed interface used by the product
runtime::

    initial_state(rng) -> state
    step(s, a, rng)    -> state
    labels(s)          -> frozenset of proposition names
    n_actions, action_names

Finite environments additionally expose ``states()`` and the exact kernel
``transition(s, a) -> [(s', p), ...]`` used by the certification oracle.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ACTIONS = ("left", "right", "up", "down", "stay")
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1), (0, 0))
STAY = 4
EMPTY = frozenset()


class EnvironmentError_(ValueError):
    """Malformed environment description."""


# --------------------------------------------------------------------------
# Slippery grid world
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    cell_labels: dict = field(default_factory=dict)  # (x, y) -> frozenset
    slip: float = 0.15
    initial: tuple = (0, 0)
    absorbing: frozenset = frozenset()

    n_actions = len(ACTIONS)
    action_names = ACTIONS
    finite = True

    def __post_init__(self):
        if not 0.0 <= self.slip <= 1.0:
            raise EnvironmentError_(f"slip must lie in [0,1], got {self.slip}")
        if not self.in_bounds(self.initial):
            raise EnvironmentError_(f"initial cell {self.initial} outside the grid")
        for c in list(self.cell_labels) + list(self.absorbing):
            if not self.in_bounds(c):
                raise EnvironmentError_(f"cell {c} outside the grid")

    def in_bounds(self, s) -> bool:
        return 0 <= s[0] < self.width and 0 <= s[1] < self.height

    def states(self):
        return [(x, y) for y in range(self.height) for x in range(self.width)]

    def initial_state(self, rng=None):
        return self.initial

    def labels(self, s) -> frozenset:
        return self.cell_labels.get(s, EMPTY)

    def move(self, s, a: int):
        dx, dy = MOVES[a]
        t = (s[0] + dx, s[1] + dy)
        return t if self.in_bounds(t) else s

    def neighbourhood(self, s):
        """The cell itself and its in-grid axis neighbours."""
        out = [s]
        for dx, dy in MOVES[:4]:
            t = (s[0] + dx, s[1] + dy)
            if self.in_bounds(t):
                out.append(t)
        return out

    def transition(self, s, a: int):
        """Exact successor distribution as ``[(cell, prob), ...]``."""
        if a == STAY and s in self.absorbing:
            return [(s, 1.0)]
        probs: dict = {}
        intended = self.move(s, a)
        probs[intended] = 1.0 - self.slip
        hood = self.neighbourhood(s)
        for t in hood:
            probs[t] = probs.get(t, 0.0) + self.slip / len(hood)
        return [(t, p) for t, p in probs.items() if p > 0.0]

    def step(self, s, a: int, rng):
        if a == STAY and s in self.absorbing:
            return s
        if self.slip > 0.0 and rng.random() < self.slip:
            hood = self.neighbourhood(s)
            return hood[int(rng.integers(len(hood)))]
        return self.move(s, a)

    def normalize(self, s) -> np.ndarray:
        return np.array([s[0] / max(self.width - 1, 1), s[1] / max(self.height - 1, 1)])


def grid_step(env: GridWorld, s, a: int, rng):
    return env.step(s, a, rng)


def grid_labels(env: GridWorld, s) -> frozenset:
    return env.labels(s)


_CELL = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")


def _cells(text: str):
    return [(int(a), int(b)) for a, b in _CELL.findall(text)]


def load_grid(source: str, slip: Optional[float] = None, initial=None,
              absorbing=None) -> GridWorld:
    """Parse a grid label map.

    Format: ``grid: L`` followed by L rows of L tokens (comma-joined labels or
    ``.``).  The first row is the top of the grid (largest y).  Optional
    trailing ``slip: p``, ``initial: (x,y)`` and ``absorbing: (x,y) ...`` lines
    set the dynamics; keyword arguments override them.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in source.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("grid:"):
        raise EnvironmentError_("grid file must start with 'grid: L'")
    try:
        L = int(lines[0].split(":", 1)[1])
    except ValueError:
        raise EnvironmentError_("grid size must be an integer") from None
    if L < 1 or len(lines) < 1 + L:
        raise EnvironmentError_(f"expected {L} grid rows")
    labels = {}
    for r, row in enumerate(lines[1:1 + L]):
        tokens = row.split()
        if len(tokens) != L:
            raise EnvironmentError_(f"grid row {r + 1} has {len(tokens)} cells, expected {L}")
        y = L - 1 - r
        for x, tok in enumerate(tokens):
            if tok != ".":
                labels[(x, y)] = frozenset(tok.split(","))
    meta = {"slip": 0.15, "initial": (0, 0), "absorbing": []}
    for ln in lines[1 + L:]:
        key, _, rest = ln.partition(":")
        key = key.strip()
        if key == "slip":
            meta["slip"] = float(rest)
        elif key == "initial":
            cells = _cells(rest)
            if len(cells) != 1:
                raise EnvironmentError_("initial must name one cell like (x,y)")
            meta["initial"] = cells[0]
        elif key == "absorbing":
            meta["absorbing"] = _cells(rest)
        else:
            raise EnvironmentError_(f"unknown grid key {key!r}")
    return GridWorld(
        width=L, height=L, cell_labels=labels,
        slip=meta["slip"] if slip is None else slip,
        initial=tuple(meta["initial"] if initial is None else initial),
        absorbing=frozenset(meta["absorbing"] if absorbing is None else absorbing))


# --------------------------------------------------------------------------
# Continuous world
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float
    props: frozenset

    def contains(self, p) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float
    props: frozenset

    def contains(self, p) -> bool:
        return (p[0] - self.cx) ** 2 + (p[1] - self.cy) ** 2 <= self.r ** 2


@dataclass(frozen=True)
class ContinuousWorld:
    width: float
    height: float
    regions: tuple = ()
    D: float = 2.0
    d: float = 0.02
    initial: Optional[tuple] = None  # None: uniform over points not labelled unsafe
    unsafe: frozenset = frozenset({"u"})

    n_actions = len(ACTIONS)
    action_names = ACTIONS
    finite = False

    def __post_init__(self):
        if not (self.D > 0 and self.d > 0 and self.d < self.D):
            raise EnvironmentError_("need 0 < d < D")
        if self.initial is not None and not self.in_bounds(self.initial):
            raise EnvironmentError_(f"initial point {self.initial} outside the world")

    def in_bounds(self, p) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def clamp(self, x: float, y: float) -> tuple:
        return (min(max(x, 0.0), self.width), min(max(y, 0.0), self.height))

    def labels(self, p) -> frozenset:
        out = EMPTY
        for shape in self.regions:
            if shape.contains(p):
                out = out | shape.props
        return out

    def sample_point(self, rng) -> tuple:
        return (float(rng.uniform(0.0, self.width)), float(rng.uniform(0.0, self.height)))

    def initial_state(self, rng):
        if self.initial is not None:
            return tuple(float(v) for v in self.initial)
        while True:
            p = self.sample_point(rng)
            if not self.labels(p) & self.unsafe:
                return p

    def step(self, s, a: int, rng, draw: Optional[float] = None):
        if a == STAY:
            # uniform point in the disc of radius d
            rho = self.d * math.sqrt(rng.random())
            phi = 2.0 * math.pi * rng.random()
            return self.clamp(s[0] + rho * math.cos(phi), s[1] + rho * math.sin(phi))
        r = self.D * (1.0 - rng.random()) if draw is None else draw
        dx, dy = MOVES[a]
        return self.clamp(s[0] + dx * r, s[1] + dy * r)

    def normalize(self, s) -> np.ndarray:
        return np.array([s[0] / self.width, s[1] / self.height])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


def cont_step(env: ContinuousWorld, s, a: int, rng):
    return env.step(s, a, rng)


def cont_labels(env: ContinuousWorld, s) -> frozenset:
    return env.labels(s)


def load_continuous(source: str) -> ContinuousWorld:
    """Parse a continuous world.

    Header lines ``size: W H``, ``step: D d`` and ``initial: x y`` (or
    ``initial: uniform``), then one shape per line::

        rect x0 y0 x1 y1 labels...
        circle cx cy r labels...
    """
    size = None
    D, d = 2.0, 0.02
    initial = None
    regions = []
    for lineno, line in enumerate(source.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.replace(":", " ").split()
        try:
            if head == "size":
                size = (float(rest[0]), float(rest[1]))
            elif head == "step":
                D, d = float(rest[0]), float(rest[1])
            elif head == "initial":
                initial = None if rest[0] == "uniform" else (float(rest[0]), float(rest[1]))
            elif head == "rect":
                x0, y0, x1, y1 = map(float, rest[:4])
                if x1 < x0 or y1 < y0:
                    raise EnvironmentError_(f"line {lineno}: empty rectangle")
                regions.append(Rect(x0, y0, x1, y1, frozenset(rest[4:])))
            elif head == "circle":
                cx, cy, r = map(float, rest[:3])
                if r <= 0:
                    raise EnvironmentError_(f"line {lineno}: circle radius must be positive")
                regions.append(Circle(cx, cy, r, frozenset(rest[3:])))
            else:
                raise EnvironmentError_(f"line {lineno}: unknown entry {head!r}")
        except (IndexError, ValueError) as e:
            if isinstance(e, EnvironmentError_):
                raise
            raise EnvironmentError_(f"line {lineno}: malformed {head!r} entry") from None
    if size is None:
        raise EnvironmentError_("missing 'size: W H' line")
    world = ContinuousWorld(width=size[0], height=size[1], regions=tuple(regions),
                            D=D, d=d, initial=initial)
    for shape in regions:
        corners = ([(shape.x0, shape.y0), (shape.x1, shape.y1)] if isinstance(shape, Rect)
                   else [(shape.cx - shape.r, shape.cy - shape.r),
                         (shape.cx + shape.r, shape.cy + shape.r)])
        if not all(world.in_bounds(c) for c in corners):
            raise EnvironmentError_(f"shape {shape} exceeds the world bounds")
    return world


# --------------------------------------------------------------------------
# Explicit finite MDP
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteMDP:
    """Explicit kernel ``P[s, a, s']`` with per-state label sets."""
    P: np.ndarray
    state_labels: tuple
    initial: int = 0

    finite = True

    def __post_init__(self):
        P = self.P
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise EnvironmentError_("kernel must have shape (S, A, S)")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise EnvironmentError_("kernel rows must be probability distributions")
        if len(self.state_labels) != P.shape[0]:
            raise EnvironmentError_("one label set per state required")

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def action_names(self):
        return tuple(f"a{i}" for i in range(self.n_actions))

    def states(self):
        return list(range(self.P.shape[0]))

    def initial_state(self, rng=None):
        return self.initial

    def labels(self, s) -> frozenset:
        return self.state_labels[s]

    def transition(self, s, a: int):
        row = self.P[s, a]
        return [(int(t), float(row[t])) for t in np.flatnonzero(row)]

    def step(self, s, a: int, rng):
        cdf = self._cdf[s, a]
        return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)

    @property
    def _cdf(self) -> np.ndarray:
        c = self.__dict__.get("_cdf_cache")
        if c is None:
            c = np.cumsum(self.P, axis=2)
            object.__setattr__(self, "_cdf_cache", c)
        return c

    def normalize(self, s) -> np.ndarray:
        return np.array([s / max(self.P.shape[0] - 1, 1)])


# --------------------------------------------------------------------------
# Periodic obstacle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KripkeStructure:
    cells: tuple            # obstacle cell for each clock state
    initial: int = 0
    prop: str = "g"

    def __post_init__(self):
        if not self.cells:
            raise EnvironmentError_("Kripke structure needs at least one state")
        if not 0 <= self.initial < len(self.cells):
            raise EnvironmentError_("initial Kripke state out of range")

    @property
    def n_states(self) -> int:
        return len(self.cells)

    def successor(self, k: int) -> int:
        return (k + 1) % len(self.cells)

    def obstacle_cell(self, k: int):
        return self.cells[k]


def kripke_step(K: KripkeStructure, k: int) -> int:
    return K.successor(k)


def timed_labels(env, K: KripkeStructure, s, k: int) -> frozenset:
    base = env.labels(s)
    if tuple(s) == tuple(K.obstacle_cell(k)):
        return base | {K.prop}
    return base


def load_kripke(source: str, prop: str = "g") -> KripkeStructure:
    cells = []
    for line in source.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        if key.strip() == "cells":
            cells.extend(_cells(rest))
        elif key.strip() == "prop":
            prop = rest.strip()
        else:
            raise EnvironmentError_(f"unknown Kripke key {key.strip()!r}")
    if not cells:
        raise EnvironmentError_("Kripke file lists no cells")
    return KripkeStructure(cells=tuple(cells), prop=prop)


def load_environment(path):
    """Load a grid (``grid:`` header) or continuous world from a file."""
    with open(path) as fh:
        text = fh.read()
    first = next((ln.strip() for ln in text.splitlines()
                  if ln.split("#", 1)[0].strip()), "")
    if first.startswith("grid:"):
        return load_grid(text)
    return load_continuous(text)
