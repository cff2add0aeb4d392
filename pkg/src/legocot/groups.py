"""Finite group actions on the state space ``Y = {0, ..., n_y - 1}``.

Two actions are supported:

* ``cyclic``: the shifts ``y -> (y + k) mod n_y`` (simply transitive).
* ``symmetry``: every permutation of ``Y`` (transitive, not free).

Elements are small immutable values.  A :class:`StateSpace` owns the
enumeration of its group (lexicographic order, built once and cached), which
fixes the integer index of every element; the vocabulary and the batched
data paths address elements by that index.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

CYCLIC = "cyclic"
SYMMETRY = "symmetry"
ACTION_KINDS = (CYCLIC, SYMMETRY)

MAX_SYMMETRY_STATES = 8


@dataclass(frozen=True)
class GroupElement:
    """One group element.

    ``data`` is the shift ``k`` (as a 1-tuple) for cyclic elements and the image
    sequence ``(g(0), ..., g(n-1))`` for permutations.
    """

    kind: str
    n: int
    data: tuple[int, ...]

    def __post_init__(self):
        if self.kind == CYCLIC:
            if len(self.data) != 1 or not 0 <= self.data[0] < self.n:
                raise ValueError(f"cyclic shift must lie in [0, {self.n}), got {self.data}")
        elif self.kind == SYMMETRY:
            if sorted(self.data) != list(range(self.n)):
                raise ValueError(f"not a permutation of range({self.n}): {self.data}")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    @property
    def shift(self) -> int:
        if self.kind != CYCLIC:
            raise AttributeError("only cyclic elements have a shift")
        return self.data[0]

    def image(self) -> tuple[int, ...]:
        """One-line notation ``(g(0), ..., g(n-1))`` for either kind."""
        if self.kind == CYCLIC:
            k = self.data[0]
            return tuple((y + k) % self.n for y in range(self.n))
        return self.data

    def __call__(self, y: int) -> int:
        return apply(self, y)

    def __str__(self) -> str:
        if self.kind == CYCLIC:
            return f"+{self.data[0]}"
        return "(" + " ".join(str(v) for v in self.data) + ")"


@dataclass(frozen=True)
class Fiber:
    """All elements sending ``source`` to ``target``."""

    target: int
    source: int
    elements: frozenset

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, g) -> bool:
        return g in self.elements


def _check_kinds(kind: str, n_y: int) -> None:
    if kind not in ACTION_KINDS:
        raise ValueError(f"action kind must be one of {ACTION_KINDS}, got {kind!r}")
    if n_y < 2:
        raise ValueError(f"n_y must be at least 2, got {n_y}")
    if kind == SYMMETRY and n_y > MAX_SYMMETRY_STATES:
        raise ValueError(
            f"symmetry action needs n_y <= {MAX_SYMMETRY_STATES} (got {n_y}); "
            f"{n_y}! elements is too many to enumerate"
        )


def cyclic(n: int, k: int) -> GroupElement:
    return GroupElement(CYCLIC, n, (k % n,))


def permutation(image: Sequence[int]) -> GroupElement:
    return GroupElement(SYMMETRY, len(image), tuple(int(v) for v in image))


def identity(kind: str, n: int) -> GroupElement:
    return cyclic(n, 0) if kind == CYCLIC else permutation(range(n))


def apply(g: GroupElement, y: int) -> int:
    """Return ``g . y``."""
    if not 0 <= y < g.n:
        raise ValueError(f"state {y} outside Y = [0, {g.n})")
    if g.kind == CYCLIC:
        return (y + g.data[0]) % g.n
    return g.data[y]


def compose(g2: GroupElement, g1: GroupElement) -> GroupElement:
    """Return ``g2 o g1`` (apply ``g1`` first)."""
    if g1.kind != g2.kind or g1.n != g2.n:
        raise ValueError(f"cannot compose {g2.kind}/{g2.n} with {g1.kind}/{g1.n}")
    if g1.kind == CYCLIC:
        return cyclic(g1.n, g1.data[0] + g2.data[0])
    return GroupElement(SYMMETRY, g1.n, tuple(g2.data[v] for v in g1.data))


def inverse(g: GroupElement) -> GroupElement:
    if g.kind == CYCLIC:
        return cyclic(g.n, -g.data[0])
    inv = [0] * g.n
    for y, v in enumerate(g.data):
        inv[v] = y
    return GroupElement(SYMMETRY, g.n, tuple(inv))


def fold(word: Iterable[GroupElement], kind: str, n: int) -> GroupElement:
    """Compose a word ``[g_1, ..., g_L]`` into ``g_L o ... o g_1``."""
    out = identity(kind, n)
    for g in word:
        out = compose(g, out)
    return out


def track(y0: int, word: Sequence[GroupElement]) -> list[int]:
    """State-tracking oracle: ``[y_1, ..., y_L]`` with ``y_i = g_i(y_{i-1})``."""
    out = []
    y = y0
    for g in word:
        y = apply(g, y)
        out.append(y)
    return out


class StateSpace:
    """A group acting on ``Y = {0, ..., n_y - 1}``.

    Use :func:`state_space` to get the shared cached instance; the element
    enumeration is built once and only read afterwards.
    """

    def __init__(self, kind: str, n_y: int):
        _check_kinds(kind, n_y)
        self.kind = kind
        self.n_y = n_y
        if kind == CYCLIC:
            self.elements: tuple[GroupElement, ...] = tuple(cyclic(n_y, k) for k in range(n_y))
        else:
            self.elements = tuple(
                GroupElement(SYMMETRY, n_y, p) for p in itertools.permutations(range(n_y))
            )
        self._index = {g: i for i, g in enumerate(self.elements)}
        # action_table[i, y] = elements[i](y)
        table = np.array([g.image() for g in self.elements], dtype=np.int64)
        table.setflags(write=False)
        self.action_table = table

    @property
    def order(self) -> int:
        return len(self.elements)

    def __repr__(self) -> str:
        return f"StateSpace({self.kind!r}, {self.n_y})"

    def index(self, g: GroupElement) -> int:
        self._check(g)
        return self._index[g]

    def element(self, i: int) -> GroupElement:
        return self.elements[i]

    def identity(self) -> GroupElement:
        return identity(self.kind, self.n_y)

    def _check(self, g: GroupElement) -> None:
        if g.kind != self.kind or g.n != self.n_y:
            raise ValueError(f"element {g} does not belong to {self!r}")

    def apply(self, g: GroupElement, y: int) -> int:
        self._check(g)
        return apply(g, y)

    def fiber(self, j: int, y: int) -> Fiber:
        """Elements sending ``y`` to ``j``, filtered from the enumeration."""
        for v in (j, y):
            if not 0 <= v < self.n_y:
                raise ValueError(f"state {v} outside Y = [0, {self.n_y})")
        members = frozenset(
            g for i, g in enumerate(self.elements) if self.action_table[i, y] == j
        )
        return Fiber(target=j, source=y, elements=members)

    def sample_uniform(self, rng: np.random.Generator) -> GroupElement:
        return self.elements[int(rng.integers(self.order))]

    def track_indices(self, y0: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorised :func:`track` over a batch.

        ``y0`` has shape ``(n,)`` and ``actions`` (element indices) ``(n, L)``;
        returns the states ``y_0 .. y_L`` as an ``(n, L + 1)`` array.
        """
        n, length = actions.shape
        out = np.empty((n, length + 1), dtype=np.int64)
        out[:, 0] = y0
        for i in range(length):
            out[:, i + 1] = self.action_table[actions[:, i], out[:, i]]
        return out


@functools.lru_cache(maxsize=None)
def state_space(kind: str, n_y: int) -> StateSpace:
    return StateSpace(kind, n_y)


def expected_fiber_size(kind: str, n_y: int) -> int:
    return 1 if kind == CYCLIC else math.factorial(n_y - 1)
