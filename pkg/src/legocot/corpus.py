"""LEGO vocabulary, sentences, sampling, embedding and JSONL corpora.

Token layout (index ``tau``): variables ``[0, n_x)``, then one token per group
element in enumeration order, then the values ``0..n_y-1``, and the blank
last.  The blank owns an index (and a logit coordinate downstream) but embeds
to the zero vector; every other token embeds one-hot.

A clause is five token indices.  Predicates ``x = g(x')`` encode as
``(x, g, x', _, _)`` and answers ``x = y`` as ``(_, _, _, x, y)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import groups
from .groups import GroupElement, StateSpace

N_SLOTS = 5
PREDICATE = "predicate"
ANSWER = "answer"
MALFORMED = "malformed"


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Clause:
    tokens: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != N_SLOTS:
            raise ValueError(f"a clause has exactly {N_SLOTS} tokens, got {len(self.tokens)}")

    def __getitem__(self, i):
        return self.tokens[i]

    def __iter__(self):
        return iter(self.tokens)


class Vocabulary:
    """Index map and one-hot embeddings for one LEGO language."""

    def __init__(self, n_x: int, action_kind: str, n_y: int):
        if n_x < 2:
            raise ValueError(f"need at least 2 variables, got n_x={n_x}")
        self.space: StateSpace = groups.state_space(action_kind, n_y)
        self.n_x = n_x
        self.n_g = self.space.order
        self.n_y = n_y
        self.action_kind = action_kind
        self.d = n_x + self.n_g + n_y + 1
        self.blank = self.d - 1
        self.action_offset = n_x
        self.value_offset = n_x + self.n_g

    def __repr__(self) -> str:
        return f"Vocabulary(n_x={self.n_x}, {self.action_kind!r}, n_y={self.n_y}, d={self.d})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def key(self) -> tuple:
        return (self.n_x, self.action_kind, self.n_y)

    @property
    def d_c(self) -> int:
        return N_SLOTS * self.d

    @property
    def max_length(self) -> int:
        """Largest chain length the variable pool supports."""
        return self.n_x - 1

    # token indices
    def variable(self, i: int) -> int:
        if not 0 <= i < self.n_x:
            raise ValueError(f"variable {i} outside [0, {self.n_x})")
        return i

    def action(self, g: GroupElement | int) -> int:
        k = g if isinstance(g, (int, np.integer)) else self.space.index(g)
        if not 0 <= k < self.n_g:
            raise ValueError(f"action index {k} outside [0, {self.n_g})")
        return self.action_offset + int(k)

    def value(self, y: int) -> int:
        if not 0 <= y < self.n_y:
            raise ValueError(f"value {y} outside [0, {self.n_y})")
        return self.value_offset + int(y)

    def is_variable(self, t: int) -> bool:
        return 0 <= t < self.n_x

    def is_action(self, t: int) -> bool:
        return self.action_offset <= t < self.value_offset

    def is_value(self, t: int) -> bool:
        return self.value_offset <= t < self.blank

    def element_of(self, t: int) -> GroupElement:
        if not self.is_action(t):
            raise ValueError(f"token {t} is not an action")
        return self.space.element(t - self.action_offset)

    def value_of(self, t: int) -> int:
        if not self.is_value(t):
            raise ValueError(f"token {t} is not a value")
        return t - self.value_offset

    def token_name(self, t: int) -> str:
        if t == self.blank:
            return "_"
        if self.is_variable(t):
            return f"x{t}"
        if self.is_action(t):
            return f"g{t - self.action_offset}"
        if self.is_value(t):
            return f"y{t - self.value_offset}"
        raise ValueError(f"token {t} outside [0, {self.d})")

    def embedding(self, t: int) -> np.ndarray:
        e = np.zeros(self.d)
        if t != self.blank:
            e[t] = 1.0
        return e

    # clauses
    def predicate(self, x: int, g: int, x_rhs: int) -> Clause:
        """Predicate ``x = g(x_rhs)`` from token indices."""
        return Clause((x, g, x_rhs, self.blank, self.blank))

    def answer(self, x: int, y: int) -> Clause:
        """Answer ``x = y`` from token indices."""
        return Clause((self.blank, self.blank, self.blank, x, y))

    def classify(self, c: Clause) -> str:
        t = c.tokens
        b = self.blank
        if (t[3] == b and t[4] == b and self.is_variable(t[0]) and self.is_action(t[1])
                and self.is_variable(t[2])):
            return PREDICATE
        if t[0] == b and t[1] == b and t[2] == b and self.is_variable(t[3]) and self.is_value(t[4]):
            return ANSWER
        return MALFORMED

    def live_slices(self) -> list[slice]:
        """Clause-embedding coordinates a well-formed clause can touch, per slot.

        Slot 1, 3 and 4 carry variables, slot 2 actions and slot 5 values.
        """
        d = self.d
        return [
            slice(0, self.n_x),
            slice(d + self.action_offset, d + self.value_offset),
            slice(2 * d, 2 * d + self.n_x),
            slice(3 * d, 3 * d + self.n_x),
            slice(4 * d + self.value_offset, 4 * d + self.blank),
        ]

    def describe(self) -> dict:
        return {"n_x": self.n_x, "action_kind": self.action_kind, "n_y": self.n_y, "d": self.d}


@dataclass(frozen=True)
class LegoSentence:
    """``L`` predicate clauses followed by ``L' + 1`` answer clauses."""

    predicates: tuple[Clause, ...]
    answers: tuple[Clause, ...]
    meta: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def L(self) -> int:
        return len(self.predicates)

    @property
    def L_prime(self) -> int:
        return len(self.answers) - 1

    @property
    def clauses(self) -> tuple[Clause, ...]:
        return self.predicates + self.answers

    def __len__(self) -> int:
        return len(self.predicates) + len(self.answers)


# sampling ------------------------------------------------------------------

def sentence_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sentence ``index`` under a 64-bit ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _check_length(vocab: Vocabulary, L: int) -> None:
    if L < 1:
        raise ValueError(f"chain length must be >= 1, got {L}")
    if L + 1 > vocab.n_x:
        raise ValueError(f"L={L} needs {L + 1} distinct variables but n_x={vocab.n_x}")


def _sample_chain(vocab: Vocabulary, L: int, rng: np.random.Generator):
    _check_length(vocab, L)
    xs = rng.choice(vocab.n_x, size=L + 1, replace=False)
    y0 = int(rng.integers(vocab.n_y))
    acts = rng.integers(vocab.n_g, size=L)
    return [int(x) for x in xs], [int(a) for a in acts], y0


def _predicates(vocab: Vocabulary, xs, acts) -> tuple[Clause, ...]:
    return tuple(
        vocab.predicate(vocab.variable(xs[i + 1]), vocab.action(acts[i]), vocab.variable(xs[i]))
        for i in range(len(acts))
    )


def sample_sentence(vocab: Vocabulary, L: int, rng: np.random.Generator, meta: dict | None = None
                    ) -> LegoSentence:
    """Draw a full sentence (``L' = L``) from the LEGO distribution."""
    xs, acts, y0 = _sample_chain(vocab, L, rng)
    word = [vocab.space.element(a) for a in acts]
    ys = [y0] + groups.track(y0, word)
    answers = tuple(vocab.answer(xs[i], vocab.value(ys[i])) for i in range(L + 1))
    return LegoSentence(_predicates(vocab, xs, acts), answers, dict(meta or {}))


def truncate(s: LegoSentence, L_prime: int) -> LegoSentence:
    """Keep every predicate and the answers ``0..L_prime``."""
    if not 0 <= L_prime <= s.L_prime:
        raise ValueError(f"L'={L_prime} outside [0, {s.L_prime}]")
    return LegoSentence(s.predicates, s.answers[: L_prime + 1], dict(s.meta))


def permute_predicates(s: LegoSentence, rng: np.random.Generator) -> tuple[LegoSentence, np.ndarray]:
    """Shuffle predicate order (answers untouched); returns the sentence and the permutation.

    ``perm[k]`` is the original index of the predicate now at position ``k``.
    """
    perm = rng.permutation(s.L)
    preds = tuple(s.predicates[i] for i in perm)
    return LegoSentence(preds, s.answers, dict(s.meta)), perm


def encode(vocab: Vocabulary, s: LegoSentence) -> np.ndarray:
    """Token-index matrix of shape ``(n_clauses, 5)``."""
    return np.array([c.tokens for c in s.clauses], dtype=np.int64).reshape(len(s), N_SLOTS)


def embed(vocab: Vocabulary, s: LegoSentence) -> np.ndarray:
    """Column-per-clause embedding of shape ``(5 d, n_clauses)``."""
    if len(s) == 0:
        raise ValueError("empty sentence")
    toks = encode(vocab, s)
    out = np.zeros((vocab.d_c, len(s)))
    for k in range(len(s)):
        for p in range(N_SLOTS):
            t = toks[k, p]
            if t != vocab.blank:
                out[p * vocab.d + t, k] = 1.0
    return out


# oracle ---------------------------------------------------------------------

def chain_variables(vocab: Vocabulary, s: LegoSentence) -> list[int]:
    """Recover ``x_0, ..., x_L`` by following the predicates (any order)."""
    lhs_of = {}
    rhs_vars = set()
    lhs_vars = set()
    for c in s.predicates:
        if vocab.classify(c) != PREDICATE:
            raise ValueError(f"malformed predicate {c.tokens}")
        lhs_of[c[2]] = c[0]
        rhs_vars.add(c[2])
        lhs_vars.add(c[0])
    roots = rhs_vars - lhs_vars
    if len(roots) != 1:
        raise ValueError("predicates do not form a single chain")
    chain = [roots.pop()]
    while chain[-1] in lhs_of:
        chain.append(lhs_of[chain[-1]])
        if len(chain) > s.L + 1:
            raise ValueError("predicates contain a cycle")
    if len(chain) != s.L + 1:
        raise ValueError("predicates do not form a single chain")
    return chain


def chain_actions(vocab: Vocabulary, s: LegoSentence) -> list[int]:
    """Action tokens ``g_1, ..., g_L`` in chain order."""
    by_lhs = {c[0]: c[1] for c in s.predicates}
    return [by_lhs[x] for x in chain_variables(vocab, s)[1:]]


def oracle_answers(vocab: Vocabulary, s: LegoSentence, y0: int | None = None) -> tuple[Clause, ...]:
    """Ground-truth answers ``0..L`` from the predicates and the first answer's value."""
    xs = chain_variables(vocab, s)
    if y0 is None:
        first = s.answers[0]
        if vocab.classify(first) != ANSWER or first[3] != xs[0]:
            raise ValueError("first answer clause must assign x_0")
        y0 = vocab.value_of(first[4])
    word = [vocab.element_of(g) for g in chain_actions(vocab, s)]
    ys = [y0] + groups.track(y0, word)
    return tuple(vocab.answer(x, vocab.value(y)) for x, y in zip(xs, ys))


def validity_problems(vocab: Vocabulary, s: LegoSentence) -> list[str]:
    """Everything wrong with ``s``; empty means valid."""
    problems = []
    for k, c in enumerate(s.predicates):
        if vocab.classify(c) != PREDICATE:
            problems.append(f"predicate {k} malformed: {c.tokens}")
    for k, c in enumerate(s.answers):
        if vocab.classify(c) != ANSWER:
            problems.append(f"answer {k} malformed: {c.tokens}")
    if problems:
        return problems
    try:
        xs = chain_variables(vocab, s)
    except ValueError as exc:
        return [str(exc)]
    if len(set(xs)) != len(xs):
        problems.append("variables not distinct")
    truth = oracle_answers(vocab, s)
    for k, c in enumerate(s.answers):
        if c != truth[k]:
            problems.append(f"answer {k} is {c.tokens}, oracle says {truth[k].tokens}")
    return problems


def is_valid(vocab: Vocabulary, s: LegoSentence) -> bool:
    return not validity_problems(vocab, s)


# bootstrapping --------------------------------------------------------------

Annotator = Callable[[LegoSentence], Clause]


class OracleAnnotator:
    """Annotator that always emits the ground-truth next answer."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def __call__(self, prefix: LegoSentence) -> Clause:
        truth = oracle_answers(self.vocab, prefix)
        return truth[len(prefix.answers)]


def bootstrap_sentence(vocab: Vocabulary, L: int, L_prime: int, annotator: Annotator,
                       rng: np.random.Generator, meta: dict | None = None) -> LegoSentence:
    """Sentence whose answers ``1..L'`` come from ``annotator`` on the growing prefix.

    Predicates and ``y_0`` are drawn exactly as in :func:`sample_sentence`.  Whatever
    the annotator emits is kept verbatim; ``meta["well_formed"]`` flags each answer.
    """
    if not 0 <= L_prime <= L:
        raise ValueError(f"L'={L_prime} outside [0, {L}]")
    xs, acts, y0 = _sample_chain(vocab, L, rng)
    preds = _predicates(vocab, xs, acts)
    answers = [vocab.answer(xs[0], vocab.value(y0))]
    for _ in range(L_prime):
        prefix = LegoSentence(preds, tuple(answers))
        answers.append(annotator(prefix))
    info = dict(meta or {})
    info["well_formed"] = [vocab.classify(c) == ANSWER for c in answers]
    return LegoSentence(preds, tuple(answers), info)


# JSONL ----------------------------------------------------------------------
#
# One sentence per line:
#   {"L": 3, "L_prime": 1, "predicates": [[x, g, x'], ...], "answers": [[x, y], ...], "meta": {...}}
# All entries are token indices.  A clause that does not fit its short form (a
# malformed annotator output) is written as its full 5-token list.

def _clause_to_json(c: Clause, blank: int, short_slots: tuple[int, ...]) -> list[int]:
    rest = [p for p in range(N_SLOTS) if p not in short_slots]
    if all(c[p] == blank for p in rest):
        return [int(c[p]) for p in short_slots]
    return [int(t) for t in c.tokens]


def _clause_from_json(item, blank: int, short_slots: tuple[int, ...]) -> Clause:
    if not isinstance(item, list) or not all(isinstance(t, int) for t in item):
        raise ValueError(f"clause must be a list of ints, got {item!r}")
    if len(item) == N_SLOTS:
        return Clause(tuple(item))
    if len(item) != len(short_slots):
        raise ValueError(f"clause has {len(item)} tokens")
    toks = [blank] * N_SLOTS
    for p, t in zip(short_slots, item):
        toks[p] = t
    return Clause(tuple(toks))


_PRED_SLOTS = (0, 1, 2)
_ANS_SLOTS = (3, 4)


def sentence_to_json(s: LegoSentence, vocab: Vocabulary) -> dict:
    return {
        "L": s.L,
        "L_prime": s.L_prime,
        "predicates": [_clause_to_json(c, vocab.blank, _PRED_SLOTS) for c in s.predicates],
        "answers": [_clause_to_json(c, vocab.blank, _ANS_SLOTS) for c in s.answers],
        "meta": s.meta,
    }


def sentence_from_json(obj: dict, vocab: Vocabulary) -> LegoSentence:
    preds = tuple(_clause_from_json(c, vocab.blank, _PRED_SLOTS) for c in obj["predicates"])
    answers = tuple(_clause_from_json(c, vocab.blank, _ANS_SLOTS) for c in obj["answers"])
    s = LegoSentence(preds, answers, dict(obj.get("meta", {})))
    if s.L != obj["L"] or s.L_prime != obj["L_prime"]:
        raise ValueError(f"declared L={obj['L']}, L'={obj['L_prime']} but found {s.L}, {s.L_prime}")
    for c in s.clauses:
        if any(not 0 <= t < vocab.d for t in c.tokens):
            raise ValueError(f"token outside [0, {vocab.d}) in {c.tokens}")
    return s


def write_corpus(path, sentences: Iterable[LegoSentence], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(sentence_to_json(s, vocab), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_corpus(path, vocab: Vocabulary) -> list[LegoSentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(sentence_from_json(json.loads(line), vocab))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
    return out
