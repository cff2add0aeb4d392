"""Vectorised chain sampling and batch construction for the engine.

Training and evaluation draw many sentences per step, so they skip the
clause objects of :mod:`legocot.corpus` and work on token arrays directly.
The distribution is the same: distinct variables, uniform ``y_0`` and i.i.d.
uniform actions, with answers from the tracking oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import N_SLOTS, Vocabulary, encode
from .engine import ClauseBatch, Pass


@dataclass
class Chains:
    xs: np.ndarray    # (n, L+1) variable indices x_0..x_L
    acts: np.ndarray  # (n, L) group-element indices g_1..g_L
    ys: np.ndarray    # (n, L+1) states y_0..y_L

    @property
    def L(self) -> int:
        return self.acts.shape[1]

    def __len__(self) -> int:
        return self.xs.shape[0]


def sample_chains(vocab: Vocabulary, L: int, n: int, rng: np.random.Generator) -> Chains:
    if L < 1 or L + 1 > vocab.n_x:
        raise ValueError(f"L={L} needs 1 <= L and L + 1 <= n_x={vocab.n_x}")
    xs = np.argsort(rng.random((n, vocab.n_x)), axis=1)[:, : L + 1]
    y0 = rng.integers(vocab.n_y, size=n)
    acts = rng.integers(vocab.n_g, size=(n, L))
    ys = vocab.space.track_indices(y0, acts)
    return Chains(xs.astype(np.int64), acts.astype(np.int64), ys)


def predicate_tokens(vocab: Vocabulary, ch: Chains) -> np.ndarray:
    """``(n, L, 5)`` predicate clauses in chain order."""
    n, L = ch.acts.shape
    out = np.full((n, L, N_SLOTS), vocab.blank, dtype=np.int64)
    out[:, :, 0] = ch.xs[:, 1:]
    out[:, :, 1] = ch.acts + vocab.action_offset
    out[:, :, 2] = ch.xs[:, :-1]
    return out


def answer_tokens(vocab: Vocabulary, ch: Chains) -> np.ndarray:
    """``(n, L+1, 5)`` ground-truth answer clauses."""
    n = len(ch)
    out = np.full((n, ch.L + 1, N_SLOTS), vocab.blank, dtype=np.int64)
    out[:, :, 3] = ch.xs
    out[:, :, 4] = ch.ys + vocab.value_offset
    return out


def chains_from_sentences(vocab: Vocabulary, sentences) -> tuple[np.ndarray, np.ndarray]:
    """Predicate and answer token arrays of equal-shape sentences."""
    enc = np.stack([encode(vocab, s) for s in sentences])
    L = sentences[0].L
    return enc[:, :L], enc[:, L:]


def prefix_batch(vocab: Vocabulary, preds: np.ndarray, answers: np.ndarray, ells,
                 weight: float | None = None) -> ClauseBatch:
    """Items predicting answer ``ell`` from the prefix ``Z^{L, ell-1}``, one per (sentence, ell).

    ``preds`` is ``(n, L, 5)``; ``answers`` ``(n, >= max(ells)+1, 5)`` supplies both the
    conditioning answers and the targets.  Items are ordered ell-major.  Every
    item gets weight ``weight`` (default ``1/n``), so the batch loss is the sum
    over ``ells`` of the per-ell sentence means.
    """
    ells = list(ells)
    n, L, _ = preds.shape
    if not ells or min(ells) < 1:
        raise ValueError("ells must be a non-empty list of steps >= 1")
    if answers.shape[1] <= max(ells):
        raise ValueError("answers do not cover the requested steps")
    N = L + max(ells)
    blank = vocab.blank
    toks = np.full((len(ells) * n, N, N_SLOTS), blank, dtype=np.int64)
    lengths = np.empty(len(ells) * n, dtype=np.int64)
    targets = np.empty((len(ells) * n, N_SLOTS), dtype=np.int64)
    for i, ell in enumerate(ells):
        sl = slice(i * n, (i + 1) * n)
        toks[sl, :L] = preds
        toks[sl, L:L + ell] = answers[:, :ell]
        lengths[sl] = L + ell
        targets[sl] = answers[:, ell]
    w = 1.0 / n if weight is None else weight
    return ClauseBatch(toks, lengths, targets, np.full(len(lengths), w))


def greedy_extend(params, preds: np.ndarray, answers: np.ndarray, steps: int) -> np.ndarray:
    """Append ``steps`` greedily decoded clauses to each prefix; returns all answers.

    Generated clauses are kept verbatim, malformed or not.
    """
    n, L, _ = preds.shape
    blank = params.vocab.blank
    k0 = answers.shape[1]
    out = np.full((n, k0 + steps, N_SLOTS), blank, dtype=np.int64)
    out[:, :k0] = answers
    toks = np.full((n, L + k0 + steps, N_SLOTS), blank, dtype=np.int64)
    toks[:, :L] = preds
    toks[:, L:L + k0] = answers
    for j in range(steps):
        length = L + k0 + j
        batch = ClauseBatch(toks[:, :length], np.full(n, length, dtype=np.int64))
        nxt = np.argmax(Pass(params, batch).dist, axis=2)
        out[:, k0 + j] = nxt
        toks[:, length] = nxt
    return out

