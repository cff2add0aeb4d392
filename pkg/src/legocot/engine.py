"""Batched forward pass, next-clause loss and analytic gradients.

Every item of a :class:`ClauseBatch` is a padded clause sequence whose last
real clause is the query.  Because embeddings are one-hot, the attention
aggregate is a weighted sum of at most three coordinates per clause; the
FFN products are therefore taken over the *live* input columns of ``W`` only
(the coordinates a well-formed clause can occupy: variables in slots 1, 3, 4,
actions in slot 2, values in slot 5).  Any other coordinate that shows up
(e.g. a malformed generated clause) is handled by a small dense "spill" path.
Columns that never carry input have identically zero gradient, so skipping
them changes nothing numerically.

Gradients follow the chain rule through the clip, the sReLU, the aggregate
and the softmax:

* ``dL/dW[i,j,r] = -E[i,j] * 1{F_raw < B} * srelu'(Lambda[i,j,r]) * aggregate``
  with ``E[i,j] = 1{j = target_i} - p_i(j)``;
* ``dL/dscore_k = a_k * (g_k - sum_k' a_k' g_k')`` with ``g_k = dL/dagg . Z_k / H``,
  and ``dL/dQ_h = sum_k dL/dscore_k * Z_q Z_k^T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import srelu_and_prime
from .corpus import N_SLOTS, Vocabulary, encode
from .model import BLOCKS, ModelParams

ALL_POSITIONS = (0, 1, 2, 3, 4)


@dataclass
class ClauseBatch:
    tokens: np.ndarray                 # (B, N, 5) token indices, padded with blank
    lengths: np.ndarray                # (B,) real clause count; query = lengths - 1
    targets: np.ndarray | None = None  # (B, 5) next-clause tokens
    weights: np.ndarray | None = None  # (B,) loss weights

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def select(self, idx) -> "ClauseBatch":
        return ClauseBatch(
            self.tokens[idx], self.lengths[idx],
            None if self.targets is None else self.targets[idx],
            None if self.weights is None else self.weights[idx],
        )


def batch_from_sentences(vocab: Vocabulary, sentences, targets=None, weights=None) -> ClauseBatch:
    """Pad a list of sentences (each its own query) into one batch."""
    if not sentences:
        raise ValueError("empty batch")
    n = max(len(s) for s in sentences)
    toks = np.full((len(sentences), n, N_SLOTS), vocab.blank, dtype=np.int64)
    lengths = np.empty(len(sentences), dtype=np.int64)
    for b, s in enumerate(sentences):
        e = encode(vocab, s)
        toks[b, : len(e)] = e
        lengths[b] = len(e)
    if targets is not None:
        targets = np.asarray([getattr(t, "tokens", t) for t in targets], dtype=np.int64)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
    return ClauseBatch(toks, lengths, targets, weights)


def concat(batches, blank: int) -> ClauseBatch:
    """Stack batches, padding shorter ones with blank clauses."""
    batches = list(batches)
    n = max(b.tokens.shape[1] for b in batches)
    toks = []
    for b in batches:
        t = np.full((b.tokens.shape[0], n, N_SLOTS), blank, dtype=np.int64)
        t[:, : b.tokens.shape[1]] = b.tokens
        toks.append(t)
    has_t = all(b.targets is not None for b in batches)
    has_w = all(b.weights is not None for b in batches)
    return ClauseBatch(
        np.concatenate(toks), np.concatenate([b.lengths for b in batches]),
        np.concatenate([b.targets for b in batches]) if has_t else None,
        np.concatenate([b.weights for b in batches]) if has_w else None,
    )


# ---------------------------------------------------------------------------


class _Layout:
    """Live-column bookkeeping for one vocabulary."""

    def __init__(self, params: ModelParams):
        v = params.vocab
        d = params.d
        self.d = d
        self.blank = v.blank
        self.slices = v.live_slices()
        # token-index range that is live in each slot
        self.tok_lo = np.array([s.start - p * d for p, s in enumerate(self.slices)])
        self.tok_hi = np.array([s.stop - p * d for p, s in enumerate(self.slices)])
        self.widths = [s.stop - s.start for s in self.slices]


class Pass:
    """Forward state for one batch, kept for the backward pass."""

    def __init__(self, params: ModelParams, batch: ClauseBatch, positions=ALL_POSITIONS,
                 live_w: list[np.ndarray] | None = None):
        """``live_w`` optionally supplies the live column blocks of ``W`` (as
        returned by :func:`live_columns`), e.g. contiguous working copies held
        by an optimiser; otherwise views into ``params.W`` are used."""
        self.params = params
        self.batch = batch
        self.positions = tuple(positions)
        self.live_w = live_w
        self.layout = _Layout(params)
        self._attend()
        self._aggregate()
        self._ffn()

    # attention -----------------------------------------------------------
    def _attend(self):
        p, b = self.params, self.batch
        toks = b.tokens
        B, N, _ = toks.shape
        d, blank = p.d, self.layout.blank
        H = p.heads
        rows = np.arange(B)
        q_tok = toks[rows, b.lengths - 1]                      # (B, 5)
        self.q_tok = q_tok
        valid = np.arange(N)[None, :] < b.lengths[:, None]    # (B, N)
        self.valid = valid
        if p.sparsity == BLOCKS:
            Qb = p.Q[:, 3 * d:4 * d, 2 * d:4 * d]              # (H, d, 2d): [Q43 | Q44]
            tq = q_tok[:, 3]
            k3 = toks[:, :, 2]
            k4 = toks[:, :, 3]
            m3 = (k3 != blank) & (tq != blank)[:, None]
            m4 = (k4 != blank) & (tq != blank)[:, None]
            s = (Qb[:, tq[:, None], k3] * m3 + Qb[:, tq[:, None], d + k4] * m4)  # (H, B, N)
            s = s.transpose(1, 0, 2)
        else:
            cq = np.arange(N_SLOTS) * d + q_tok                # (B, 5)
            ck = np.arange(N_SLOTS) * d + toks                 # (B, N, 5)
            mq = q_tok != blank
            mk = toks != blank
            s = np.zeros((B, H, N))
            for h in range(H):
                g = p.Q[h][cq[:, :, None, None], ck[:, None, :, :]]   # (B, 5, N, 5)
                g = g * (mq[:, :, None, None] & mk[:, None, :, :])
                s[:, h] = g.sum(axis=(1, 3))
        s = np.where(valid[:, None, :], s, -np.inf)
        s = s - s.max(axis=2, keepdims=True)
        e = np.exp(s)
        self.attn = e / e.sum(axis=2, keepdims=True)           # (B, H, N)
        self.mean_attn = self.attn.mean(axis=1)                # (B, N)

    # aggregate over live columns ------------------------------------------
    def _aggregate(self):
        lay, toks = self.layout, self.batch.tokens
        B = toks.shape[0]
        w = self.mean_attn
        self.agg = []
        self.col = []        # compact column per (b, k) and slot, -1 when not live
        spill_b, spill_c, spill_w = [], [], []
        for p in range(N_SLOTS):
            t = toks[:, :, p]
            live = (t >= lay.tok_lo[p]) & (t < lay.tok_hi[p])
            col = np.where(live, t - lay.tok_lo[p], -1)
            self.col.append(col)
            width = lay.widths[p]
            flat = (np.arange(B)[:, None] * width + col)[live]
            a = np.bincount(flat, weights=w[live], minlength=B * width).reshape(B, width)
            self.agg.append(a)
            odd = (~live) & (t != lay.blank) & self.valid
            if odd.any():
                bb, kk = np.nonzero(odd)
                spill_b.append(bb)
                spill_c.append(p * lay.d + t[bb, kk])
                spill_w.append(w[bb, kk])
        if spill_b:
            bb = np.concatenate(spill_b)
            cc = np.concatenate(spill_c)
            ww = np.concatenate(spill_w)
            self.spill_cols, inv = np.unique(cc, return_inverse=True)
            self.spill_agg = np.zeros((B, len(self.spill_cols)))
            np.add.at(self.spill_agg, (bb, inv), ww)
        else:
            self.spill_cols = None
            self.spill_agg = None

    def aggregated_dense(self) -> np.ndarray:
        """The ``(B, 5d)`` aggregate, for checks against the reference path."""
        lay = self.layout
        B = self.batch.tokens.shape[0]
        out = np.zeros((B, N_SLOTS * lay.d))
        for p, sl in enumerate(lay.slices):
            out[:, sl] += self.agg[p]
        if self.spill_cols is not None:
            out[:, self.spill_cols] += self.spill_agg
        return out

    # FFN -----------------------------------------------------------------
    def _row_index(self):
        """Rows of the ``(5 d m, .)`` weight layout for the computed positions."""
        dm = self.params.d * self.params.m
        pos = self.positions
        if _contiguous(pos):
            return slice(pos[0] * dm, (pos[-1] + 1) * dm)
        return np.concatenate([np.arange(i * dm, (i + 1) * dm) for i in pos])

    def _ffn(self):
        p = self.params
        B = self.batch.tokens.shape[0]
        P = len(self.positions)
        rows = self._row_index()
        live = self.live_w if self.live_w is not None else live_columns(p)
        self.w_blocks = [w[rows] for w in live]
        lam = np.full((B, self.w_blocks[0].shape[0]), p.bias)
        for w, a in zip(self.w_blocks, self.agg):
            lam += a @ w.T
        if self.spill_cols is not None:
            W2 = p.W.reshape(N_SLOTS * p.d * p.m, p.d_c)
            self.W_spill = W2[rows][:, self.spill_cols]
            lam += self.spill_agg @ self.W_spill.T
        lam = lam.reshape(B, P, p.d, p.m)
        self.Lambda = lam
        act, self.dact = srelu_and_prime(lam, p.srelu)
        self.raw_logits = act.sum(axis=3)                      # (B, P, d)
        self.unclipped = self.raw_logits < p.clip
        self.logits = np.minimum(self.raw_logits, p.clip)
        z = self.logits - self.logits.max(axis=2, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=2, keepdims=True))
        self.logp = z - lse
        self.dist = np.exp(self.logp)

    # loss and gradients ----------------------------------------------------
    def token_nll(self) -> np.ndarray:
        """``-log p_i(target_i)`` per item and computed position, shape ``(B, P)``."""
        t = self.batch.targets
        if t is None:
            raise ValueError("batch has no targets")
        idx = t[:, list(self.positions)]
        return -np.take_along_axis(self.logp, idx[:, :, None], axis=2)[:, :, 0]

    def _weights(self) -> np.ndarray:
        w = self.batch.weights
        B = self.batch.tokens.shape[0]
        return np.full(B, 1.0 / B) if w is None else w

    def loss(self) -> tuple[float, np.ndarray]:
        """Weighted loss summed over positions, and the per-position breakdown (length 5)."""
        nll = self.token_nll()
        per = self._weights() @ nll
        full = np.zeros(N_SLOTS)
        full[list(self.positions)] = per
        return float(per.sum()), full

    def backward(self, want_w: bool = True, want_q: bool = True):
        """Gradients: list of ``dW`` per live slice (or None), and ``dQ`` (or None).

        ``dQ`` has shape ``(H, d, 2d)`` under block sparsity and ``(H, 5d, 5d)`` otherwise.
        """
        B, P = self.logp.shape[:2]
        w = self._weights()
        gF = self.dist.copy()
        t = self.batch.targets[:, list(self.positions)]
        np.put_along_axis(gF, t[:, :, None],
                          np.take_along_axis(gF, t[:, :, None], axis=2) - 1.0, axis=2)
        gF *= w[:, None, None]
        gF *= self.unclipped
        g_lam = (gF[..., None] * self.dact).reshape(B, -1)    # (B, P*d*m)
        dW = None
        if want_w:
            if self.spill_cols is not None:
                raise ValueError("W gradient requested on a batch with malformed clauses")
            dW = [g_lam.T @ a for a in self.agg]
        dQ = None
        if want_q:
            dQ = self._q_grad(g_lam)
        return dW, dQ

    def _q_grad(self, g_lam: np.ndarray) -> np.ndarray:
        p, lay = self.params, self.layout
        toks = self.batch.tokens
        B, N, _ = toks.shape
        H, d = p.heads, p.d
        # dL/dagg at each clause's coordinates, summed over its slots
        g_clause = np.zeros((B, N))
        rows = np.arange(B)[:, None]
        for w, col in zip(self.w_blocks, self.col):
            u = g_lam @ w                                          # (B, width)
            live = col >= 0
            g_clause += np.where(live, u[rows, np.maximum(col, 0)], 0.0)
        if self.spill_cols is not None:
            u = g_lam @ self.W_spill
            lookup = {c: i for i, c in enumerate(self.spill_cols)}
            for pos in range(N_SLOTS):
                t = toks[:, :, pos]
                odd = (self.col[pos] < 0) & (t != lay.blank) & self.valid
                for bb, kk in zip(*np.nonzero(odd)):
                    g_clause[bb, kk] += u[bb, lookup[pos * d + t[bb, kk]]]
        g_clause /= H
        a = self.attn                                               # (B, H, N)
        gs = a * (g_clause[:, None, :] - (a * g_clause[:, None, :]).sum(axis=2, keepdims=True))
        if p.sparsity == BLOCKS:
            tq = self.q_tok[:, 3]
            out = np.zeros(H * d * 2 * d)
            hh = np.arange(H)[None, :, None]
            for slot, off in ((2, 0), (3, d)):
                k = toks[:, :, slot]
                m = (k != lay.blank) & (tq != lay.blank)[:, None] & self.valid
                idx = hh * (d * 2 * d) + tq[:, None, None] * (2 * d) + off + k[:, None, :]
                mm = np.broadcast_to(m[:, None, :], idx.shape)
                out += np.bincount(idx[mm], weights=gs[mm], minlength=out.size)
            return out.reshape(H, d, 2 * d)
        dc = p.d_c
        out = np.zeros(H * dc * dc)
        q = self.q_tok
        for qp in range(N_SLOTS):
            tq = q[:, qp]
            if np.all(tq == lay.blank):
                continue
            for kp in range(N_SLOTS):
                k = toks[:, :, kp]
                m = (k != lay.blank) & (tq != lay.blank)[:, None] & self.valid
                if not m.any():
                    continue
                idx = (np.arange(H)[None, :, None] * dc * dc
                       + (qp * d + tq)[:, None, None] * dc + kp * d + k[:, None, :])
                mm = np.broadcast_to(m[:, None, :], idx.shape)
                out += np.bincount(idx[mm], weights=gs[mm], minlength=out.size)
        return out.reshape(H, dc, dc)


def live_columns(params: ModelParams) -> list[np.ndarray]:
    """Views of the live column blocks of ``W`` as ``(5 d m, width)`` arrays."""
    W2 = params.W.reshape(N_SLOTS * params.d * params.m, params.d_c)
    if not np.shares_memory(W2, params.W):
        raise ValueError("W must be C-contiguous")
    return [W2[:, sl] for sl in params.vocab.live_slices()]


def _contiguous(pos) -> bool:
    return list(pos) == list(range(pos[0], pos[-1] + 1))


def expand_grads(params: ModelParams, dW_live, dQ, positions=ALL_POSITIONS):
    """Full-shape ``(dW, dQ)`` arrays from :meth:`Pass.backward` output."""
    d, m = params.d, params.m
    dm = d * m
    lay = _Layout(params)
    gW = None
    if dW_live is not None:
        g2 = np.zeros((N_SLOTS * dm, params.d_c))
        rows = np.concatenate([np.arange(i * dm, (i + 1) * dm) for i in positions])
        for sl, g in zip(lay.slices, dW_live):
            g2[rows, sl] = g
        gW = g2.reshape(params.W.shape)
    gQ = None
    if dQ is not None:
        if params.sparsity == BLOCKS:
            gQ = np.zeros_like(params.Q)
            gQ[:, 3 * d:4 * d, 2 * d:4 * d] = dQ
        else:
            gQ = dQ
    return gW, gQ


def predict_dist(params: ModelParams, batch: ClauseBatch) -> np.ndarray:
    """Next-clause distributions ``(B, 5, d)``."""
    return Pass(params, batch).dist
