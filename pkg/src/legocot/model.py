"""One-layer NoPE decoder block over clause embeddings.

The final answer clause queries every clause of the sequence (itself
included) through a single merged matrix ``Q`` per head; the head aggregates
are averaged, fed to an sReLU FFN with fixed bias, clipped from above and
read out as five token distributions.

This module holds the parameters, the dense single-sequence reference
implementation and the checkpoint format.  The batched path used for training
and evaluation lives in :mod:`legocot.engine` and must agree with it.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import SReluConfig, srelu
from .corpus import N_SLOTS, Clause, LegoSentence, Vocabulary, embed

FULL = "full"
BLOCKS = "blocks43_44"
SPARSITY_MODES = (FULL, BLOCKS)

CHECKPOINT_VERSION = 1


class CorruptCheckpointError(ValueError):
    pass


class UnsupportedVersionError(ValueError):
    pass


def default_srelu(d: int, q: int = 4) -> SReluConfig:
    return SReluConfig(q=q, rho=1.0 / math.log(d) ** 2)


@dataclass
class ModelParams:
    """Weights plus the fixed constants of one model.

    ``W`` has shape ``(5, d, m, 5 d)`` and ``Q`` shape ``(heads, 5 d, 5 d)``.
    """

    W: np.ndarray
    Q: np.ndarray
    n_x: int
    action_kind: str
    n_y: int
    sparsity: str = BLOCKS
    srelu: SReluConfig = field(default_factory=SReluConfig)
    sigma0: float = 0.0
    bias: float = 0.0
    clip: float = math.inf

    def __post_init__(self):
        if self.sparsity not in SPARSITY_MODES:
            raise ValueError(f"sparsity must be one of {SPARSITY_MODES}, got {self.sparsity!r}")
        d = self.d
        if self.W.ndim != 4 or self.W.shape[:2] != (N_SLOTS, d) or self.W.shape[3] != N_SLOTS * d:
            raise ValueError(f"W has shape {self.W.shape}, expected (5, {d}, m, {N_SLOTS * d})")
        if self.Q.ndim != 3 or self.Q.shape[1:] != (N_SLOTS * d, N_SLOTS * d):
            raise ValueError(f"Q has shape {self.Q.shape}, expected (heads, {N_SLOTS * d}, {N_SLOTS * d})")

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.n_x, self.action_kind, self.n_y)

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.W.shape[2]

    @property
    def d_c(self) -> int:
        return self.W.shape[3]

    @property
    def heads(self) -> int:
        return self.Q.shape[0]

    def q_mask(self) -> np.ndarray:
        return q_mask(self.d, self.sparsity)

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def digest(self) -> str:
        """Content hash of the weights and constants."""
        h = hashlib.sha256()
        h.update(json.dumps(_header(self), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.W, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.Q, dtype="<f8").tobytes())
        return h.hexdigest()


def q_mask(d: int, sparsity: str) -> np.ndarray:
    """Boolean ``(5d, 5d)`` mask of the trainable entries of ``Q``."""
    mask = np.zeros((N_SLOTS * d, N_SLOTS * d), dtype=bool)
    if sparsity == FULL:
        mask[:] = True
    else:
        mask[3 * d:4 * d, 2 * d:4 * d] = True
    return mask


def init_params(vocab: Vocabulary, m: int, rng: np.random.Generator, *, heads: int = 1,
                sparsity: str = BLOCKS, srelu_cfg: SReluConfig | None = None,
                sigma0: float | None = None, clip_const: float = 20.0) -> ModelParams:
    """Zero ``Q``, Gaussian ``W`` with std ``sigma0``, bias ``sigma0 log d``, clip ``C_B log d``."""
    d = vocab.d
    if m < 1 or heads < 1:
        raise ValueError("m and heads must be positive")
    sigma0 = d ** -0.5 if sigma0 is None else sigma0
    W = rng.normal(0.0, sigma0, size=(N_SLOTS, d, m, N_SLOTS * d))
    Q = np.zeros((heads, N_SLOTS * d, N_SLOTS * d))
    return ModelParams(
        W=W, Q=Q, n_x=vocab.n_x, action_kind=vocab.action_kind, n_y=vocab.n_y,
        sparsity=sparsity, srelu=srelu_cfg or default_srelu(d), sigma0=sigma0,
        bias=sigma0 * math.log(d), clip=clip_const * math.log(d),
    )


# reference forward ----------------------------------------------------------

@dataclass
class ForwardTrace:
    attn: np.ndarray        # (heads, N) weights of the last clause over all clauses
    aggregated: np.ndarray  # (5d,)
    Lambda: np.ndarray      # (5, d, m) pre-activations
    raw_logits: np.ndarray  # (5, d) before clipping
    logits: np.ndarray      # (5, d) after clipping
    dist: np.ndarray        # (5, d) token distributions

    @property
    def mean_attn(self) -> np.ndarray:
        return self.attn.mean(axis=0)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_scores(params: ModelParams, Z: np.ndarray) -> np.ndarray:
    """``Z_q^T Q_h Z_k`` for the last column ``q`` and every column ``k``: shape ``(heads, N)``."""
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ValueError("attention needs a non-empty (5d, N) sequence")
    if Z.shape[0] != params.d_c:
        raise ValueError(f"embedding dimension {Z.shape[0]} != {params.d_c}")
    return (Z[:, -1] @ params.Q) @ Z


def attention_forward(params: ModelParams, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-head weights ``(heads, N)`` and the head-averaged aggregate ``(5d,)``."""
    weights = _softmax(attention_scores(params, Z), axis=1)
    aggregated = (Z @ weights.T).mean(axis=1)
    return weights, aggregated


def forward(params: ModelParams, Z: np.ndarray) -> ForwardTrace:
    weights, agg = attention_forward(params, Z)
    Lam = np.einsum("ijrc,c->ijr", params.W, agg) + params.bias
    raw = srelu(Lam, params.srelu).sum(axis=2)
    logits = np.minimum(raw, params.clip)
    return ForwardTrace(weights, agg, Lam, raw, logits, _softmax(logits, axis=1))


def forward_sentence(params: ModelParams, s: LegoSentence) -> ForwardTrace:
    return forward(params, embed(params.vocab, s))


GREEDY = "greedy"
SAMPLE = "sample"


def decode(dist: np.ndarray, mode: str = GREEDY, rng: np.random.Generator | None = None) -> Clause:
    """Pick one token per slot: argmax (lowest index on ties) or an independent draw."""
    if mode == GREEDY:
        return Clause(tuple(int(i) for i in np.argmax(dist, axis=1)))
    if mode == SAMPLE:
        if rng is None:
            raise ValueError("sampling needs an rng")
        toks = []
        for row in dist:
            c = np.cumsum(row)
            toks.append(int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(row) - 1)))
        return Clause(tuple(toks))
    raise ValueError(f"unknown decoding mode {mode!r}")


def predict_clause(params: ModelParams, prefix: LegoSentence, mode: str = GREEDY,
                   rng: np.random.Generator | None = None) -> Clause:
    if len(prefix) == 0:
        raise ValueError("empty prefix")
    return decode(forward_sentence(params, prefix).dist, mode, rng)


class GreedyAnnotator:
    """Frozen model wrapped as a clause predictor for bootstrapping."""

    def __init__(self, params: ModelParams):
        self.params = params

    def __call__(self, prefix: LegoSentence) -> Clause:
        return predict_clause(self.params, prefix, GREEDY)


# checkpoints ----------------------------------------------------------------
#
# Layout: one line of JSON header, then the W payload and each Q head as
# row-major little-endian float64.

def _header(params: ModelParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "d": params.d,
        "m": params.m,
        "n_x": params.n_x,
        "n_y": params.n_y,
        "action_kind": params.action_kind,
        "heads": params.heads,
        "sparsity": params.sparsity,
        "srelu": params.srelu.to_dict(),
        "sigma0": params.sigma0,
        "bias": params.bias,
        "B": params.clip,
    }


def save_checkpoint(path, params: ModelParams) -> None:
    header = json.dumps(_header(params), sort_keys=True).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(params.W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.Q, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CorruptCheckpointError(f"{path}: missing header line")
    try:
        hdr = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: bad header: {exc}") from exc
    if hdr.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {hdr.get('version')!r} "
                                      f"(supported: {CHECKPOINT_VERSION})")
    try:
        d, m, heads = int(hdr["d"]), int(hdr["m"]), int(hdr["heads"])
        n_w = N_SLOTS * d * m * N_SLOTS * d
        n_q = heads * (N_SLOTS * d) ** 2
        payload = raw[nl + 1:]
        if len(payload) != 8 * (n_w + n_q):
            raise CorruptCheckpointError(
                f"{path}: payload has {len(payload)} bytes, header implies {8 * (n_w + n_q)}")
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        params = ModelParams(
            W=flat[:n_w].reshape(N_SLOTS, d, m, N_SLOTS * d).copy(),
            Q=flat[n_w:].reshape(heads, N_SLOTS * d, N_SLOTS * d).copy(),
            n_x=int(hdr["n_x"]), action_kind=hdr["action_kind"], n_y=int(hdr["n_y"]),
            sparsity=hdr["sparsity"], srelu=SReluConfig.from_dict(hdr["srelu"]),
            sigma0=float(hdr["sigma0"]), bias=float(hdr["bias"]), clip=float(hdr["B"]),
        )
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: incomplete header: {exc}") from exc
    if params.vocab.d != d:
        raise CorruptCheckpointError(f"{path}: d={d} inconsistent with the vocabulary fields")
    return params
