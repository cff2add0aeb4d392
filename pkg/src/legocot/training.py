"""Next-clause losses, gradients, optimizers and the staged training loops.

Two pipelines are provided.  The staged one trains ``W`` and ``Q`` in
alternation: the two-stage curriculum, then optionally recursive
self-training on the frozen previous model's greedy labels at doubling
lengths.  The joint one trains every parameter on the full next-clause loss
at a single length.

Token positions in the public API are 1-based (``1..5``), as in the clause
layout; the engine works with 0-based slot indices.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .batches import answer_tokens, greedy_extend, predicate_tokens, prefix_batch, sample_chains
from .corpus import N_SLOTS, Vocabulary
from .engine import ClauseBatch, Pass, expand_grads
from .model import BLOCKS, ModelParams

GROUND_TRUTH = "ground_truth"
BOOTSTRAPPED = "bootstrapped"
ALL_TOKENS = (1, 2, 3, 4, 5)

CURRICULUM = "curriculum"
SELF_TRAINING = "self_training"
JOINT = "joint"

METRIC_COLUMNS = ["run_id", "stage", "step", "loss"] + [f"token_loss_{i}" for i in ALL_TOKENS] \
    + ["wallclock_ms"]


class TrainingDiverged(RuntimeError):
    pass


# losses ----------------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """Which terms of the next-clause loss to estimate.

    The estimate is ``sum over ell in ells of Loss^{L, ell}`` restricted to
    ``positions``.  With a bootstrapped source the answers come from greedy
    decoding by ``annotator`` instead of the oracle.
    """

    L: int
    ells: tuple[int, ...]
    positions: tuple[int, ...] = ALL_TOKENS
    source: str = GROUND_TRUTH
    annotator: ModelParams | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.ells or min(self.ells) < 1 or max(self.ells) > self.L:
            raise ValueError(f"ells {self.ells} must lie in [1, {self.L}]")
        if not self.positions or not set(self.positions) <= set(ALL_TOKENS):
            raise ValueError(f"positions {self.positions} must be a non-empty subset of 1..5")
        if tuple(sorted(set(self.positions))) != tuple(self.positions):
            raise ValueError("positions must be sorted and distinct")
        if self.source == BOOTSTRAPPED and self.annotator is None:
            raise ValueError("bootstrapped loss needs an annotator")
        if self.source not in (GROUND_TRUTH, BOOTSTRAPPED):
            raise ValueError(f"unknown data source {self.source!r}")

    @property
    def slots(self) -> tuple[int, ...]:
        return tuple(p - 1 for p in self.positions)


def sample_batch(vocab: Vocabulary, spec: LossSpec, n_sentences: int,
                 rng: np.random.Generator) -> ClauseBatch:
    """Fresh sentences for one step of ``spec``; one item per (sentence, ell)."""
    if n_sentences < 1:
        raise ValueError("batch needs at least one sentence")
    ch = sample_chains(vocab, spec.L, n_sentences, rng)
    preds = predicate_tokens(vocab, ch)
    answers = answer_tokens(vocab, ch)
    if spec.source == BOOTSTRAPPED:
        answers = greedy_extend(spec.annotator, preds, answers[:, :1], max(spec.ells))
    return prefix_batch(vocab, preds, answers, spec.ells)


def next_clause_loss(params: ModelParams, batch: ClauseBatch,
                     positions=ALL_TOKENS) -> tuple[float, np.ndarray]:
    """Weighted ``-log p`` of the targets, summed over ``positions``; plus the per-token split."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return Pass(params, batch, tuple(p - 1 for p in positions)).loss()


@dataclass
class GradientBundle:
    dW: np.ndarray | None
    dQ: np.ndarray | None
    batch_size: int
    loss: float


def grad_analytic(params: ModelParams, batch: ClauseBatch, positions=ALL_TOKENS,
                  trainable=("W", "Q")) -> GradientBundle:
    """Full-shape gradients of :func:`next_clause_loss`; ``dQ`` is zero off the mask."""
    slots = tuple(p - 1 for p in positions)
    ps = Pass(params, batch, slots)
    loss, _ = ps.loss()
    dW, dQ = ps.backward(want_w="W" in trainable, want_q="Q" in trainable)
    gW, gQ = expand_grads(params, dW, dQ, slots)
    return GradientBundle(gW, gQ, len(batch), loss)


def grad_fd(params: ModelParams, batch: ClauseBatch, positions=ALL_TOKENS, h: float = 1e-4,
            trainable=("W", "Q"), loss_fn: Callable | None = None) -> GradientBundle:
    """Central differences of the same loss, one scalar parameter at a time.

    ``Q`` entries outside the sparsity mask are left at zero.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    fn = loss_fn or (lambda p: next_clause_loss(p, batch, positions)[0])
    work = params.copy()

    def diff(arr, idx):
        old = arr[idx]
        arr[idx] = old + h
        up = fn(work)
        arr[idx] = old - h
        down = fn(work)
        arr[idx] = old
        return (up - down) / (2 * h)

    gW = gQ = None
    if "W" in trainable:
        gW = np.zeros_like(work.W)
        for idx in np.ndindex(work.W.shape):
            gW[idx] = diff(work.W, idx)
    if "Q" in trainable:
        gQ = np.zeros_like(work.Q)
        mask = work.q_mask()
        for h_ in range(work.heads):
            for i, j in zip(*np.nonzero(mask)):
                gQ[h_, i, j] = diff(work.Q, (h_, i, j))
    return GradientBundle(gW, gQ, len(batch), fn(work))


# optimizers ------------------------------------------------------------------
#
# Parameters are updated in place through views: the live column blocks of W
# (other columns never receive gradient) and the trainable part of Q.

def param_views(params: ModelParams, trainable) -> dict[str, np.ndarray]:
    return _views(params.W, params.Q, params, trainable)


def _views(W, Q, params: ModelParams, trainable) -> dict[str, np.ndarray]:
    d, m = params.d, params.m
    out = {}
    if "W" in trainable:
        W2 = W.reshape(N_SLOTS * d * m, params.d_c)
        if not np.shares_memory(W2, W):
            raise ValueError("W must be C-contiguous")
        for k, sl in enumerate(params.vocab.live_slices()):
            out[f"W{k}"] = W2[:, sl]
    if "Q" in trainable:
        out["Q"] = Q[:, 3 * d:4 * d, 2 * d:4 * d] if params.sparsity == BLOCKS else Q
    return out


def bundle_grads(params: ModelParams, bundle: GradientBundle, trainable) -> dict[str, np.ndarray]:
    """The optimizer's view of a full-shape gradient bundle."""
    W = bundle.dW if bundle.dW is not None else np.zeros_like(params.W)
    Q = bundle.dQ if bundle.dQ is not None else np.zeros_like(params.Q)
    return _views(W, Q, params, trainable)


class PlainGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, views: dict, grads: dict) -> None:
        for k, g in grads.items():
            views[k] -= self.lr * g


_CHUNK = 1 << 14


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._tmp: dict[str, np.ndarray] = {}

    def step(self, views: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
                self._tmp[k] = np.empty(min(g.size, _CHUNK))
            w = views[k]
            if w.flags.c_contiguous and g.flags.c_contiguous:
                w, g = w.reshape(-1), g.reshape(-1)
                m, v = self.m[k].reshape(-1), self.v[k].reshape(-1)
                # cache-sized blocks keep the elementwise passes out of main memory
                for a in range(0, g.size, _CHUNK):
                    b = min(a + _CHUNK, g.size)
                    self._update(w[a:b], g[a:b], m[a:b], v[a:b], self._tmp[k][: b - a], c1, c2)
            else:
                self._update(w, g, self.m[k], self.v[k], np.empty_like(g), c1, c2)

    def _update(self, w, g, m, v, tmp, c1: float, c2: float) -> None:
        b1, b2 = self.beta1, self.beta2
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # step = lr * (m / c1) / (sqrt(v / c2) + eps)
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / math.sqrt(c2)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.lr / c1
        w -= tmp


def make_optimizer(name: str, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    if name == "gd":
        return PlainGD(lr)
    if name == "adam":
        return Adam(lr, betas[0], betas[1], eps)
    raise ValueError(f"unknown optimizer {name!r}")


def step(params: ModelParams, bundle: GradientBundle, optimizer, trainable) -> None:
    """Apply one update from a full-shape bundle to the ``trainable`` set only."""
    optimizer.step(param_views(params, trainable), bundle_grads(params, bundle, trainable))


# stages ----------------------------------------------------------------------

@dataclass
class Stage:
    """One optimisation stage.

    It stops after ``steps`` updates, or, when ``threshold`` is set, once the
    running loss (EMA with decay ``ema_decay``) drops below it, capped at
    ``max_steps``.
    """

    name: str
    trainable: tuple[str, ...]
    loss: LossSpec
    lr: float
    batch_size: int
    optimizer: str = "adam"
    steps: int | None = None
    threshold: float | None = None
    max_steps: int = 20000
    ema_decay: float = 0.99
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    bootstrap_from_previous: bool = False

    def __post_init__(self):
        if not set(self.trainable) <= {"W", "Q"} or not self.trainable:
            raise ValueError(f"trainable must be a non-empty subset of W, Q; got {self.trainable}")
        if (self.steps is None) == (self.threshold is None):
            raise ValueError("a stage needs exactly one of steps / threshold")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1 or not self.lr > 0:
            raise ValueError("batch_size and lr must be positive")


@dataclass
class StageResult:
    name: str
    steps: int
    converged: bool
    final_loss: float
    digest: str
    annotator_digest: str | None = None
    annotator_digest_after: str | None = None


@dataclass
class TrainRun:
    params: ModelParams
    stages: list[StageResult] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    snapshots: list[ModelParams] = field(default_factory=list)


def curriculum_schedule(L: int = 2, *, lr: float, batch_size: int, steps_w: int, steps_q: int,
                        optimizer: str = "gd") -> list[Stage]:
    """Two stages: ``W`` on the one-step loss (all tokens), then ``Q`` on
    ``Loss^{2,1}_5 + Loss^{2,2}_5``."""
    return [
        Stage("1", ("W",), LossSpec(1, (1,)), lr, batch_size, optimizer, steps=steps_w),
        Stage("2", ("Q",), LossSpec(L, (1, 2), (5,)), lr, batch_size, optimizer, steps=steps_q),
    ]


def self_training_schedule(K: int, *, lr: float, batch_size: int, steps_w: int, steps_q: int,
                           threshold: float, max_steps: int, base_length: int = 2,
                           optimizer: str = "gd") -> list[Stage]:
    """Stages 1.1 (``W`` on the one-step loss), 1.2 (``Q`` on ``Loss^{2,2}_5``),
    then for ``k = 2..K`` ``Q`` on the bootstrapped ``Loss^{L_k,2}_5`` with
    ``L_k = base_length * 2^(k-1)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    stages = [
        Stage("1.1", ("W",), LossSpec(1, (1,)), lr, batch_size, optimizer, steps=steps_w),
        Stage("1.2", ("Q",), LossSpec(2, (2,), (5,)), lr, batch_size, optimizer, steps=steps_q),
    ]
    for k in range(2, K + 1):
        Lk = base_length * 2 ** (k - 1)
        stages.append(Stage(
            str(k), ("Q",), LossSpec(Lk, (2,), (5,)), lr, batch_size, optimizer,
            threshold=threshold, max_steps=max_steps, bootstrap_from_previous=True,
        ))
    return stages


def joint_schedule(L: int, *, lr: float, batch_size: int, steps: int,
                   optimizer: str = "adam") -> list[Stage]:
    """A single stage training everything on ``Loss^L`` (all tokens)."""
    return [Stage("joint", ("W", "Q"), LossSpec(L, tuple(range(1, L + 1))), lr, batch_size,
                  optimizer, steps=steps)]


def run_stage(params: ModelParams, stage: Stage, rng: np.random.Generator, *, run_id: str = "",
              metrics: list | None = None, record_wallclock: bool = False) -> StageResult:
    """Optimise ``params`` in place for one stage."""
    spec = stage.loss
    ann_digest = spec.annotator.digest() if spec.annotator is not None else None
    opt = make_optimizer(stage.optimizer, stage.lr, stage.betas, stage.eps)
    views = param_views(params, stage.trainable)
    want_w = "W" in stage.trainable
    # W is optimised on contiguous copies of its live blocks, written back at the end
    work = dict(views)
    live = None
    if want_w:
        live = [np.ascontiguousarray(views[f"W{k}"]) for k in range(N_SLOTS)]
        work.update({f"W{k}": a for k, a in enumerate(live)})
    try:
        n_done, ema, converged = _optimise(params, stage, spec, rng, opt, work, live, run_id,
                                           metrics, record_wallclock)
    finally:
        if live is not None:
            for k, a in enumerate(live):
                views[f"W{k}"][...] = a
    return StageResult(
        stage.name, n_done, converged, float("nan") if ema is None else float(ema), params.digest(),
        ann_digest, spec.annotator.digest() if spec.annotator is not None else None,
    )


def _optimise(params, stage, spec, rng, opt, work, live, run_id, metrics, record_wallclock):
    vocab = params.vocab
    want_w = "W" in stage.trainable
    want_q = "Q" in stage.trainable
    ema = None
    t0 = time.perf_counter()
    limit = stage.steps if stage.steps is not None else stage.max_steps
    converged = stage.steps is not None
    n_done = 0
    for t in range(1, limit + 1):
        batch = sample_batch(vocab, spec, stage.batch_size, rng)
        ps = Pass(params, batch, spec.slots, live)
        loss, per = ps.loss()
        if not math.isfinite(loss):
            raise TrainingDiverged(f"stage {stage.name}: loss {loss} at step {t}")
        dW, dQ = ps.backward(want_w=want_w, want_q=want_q)
        grads = {}
        if want_w:
            grads.update({f"W{k}": g for k, g in enumerate(dW)})
        if want_q:
            grads["Q"] = dQ
        opt.step(work, grads)
        n_done = t
        ema = loss if ema is None else stage.ema_decay * ema + (1.0 - stage.ema_decay) * loss
        if metrics is not None:
            row = {"run_id": run_id, "stage": stage.name, "step": t, "loss": loss}
            for i in ALL_TOKENS:
                row[f"token_loss_{i}"] = per[i - 1]
            row["wallclock_ms"] = round(1000 * (time.perf_counter() - t0)) if record_wallclock else ""
            metrics.append(row)
        if stage.threshold is not None and ema < stage.threshold:
            converged = True
            break
    return n_done, ema, converged


def run_schedule(params: ModelParams, stages: list[Stage], rng: np.random.Generator, *,
                 run_id: str = "", keep_snapshots: bool = False, record_wallclock: bool = False,
                 on_stage_end: Callable[[StageResult, ModelParams], None] | None = None,
                 log: Callable[[str], None] | None = None) -> TrainRun:
    """Run stages in order on a copy of ``params``.

    A stage with ``bootstrap_from_previous`` labels its data with a frozen copy of
    the model as it stood at the end of the previous stage.
    """
    run = TrainRun(params.copy())
    for stage in stages:
        if stage.bootstrap_from_previous:
            frozen = run.params.copy()
            stage = replace(stage, loss=replace(stage.loss, source=BOOTSTRAPPED, annotator=frozen))
        res = run_stage(run.params, stage, rng, run_id=run_id, metrics=run.metrics,
                        record_wallclock=record_wallclock)
        run.stages.append(res)
        if keep_snapshots:
            run.snapshots.append(run.params.copy())
        if on_stage_end is not None:
            on_stage_end(res, run.params)
        if log is not None:
            log(f"stage {res.name}: {res.steps} steps, loss {res.final_loss:.4g}, "
                f"converged={res.converged}")
    return run


def run_curriculum(params: ModelParams, stages: list[Stage], rng: np.random.Generator, **kw) -> TrainRun:
    if [s.trainable for s in stages] != [("W",), ("Q",)]:
        raise ValueError("the curriculum is a W stage followed by a Q stage")
    return run_schedule(params, stages, rng, **kw)


def run_self_training(params: ModelParams, stages: list[Stage], rng: np.random.Generator, **kw) -> TrainRun:
    if len(stages) < 2 or stages[0].trainable != ("W",) or any(s.trainable != ("Q",) for s in stages[1:]):
        raise ValueError("self-training is a W stage followed by Q stages")
    return run_schedule(params, stages, rng, **kw)


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})
