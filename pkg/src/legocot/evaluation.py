"""Accuracy, attention diagnostics, permutation ablation and feature probes."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .batches import answer_tokens, greedy_extend, predicate_tokens, prefix_batch, sample_chains
from .corpus import N_SLOTS
from .engine import ClauseBatch, Pass
from .model import ModelParams

# clauses per evaluation chunk, to bound memory on long chains
CHUNK_CLAUSES = 400_000


def _chunks(n: int, per_item: int):
    size = max(1, CHUNK_CLAUSES // max(per_item, 1))
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def _sample_tokens(dist: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One independent draw per row of ``dist`` (``(..., d)``)."""
    c = np.cumsum(dist, axis=-1)
    u = rng.random(dist.shape[:-1])[..., None] * c[..., -1:]
    idx = (c <= u).sum(axis=-1)
    return np.minimum(idx, dist.shape[-1] - 1)


# accuracy ----------------------------------------------------------------------

def acc_teacher_forced(params: ModelParams, L: int, n_eval: int, rng: np.random.Generator,
                       greedy: bool = False) -> float:
    """Exact-match rate of the next answer given the true prefix, over steps ``1..L``.

    The predicted clause is sampled from the model (or its argmax with ``greedy``).
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    vocab = params.vocab
    ch = sample_chains(vocab, L, n_eval, rng)
    preds, answers = predicate_tokens(vocab, ch), answer_tokens(vocab, ch)
    hits = 0
    for sl in _chunks(n_eval, L * 2 * L):
        batch = prefix_batch(vocab, preds[sl], answers[sl], range(1, L + 1))
        dist = Pass(params, batch).dist
        guess = np.argmax(dist, axis=2) if greedy else _sample_tokens(dist, rng)
        hits += int((guess == batch.targets).all(axis=1).sum())
    return hits / (n_eval * L)


@dataclass
class AccReport:
    L: int
    teacher_forced: float
    rollout_final: float
    rollout_value_only: float
    n_eval: int
    seed: int | None = None


def rollout(params: ModelParams, preds: np.ndarray, answers0: np.ndarray) -> np.ndarray:
    """Greedy answers ``0..L`` from the prompt ``Z^{L,0}``, chunked."""
    n, L, _ = preds.shape
    out = np.empty((n, L + 1, N_SLOTS), dtype=np.int64)
    for sl in _chunks(n, 2 * L * L):
        out[sl] = greedy_extend(params, preds[sl], answers0[sl], L)
    return out


def acc_rollout(params: ModelParams, L: int, n_eval: int, rng: np.random.Generator,
                seed: int | None = None, teacher_forced: bool = True) -> AccReport:
    """Greedy rollout from ``Z^{L,0}`` scored on all clauses and on values alone.

    ``teacher_forced`` also estimates the sampled teacher-forced accuracy on
    fresh sentences from the same stream.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    vocab = params.vocab
    ch = sample_chains(vocab, L, n_eval, rng)
    preds, truth = predicate_tokens(vocab, ch), answer_tokens(vocab, ch)
    gen = rollout(params, preds, truth[:, :1])
    final = float((gen[:, 1:] == truth[:, 1:]).all(axis=(1, 2)).mean())
    values = float((gen[:, 1:, 4] == truth[:, 1:, 4]).all(axis=1).mean())
    tf = acc_teacher_forced(params, L, n_eval, rng) if teacher_forced else float("nan")
    return AccReport(L, tf, final, values, n_eval, seed)


# attention -----------------------------------------------------------------------

@dataclass
class AttnDiagnostics:
    """Attention of query ``(ans, ell-1)`` on ``Z^{L, ell-1}`` for ``ell = 1..L``.

    ``eps``/``delta`` are sample means per ``ell``; ``eps_samples``/``delta_samples``
    keep every query.  ``heatmap[ell-1, k]`` is the mean weight on clause ``k``
    (sentence order, ``2L`` columns; clauses not yet present get 0).
    """

    L: int
    eps: np.ndarray
    delta: np.ndarray
    w_pred: np.ndarray
    w_ans: np.ndarray
    eps_samples: np.ndarray
    delta_samples: np.ndarray
    heatmap: np.ndarray
    n_samples: int

    def row_labels(self) -> list[str]:
        return [str(self.L + ell) for ell in range(1, self.L + 1)]

    def column_labels(self) -> list[str]:
        return [str(k) for k in range(1, 2 * self.L + 1)]


def attention_rows(params: ModelParams, preds: np.ndarray, answers: np.ndarray) -> np.ndarray:
    """Head-averaged weights ``(n, L, 2L)``: row ``ell-1`` is query ``(ans, ell-1)`` on ``Z^{L,ell-1}``."""
    n, L, _ = preds.shape
    out = np.zeros((n, L, 2 * L))
    for sl in _chunks(n, 2 * L * L):
        batch = prefix_batch(params.vocab, preds[sl], answers[sl], range(1, L + 1))
        # the item for ell has the prefix with answers 0..ell-1: query is (ans, ell-1)
        a = Pass(params, ClauseBatch(batch.tokens, batch.lengths)).mean_attn
        k = sl.stop - sl.start
        for ell in range(1, L + 1):
            out[sl, ell - 1, : L + ell] = a[(ell - 1) * k:ell * k, : L + ell]
    return out


def attention_diagnostics(params: ModelParams, L: int, n_samples: int, rng: np.random.Generator
                          ) -> AttnDiagnostics:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    vocab = params.vocab
    ch = sample_chains(vocab, L, n_samples, rng)
    preds, answers = predicate_tokens(vocab, ch), answer_tokens(vocab, ch)
    rows = attention_rows(params, preds, answers)
    return _diagnostics(L, rows, np.arange(L)[None, :].repeat(n_samples, 0))


def _diagnostics(L: int, rows: np.ndarray, pred_pos: np.ndarray) -> AttnDiagnostics:
    """``pred_pos[s, ell-1]`` is the column holding predicate ``ell`` of sample ``s``."""
    n = rows.shape[0]
    ells = np.arange(1, L + 1)
    w_pred = np.take_along_axis(rows, pred_pos[:, :, None], axis=2)[:, :, 0]
    w_ans = rows[:, ells - 1, L + ells - 1]
    eps = 1.0 - w_pred - w_ans
    delta = np.abs(w_pred - w_ans)
    return AttnDiagnostics(L, eps.mean(0), delta.mean(0), w_pred.mean(0), w_ans.mean(0),
                           eps, delta, rows.mean(0), n)


def permutation_ablation(params: ModelParams, L: int, n_samples: int, rng: np.random.Generator) -> dict:
    """Rollout and attention with predicates in chain order vs a random order per sentence.

    Returns paired baseline/permuted metrics, their deltas, and the largest change in
    the weight any clause receives (matched by content, not position).
    """
    vocab = params.vocab
    ch = sample_chains(vocab, L, n_samples, rng)
    preds, truth = predicate_tokens(vocab, ch), answer_tokens(vocab, ch)
    perm = np.argsort(rng.random((n_samples, L)), axis=1)   # perm[s, k] = original index at k
    ppreds = np.take_along_axis(preds, perm[:, :, None], axis=1)
    where = np.argsort(perm, axis=1)                          # where[s, i] = new slot of pred i

    base_rows = attention_rows(params, preds, truth)
    perm_rows = attention_rows(params, ppreds, truth)
    base = _diagnostics(L, base_rows, np.arange(L)[None, :].repeat(n_samples, 0))
    permuted = _diagnostics(L, perm_rows, where)
    # undo the permutation on predicate columns before comparing
    back = perm_rows.copy()
    back[:, :, :L] = np.take_along_axis(perm_rows[:, :, :L], where[:, None, :], axis=2)
    weight_change = float(np.abs(back - base_rows).max())

    def score(p):
        gen = rollout(params, p, truth[:, :1])
        return (float((gen[:, 1:] == truth[:, 1:]).all(axis=(1, 2)).mean()),
                float((gen[:, 1:, 4] == truth[:, 1:, 4]).all(axis=1).mean()))

    bf, bv = score(preds)
    pf, pv = score(ppreds)
    rows = [
        {"eval_L": L, "variant": "baseline", "rollout_final": bf, "rollout_value_only": bv,
         "eps_mean": float(base.eps.mean()), "delta_mean": float(base.delta.mean())},
        {"eval_L": L, "variant": "permuted", "rollout_final": pf, "rollout_value_only": pv,
         "eps_mean": float(permuted.eps.mean()), "delta_mean": float(permuted.delta.mean())},
    ]
    return {
        "rows": rows,
        "delta_rollout_final": pf - bf,
        "delta_rollout_value_only": pv - bv,
        "max_received_weight_change": weight_change,
        "baseline": base,
        "permuted": permuted,
    }


# feature probe ---------------------------------------------------------------------

@dataclass
class FeatureProbe:
    """Weights from the slot-2 action and slot-5 value coordinates into the slot-5 output neurons.

    ``V_g[j, r, k]`` is the weight of group element ``k`` and ``V_y[j, r, y]`` that of
    value ``y``, for output value class ``j`` and neuron ``r``.
    """

    V_g: np.ndarray
    V_y: np.ndarray

    @property
    def table(self) -> np.ndarray:
        return np.concatenate([self.V_g, self.V_y], axis=2)

    def margins(self) -> np.ndarray:
        """Per value class: max over the table row minus its median."""
        t = self.table.reshape(self.table.shape[0], -1)
        return t.max(axis=1) - np.median(t, axis=1)


def feature_probe(params: ModelParams) -> FeatureProbe:
    v = params.vocab
    d = params.d
    rows = params.W[4, v.value_offset:v.blank]                       # (n_y, m, 5d)
    V_g = rows[:, :, d + v.action_offset:d + v.value_offset].copy()
    V_y = rows[:, :, 4 * d + v.value_offset:4 * d + v.blank].copy()
    return FeatureProbe(V_g, V_y)


# exports ---------------------------------------------------------------------------

ACC_COLUMNS = ["run_id", "stage", "eval_L", "train_L", "teacher_forced", "rollout_final",
               "rollout_value_only", "n_eval"]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_acc_csv(path, reports: list[AccReport], run_id: str = "", stage: str = "",
                  train_L: int | str = "") -> None:
    """One row per length, lengths ascending."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACC_COLUMNS)
        for r in sorted(reports, key=lambda r: r.L):
            w.writerow([run_id, stage, r.L, train_L, _fmt(r.teacher_forced), _fmt(r.rollout_final),
                        _fmt(r.rollout_value_only), r.n_eval])


def write_heatmap(path, diag: AttnDiagnostics) -> None:
    """Dense matrix CSV plus a ``.axes.json`` sidecar with the row/column labels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in diag.heatmap:
            w.writerow([repr(float(x)) for x in row])
    sidecar = {"rows": "query clause (answer ell-1)", "row_labels": diag.row_labels(),
               "columns": "key clause, sentence order", "column_labels": diag.column_labels(),
               "n_samples": diag.n_samples, "heads": "mean of post-softmax weights"}
    with open(str(path) + ".axes.json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_diagnostics(path, diag: AttnDiagnostics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["L", "ell", "eps", "delta", "w_pred", "w_ans", "n_samples"])
        for i in range(diag.L):
            w.writerow([diag.L, i + 1, _fmt(diag.eps[i]), _fmt(diag.delta[i]),
                        _fmt(diag.w_pred[i]), _fmt(diag.w_ans[i]), diag.n_samples])


def write_permutation_report(path, report: dict) -> None:
    cols = ["eval_L", "variant", "rollout_final", "rollout_value_only", "eps_mean", "delta_mean",
            "max_received_weight_change"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in report["rows"]:
            w.writerow([_fmt(row[c]) for c in cols[:-1]] + [_fmt(report["max_received_weight_change"])])


def report_dict(r: AccReport) -> dict:
    return asdict(r)
