"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Criteria 8 to 12 train the two presets on three seeds each (session fixtures,
shared between criteria), so this module dominates the suite's runtime.
"""

import filecmp
import time

import numpy as np
import pytest

from conftest import record_verdict
from fd_oracle import compare
from legocot import groups, pipeline
from legocot.activations import MAIN, MODIFIED, SReluConfig, srelu, srelu_prime
from legocot.cli import main
from legocot.config import THEORY_STAGED, preset
from legocot.corpus import Vocabulary, embed, is_valid, sample_sentence, truncate
from legocot.batches import answer_tokens, predicate_tokens, sample_chains
from legocot.evaluation import attention_diagnostics, attention_rows, permutation_ablation
from legocot.model import BLOCKS, attention_forward, init_params, load_checkpoint
from legocot.training import grad_analytic
from test_cli import tiny_config
from test_gradients import _setup

SEEDS = (0, 1, 2)


def _check(n, ok, detail):
    record_verdict(n, ok, detail)
    assert ok, detail


# 1-7: exact properties ------------------------------------------------------------

def test_c01_group_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    bad = 0
    for kind, n_y in (("cyclic", 6), ("symmetry", 5)):
        space = groups.state_space(kind, n_y)
        for _ in range(1000):
            word = [space.sample_uniform(rng) for _ in range(int(rng.integers(0, 21)))]
            y0 = int(rng.integers(n_y))
            final = ([y0] + groups.track(y0, word))[-1]
            if groups.apply(groups.fold(word, kind, n_y), y0) != final:
                bad += 1
    dt = time.perf_counter() - t0
    _check(1, bad == 0 and dt < 1.0, f"{bad} mismatches in 2000 words, {dt:.2f} s")


def test_c02_fiber_law():
    bad = []
    cases = [("cyclic", n) for n in range(2, 13)] + [("symmetry", n) for n in range(2, 7)]
    for kind, n in cases:
        space = groups.state_space(kind, n)
        want = 1 if kind == "cyclic" else int(np.prod(np.arange(1, n)))
        assert groups.expected_fiber_size(kind, n) == want
        for j in range(n):
            for y in range(n):
                f = space.fiber(j, y)
                if len(f.elements) != want or any(space.apply(g, y) != j for g in f.elements):
                    bad.append((kind, n, j, y))
    _check(2, not bad, f"{len(cases)} groups checked exhaustively, {len(bad)} bad fibers")


def test_c03_data_validity():
    t0 = time.perf_counter()
    bad = 0
    for name in ("c6-lengthgen", "s5-selfimprove"):
        vocab = preset(name).vocab()
        rng = np.random.default_rng(1)
        for _ in range(10000):
            L = int(rng.integers(1, vocab.n_x))
            if not is_valid(vocab, sample_sentence(vocab, L, rng)):
                bad += 1
    dt = time.perf_counter() - t0
    _check(3, bad == 0 and dt < 10.0, f"{bad} invalid of 20000 sentences, {dt:.2f} s")


def test_c04_gradient_oracle():
    t0 = time.perf_counter()
    worst, lines = 0.0, []
    for kind in ("cyclic", "symmetry"):
        for sparsity in (BLOCKS, "full"):
            for family in ("next_clause", "bootstrapped_value"):
                p, spec, trainable, batch = _setup(kind, sparsity, family)
                g = grad_analytic(p, batch, spec.positions, trainable)
                res = compare(p, batch, spec.positions, g.dW, g.dQ)
                assert res["checked_Q"] > 0
                worst = max(worst, res["W"], res["Q"])
                lines.append(res)
    dt = time.perf_counter() - t0
    _check(4, worst < 1e-4 and dt < 60.0,
           f"max relative error {worst:.2e} over {len(lines)} settings, {dt:.1f} s")


def _srelu_configs():
    return [SReluConfig(q=4, rho=1.0), SReluConfig(q=6, rho=0.1),
            SReluConfig(q=4, rho=0.5, variant=MODIFIED, varpi=0.3, cap=4.0),
            SReluConfig(q=6, rho=0.2, variant=MODIFIED, varpi=0.7, cap=2.5)]


def test_c05_srelu_calculus():
    gap, err = 0.0, 0.0
    h = 1e-6
    rng = np.random.default_rng(5)
    for cfg in _srelu_configs():
        bps = np.array(cfg.breakpoints())
        for b in bps:
            left, right = srelu(b, cfg), srelu(np.nextafter(b, np.inf), cfg)
            gap = max(gap, abs(float(left) - float(right)))
        x = rng.uniform(bps.min() - 2.0, bps.max() + 2.0, 1000)
        # keep the central difference on one piece
        x = np.where(np.abs(x[:, None] - bps[None, :]).min(axis=1) < 1e-4, x + 3e-4, x)
        fd = (srelu(x + h, cfg) - srelu(x - h, cfg)) / (2 * h)
        err = max(err, float(np.abs(fd - srelu_prime(x, cfg)).max()))
    variants = {c.variant for c in _srelu_configs()}
    ok = gap < 1e-12 and err < 1e-6 and variants == {MAIN, MODIFIED}
    _check(5, ok, f"max continuity gap {gap:.1e}, max derivative error {err:.1e}")


def test_c06_attention_normalisation():
    vocab = Vocabulary(24, "cyclic", 6)
    rng = np.random.default_rng(6)
    p = init_params(vocab, 4, rng, heads=2, sparsity="full")
    p.Q[:] = rng.normal(0.0, 0.5, p.Q.shape)
    zero = p.copy()
    zero.Q[:] = 0.0
    sum_err, uni_err = 0.0, 0.0
    for L in (1, 2, 5, 20):
        s = sample_sentence(vocab, L, rng)
        for Lp in range(L + 1):
            Z = embed(vocab, truncate(s, Lp))
            w, _ = attention_forward(p, Z)
            sum_err = max(sum_err, float(np.abs(w.sum(axis=1) - 1.0).max()))
            w0, _ = attention_forward(zero, Z)
            uni_err = max(uni_err, float(np.abs(w0 - 1.0 / Z.shape[1]).max()))
    _check(6, sum_err < 1e-9 and uni_err < 1e-12,
           f"max |sum - 1| {sum_err:.1e}, max |w - 1/N| at Q=0 {uni_err:.1e}")


def test_c07_freeze_contracts(tmp_path):
    cfg = tiny_config(mode=THEORY_STAGED, algorithm="curriculum", steps_w=20, steps_q=20)
    run, run_dir = pipeline.train(cfg, str(tmp_path / "a"), keep_snapshots=True)
    s1 = load_checkpoint(run_dir / "checkpoints" / "stage1.ckpt")
    s2 = load_checkpoint(run_dir / "checkpoints" / "stage2.ckpt")
    ok1 = (not s1.Q.any() and np.array_equal(s1.W, s2.W)
           and np.array_equal(run.snapshots[0].W, run.snapshots[1].W) and s2.Q.any())

    cfg = tiny_config(mode=THEORY_STAGED, algorithm="self_training", K=3, steps_w=20, steps_q=20,
                      max_steps=20, threshold=1e-9)
    cfg.task.n_x = 9
    run, run_dir = pipeline.train(cfg, str(tmp_path / "b"))
    res = run.stages
    ckpt = {n: load_checkpoint(run_dir / "checkpoints" / f"{n}.ckpt").digest()
            for n in ("T1", "T2", "T3")}
    ok2 = (res[2].annotator_digest == res[1].digest == ckpt["T1"]
           and res[3].annotator_digest == res[2].digest == ckpt["T2"]
           and all(r.annotator_digest_after == r.annotator_digest for r in res[2:]))
    _check(7, ok1 and ok2, f"curriculum freeze {ok1}, annotator hashes stable {ok2}")


# 8-12: trained models ---------------------------------------------------------------

def _eval(params, lengths, seed):
    """``rollout_value_only`` per length over the criteria's 500 sentences."""
    reps = pipeline.evaluate(params, lengths, 500, 1000 + seed, teacher_forced=False)
    return {r.L: r.rollout_value_only for r in reps}


@pytest.fixture(scope="module")
def c6_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("c6")
    out = {}
    for seed in SEEDS:
        cfg = preset("c6-lengthgen")
        cfg.seed, cfg.run_id = seed, f"c6-lengthgen-{seed}"
        t0 = time.perf_counter()
        run, _ = pipeline.train(cfg, str(root))
        out[seed] = (run.params, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def s5_runs(tmp_path_factory):
    """Per seed, the models at the end of stages 1, 2 and 3 (L = 5, 10, 20)."""
    root = tmp_path_factory.mktemp("s5")
    out = {}
    for seed in SEEDS:
        cfg = preset("s5-selfimprove")
        cfg.seed, cfg.run_id = seed, f"s5-selfimprove-{seed}"
        run, _ = pipeline.train(cfg, str(root), keep_snapshots=True)
        out[seed] = run.snapshots
    return out


@pytest.fixture(scope="module")
def c6_matched(tmp_path_factory):
    """C6 under exactly the symmetry preset's stage-1 budget."""
    root = tmp_path_factory.mktemp("c6m")
    out = {}
    for seed in SEEDS:
        cfg = preset("s5-selfimprove")
        cfg.task = preset("c6-lengthgen").task
        cfg.train.algorithm = "curriculum"
        cfg.eval.lengths = [5, 10, 20]
        cfg.seed, cfg.run_id = seed, f"c6-matched-{seed}"
        run, _ = pipeline.train(cfg, str(root))
        out[seed] = run.params
    return out


def test_c08_cyclic_length_generalisation(c6_runs):
    passed, parts = 0, []
    for seed, (params, secs) in c6_runs.items():
        acc = _eval(params, [5, 20], seed)
        ok = acc[5] >= 0.90 and acc[20] >= 0.80
        passed += ok
        parts.append(f"seed {seed}: L5 {acc[5]:.3f} L20 {acc[20]:.3f} ({secs / 60:.1f} min)")
    _check(8, passed >= 2, f"{passed}/3 seeds pass; " + "; ".join(parts))


def test_c09_cyclic_vs_symmetry(c6_matched, s5_runs):
    c6 = [_eval(c6_matched[s], [20], s)[20] for s in SEEDS]
    s5 = [_eval(s5_runs[s][0], [20], s)[20] for s in SEEDS]
    gap = float(np.mean(c6) - np.mean(s5))
    _check(9, gap >= 0.15, f"L20 value accuracy C6 {np.mean(c6):.3f} vs S5 {np.mean(s5):.3f}, "
                           f"gap {gap:.3f}")


def test_c10_self_improvement(s5_runs):
    first = [_eval(s5_runs[s][0], [40], s)[40] for s in SEEDS]
    last = [_eval(s5_runs[s][-1], [40], s)[40] for s in SEEDS]
    gain = float(np.mean(last) - np.mean(first))
    _check(10, gain >= 0.15, f"L40 value accuracy stage 1 {np.mean(first):.3f}, "
                             f"after L=20 stage {np.mean(last):.3f}, gain {gain:.3f}")


def test_c11_attention_concentration(c6_runs):
    params = c6_runs[0][0]
    vocab = params.vocab
    L, n = 5, 100
    diag = attention_diagnostics(params, L, n, np.random.default_rng(11))
    ch = sample_chains(vocab, L, n, np.random.default_rng(11))
    w = attention_rows(params, predicate_tokens(vocab, ch), answer_tokens(vocab, ch))
    # row ell targets predicate ell (column ell-1) and answer ell-1 (column L+ell-1)
    r = np.arange(L)
    targets = w[:, r, r] + w[:, r, L + r]
    others = w.copy()
    others[:, r, r] = -1.0
    others[:, r, L + r] = -1.0
    rows_ok = bool((targets > others.max(axis=2)).all())
    eps_ok = bool((diag.eps <= 0.35).all())
    _check(11, eps_ok and rows_ok,
           f"mean eps per ell {np.round(diag.eps, 3).tolist()}, "
           f"targets outweigh every other key in all {n * L} rows: {rows_ok}")


def test_c12_permutation_robustness(c6_runs):
    params = c6_runs[0][0]
    assert params.sparsity == BLOCKS
    worst_w, worst_acc, parts = 0.0, 0.0, []
    for L in (5, 20):
        rep = permutation_ablation(params, L, 500, np.random.default_rng(12 + L))
        dacc = max(abs(rep["delta_rollout_final"]), abs(rep["delta_rollout_value_only"]))
        worst_w = max(worst_w, rep["max_received_weight_change"])
        worst_acc = max(worst_acc, dacc)
        parts.append(f"L{L}: weight change {rep['max_received_weight_change']:.1e}, "
                     f"accuracy change {dacc:.3f}")
    _check(12, worst_w <= 1e-9 and worst_acc <= 0.05, "; ".join(parts))


# 13: determinism ----------------------------------------------------------------

def _cli_outputs(root, cfg_path):
    out = root / "runs"
    assert main(["gen", "--config", str(cfg_path), "--L", "4", "--count", "30",
                 "--out", str(root / "corpus.jsonl")]) == 0
    assert main(["train", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    ck = out / "tiny" / "checkpoints" / "T2.ckpt"
    assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(ck),
                 "--out", str(root / "acc.csv")]) == 0
    assert main(["attn", "--config", str(cfg_path), "--checkpoint", str(ck),
                 "--out-dir", str(root / "attn")]) == 0
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_c13_determinism(tmp_path):
    cfg = tiny_config(algorithm="self_training", K=2, max_steps=10, threshold=1e-9)
    cfg_path = tmp_path / "cfg.json"
    cfg.save(cfg_path)
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    files_a, files_b = _cli_outputs(a, cfg_path), _cli_outputs(b, cfg_path)
    same = files_a == files_b and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files_a)
    _check(13, same and len(files_a) > 5, f"{len(files_a)} output files compared byte for byte")
