import csv
import json

import numpy as np
import pytest

from conftest import perfect_model, random_model
from legocot import evaluation as ev
from legocot.corpus import Vocabulary
from legocot.model import init_params

C6 = Vocabulary(24, "cyclic", 6)


@pytest.fixture(scope="module")
def perfect():
    return perfect_model(C6)


def _zero_q(vocab=C6, m=2):
    return init_params(vocab, m, np.random.default_rng(0), heads=2)


def _uniform_logits(vocab):
    p = _zero_q(vocab)
    p.W[:] = 0.0
    return p


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_perfect_predictor_scores_one(perfect, seed):
    rng = np.random.default_rng(seed)
    assert ev.acc_teacher_forced(perfect, 6, 200, rng) == 1.0
    r = ev.acc_rollout(perfect, 12, 200, rng, seed=seed)
    assert (r.teacher_forced, r.rollout_final, r.rollout_value_only) == (1.0, 1.0, 1.0)


def test_uniform_logits_teacher_forced_is_zero():
    vocab = Vocabulary(30, "cyclic", 6)
    assert vocab.d == 43
    # chance of an exact clause match is 43**-5 ~ 6.8e-9
    assert ev.acc_teacher_forced(_uniform_logits(vocab), 1, 10000, np.random.default_rng(0)) == 0.0


def test_constant_predictor_rollout_is_zero():
    r = ev.acc_rollout(_uniform_logits(C6), 3, 100, np.random.default_rng(0), teacher_forced=False)
    assert r.rollout_final == 0.0
    assert np.isnan(r.teacher_forced)


def test_two_seeds_agree_within_binomial_noise():
    p = perfect_model(C6, c_w=12.0)
    n = 400
    a = ev.acc_teacher_forced(p, 5, n, np.random.default_rng(10))
    b = ev.acc_teacher_forced(p, 5, n, np.random.default_rng(11))
    assert 0.0 < a < 1.0
    pbar = (a + b) / 2
    assert abs(a - b) <= 3 * np.sqrt(pbar * (1 - pbar) * 2 / (5 * n))


def test_accuracy_is_seed_reproducible():
    p = random_model(C6, m=3)
    a = ev.acc_rollout(p, 4, 50, np.random.default_rng(3))
    b = ev.acc_rollout(p, 4, 50, np.random.default_rng(3))
    assert a == b
    assert a.rollout_final <= a.rollout_value_only


def test_zero_q_diagnostics():
    d = ev.attention_diagnostics(_zero_q(), 2, 5, np.random.default_rng(0))
    np.testing.assert_allclose(d.eps, [1 - 2 / 3, 0.5], atol=1e-15)
    np.testing.assert_allclose(d.delta, 0.0, atol=1e-15)
    np.testing.assert_allclose(d.heatmap.sum(axis=1), 1.0, atol=1e-12)
    assert d.row_labels() == ["3", "4"]


def test_concentrated_diagnostics(perfect):
    d = ev.attention_diagnostics(perfect, 5, 20, np.random.default_rng(0))
    assert d.eps.max() < 1e-9
    np.testing.assert_allclose(d.w_pred + d.w_ans + d.eps, 1.0, atol=1e-12)
    assert (d.delta_samples <= 1 - d.eps_samples + 1e-12).all()


def test_extreme_pred_only_diagnostics():
    rows = np.zeros((1, 1, 2))
    rows[0, 0, 0] = 1.0
    d = ev._diagnostics(1, rows, np.zeros((1, 1), dtype=int))
    assert d.eps[0] == 0.0 and d.delta[0] == 1.0


def test_permutation_invariance_of_received_weights(perfect):
    rep = ev.permutation_ablation(perfect, 6, 30, np.random.default_rng(0))
    assert rep["max_received_weight_change"] < 1e-9
    assert rep["delta_rollout_final"] == 0.0
    rep0 = ev.permutation_ablation(_zero_q(), 4, 10, np.random.default_rng(1))
    assert rep0["max_received_weight_change"] < 1e-15
    np.testing.assert_allclose(rep0["baseline"].eps, rep0["permuted"].eps, atol=1e-15)


def test_feature_probe_reads_weights():
    p = _zero_q()
    j, r, k = 2, 1, 3
    p.W[4, C6.value(j), r, C6.d + C6.action(k)] = 3.0
    probe = ev.feature_probe(p)
    assert probe.V_g[j, r, k] == 3.0
    assert probe.table.shape == (C6.n_y, p.m, C6.n_g + C6.n_y)
    assert probe.margins().shape == (C6.n_y,)


def test_fresh_probe_bounded():
    p = _zero_q(m=8)
    probe = ev.feature_probe(p)
    assert np.abs(probe.table).max() < 10 * p.sigma0 * np.sqrt(np.log(C6.d))


def test_exports(tmp_path, perfect):
    reports = [ev.acc_rollout(perfect, L, 20, np.random.default_rng(L)) for L in (7, 3)]
    ev.write_acc_csv(tmp_path / "acc.csv", reports, run_id="r", stage="s", train_L=3)
    rows = list(csv.DictReader(open(tmp_path / "acc.csv")))
    assert [r["eval_L"] for r in rows] == ["3", "7"]
    assert list(rows[0]) == ev.ACC_COLUMNS
    diag = ev.attention_diagnostics(perfect, 3, 4, np.random.default_rng(0))
    ev.write_heatmap(tmp_path / "h.csv", diag)
    mat = np.loadtxt(tmp_path / "h.csv", delimiter=",")
    assert mat.shape == (3, 6)
    np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-9)
    axes = json.loads((tmp_path / "h.csv.axes.json").read_text())
    assert axes["row_labels"] == ["4", "5", "6"]
    ev.write_diagnostics(tmp_path / "d.csv", diag)
    assert len(list(csv.DictReader(open(tmp_path / "d.csv")))) == 3
    rep = ev.permutation_ablation(perfect, 3, 4, np.random.default_rng(0))
    ev.write_permutation_report(tmp_path / "p.csv", rep)
    assert [r["variant"] for r in csv.DictReader(open(tmp_path / "p.csv"))] == ["baseline", "permuted"]
