import numpy as np
import pytest

from legocot.corpus import Vocabulary
from legocot.model import BLOCKS, init_params


@pytest.fixture
def c6():
    return Vocabulary(8, "cyclic", 6)


@pytest.fixture
def s3():
    return Vocabulary(6, "symmetry", 3)


def random_model(vocab, m=4, heads=2, sparsity=BLOCKS, seed=0, q_scale=0.3):
    """Random ``W`` and a random (masked) ``Q`` so attention is non-trivial."""
    rng = np.random.default_rng(seed)
    p = init_params(vocab, m, rng, heads=heads, sparsity=sparsity)
    p.Q[:] = rng.normal(0.0, q_scale, p.Q.shape) * p.q_mask()
    return p


def perfect_model(vocab, c_q=25.0, c_w=60.0):
    """Hand-built model that solves the task: a reference for evaluation tests.

    Attention puts almost all mass on the current answer and the next
    predicate.  Slots 1-3 emit blank, slot 4 copies the predicate's left
    variable and slot 5 has one unit per (action, value) pair that fires only
    when both are present in the aggregate.
    """
    d, n_x, blank = vocab.d, vocab.n_x, vocab.blank
    m = vocab.n_g
    p = init_params(vocab, m, np.random.default_rng(0), heads=1, sigma0=1.0)
    p.W[:] = 0.0
    p.bias = 0.0
    idx = np.arange(n_x)
    p.Q[0, 3 * d + idx, 2 * d + idx] = c_q
    p.Q[0, 3 * d + idx, 3 * d + idx] = c_q
    slot4_vars = 3 * d + idx
    for s in range(3):
        p.W[s, blank, 0, slot4_vars] = c_w
    for x in range(n_x):
        p.W[3, x, 0, x] = c_w
    table = vocab.space.action_table
    for k in range(vocab.n_g):
        for y in range(vocab.n_y):
            j = vocab.value(int(table[k, y]))
            w = p.W[4, j, k]
            w[d + vocab.action(k)] += c_w
            w[4 * d + vocab.value(y)] += c_w
            w[slot4_vars] -= c_w
    return p


# acceptance verdicts, printed once at the end of the session
VERDICTS: dict[int, tuple[bool, str]] = {}


def record_verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
