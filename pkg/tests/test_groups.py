import itertools
import math

import numpy as np
import pytest

from legocot import groups
from legocot.groups import CYCLIC, SYMMETRY


def test_cyclic_apply_and_compose():
    g = groups.cyclic(6, 2)
    h = groups.cyclic(6, 5)
    assert g(3) == 5
    assert groups.compose(h, g) == groups.cyclic(6, 1)
    assert groups.inverse(g) == groups.cyclic(6, 4)


def test_permutation_compose_is_right_to_left():
    a = groups.permutation((1, 2, 0))
    b = groups.permutation((0, 2, 1))
    ab = groups.compose(a, b)
    for y in range(3):
        assert ab(y) == a(b(y))


def test_inverse_round_trip():
    rng = np.random.default_rng(0)
    space = groups.state_space(SYMMETRY, 5)
    for _ in range(50):
        g = space.sample_uniform(rng)
        e = groups.compose(groups.inverse(g), g)
        assert e == groups.identity(SYMMETRY, 5)


@pytest.mark.parametrize("kind,n", [(CYCLIC, 6), (SYMMETRY, 4)])
def test_fold_matches_track(kind, n):
    rng = np.random.default_rng(1)
    space = groups.state_space(kind, n)
    for length in range(0, 12):
        word = [space.sample_uniform(rng) for _ in range(length)]
        y0 = int(rng.integers(n))
        states = groups.track(y0, word)
        assert len(states) == length
        final = states[-1] if states else y0
        assert groups.fold(word, kind, n)(y0) == final


def test_track_indices_matches_track():
    rng = np.random.default_rng(2)
    space = groups.state_space(SYMMETRY, 4)
    acts = rng.integers(space.order, size=(20, 7))
    y0 = rng.integers(4, size=20)
    out = space.track_indices(y0, acts)
    for i in range(20):
        word = [space.element(a) for a in acts[i]]
        assert list(out[i]) == [int(y0[i])] + groups.track(int(y0[i]), word)


def test_symmetry_enumeration():
    space = groups.state_space(SYMMETRY, 4)
    assert space.order == 24
    assert len(set(space.elements)) == 24
    assert space.identity() in space.elements


@pytest.mark.parametrize("n", [3, 5])
def test_fiber_sizes(n):
    for kind in (CYCLIC, SYMMETRY):
        space = groups.state_space(kind, n)
        for j, y in itertools.product(range(n), repeat=2):
            f = space.fiber(j, y)
            assert len(f) == groups.expected_fiber_size(kind, n)
            assert all(g(y) == j for g in f.elements)
    assert groups.expected_fiber_size(SYMMETRY, n) == math.factorial(n - 1)


def test_invalid_elements_rejected():
    assert groups.cyclic(6, 7) == groups.cyclic(6, 1)
    with pytest.raises(ValueError):
        groups.GroupElement(CYCLIC, 6, (6,))
    with pytest.raises(ValueError):
        groups.permutation((0, 0, 1))
    with pytest.raises(ValueError):
        groups.state_space(SYMMETRY, 6).fiber(6, 0)
    with pytest.raises(ValueError):
        groups.state_space(CYCLIC, 4).apply(groups.cyclic(5, 1), 0)
