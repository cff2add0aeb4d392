import numpy as np
import pytest

from legocot.activations import MAIN, MODIFIED, SReluConfig, srelu, srelu_and_prime, srelu_prime

CONFIGS = [
    SReluConfig(q=4, rho=0.1),
    SReluConfig(q=6, rho=1.0),
    SReluConfig(q=4, rho=0.2, variant=MODIFIED, varpi=0.05, cap=3.0),
]


@pytest.mark.parametrize("cfg", CONFIGS)
def test_continuous_at_breakpoints(cfg):
    for b in cfg.breakpoints():
        left = srelu(np.nextafter(b, -np.inf), cfg)
        right = srelu(np.nextafter(b, np.inf), cfg)
        assert abs(srelu(b, cfg) - left) < 1e-12
        assert abs(srelu(b, cfg) - right) < 1e-12


@pytest.mark.parametrize("cfg", CONFIGS)
def test_derivative_matches_fd(cfg):
    rng = np.random.default_rng(0)
    x = rng.uniform(-2 * (cfg.cap or 1.0), 2 * (cfg.cap or 1.0), 1000)
    h = 1e-6
    far = np.min(np.abs(x[:, None] - np.array(cfg.breakpoints())[None, :]), axis=1) > 10 * h
    fd = (srelu(x + h, cfg) - srelu(x - h, cfg)) / (2 * h)
    assert np.max(np.abs(fd - srelu_prime(x, cfg))[far]) < 1e-6


def test_main_pieces():
    cfg = SReluConfig(q=4, rho=0.5)
    assert srelu(-3.0, cfg) == pytest.approx(0.5 / 4)
    assert srelu(0.25, cfg) == pytest.approx(0.25 ** 4 / (0.5 ** 3 * 4))
    assert srelu(2.0, cfg) == pytest.approx(2.0 - 0.5 * 0.75)
    assert srelu_prime(2.0, cfg) == 1.0 and srelu_prime(-2.0, cfg) == 0.0


def test_modified_saturates_and_leaks():
    cfg = CONFIGS[2]
    assert srelu_prime(10.0, cfg) == 0.0
    assert srelu(10.0, cfg) == srelu(3.0, cfg)
    assert srelu_prime(-1.0, cfg) == -cfg.varpi
    assert srelu_prime(-10.0, cfg) == 0.0


@pytest.mark.parametrize("cfg", CONFIGS)
def test_fused_matches_separate(cfg):
    x = np.random.default_rng(1).normal(0, 2, (7, 9))
    v, g = srelu_and_prime(x.copy(), cfg)
    np.testing.assert_allclose(v, srelu(x, cfg), rtol=1e-14, atol=0)
    np.testing.assert_allclose(g, srelu_prime(x, cfg), rtol=1e-14, atol=0)


def test_config_validation():
    with pytest.raises(ValueError):
        SReluConfig(q=3)
    with pytest.raises(ValueError):
        SReluConfig(rho=0.0)
    with pytest.raises(ValueError):
        SReluConfig(variant=MODIFIED)
    with pytest.raises(ValueError):
        SReluConfig(rho=1.0, variant=MODIFIED, varpi=0.1, cap=0.5)
    assert SReluConfig.from_dict(SReluConfig().to_dict()) == SReluConfig()
    assert SReluConfig().variant == MAIN
