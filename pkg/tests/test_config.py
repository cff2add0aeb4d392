import json

import pytest

from legocot.config import PRESETS, ConfigError, ExperimentConfig, preset


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_and_round_trip(name):
    cfg = preset(name).validate()
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_save_load(tmp_path):
    cfg = preset("c6-lengthgen")
    cfg.seed = 17
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


def test_unknown_field_rejected():
    obj = preset("c6-lengthgen").to_dict()
    obj["train"]["learning_rate"] = 0.1
    with pytest.raises(ConfigError, match="train.learning_rate"):
        ExperimentConfig.from_dict(obj)


@pytest.mark.parametrize("path,value,msg", [
    (("task", "n_x"), 5, "n_x"),
    (("task", "action_kind"), "dihedral", "action_kind"),
    (("model", "sparsity"), "dense", "sparsity"),
    (("model", "srelu", "q"), 3, "q"),
    (("train", "lr"), 0, "lr"),
    (("train", "mode"), "online", "mode"),
    (("eval", "lengths"), [], "lengths"),
    (("task", "n_y"), "six", "typed"),
])
def test_invalid_values(path, value, msg):
    obj = preset("c6-lengthgen").to_dict()
    node = obj
    for k in path[:-1]:
        node = node[k]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig.from_dict(obj).validate()


def test_bad_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(json.dumps([1, 2]))


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_derived_quantities():
    cfg = preset("c6-lengthgen")
    d = cfg.vocab().d
    assert d == 37
    assert cfg.srelu_config(d).rho == 1.0
    assert cfg.sigma0(d) == pytest.approx(37 ** -0.5)
    cfg.train.E1 = 1.0
    assert cfg.threshold(d) == pytest.approx(1 / 37)
    t = preset("s5-selfimprove").train
    assert t.stage_lengths() == [t.train_L * 2 ** (k - 1) for k in range(2, t.K + 1)]
