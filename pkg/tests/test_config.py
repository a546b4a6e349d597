import json

import pytest

from dkguide.config import RunConfig, validate
from dkguide.errors import ConfigError, IoError, SchemaVersionMismatch

BASE = {
    "version": 1,
    "seed": 7,
    "synth": {"n": 100, "j": 3, "c": 3, "planted_importance": [0.5, 0.3, 0.2]},
    "models": [{"name": "LR", "kind": "LR"}, {"name": "M", "kind": "MoMLP", "hidden": [4, 2]}],
    "train": {"epochs": 2},
    "loss": {"probe_size": 4, "transform": "linear"},
    "groups": [{"name": "young", "complement": "elder", "factor": "x1", "threshold": 40},
               {"name": "bad", "factor": "x2", "levels": [1, 2, 3]}],
}


def test_valid_document():
    cfg = RunConfig(BASE)
    assert cfg.seed == 7 and cfg.num_levels == 3
    assert cfg.train_config().seed == 7 and cfg.train_config(seed=3).seed == 3
    assert cfg.loss_spec().transform == "linear"
    assert [e.options for e in cfg.model_entries()] == [{}, {"hidden": (4, 2)}]
    groups = cfg.groups()
    assert [(g[0], g[2]) for g in groups] == [("young", "elder"), ("bad", None)]
    assert groups[1][1].levels == (1.0, 2.0, 3.0)


@pytest.mark.parametrize("patch, path", [
    ({"synth": {**BASE["synth"], "planted_importance": [-0.1, 0.6, 0.5]}},
     "$.synth.planted_importance[0]"),
    ({"train": {"epochs": 0}}, "$.train.epochs"),
    ({"bogus": 1}, "$"),
    ({"models": [{"name": "X", "kind": "GPT"}]}, "$.models[0].kind"),
    ({"loss": {"transform": "sqrt"}}, "$.loss.transform"),
])
def test_field_paths_in_errors(patch, path):
    with pytest.raises(ConfigError) as info:
        validate({**BASE, **patch})
    assert str(info.value).startswith(path + ":")


def test_version():
    with pytest.raises(SchemaVersionMismatch):
        validate({**BASE, "version": 2})
    with pytest.raises(ConfigError):
        validate({k: v for k, v in BASE.items() if k != "version"})


def test_synth_weights_must_sum_to_one():
    cfg = RunConfig({**BASE, "synth": {**BASE["synth"], "planted_importance": [0.5, 0.5, 0.5]}})
    with pytest.raises(ConfigError, match=r"^\$\.synth"):
        cfg.synth_config()


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    assert RunConfig.load(p).digest == RunConfig(BASE).digest
    p.write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    with pytest.raises(IoError):
        RunConfig.load(tmp_path / "missing.json")


def test_shipped_configs_validate():
    from pathlib import Path
    for path in sorted((Path(__file__).parents[1] / "configs").glob("*.json")):
        RunConfig.load(path)
