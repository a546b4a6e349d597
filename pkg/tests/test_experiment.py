import csv
import json

import numpy as np
import pytest

from dkguide.data import GroupSpec, SynthConfig, synth_generate
from dkguide.errors import InvalidConfig, SchemaVersionMismatch, StageError
from dkguide.experiment import (
    FOLD_CSV_COLUMNS,
    ExperimentReport,
    ExperimentSettings,
    ModelEntry,
    run_experiment,
    summary_table,
    write_fold_csv,
)
from dkguide.training import LossSpec, TrainConfig

MODELS = [ModelEntry("LR", "LR"), ModelEntry("MLP", "MoMLP", {"hidden": (8,)}),
          ModelEntry("WD", "WideDeep", {"hidden": (8,)})]


@pytest.fixture(scope="module")
def table():
    return synth_generate(SynthConfig(240, 5, 3, [0.4, 0.3, 0.15, 0.1, 0.05], 0.3, seed=8))


def _run(table, **kw):
    args = dict(model_entries=MODELS, k=3, train_config=TrainConfig(epochs=3, lr=1e-2, batch_size=64),
                loss_spec=LossSpec(probe_size=8, m_train=4), seed=101,
                settings=ExperimentSettings(sample_cap=20), dataset="synthetic")
    args.update(kw)
    return run_experiment(table, **args)


@pytest.fixture(scope="module")
def report(table):
    return _run(table)


def test_shape_contract(report):
    assert report.k == 3 and report.models == ["LR", "MLP", "WD"]
    assert len(report.folds) == 3
    for cond in ("without_dk", "with_dk"):
        c = report.conditions[cond]
        for name in report.models:
            assert len(c["per_model"][name]["micro_f1"]) == 3
            assert len(c["per_model"][name]["macro_f1"]) == 3
        for mat in c["tau_matrices"]:
            mat = np.array(mat)
            assert np.array_equal(mat, mat.T) and np.all(np.diag(mat) == 1)
        assert c["mean_tau"] == pytest.approx(np.mean(c["fold_mean_tau"]))


def test_lambdas_are_validation_micro_f1(report):
    for fold in report.folds:
        assert all(0 <= v <= 1 for v in fold["lambdas"])
        assert abs(sum(fold["dk_dist"]) - 1) < 1e-12


def test_json_round_trip(report):
    back = ExperimentReport.from_dict(json.loads(report.to_json()))
    assert back.to_json() == report.to_json()


def test_version_checked(report):
    d = report.to_dict()
    d["version"] = 2
    with pytest.raises(SchemaVersionMismatch):
        ExperimentReport.from_dict(d)


def test_deterministic(table, report):
    assert _run(table).to_json() == report.to_json()


def test_thread_count_does_not_change_result(table, report):
    assert _run(table, n_jobs=2).to_json() == report.to_json()


def test_group_restriction(table):
    rep = _run(table, group=GroupSpec("x1", threshold=0.0), group_name="low_x1",
               model_entries=MODELS[:2], k=2)
    assert rep.group == "low_x1"
    assert sum(f["n_test"] for f in rep.folds) == int(np.sum(table.rows[:, 0] <= 0))


def test_needs_two_models(table):
    with pytest.raises(InvalidConfig):
        _run(table, model_entries=MODELS[:1])


def test_stage_errors_carry_context(table):
    bad = [ModelEntry("LR", "LR"), ModelEntry("CNN", "CNN1D", {"kernel": 9})]
    with pytest.raises(StageError) as info:
        _run(table, model_entries=bad)
    assert info.value.fold == 0 and info.value.stage == "build" and info.value.model == "CNN"


def test_fold_csv(tmp_path, report):
    write_fold_csv([report], tmp_path / "folds.csv", ["seed=101"])
    lines = (tmp_path / "folds.csv").read_text().splitlines()
    assert lines[0] == "# seed=101"
    rows = list(csv.DictReader(lines[1:]))
    assert tuple(rows[0]) == FOLD_CSV_COLUMNS
    # one row per fold for each (model, condition) cell
    assert len(rows) == 2 * 3 * 3
    cell = [r for r in rows if r["model"] == "LR" and r["condition"] == "with_dk"]
    assert [int(r["fold"]) for r in cell] == [0, 1, 2]


def test_summary_table_layout(report):
    md = summary_table([report, report])
    lines = md.strip().splitlines()
    assert lines[0].split("|")[1:4] == [" Group ", " Dataset ", " DK "]
    assert "LR Macro_F1" in lines[0] and "WD Micro_F1" in lines[0]
    # rows: groups x dataset x condition
    assert len(lines) == 2 + 2 * 2
    assert "**" in md
