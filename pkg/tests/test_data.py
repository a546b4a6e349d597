import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkguide.data import (
    GroupSpec,
    SurveyTable,
    SynthConfig,
    kfold_split,
    load_csv,
    split_group,
    standardize,
    synth_generate,
    write_csv,
)
from dkguide.errors import (
    EmptyAfterCleaning,
    EmptyGroupWarning,
    InvalidConfig,
    LabelOutOfRange,
    MissingColumn,
    MissingFile,
    NonNumericCell,
    TooFewRows,
    UnknownFactor,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _table(cols, labels=None, c=5):
    names = list(cols)
    rows = np.column_stack([np.asarray(cols[n], dtype=float) for n in names])
    if labels is None:
        labels = np.ones(rows.shape[0], dtype=int)
    return SurveyTable(names, rows, labels, c)


# -- load_csv ---------------------------------------------------------------

def test_four_row_fixture_preserves_labels():
    t = load_csv(FIXTURES / "four_rows.csv", "happiness", 5)
    assert t.n == 4 and t.j == 2
    assert t.labels.tolist() == [1, 2, 4, 5]
    assert t.factor_names == ["age", "health"]


def test_label_above_c_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,9\n")
    with pytest.raises(LabelOutOfRange):
        load_csv(p, "b", 5)


def test_survey_level_histogram():
    t = load_csv(FIXTURES / "survey_levels.csv", "happiness", 5)
    assert t.label_histogram().tolist() == [77, 315, 630, 1743, 422]
    assert t.n == 3187


def test_missing_rows_dropped_and_counted(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b,y\n1,2,1\n,3,2\n4,NA,3\n5,6,2\n")
    t = load_csv(p, "y", 3)
    assert t.n == 2
    assert t.meta["dropped_rows"] == 2


def test_load_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_csv(tmp_path / "nope.csv", "y", 5)
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(MissingColumn):
        load_csv(p, "y", 5)
    p.write_text("a,y\nabc,2\n")
    with pytest.raises(NonNumericCell) as info:
        load_csv(p, "y", 5)
    assert info.value.row == 1 and info.value.col == "a"
    p.write_text("a,y\n,1\n")
    with pytest.raises(EmptyAfterCleaning):
        load_csv(p, "y", 5)


def test_csv_round_trip(tmp_path):
    t = synth_generate(SynthConfig(50, 3, 4, [0.5, 0.3, 0.2], 0.1, seed=3))
    write_csv(t, tmp_path / "t.csv", "y", ["generated for a test"])
    back = load_csv(tmp_path / "t.csv", "y", 4)
    np.testing.assert_array_equal(back.rows, t.rows)
    np.testing.assert_array_equal(back.labels, t.labels)


# -- split_group ------------------------------------------------------------

def test_threshold_split_includes_boundary():
    t = _table({"age": [30, 41, 40, 55]})
    inside, outside = split_group(t, GroupSpec("age", threshold=40, side="le"))
    assert inside.rows[:, 0].tolist() == [30, 40]
    assert outside.rows[:, 0].tolist() == [41, 55]


def test_level_set_split():
    t = _table({"health": [1, 3, 4, 5]})
    inside, outside = split_group(t, GroupSpec("health", levels=[1, 2, 3]))
    assert inside.rows[:, 0].tolist() == [1, 3]
    assert outside.rows[:, 0].tolist() == [4, 5]


def test_unknown_factor():
    t = _table({"age": [1, 2]})
    with pytest.raises(UnknownFactor):
        split_group(t, GroupSpec("zodiac", threshold=1))


def test_empty_side_warns():
    t = _table({"age": [1, 2]})
    with pytest.warns(EmptyGroupWarning):
        split_group(t, GroupSpec("age", threshold=100))


def test_group_spec_validation():
    with pytest.raises(InvalidConfig):
        GroupSpec("a")
    with pytest.raises(InvalidConfig):
        GroupSpec("a", threshold=float("inf"))
    with pytest.raises(InvalidConfig):
        GroupSpec("a", levels=[])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=1, max_size=40), st.integers(0, 10))
def test_partition_property(values, threshold):
    t = _table({"v": values, "w": list(range(len(values)))})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyGroupWarning)
        inside, outside = split_group(t, GroupSpec("v", threshold=threshold))
    assert inside.n + outside.n == t.n
    merged = sorted(map(tuple, np.vstack([inside.rows, outside.rows]).tolist()))
    assert merged == sorted(map(tuple, t.rows.tolist()))
    # order preserved within each part
    assert np.all(np.diff(inside.rows[:, 1]) > 0) and np.all(np.diff(outside.rows[:, 1]) > 0)


# -- kfold_split ------------------------------------------------------------

def test_even_folds():
    plan = kfold_split(10, 5, 101)
    assert np.bincount(plan.assignments).tolist() == [2] * 5


def test_remainder_folds():
    plan = kfold_split(11, 5, 101)
    assert sorted(np.bincount(plan.assignments).tolist()) == [2, 2, 2, 2, 3]


def test_folds_deterministic():
    a, b = kfold_split(37, 5, 9), kfold_split(37, 5, 9)
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_too_few_rows():
    with pytest.raises(TooFewRows):
        kfold_split(3, 5, 0)
    with pytest.raises(TooFewRows):
        kfold_split(10, 1, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_fold_property(n, k, seed):
    if n < k:
        return
    plan = kfold_split(n, k, seed)
    sizes = np.bincount(plan.assignments, minlength=k)
    assert sizes.min() >= 1 and sizes.max() - sizes.min() <= 1
    seen = np.concatenate([plan.test_index(f) for f in range(k)])
    assert sorted(seen.tolist()) == list(range(n))


# -- standardize ------------------------------------------------------------

def test_standardize_column():
    out, (mean, std, const) = standardize(_table({"a": [1, 2, 3]}))
    np.testing.assert_allclose(out.rows[:, 0], [-1.224744871391589, 0.0, 1.224744871391589],
                               atol=1e-12)
    assert mean[0] == 2.0 and not const[0]


def test_constant_column_flagged():
    out, (_, _, const) = standardize(_table({"a": [7, 7, 7], "b": [1, 2, 4]}))
    assert out.rows[:, 0].tolist() == [0, 0, 0]
    assert const.tolist() == [True, False]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_standardize_idempotent(col):
    once, _ = standardize(_table({"a": col, "b": list(range(len(col)))}))
    twice, _ = standardize(once)
    np.testing.assert_allclose(twice.rows, once.rows, atol=1e-12)


# -- synth_generate ---------------------------------------------------------

def test_synth_correlation_order():
    t = synth_generate(SynthConfig(5000, 3, 5, [0.7, 0.2, 0.1], 0.0, seed=1))
    score = t.rows @ np.array([0.7, 0.2, 0.1])
    r = [abs(np.corrcoef(t.rows[:, j], score)[0, 1]) for j in range(3)]
    assert r[0] > r[1] > r[2]
    assert t.meta["planted_ranking"] == [0, 1, 2]


def test_synth_noiseless_single_factor():
    t = synth_generate(SynthConfig(1000, 3, 2, [1.0, 0.0, 0.0], 0.0, seed=5))
    expected = (t.rows[:, 0] > np.median(t.rows[:, 0])).astype(int) + 1
    np.testing.assert_array_equal(t.labels, expected)


def test_synth_deterministic(tmp_path):
    cfg = SynthConfig(300, 4, 5, [0.4, 0.3, 0.2, 0.1], 0.5, seed=77)
    write_csv(synth_generate(cfg), tmp_path / "a.csv")
    write_csv(synth_generate(cfg), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_labels_near_uniform():
    t = synth_generate(SynthConfig(1000, 4, 5, [0.4, 0.3, 0.2, 0.1], 1.0, seed=2))
    assert t.label_histogram().tolist() == [200] * 5


@pytest.mark.parametrize("bad", [
    dict(planted_importance=[0.5, 0.6]),
    dict(planted_importance=[1.2, -0.2]),
    dict(planted_importance=[1.0]),
    dict(n=1),
    dict(noise_scale=-1.0),
])
def test_synth_invalid(bad):
    base = dict(n=100, j=2, c=3, planted_importance=[0.5, 0.5])
    with pytest.raises(InvalidConfig):
        synth_generate(SynthConfig(**{**base, **bad}))


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(0, 1000))
def test_synth_monotonicity(j, seed):
    # distinct weights with gaps >= 0.05
    raw = np.arange(j, 0, -1, dtype=float)
    w = raw / raw.sum()
    if np.min(-np.diff(w)) < 0.05:
        return
    t = synth_generate(SynthConfig(5000, j, 5, w.tolist(), 0.0, seed=seed))
    score = t.rows @ w
    r = np.array([abs(np.corrcoef(t.rows[:, i], score)[0, 1]) for i in range(j)])
    assert np.argsort(-r).tolist() == t.meta["planted_ranking"]
