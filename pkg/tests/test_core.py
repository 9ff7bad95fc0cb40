import numpy as np
import pytest
from hypothesis import given, strategies as st

from outres.core import (
    ConfigError,
    ConfusionCounts,
    DataError,
    Dataset,
    DetectionResult,
    DimensionError,
    RangeError,
    RatePanel,
    aggregate_cells,
    confusion,
    load_csv,
    rates,
    write_csv,
)

flags = st.lists(st.booleans(), min_size=1, max_size=40)


def _pair(draw_len=40):
    return st.integers(1, draw_len).flatmap(
        lambda n: st.tuples(st.lists(st.booleans(), min_size=n, max_size=n),
                            st.lists(st.booleans(), min_size=n, max_size=n))
    )


def test_load_csv_plain(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3,4\n5,6\n")
    ds = load_csv(p)
    assert (ds.n, ds.v) == (3, 2)
    assert ds.ground_truth is None
    assert ds.column_names == ("a", "b")


def test_load_csv_ground_truth(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,is_outlier\n1,2,0\n3,4,0\n5,6,1\n")
    ds = load_csv(p, "is_outlier")
    assert ds.v == 2
    assert ds.ground_truth.tolist() == [False, False, True]


def test_load_csv_nan_names_coordinates(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n3,NaN\n")
    with pytest.raises(DataError, match=r"row 1.*'b'"):
        load_csv(p)


def test_load_csv_unparseable(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,x\n")
    with pytest.raises(DataError, match="row 0"):
        load_csv(p)


def test_load_csv_missing_gt_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        load_csv(p, "label")


def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    ds = Dataset(rng.normal(size=(50, 3)) * 1e-7 + 1 / 3, ("x", "y", "z"), rng.random(50) < 0.2, "r")
    p = tmp_path / "r.csv"
    write_csv(ds, p, comments=["seed=3"])
    back = load_csv(p, "is_outlier")
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.ground_truth, ds.ground_truth)


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.inf]]), ("a", "b"))
    with pytest.raises(DataError):
        Dataset(np.ones((3, 2)), ("a", "b"), np.array([True, False]))
    ds = Dataset(np.ones((3, 2)), ("a", "b"))
    with pytest.raises(ValueError):
        ds.values[0, 0] = 2.0


@pytest.mark.parametrize(
    "pred,truth,expect",
    [
        ([1, 0], [1, 0], (1, 0, 0, 1)),
        ([1, 1, 0, 0], [1, 0, 1, 0], (1, 1, 1, 1)),
        ([0] * 5, [0] * 5, (0, 0, 0, 5)),
    ],
)
def test_confusion_examples(pred, truth, expect):
    c = confusion(np.array(pred, bool), np.array(truth, bool))
    assert (c.tp, c.fp, c.fn, c.tn) == expect


def test_confusion_length_mismatch():
    with pytest.raises(DimensionError):
        confusion([True], [True, False])


def test_rates_examples():
    r = rates(ConfusionCounts(tp=9, fp=5, fn=1, tn=85))
    assert r["sensitivity"] == pytest.approx(0.9)
    assert r["specificity"] == pytest.approx(85 / 90)
    assert rates(ConfusionCounts(0, 3, 0, 7))["sensitivity"] is None
    perfect = rates(ConfusionCounts(tp=6, fp=0, fn=0, tn=0))
    assert perfect["sensitivity"] == perfect["precision"] == perfect["recall"] == perfect["f1"] == 1.0


def test_f1_zero_when_precision_and_recall_zero():
    r = rates(ConfusionCounts(tp=0, fp=2, fn=3, tn=5))
    assert r["precision"] == 0 and r["recall"] == 0 and r["f1"] == 0


@given(_pair())
def test_confusion_exhaustive(pair):
    p, t = (np.array(x, bool) for x in pair)
    c = confusion(p, t)
    assert c.tp + c.fp + c.fn + c.tn == p.size


@given(_pair(), st.randoms(use_true_random=False))
def test_rates_permutation_invariant(pair, rnd):
    p, t = (np.array(x, bool) for x in pair)
    perm = list(range(p.size))
    rnd.shuffle(perm)
    assert rates(confusion(p, t)) == rates(confusion(p[perm], t[perm]))


@given(_pair())
def test_f1_is_harmonic_mean(pair):
    r = rates(confusion(*(np.array(x, bool) for x in pair)))
    pr, rc = r["precision"], r["recall"]
    if pr is not None and rc is not None and pr + rc > 0:
        assert r["f1"] == pytest.approx(2 * pr * rc / (pr + rc))


def test_aggregate_examples():
    col = np.array([[True], [False]])
    assert aggregate_cells(col, "any").tolist() == [True, False]
    assert aggregate_cells(col, "majority").tolist() == [True, False]
    row = np.array([[True, False, False]])
    assert aggregate_cells(row, "any").tolist() == [True]
    assert aggregate_cells(row, "majority").tolist() == [False]


@given(st.integers(1, 8), st.integers(1, 5), st.data())
def test_aggregate_any_monotone(n, v, data):
    cells = np.array(data.draw(st.lists(st.booleans(), min_size=n * v, max_size=n * v))).reshape(n, v)
    i, j = data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, v - 1))
    before = aggregate_cells(cells, "any")
    cells[i, j] = True
    after = aggregate_cells(cells, "any")
    assert np.all(after >= before)


def test_rate_panel_range():
    with pytest.raises(RangeError):
        RatePanel(1.1, 0.5, 0.1)


def test_detection_result_aggregation_invariant():
    cells = np.array([[True, False], [False, False]])
    DetectionResult("three_sigma", {}, np.array([True, False]), cells, "d")
    with pytest.raises(DataError):
        DetectionResult("three_sigma", {}, np.array([False, False]), cells, "d")
