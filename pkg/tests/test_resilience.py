import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from outres.core import DataError, DimensionError, RangeError, RatePanel
from outres.detectors import DetectorConfig
from outres.resilience import (
    OverlapCounts,
    SchemeSpec,
    blind_fit,
    consensus_rates,
    draw_replicates,
    ensemble_resilience,
    estimate_resilience,
    expected_overlaps,
    resilience_exact,
    resilience_from_expectations,
)
from outres.synthgen import SynthSpec, generate

from oracles import overlaps_scalar, resilience_fraction

prob = st.floats(0, 1)


def _flags(idx, n=6):
    f = np.zeros(n, dtype=bool)
    f[list(idx)] = True
    return f


def test_exact_examples():
    assert resilience_exact(_flags({2, 3}), _flags({2, 3})) == 1.0
    assert resilience_exact(_flags({1}), _flags({2})) == 0.0
    assert resilience_exact(_flags({1, 2, 3}), _flags({2, 3, 4})) == pytest.approx(2 / 3)
    assert resilience_exact(_flags(set()), _flags(set())) == 1.0


def test_exact_length_mismatch():
    with pytest.raises(DimensionError):
        resilience_exact([True], [True, False])


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.booleans(), min_size=n, max_size=n), st.lists(st.booleans(), min_size=n, max_size=n))))
def test_exact_matches_rational_oracle(pair):
    a, b = pair
    assert resilience_exact(a, b) == float(resilience_fraction(a, b))
    assert resilience_exact(a, b) == resilience_exact(b, a)


def test_overlap_perfect_detector():
    oc = expected_overlaps(100, RatePanel(1, 1, 0.1), RatePanel(1, 1, 0.1))
    assert (oc.both, oc.neither, oc.sample_only, oc.whole_only) == pytest.approx((10, 90, 0, 0))
    assert resilience_from_expectations(oc) == 1.0


def test_overlap_worked_panel():
    oc = expected_overlaps(100, RatePanel(0.9, 0.95, 0.1), RatePanel(0.8, 0.9, 0.1))
    ref = overlaps_scalar(100, 0.1, 0.9, 0.8, 0.95, 0.9)
    assert (oc.both, oc.neither, oc.sample_only, oc.whole_only) == pytest.approx(ref, abs=1e-12)
    assert oc.both == pytest.approx(7.65, abs=1e-9)
    assert oc.sample_only == pytest.approx(9.35, abs=1e-9)
    assert oc.whole_only == pytest.approx(5.85, abs=1e-9)
    assert resilience_from_expectations(oc) == pytest.approx(15.3 / 30.5, abs=1e-12)
    assert resilience_from_expectations(oc) == pytest.approx(0.5016, abs=1e-4)


def test_from_expectations_zero_both():
    assert resilience_from_expectations(OverlapCounts(0, 5, 2, 3)) == 0.0
    assert resilience_from_expectations(OverlapCounts(0, 5, 0, 0)) == 1.0


def test_prevalence_mismatch():
    with pytest.raises(DataError):
        expected_overlaps(10, RatePanel(1, 1, 0.1), RatePanel(1, 1, 0.2))


@given(st.floats(1, 1e5), prob, prob, prob, prob, prob)
def test_overlaps_partition_sample(S, g, a, aS, b, bS):
    oc = expected_overlaps(S, RatePanel(a, b, g), RatePanel(aS, bS, g))
    assert abs(oc.total - S) <= 1e-9 * max(1.0, S)
    assert min(oc.both, oc.neither, oc.sample_only, oc.whole_only) >= 0
    assert 0 <= resilience_from_expectations(oc) <= 1


GRID = np.linspace(0.5, 1.0, 26)


def _rho_same_panel(a, b, gamma):
    p = RatePanel(a, b, gamma)
    return resilience_from_expectations(expected_overlaps(100, p, p))


@pytest.mark.parametrize("gamma", [0.01, 0.1, 0.3])
def test_monotone_in_alpha(gamma):
    for b in GRID:
        vals = [_rho_same_panel(a, b, gamma) for a in GRID]
        assert np.all(np.diff(vals) >= -1e-12)


@pytest.mark.parametrize("gamma", [0.01, 0.1, 0.3])
def test_monotone_in_beta(gamma):
    for a in GRID:
        vals = [_rho_same_panel(a, b, gamma) for b in GRID]
        assert np.all(np.diff(vals) >= -1e-12)


# ---------------------------------------------------------------- estimators


@pytest.fixture(scope="module")
def ds():
    return generate(SynthSpec(n=400, rate=0.05, seed=11))


@pytest.mark.parametrize("method", ["three_sigma", "boxplot", "chi_square", "mad", "mahalanobis", "kmeans", "lof"])
def test_full_sample_is_one(ds, method):
    est = estimate_resilience(ds, DetectorConfig(method), SchemeSpec.random(ds.n), 3, "exact", seed=5)
    assert np.all(est.per_replicate == 1.0)


def test_zero_replicates(ds):
    with pytest.raises(RangeError):
        estimate_resilience(ds, DetectorConfig("boxplot"), SchemeSpec.random(0.1), 0)


def test_single_replicate_sd_absent(ds):
    est = estimate_resilience(ds, DetectorConfig("boxplot"), SchemeSpec.random(0.1), 1)
    assert est.sd is None and est.per_replicate.size == 1


def test_partition_rows_per_part(ds):
    est = estimate_resilience(ds, DetectorConfig("three_sigma"), SchemeSpec.partition(5), 3, seed=1)
    assert est.per_replicate.size == 15
    assert est.replicate_keys[:6] == ((0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 0))


def test_estimate_mean_and_range(ds):
    est = estimate_resilience(ds, DetectorConfig("boxplot"), SchemeSpec.block(4, 10), 20, seed=2)
    assert est.mean == pytest.approx(np.mean(est.per_replicate))
    assert np.all((est.per_replicate >= 0) & (est.per_replicate <= 1))


def test_blind_values_in_range(ds):
    panel = [DetectorConfig(m) for m in ("three_sigma", "boxplot", "chi_square", "mad")]
    est = estimate_resilience(ds, panel[1], SchemeSpec.random(0.2), 5, "blind", seed=3, panel=panel)
    assert est.mode == "blind"
    assert np.all((est.per_replicate >= 0) & (est.per_replicate <= 1))


def test_blind_requires_member(ds):
    with pytest.raises(DataError):
        estimate_resilience(ds, DetectorConfig("lof"), SchemeSpec.random(0.2), 2, "blind",
                            panel=[DetectorConfig("boxplot")])


def test_blind_fit_whole_rates_are_means(ds):
    samples = draw_replicates(ds.n, SchemeSpec.random(0.25), 4, 9)
    fit = blind_fit(ds, [DetectorConfig("three_sigma"), DetectorConfig("boxplot")], samples, 9)
    assert np.allclose(fit.alpha_whole, fit.alpha_sample.mean(axis=0))
    assert fit.resilience().shape == (4, 2)


def test_replicates_independent_of_count(ds):
    a = draw_replicates(ds.n, SchemeSpec.random(0.1), 3, 42)
    b = draw_replicates(ds.n, SchemeSpec.random(0.1), 7, 42)
    assert all(x[2] == y[2] for x, y in zip(a, b))


def test_ensemble_of_one_equals_method(ds):
    cfg = DetectorConfig("boxplot")
    scheme = SchemeSpec.random(0.1)
    a = ensemble_resilience(ds, [cfg], scheme, 10, seed=4)
    b = estimate_resilience(ds, cfg, scheme, 10, seed=4)
    assert np.array_equal(a.per_replicate, b.per_replicate)


def test_ensemble_resilience_grows_with_fraction():
    data = generate(SynthSpec(n=2000, rate=0.05, seed=8))
    members = [DetectorConfig(m) for m in ("three_sigma", "boxplot", "mahalanobis", "kmeans")]
    ests = [ensemble_resilience(data, members, SchemeSpec.random(f), 20, seed=6) for f in (0.01, 0.05, 0.10)]
    for lo, hi in itertools.pairwise(ests) if hasattr(itertools, "pairwise") else zip(ests, ests[1:]):
        assert hi.mean >= lo.mean - hi.sd


def test_consensus_rates_perfect():
    from outres.ensemble import em_fit

    v = np.zeros((30, 3), dtype=bool)
    v[:4] = True
    a, b = consensus_rates(em_fit(v))
    assert a == pytest.approx(1) and b == pytest.approx(1)
