import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compsal.attribution import SaliencyMap
from compsal.data_io import LabeledDataset, synthetic_digits
from compsal.nn import TrainConfig
from compsal.sanity import (RandomizationPlan, SanityReport, SanityRow, map_similarity, run_data_randomization,
                            run_parameter_randomization, spearman_abs)


def brute_spearman(a, b):
    """Oracle: average ranks by counting, then Pearson on the ranks."""
    def ranks(v):
        return np.array([np.sum(v < t) + (np.sum(v == t) + 1) / 2 for t in v])
    ra, rb = ranks(a), ranks(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    return float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))


def test_spearman_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.integers(-4, 5, size=30).astype(float)
        b = rng.integers(-4, 5, size=30).astype(float)
        assert spearman_abs(a, b) == pytest.approx(brute_spearman(np.abs(a), np.abs(b)), abs=1e-12)


def test_hand_computed_spearman():
    # |a| = 1,2,3,4 ; |b| = 1,3,2,4 -> d^2 = 0,1,1,0 -> 1 - 6*2/(4*15) = 0.8
    assert spearman_abs([1, -2, 3, 4], [-1, 3, 2, -4]) == pytest.approx(0.8)


def _map(scores):
    return SaliencyMap(np.asarray(scores, dtype=float), "gradinput", 0)


def test_self_and_negation():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(8, 8))
    assert map_similarity(_map(m), _map(m))["spearman_abs"] == pytest.approx(1.0)
    assert map_similarity(_map(m), _map(-m))["spearman_abs"] == pytest.approx(1.0)


def test_independent_maps_uncorrelated():
    rng = np.random.default_rng(2)
    res = map_similarity(_map(rng.normal(size=10000)), _map(rng.normal(size=10000)))
    assert abs(res["spearman_abs"]) <= 0.05
    assert res["nonzero_a"] == 1.0


def test_nonzero_fraction_threshold():
    res = map_similarity(_map([0.0, 1e-13, 2e-12, -1.0]), _map([1.0, 2.0, 3.0, 4.0]))
    assert res["nonzero_a"] == 0.5 and res["nonzero_b"] == 1.0


def test_blank_map_has_zero_correlation():
    assert spearman_abs(np.zeros(5), np.arange(5.0)) == 0.0
    assert spearman_abs(np.zeros(5), np.zeros(5)) == 1.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        map_similarity(_map(np.zeros(4)), _map(np.zeros((2, 3))))


vecs = arrays(np.float64, 20, elements=st.floats(-100, 100, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(vecs, vecs, st.randoms())
def test_metrics_invariant_under_joint_permutation(a, b, rnd):
    perm = np.array(rnd.sample(range(20), 20))
    r1 = map_similarity(_map(a), _map(b))
    r2 = map_similarity(_map(a[perm]), _map(b[perm]))
    for k in r1:
        assert r1[k] == pytest.approx(r2[k], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(vecs, vecs)
def test_invariant_under_monotone_rescaling(a, b):
    # x -> x**3 + 2x is strictly increasing on |x| >= 0
    rescaled = np.abs(a) ** 3 + 2 * np.abs(a)
    assert spearman_abs(rescaled, b) == pytest.approx(spearman_abs(a, b), abs=1e-12)


def test_correlations_in_range():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = spearman_abs(rng.normal(size=7), rng.normal(size=7))
        assert -1.0 <= r <= 1.0


def test_plan_validation(trained_mlp):
    with pytest.raises(ValueError):
        RandomizationPlan("layerwise", [])
    with pytest.raises(ValueError):
        RandomizationPlan("sideways", [1])
    with pytest.raises(ValueError):
        RandomizationPlan("layerwise", [2]).validate(trained_mlp)
    with pytest.raises(ValueError):
        RandomizationPlan("cascading", [3]).validate(trained_mlp)
    assert RandomizationPlan.full(trained_mlp, "layerwise").targets == [1, 3]
    assert RandomizationPlan.full(trained_mlp, "cascading").targets == [1, 2]


def test_parameter_randomization_report(trained_mlp, digits):
    _, test_set = digits
    plan = RandomizationPlan.full(trained_mlp, "layerwise", seed=3)
    rep = run_parameter_randomization(trained_mlp, test_set, plan, ["gradinput", "cgi", "lrp", "clrp"], n_images=16)
    assert rep.conditions == ["trained", "layer1", "layer3"]
    assert len(rep.rows) == 12
    for r in rep.rows:
        assert 0 <= r.nonzero_fraction <= 1
        assert -1 <= r.spearman_vs_trained <= 1 and -1 <= r.spearman_abs_vs_input <= 1
    assert rep.row("trained", "cgi").spearman_vs_trained == pytest.approx(1.0)
    # input structure persists in Gradient*Input after randomization
    for cond in ("layer1", "layer3"):
        assert rep.row(cond, "gradinput").spearman_abs_vs_input >= 0.5 * rep.row("trained", "gradinput").spearman_abs_vs_input
        assert rep.row(cond, "cgi").spearman_vs_trained < 0.5
    again = run_parameter_randomization(trained_mlp, test_set, plan, ["gradinput", "cgi", "lrp", "clrp"], n_images=16)
    assert again.to_csv() == rep.to_csv()


def test_parameter_randomization_heatmaps(trained_mlp, digits, tmp_path):
    _, test_set = digits
    plan = RandomizationPlan("cascading", [1], seed=0)
    run_parameter_randomization(trained_mlp, test_set, plan, ["cgi"], n_images=2, heatmap_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "cascade_top1_cgi_000.ppm", "cascade_top1_cgi_001.ppm", "trained_cgi_000.ppm", "trained_cgi_001.ppm"]


def test_parameter_randomization_empty_images(trained_mlp):
    empty = LabeledDataset(np.zeros((0, 16, 16)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        run_parameter_randomization(trained_mlp, empty, RandomizationPlan("layerwise", [1]), ["cgi"])


def test_data_randomization_control():
    ds = synthetic_digits(300, seed=5)
    cfg = TrainConfig(epochs=3, batch_size=32, learning_rate=0.05, seed=0)
    rep = run_data_randomization("flatten,dense:32,relu,dense:10", ds.subset(slice(0, 250)), cfg,
                                 ["gradinput", "cgi"], eval_images=ds.subset(slice(250, 300)), n_images=8)
    assert rep.row("true_labels", "gradinput").spearman_vs_trained == pytest.approx(1.0)
    assert rep.row("true_labels", "cgi").spearman_vs_trained == pytest.approx(1.0)
    assert {"train_accuracy_true_labels", "train_accuracy_permuted_labels"} <= set(rep.info)
    with pytest.raises(ValueError):
        run_data_randomization("flatten,dense:10", ds, cfg, eval_images=None)


def test_report_csv_and_summary():
    rep = SanityReport([SanityRow("trained", "cgi", 0.5, 1.0, 0.25)], {"acc": 0.9})
    assert rep.to_csv().splitlines() == [
        "condition,method,nonzero_fraction,spearman_vs_trained,spearman_abs_vs_input",
        "trained,cgi,0.500000,1.000000,0.250000"]
    assert "acc: 0.9000" in rep.summary()
    with pytest.raises(KeyError):
        rep.row("trained", "lrp")
