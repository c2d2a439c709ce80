import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsm.evaluation import (GaussianMixture2D, LabeledScores, UndefinedAUC, log_density, macro_auc,
                             micro_auc, minor_mode, mixture_score_field, roc_auc)


def pair_count_auc(scores, labels):
    """Exhaustive O(n^2) oracle: wins plus half ties over all positive-negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _instance(rng, n):
    labels = np.zeros(n, dtype=int)
    labels[rng.choice(n, size=rng.integers(1, n), replace=False)] = 1
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding forces ties
    return scores, labels


def test_hand_case():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_separated_and_inverted():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_ties_count_half():
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5


def test_single_class_is_undefined():
    with pytest.raises(UndefinedAUC):
        roc_auc([0.1, 0.2], [0, 0])


def test_matches_pair_counting_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s, y = _instance(rng, int(rng.integers(2, 201)))
        assert abs(roc_auc(s, y) - pair_count_auc(s, y)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**16), st.integers(2, 60))
def test_invariant_under_strictly_increasing_transforms(seed, n):
    s, y = _instance(np.random.default_rng(seed), n)
    base = roc_auc(s, y)
    assert roc_auc(np.exp(3 * s) + 7, y) == pytest.approx(base, abs=1e-12)
    assert roc_auc(-s, y) == pytest.approx(1 - base, abs=1e-12)


def _labeled(rng, videos):
    scores, labels = {}, {}
    for k in range(videos):
        s, y = _instance(rng, int(rng.integers(2, 60)))
        scores[f"v{k}"], labels[f"v{k}"] = s, y
    return LabeledScores(scores, labels)


def test_micro_and_macro_match_pair_counting():
    rng = np.random.default_rng(1)
    for _ in range(20):
        data = _labeled(rng, 4)
        vids = sorted(data.scores)
        s = np.concatenate([data.scores[v] for v in vids])
        y = np.concatenate([data.labels[v] for v in vids])
        assert abs(micro_auc(data) - pair_count_auc(s, y)) <= 1e-12
        macro, excluded = macro_auc(data)
        assert excluded == []
        assert abs(macro - np.mean([pair_count_auc(data.scores[v], data.labels[v]) for v in vids])) <= 1e-12


def test_micro_examples():
    s, y = np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])
    one = LabeledScores({"a": s}, {"a": y})
    assert micro_auc(one) == 0.75
    two = LabeledScores({"a": s, "b": s.copy()}, {"a": y, "b": y.copy()})
    assert micro_auc(two) == 0.75


def test_macro_examples_and_exclusion():
    same = LabeledScores({"a": np.array([0.1, 0.9]), "b": np.array([0.2, 0.8])},
                         {"a": np.array([0, 1]), "b": np.array([0, 1])})
    assert macro_auc(same) == (1.0, [])
    mixed = LabeledScores({"a": np.array([0.1, 0.9]), "b": np.array([0.5, 0.5]), "c": np.array([0.3, 0.4])},
                          {"a": np.array([0, 1]), "b": np.array([0, 1]), "c": np.array([0, 0])})
    assert macro_auc(mixed) == (0.75, ["c"])
    with pytest.raises(UndefinedAUC):
        macro_auc(LabeledScores({"c": np.array([0.3, 0.4])}, {"c": np.array([1, 1])}))


def test_labeled_scores_validation_and_join():
    with pytest.raises(ValueError):
        LabeledScores({"a": np.zeros(3)}, {"a": np.zeros(2)})
    j = LabeledScores.join({"a": np.zeros(3), "b": np.zeros(2)}, {"a": np.zeros(5)})
    assert list(j.scores) == ["a"] and len(j.labels["a"]) == 3


FIG = GaussianMixture2D.parse("0.95,0,0,1;0.05,4,0,1")


def test_single_component_mode_has_zero_score():
    m = GaussianMixture2D([1.0], [[1.0, -2.0]], [0.5])
    assert mixture_score_field(m, [[1.0, -2.0]])["norm"][0] == 0.0


def test_symmetric_midpoint_is_a_saddle():
    m = GaussianMixture2D([0.5, 0.5], [[-2, 0], [2, 0]], [1.0, 1.0])
    assert mixture_score_field(m, [[0.0, 0.0]])["norm"][0] == pytest.approx(0.0, abs=1e-15)


def test_score_matches_finite_difference_of_log_density():
    pts = np.random.default_rng(0).uniform(-3, 6, size=(25, 2))
    h = 1e-6
    num = np.stack([(log_density(FIG, pts + [h, 0]) - log_density(FIG, pts - [h, 0])) / (2 * h),
                    (log_density(FIG, pts + [0, h]) - log_density(FIG, pts - [0, h])) / (2 * h)], axis=1)
    np.testing.assert_allclose(mixture_score_field(FIG, pts)["score"], num, rtol=1e-6, atol=1e-8)


def test_density_matches_direct_formula():
    x = np.array([[0.5, -0.3]])
    want = sum(w * np.exp(-np.sum((x[0] - mu) ** 2) / (2 * v)) / (2 * np.pi * v)
               for w, mu, v in [(0.95, (0, 0), 1.0), (0.05, (4, 0), 1.0)])
    assert mixture_score_field(FIG, x)["density"][0] == pytest.approx(want, rel=1e-12)


def test_minor_mode_is_invisible_to_the_score_norm():
    x = minor_mode(FIG)
    f = mixture_score_field(FIG, np.vstack([x, [0.0, 0.0]]))
    assert 3.5 < x[0] < 4.0 and x[1] == 0.0
    assert f["norm"][0] < 1e-6
    assert f["density"][0] < 0.1 * f["density"][1]


@pytest.mark.parametrize("spec", ["0.9,0,0", "0.5,0,0,1;0.6,1,1,1", "1,0,0,-1"])
def test_bad_mixture_specs(spec):
    with pytest.raises(ValueError):
        GaussianMixture2D.parse(spec)
