import numpy as np
import pytest

from ordquant.classifier import fit
from ordquant.data import FeatureSchema, OrdinalLabel, is_prevalence
from ordquant.labelling import build_labelled_dataset, user_effects
from ordquant.synth import (
    BlockSpec,
    CohortProfile,
    SynthSpec,
    class_positions,
    generate,
    generate_comments,
    label_cohorts,
    make_spec,
)


def test_positions():
    np.testing.assert_array_equal(class_positions(5), [-2, -1, 0, 1, 2])


def test_generated_dataset_valid():
    ds = generate(make_spec([("S", 3, 1.0)], [("N", 2)], per_class=50, seed=1))
    assert ds.features.shape == (250, 5)
    assert is_prevalence(ds.prevalence())
    assert ds.schema.blocks == ["S", "N"]
    assert np.all(np.isfinite(ds.features))


def test_generation_deterministic():
    spec = make_spec([("S", 2, 1.0)], [("N", 2)], per_class=20, seed=3)
    a, b = generate(spec), generate(spec)
    assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)


def test_strong_signal_separable():
    # two dims at separation 3 give a Bayes accuracy of about 0.983
    train = generate(SynthSpec((BlockSpec("S", 2, 3.0),), per_class=300, n_classes=2, seed=0))
    test = generate(SynthSpec((BlockSpec("S", 2, 3.0),), per_class=300, n_classes=2, seed=1))
    assert np.mean(fit(train).predict(test.features) == test.labels) > 0.95


def test_no_signal_is_prior_level():
    spec = SynthSpec((BlockSpec("N", 3),), per_class=400, n_classes=2, seed=0)
    train, test = generate(spec), generate(SynthSpec(spec.blocks, 400, 2, seed=1))
    acc = np.mean(fit(train).predict(test.features) == test.labels)
    assert abs(acc - 0.5) < 0.06


def test_comment_cohort_examples():
    activity = CohortProfile("up", 2, pre_count=100, post_count=180)
    effects = user_effects(generate_comments([activity], seed=0), "activity")
    assert all(e.label == OrdinalLabel.HIGHLY_INCREASED for e in effects.values())
    narrow = CohortProfile("narrow", 2, 80, 80, pre_communities=4, post_communities=1)
    effects = user_effects(generate_comments([narrow], seed=0), "diversity")
    for e in effects.values():
        assert e.effect == pytest.approx(-0.75, abs=1e-12)
        assert e.label == OrdinalLabel.HIGHLY_DECREASED
    assert generate_comments([CohortProfile("none", 0, 0, 0)]) == []


def test_round_trip_every_label():
    cohorts = label_cohorts(users=2)
    comments = generate_comments([c for c, _ in cohorts], seed=5)
    ids = [f"{c.name}-{u:04d}" for c, _ in cohorts for u in range(c.users)]
    schema = FeatureSchema.from_blocks([("F", 1)])
    for task in ("activity", "toxicity", "diversity"):
        ds = build_labelled_dataset(comments, np.zeros((len(ids), 1)), ids, schema, task)
        expected = [intended[task] for c, intended in cohorts for _ in range(c.users)]
        assert list(ds.labels) == expected
        assert set(expected) == {1, 2, 3, 4, 5}


def test_comments_deterministic():
    cohorts = [c for c, _ in label_cohorts(1)]
    assert generate_comments(cohorts, seed=2) == generate_comments(cohorts, seed=2)
