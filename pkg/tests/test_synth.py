from collections import Counter

import numpy as np
import pytest

from phenolearn import cohort
from phenolearn.synth import SyntheticSpec, class_mean, generate_synthetic


def load(paths):
    drops = Counter()
    events = cohort.load_lab_events(paths["labevents"], paths["d_labitems"], drops)
    diagnoses = cohort.load_diagnoses(paths["diagnoses"])
    return events, diagnoses, drops


def test_minimum_spec(tmp_path):
    paths = generate_synthetic(SyntheticSpec(n_per_class=2, seed=1), tmp_path)
    events, diagnoses, drops = load(paths)
    series = cohort.select_cohort(events, diagnoses, "1742-6", "428", "571")
    assert len(series) == 4
    assert all(len(s) >= 3 for s in series)
    assert sorted(s.label for s in series) == [0, 0, 1, 1]
    assert not drops


def test_noise_free_series_follow_class_mean(tmp_path):
    paths = generate_synthetic(SyntheticSpec(n_per_class=3, noise=0.0, seed=2), tmp_path)
    events, diagnoses, _ = load(paths)
    for s in cohort.select_cohort(events, diagnoses, "1742-6", "428", "571"):
        sig = "ramp" if s.label == 0 else "spike"
        np.testing.assert_allclose(s.values, class_mean(sig, s.times), rtol=1e-12)


def test_round_trip_keeps_every_admission(synthetic_tables):
    events, diagnoses, drops = load(synthetic_tables)
    series = cohort.select_cohort(events, diagnoses, "1742-6", "428", "571")
    assert not drops
    assert len(series) == 20
    assert len({e.hadm_id for e in events}) == 20


def test_deterministic(tmp_path):
    a = generate_synthetic(SyntheticSpec(n_per_class=4, seed=9), tmp_path / "a")
    b = generate_synthetic(SyntheticSpec(n_per_class=4, seed=9), tmp_path / "b")
    for role in a:
        assert open(a[role]).read() == open(b[role]).read()


@pytest.mark.parametrize("kw", [dict(n_per_class=1), dict(noise=-1.0),
                                dict(signature_a="wiggle"), dict(min_samples=2)])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        SyntheticSpec(**kw)
