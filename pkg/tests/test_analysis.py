import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenolearn import analysis
from phenolearn.errors import DataError


def blobs(rng, n=20, d=10, gap=20.0):
    X = np.vstack([rng.standard_normal((n, d)), rng.standard_normal((n, d)) + gap])
    return X, np.repeat([0, 1], n)


def pairwise_auc(scores, labels):
    """AUC by enumerating every positive/negative pair."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_hand_example():
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert pairwise_auc(scores, labels) == 0.75
    assert analysis.auc_score(scores, labels) == 0.75


def test_auc_extremes():
    assert analysis.auc_score([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert analysis.auc_score([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_needs_both_classes():
    with pytest.raises(DataError):
        analysis.auc_score([0.1, 0.2], [1, 1])


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40)
       .filter(lambda r: 0 < sum(b for _, b in r) < len(r)))
def test_auc_properties(rows):
    scores = np.array([float(s) for s, _ in rows])
    labels = np.array([int(b) for _, b in rows])
    a = analysis.auc_score(scores, labels)
    assert a == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)
    assert a + analysis.auc_score(-scores, labels) == pytest.approx(1.0, abs=1e-12)
    assert analysis.auc_score(np.exp(scores) * 3 + 1, labels) == pytest.approx(a, abs=1e-12)


def test_auc_through_model_and_admission_mode():
    model = analysis.LogisticModel(np.array([1.0]), 0.0, 0.0)
    X = np.array([[0.1], [0.4], [0.35], [0.8]])
    assert analysis.auc(model, X, [0, 0, 1, 1]) == 0.75
    scores, labels = analysis.admission_scores([1.0, 3.0, 0.0, 5.0], [7, 7, 3, 9], [0, 0, 1, 1])
    assert scores.tolist() == [0.0, 2.0, 5.0] and labels.tolist() == [1, 0, 1]


def test_logistic_gradient_finite_differences(rng):
    X = rng.standard_normal((15, 3))
    y = (rng.random(15) < 0.5).astype(float)
    w, b, l2 = rng.standard_normal(3), 0.3, 0.2
    _, gw, gb = analysis.logistic_objective(w, b, X, y, l2)
    eps = 1e-6
    num = []
    for k in range(3):
        e = np.eye(3)[k] * eps
        num.append((analysis.logistic_objective(w + e, b, X, y, l2)[0]
                    - analysis.logistic_objective(w - e, b, X, y, l2)[0]) / (2 * eps))
    nb = (analysis.logistic_objective(w, b + eps, X, y, l2)[0]
          - analysis.logistic_objective(w, b - eps, X, y, l2)[0]) / (2 * eps)
    np.testing.assert_allclose(gw, num, rtol=1e-6)
    assert gb == pytest.approx(nb, rel=1e-6)


def test_logistic_separable_1d():
    x = np.array([-3, -2, -1.5, -0.5, 0.5, 1.0, 2.5, 3.0])[:, None]
    y = (x[:, 0] > 0).astype(int)
    m = analysis.fit_logistic(x, y, l2=0.01, iterations=500)
    assert np.all((m.predict_proba(x) > 0.5) == y)
    assert np.isfinite(m.grad_norm)


def test_logistic_on_noise_is_chance(rng):
    X = rng.standard_normal((500, 5))
    y = (rng.random(500) < 0.5).astype(int)
    Xt = rng.standard_normal((500, 5))
    yt = (rng.random(500) < 0.5).astype(int)
    m = analysis.fit_logistic(X, y, l2=0.01, iterations=300)
    assert 0.4 <= analysis.auc(m, Xt, yt) <= 0.6


def test_logistic_zero_iterations_is_half(rng):
    X = rng.standard_normal((10, 4))
    m = analysis.fit_logistic(X, np.arange(10) % 2, iterations=0)
    assert np.all(m.predict_proba(X) == 0.5)


def test_logistic_single_class():
    with pytest.raises(DataError):
        analysis.fit_logistic(np.ones((4, 2)), [1, 1, 1, 1])


def test_perplexity_calibration(rng):
    X = rng.standard_normal((40, 3))
    P = analysis.conditional_affinities(X, 8.0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    entropy = -np.sum(np.where(P > 0, P * np.log(np.where(P > 0, P, 1)), 0), axis=1)
    np.testing.assert_allclose(np.exp(entropy), 8.0, rtol=1e-3)
    assert np.all(np.diag(P) == 0)


def test_tsne_separates_blobs(rng):
    X, y = blobs(rng)
    emb = analysis.tsne(X, perplexity=10, iterations=500, seed=1)
    assert analysis.nearest_neighbor_accuracy(emb.coords, y) >= 0.95
    assert np.isfinite(emb.coords).all() and emb.kl_divergence > 0
    tail = np.array(emb.kl_history[-50:])
    assert np.all(np.diff(tail) <= 1e-3)


def test_tsne_duplicates_land_together(rng):
    X, _ = blobs(rng, n=15)
    X = np.vstack([X, X[:1]])
    emb = analysis.tsne(X, perplexity=5, iterations=400, seed=2)
    spread = np.ptp(emb.coords, axis=0).max()
    assert np.linalg.norm(emb.coords[0] - emb.coords[-1]) < 0.05 * spread


def test_tsne_smallest_input_and_determinism(rng):
    X = rng.standard_normal((5, 2))
    a = analysis.tsne(X, perplexity=1, iterations=300, seed=4)
    b = analysis.tsne(X, perplexity=1, iterations=300, seed=4)
    assert a.coords.shape == (5, 2) and np.isfinite(a.coords).all()
    assert np.array_equal(a.coords, b.coords)


@pytest.mark.parametrize("n,perplexity", [(4, 0.5), (10, 3.0), (10, 0.0)])
def test_tsne_rejects_infeasible(n, perplexity):
    with pytest.raises(ValueError):
        analysis.tsne(np.random.default_rng(0).standard_normal((n, 2)), perplexity)
