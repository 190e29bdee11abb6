import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenolearn import gpr
from phenolearn.cohort import LabSeries
from phenolearn.errors import NumericalError
from phenolearn.preprocess import WarpParams

H = gpr.RqHyperparams(amplitude2=1.3, alpha=0.8, tau=1.7, noise2=0.05)


def dense_oracle(X, y, x_star, h):
    """Posterior and evidence by explicit inverse and determinant."""
    X, x_star = np.asarray(X), np.asarray(x_star)
    C = np.array([[gpr.rq_kernel(a, b, h) for b in X] for a in X]) + h.noise2 * np.eye(len(X))
    Ks = np.array([[gpr.rq_kernel(a, b, h) for b in x_star] for a in X])
    Cinv = np.linalg.inv(C)
    mean = Ks.T @ Cinv @ y
    var = h.amplitude2 - np.einsum("ij,ik,kj->j", Ks, Cinv, Ks)
    _, logdet = np.linalg.slogdet(C)
    lml = -0.5 * y @ Cinv @ y - 0.5 * logdet - 0.5 * len(X) * math.log(2 * math.pi)
    return mean, var, lml


def random_series(rng, n):
    X = np.sort(rng.choice(np.linspace(0, 20, 400), size=n, replace=False))
    return X, rng.standard_normal(n)


def test_kernel_values():
    assert gpr.rq_kernel(2.0, 2.0, H) == H.amplitude2
    h = gpr.RqHyperparams(3.0, 1.0, 0.5, 0.1)
    r = math.sqrt(2 * h.alpha * h.tau**2)
    assert gpr.rq_kernel(0.0, r, h) == pytest.approx(1.5, rel=1e-15)
    assert gpr.rq_kernel(1.0, 3.0, H) == gpr.rq_kernel(3.0, 1.0, H)


@pytest.mark.parametrize("field", ["amplitude2", "alpha", "tau", "noise2"])
def test_hyperparams_must_be_positive(field):
    kw = dict(amplitude2=1.0, alpha=1.0, tau=1.0, noise2=0.1)
    kw[field] = 0.0
    with pytest.raises(ValueError):
        gpr.RqHyperparams(**kw)


def test_fit_scalar_closed_form():
    m = gpr.fit([0.0], [2.0], H)
    assert m.weights[0] == pytest.approx(2.0 / (H.amplitude2 + H.noise2), rel=1e-14)


def test_fit_solves_linear_system(rng):
    X, y = random_series(rng, 3)
    m = gpr.fit(X, y, H)
    C = gpr.rq_kernel(X[:, None], X[None, :], H) + H.noise2 * np.eye(3)
    np.testing.assert_allclose(C @ m.weights, y, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(m.L @ m.L.T, C, rtol=1e-8)
    assert np.all(np.diag(m.L) > 0)
    assert np.allclose(m.L, np.tril(m.L))


def test_fit_rejects_duplicate_inputs():
    with pytest.raises(ValueError, match="ascending"):
        gpr.fit([0.0, 1.0, 1.0], [1.0, 2.0, 3.0], H)


def test_predict_matches_dense_oracle(rng):
    X, y = random_series(rng, 4)
    x_star = np.array([-1.0, 0.3, 4.4, 9.0, 25.0])
    mean, var = gpr.predict(gpr.fit(X, y, H), x_star)
    om, ov, _ = dense_oracle(X, y, x_star, H)
    np.testing.assert_allclose(mean, om, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(var, ov, rtol=1e-8, atol=1e-12)


def test_near_noise_free_interpolation(rng):
    h = gpr.RqHyperparams(1.0, 1.0, 2.0, 1e-12)
    X, y = random_series(rng, 8)
    mean, var = gpr.predict(gpr.fit(X, y, h), X)
    np.testing.assert_allclose(mean, y, atol=1e-4)
    assert np.all(var < 1e-4)


def test_prior_reversion_far_from_data(rng):
    X, y = random_series(rng, 8)
    mean, var = gpr.predict(gpr.fit(X, y, H), [1e6])
    assert abs(mean[0]) < 1e-3
    assert var[0] == pytest.approx(H.amplitude2, abs=1e-3)


def test_lml_scalar_closed_form():
    m = gpr.fit([0.0], [0.0], H)
    expected = -0.5 * math.log(H.amplitude2 + H.noise2) - 0.5 * math.log(2 * math.pi)
    assert gpr.log_marginal_likelihood(m, [0.0]) == pytest.approx(expected, rel=1e-14)


def test_lml_matches_dense_determinant(rng):
    X, y = random_series(rng, 3)
    _, _, lml = dense_oracle(X, y, [], H)
    assert gpr.log_marginal_likelihood(gpr.fit(X, y, H), y) == pytest.approx(lml, rel=1e-8)


def test_lml_prefers_noise_on_white_noise(rng):
    # 1-D sweep: white noise with unit variance, negligible signal amplitude.
    X = np.arange(40.0)
    y = rng.standard_normal(40)
    sweep = [0.01, 0.1, 0.3, 1.0]
    lml = [gpr.log_marginal_likelihood(gpr.fit(X, y, gpr.RqHyperparams(1e-4, 1.0, 0.1, s)), y)
           for s in sweep]
    assert lml == sorted(lml)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(0.05, 5), st.floats(0.1, 10),
       st.floats(0.1, 10), st.floats(1e-8, 1.0))
def test_properties_random_inputs(n, seed, amp2, alpha, tau, noise2):
    rng = np.random.default_rng(seed)
    X, y = random_series(rng, n)
    h = gpr.RqHyperparams(amp2, alpha, tau, noise2)
    m = gpr.fit(X, y, h)
    x_star = np.linspace(-5, 25, 13)
    mean, var = gpr.predict(m, x_star)
    assert np.all(var >= 0)
    assert np.all(var <= amp2 + noise2 + 1e-9)
    # stationarity: shifting all inputs changes nothing
    m2 = gpr.fit(X + 7.25, y, h)
    mean2, var2 = gpr.predict(m2, x_star + 7.25)
    np.testing.assert_allclose(mean2, mean, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(var2, var, rtol=1e-6, atol=1e-8)


def test_grid_default_shape():
    grid = gpr.GridSpec()
    assert len(grid) == 4 * 7 * 4 * 4 == len(grid.points())
    assert grid.tau[0] == pytest.approx(0.1) and grid.tau[-1] == pytest.approx(30.0)


def test_grid_search_singleton(rng):
    grid = gpr.GridSpec((0.5,), (2.0,), (1.0,), (0.1,))
    best, _ = gpr.grid_search([random_series(rng, 5)], grid)
    assert best == gpr.RqHyperparams(0.5, 1.0, 2.0, 0.1)


def test_grid_search_is_exhaustive_and_order_free(rng):
    train = [random_series(rng, int(k)) for k in rng.integers(3, 10, size=6)]
    grid = gpr.GridSpec((0.5, 1.0), (0.3, 3.0), (1.0, 4.0), (0.05, 0.2))
    best, obj = gpr.grid_search(train, grid)
    brute = {p: sum(gpr.log_marginal_likelihood(gpr.fit(X, y, p), y) for X, y in train)
             for p in grid.points()}
    assert max(brute.values()) == pytest.approx(obj, rel=1e-10)
    assert all(obj >= v - 1e-9 * abs(v) for v in brute.values())
    assert gpr.grid_search(train[::-1], grid)[0] == best
    assert gpr.grid_search(train, grid, threads=3)[0] == best


def test_grid_search_ties_go_to_first_point():
    train = [(np.array([0.0]), np.array([0.0]))]
    # identical amplitude2 + noise2 sums give identical evidence for n=1
    grid = gpr.GridSpec((0.5,), (1.0, 2.0), (1.0,), (0.1,))
    best, _ = gpr.grid_search(train, grid)
    assert best.tau == 1.0


def test_regular_grid_lengths():
    assert len(gpr.regular_grid(1.0, 0.25, 0)) == 5
    g = gpr.regular_grid(3.3, 0.25, 10)
    assert len(g) == math.floor(3.3 / 0.25) + 1 + 20
    assert g[0] == -2.5
    assert np.allclose(np.diff(g), 0.25)


def test_interpolate_constant_series():
    s = LabSeries(1, 1, np.array([0.0, 0.7, 2.0]), np.array([7.0, 7.0, 7.0]), 0)
    out = gpr.interpolate(s, H, WarpParams(), 0.25, 4)
    inside = (out.grid_times >= 0) & (out.grid_times <= 2.0)
    np.testing.assert_allclose(out.means[inside], 7.0, atol=1e-6)
    assert len(out) == math.floor(2.0 / 0.25) + 1 + 8
    assert np.all(out.variances >= 0)


def test_interpolate_padding_days():
    s = LabSeries(1, 1, np.array([0.0, 1.0, 4.0]), np.array([3.0, 5.0, 4.0]), 1)
    out = gpr.interpolate(s, H, WarpParams(), interval_days=0.25, pad_samples=10)
    assert out.grid_times[0] == pytest.approx(-2.5)
    assert out.grid_times[-1] == pytest.approx(4.0 + 2.5)
    assert out.label == 1 and out.hadm_id == 1


def test_interpolate_variance_in_original_units():
    s = LabSeries(1, 1, np.array([0.0, 1.0, 4.0]), np.array([10.0, 50.0, 30.0]), 0)
    out = gpr.interpolate(s, H, WarpParams(1, 0), 0.25, 400)
    # far padding reverts to the prior, rescaled by the series' variance
    assert out.variances[0] == pytest.approx(H.amplitude2 * np.var([10.0, 50.0, 30.0]), rel=0.02)
    assert out.means[0] == pytest.approx(30.0, abs=1.0)


def test_jitter_escalation_then_numerical_error(monkeypatch):
    seen = []

    def failing_cholesky(a):
        seen.append(a[0, 0])
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(np.linalg, "cholesky", failing_cholesky)
    with pytest.raises(NumericalError, match="hadm 42"):
        gpr.fit([0.0, 1.0], [1.0, 2.0], H, name="hadm 42")
    base = H.amplitude2 + H.noise2
    np.testing.assert_allclose(np.array(seen) - base, [0, 1e-10 * H.amplitude2,
                                                       1e-8 * H.amplitude2, 1e-6 * H.amplitude2],
                               atol=1e-17)


def test_jitter_rescues_near_duplicate_inputs():
    h = gpr.RqHyperparams(1.0, 1.0, 1e3, 1e-300)
    m = gpr.fit([0.0, 1e-12, 2e-12], [1.0, 1.0, 1.0], h)
    assert m.jitter > 0
