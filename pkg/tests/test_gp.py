import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldinfill import gp
from fieldinfill.errors import FitError
from fieldinfill.gp import GpModel, GpSearch, KernelConfig, kernel_eval, log_marginal_likelihood


def dense_oracle(X, y, theta, x, nugget=1e-12):
    """Ordinary kriging with explicit inverses and no factorization reuse."""
    def corr(a, b):
        d = (a[:, None, :] - b[None, :, :]) / theta
        return np.exp(-np.sum(d**2, axis=-1))

    n = len(y)
    R = corr(X, X) + nugget * np.eye(n)
    Ri = np.linalg.inv(R)
    one = np.ones(n)
    beta = (one @ Ri @ y) / (one @ Ri @ one)
    sigma2 = (y - beta) @ Ri @ (y - beta) / n
    r = corr(x, X)
    mean = beta + r @ Ri @ (y - beta)
    u = r @ Ri @ one - 1.0
    var = sigma2 * (1.0 - np.einsum("ij,jk,ik->i", r, Ri, r) + u**2 / (one @ Ri @ one))
    return mean, np.maximum(var, 0.0), sigma2, beta


def test_kernel_examples():
    cfg = KernelConfig(np.array([1.0]))
    assert kernel_eval(np.array([0.3]), np.array([0.3]), cfg) == 1.0
    assert kernel_eval(np.array([0.0]), np.array([1.0]), cfg) == pytest.approx(0.367879, abs=1e-6)


def test_kernel_symmetry(rng):
    cfg = KernelConfig(np.array([0.3, 2.0]))
    for _ in range(100):
        a, b = rng.random(2), rng.random(2)
        assert kernel_eval(a, b, cfg) == kernel_eval(b, a, cfg)


def test_kernel_config_invariants():
    with pytest.raises(ValueError):
        KernelConfig(np.array([0.0]))
    with pytest.raises(ValueError):
        KernelConfig(np.array([1.0]), signal_variance=0.0)
    with pytest.raises(ValueError):
        KernelConfig(np.array([1.0]), nugget=-1.0)


@pytest.mark.parametrize("dim", [1, 2])
def test_prediction_matches_dense_oracle(rng, dim):
    for _ in range(10):
        X = rng.random((5, dim))
        y = rng.normal(size=5)
        # length scales comparable to the point spacing keep R well conditioned,
        # so the explicit-inverse oracle is itself accurate to ~1e-12
        theta = 10 ** rng.uniform(-1.0, -0.5, dim)
        model = GpModel.condition(X, y, theta)
        x = rng.random((7, dim))
        m, v, s2, beta = dense_oracle(X, y, theta, x)
        pred = model.predict(x)
        np.testing.assert_allclose(pred.mean, m, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(pred.variance, v, rtol=1e-8, atol=1e-10 * s2)
        assert model.kernel.signal_variance == pytest.approx(s2, rel=1e-8)
        assert model.beta == pytest.approx(beta, rel=1e-8, abs=1e-12)


def test_far_field_limit(rng):
    X = rng.random((5, 2))
    y = rng.normal(size=5)
    theta = np.array([0.1, 0.1])
    model = GpModel.condition(X, y, theta)
    far = np.array([[50.0, 50.0]])
    pred = model.predict(far)
    _, _, s2, beta = dense_oracle(X, y, theta, far)
    one = np.ones(5)
    R = np.exp(-np.sum(((X[:, None] - X[None]) / theta) ** 2, axis=-1)) + 1e-12 * np.eye(5)
    expected = s2 * (1.0 + 1.0 / (one @ np.linalg.inv(R) @ one))
    assert pred.mean[0] == pytest.approx(beta, rel=1e-10)
    assert pred.variance[0] == pytest.approx(expected, rel=1e-8)


def test_interpolates_training_points(rng):
    X = rng.random((8, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    model = GpModel.condition(X, y, [0.4, 0.6])
    pred = model.predict(X)
    np.testing.assert_allclose(pred.mean, y, atol=1e-6 * np.ptp(y))
    assert np.all(pred.variance <= 1e-8 * model.kernel.signal_variance)


def test_single_training_point():
    model = GpModel.condition(np.array([[0.0]]), np.array([2.5]), [0.5])
    pred = model.predict(np.array([0.0]))
    assert pred.mean == pytest.approx(2.5)
    assert pred.variance < 1e-10


def test_constant_shift_invariance(rng):
    X = rng.random((6, 2))
    y = rng.normal(size=6)
    x = rng.random((4, 2))
    a = GpModel.condition(X, y, [0.3, 0.5]).predict(x)
    b = GpModel.condition(X, y + 7.0, [0.3, 0.5]).predict(x)
    np.testing.assert_allclose(b.mean - a.mean, 7.0, rtol=1e-10)
    np.testing.assert_allclose(b.variance, a.variance, rtol=1e-8, atol=1e-14)


def test_adding_a_point_never_increases_variance_there(rng):
    X = rng.random((6, 2))
    y = rng.normal(size=6)
    new = rng.random(2)
    before = GpModel.condition(X, y, [0.3, 0.3], signal_variance=1.0).predict(new).variance
    after = GpModel.condition(np.vstack([X, new]), np.append(y, 0.0), [0.3, 0.3], signal_variance=1.0).predict(new).variance
    assert after <= before


def test_stored_factor_reproduces_correlation(rng):
    X = rng.random((10, 3))
    model = GpModel.condition(X, rng.normal(size=10), [0.5, 0.5, 0.5])
    R = gp.correlation_matrix(X, X, model.kernel.length_scales) + model.kernel.nugget * np.eye(10)
    LLt = model.chol @ model.chol.T
    assert np.linalg.norm(LLt - R) / np.linalg.norm(R) < 1e-8


def test_likelihood_prefers_long_scales_for_equal_outputs():
    X = np.array([[0.2], [0.7]])
    y = np.array([1.0, 1.0])
    assert log_marginal_likelihood(X, y, [10.0]) > log_marginal_likelihood(X, y, [0.01])


def test_likelihood_shift_invariant(rng):
    X = rng.random((8, 2))
    y = rng.normal(size=8)
    a = log_marginal_likelihood(X, y, [0.4, 0.3])
    b = log_marginal_likelihood(X, y + 123.0, [0.4, 0.3])
    assert b == pytest.approx(a, abs=1e-8)


def test_likelihood_argmax_recovers_length_scale():
    rng = np.random.default_rng(3)
    X = np.sort(rng.random(60))[:, None]
    R = gp.correlation_matrix(X, X, [0.3]) + 1e-10 * np.eye(60)
    y = np.linalg.cholesky(R) @ rng.normal(size=60)
    grid = np.logspace(-2, 1, 200)
    ll = [log_marginal_likelihood(X, y, [t]) for t in grid]
    best = grid[int(np.argmax(ll))]
    assert 0.15 <= best <= 0.6


def test_likelihood_needs_two_distinct_points():
    with pytest.raises(FitError):
        log_marginal_likelihood(np.array([[0.1], [0.1]]), np.array([1.0, 1.0]), [1.0])


def test_batched_likelihood_matches_scalar(rng):
    X = rng.random((12, 2))
    y = rng.normal(size=12)
    pop = rng.uniform(-2, -0.5, size=(9, 2))
    sqd = gp._lower_sq_dist(X)
    batch = gp._profile_batch(sqd, y - y.mean(), pop, 1e-12)
    single = [log_marginal_likelihood(X, y, 10.0**p) for p in pop]
    np.testing.assert_allclose(batch, single, rtol=1e-9)


def test_fit_two_points_interpolates():
    model = gp.fit(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), GpSearch(generations=20))
    pred = model.predict(np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(pred.mean, [0.0, 1.0], atol=1e-6)


def test_fit_accuracy_on_sine():
    from fieldinfill.campaign import metrics
    from fieldinfill.sampling import sobol_sequence

    X = sobol_sequence(1, 40, 1)
    f = lambda x: np.sin(12 * x) * x
    model = gp.fit(X, f(X[:, 0]))
    xt = np.linspace(0, 1, 100)
    m = metrics(model.predict(xt[:, None]).mean, f(xt))
    assert m["r2"] >= 0.99 and m["nrmse"] <= 0.03


def test_fit_permutation_invariant(rng):
    X = rng.random((15, 2))
    y = np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1])
    search = GpSearch(generations=30)
    perm = rng.permutation(15)
    x = rng.random((10, 2))
    a = gp.fit(X, y, search).predict(x)
    b = gp.fit(X[perm], y[perm], search).predict(x)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)


def test_fit_deterministic(rng):
    X = rng.random((10, 2))
    y = X[:, 0] ** 2 - X[:, 1]
    a = gp.fit(X, y, GpSearch(seed=5, generations=20))
    b = gp.fit(X, y, GpSearch(seed=5, generations=20))
    np.testing.assert_array_equal(a.kernel.length_scales, b.kernel.length_scales)


def test_fit_conflicting_duplicates_named():
    X = np.array([[0.1], [0.5], [0.1]])
    with pytest.raises(FitError, match=r"\[0, 2\]"):
        gp.fit(X, np.array([1.0, 2.0, 3.0]))


def test_fit_warm_start_never_worse(rng):
    X = rng.random((12, 2))
    y = np.sin(5 * X[:, 0]) + X[:, 1]
    good = gp.fit(X, y, GpSearch(generations=60))
    poor = gp.fit(X, y, GpSearch(generations=1, population_per_dim=2), warm_start=good.kernel.length_scales)
    assert poor.log_likelihood >= good.log_likelihood - 1e-9


def test_serialization_round_trip(rng):
    X = rng.random((7, 3))
    model = gp.fit(X, rng.normal(size=7), GpSearch(generations=10))
    again = GpModel.from_dict(model.to_dict())
    x = rng.random((5, 3))
    np.testing.assert_array_equal(again.predict(x).mean, model.predict(x).mean)
    np.testing.assert_array_equal(again.predict(x).variance, model.predict(x).variance)


def test_nugget_escalation():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    slightly_indefinite = q @ np.diag([2.0, 1.0, 0.5, -5e-10]) @ q.T
    _, used = gp._cholesky_escalating(slightly_indefinite, 1e-12)
    assert used == pytest.approx(1e-9)
    badly_indefinite = q @ np.diag([2.0, 1.0, 0.5, -1e-3]) @ q.T
    with pytest.raises(gp.IllConditionedError):
        gp._cholesky_escalating(badly_indefinite, 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_variance_nonnegative_and_small_at_training_points(seed):
    r = np.random.default_rng(seed)
    X = r.random((6, 2))
    model = GpModel.condition(X, r.normal(size=6), 10 ** r.uniform(-1, 0.5, 2))
    assert np.all(model.predict(r.random((20, 2))).variance >= 0)
    s2 = model.kernel.signal_variance
    assert np.all(model.predict(X).variance <= max(10 * model.kernel.nugget * s2, 1e-9 * s2))
