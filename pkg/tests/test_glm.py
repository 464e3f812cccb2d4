import numpy as np
import pytest

from glbsim.errors import NumericDomainError
from glbsim.glm import (
    GlmFamily,
    batch_gradient,
    batch_objective,
    global_gradient,
    global_objective,
    lipschitz_constants,
    link_value,
    loss,
    loss_gradient,
)

LOGIT = GlmFamily.make("logistic", 1.0)


def test_logistic_constants():
    c, k, R = lipschitz_constants("logistic", 1.0)
    # sigma(1)(1 - sigma(1)), evaluated independently
    assert c == pytest.approx(0.19661193324148185, rel=1e-12)
    assert (k, R) == (0.25, 1.0)


def test_identity_constants():
    assert lipschitz_constants("identity", 2.0, noise_bound=0.5) == (1.0, 1.0, 0.5)


def test_bad_link_and_radius():
    with pytest.raises(NumericDomainError):
        lipschitz_constants("probit", 1.0)
    with pytest.raises(NumericDomainError):
        GlmFamily.make("logistic", 0.0)


def test_link_value():
    assert link_value(LOGIT, 0.0) == 0.5
    with pytest.raises(NumericDomainError):
        link_value(LOGIT, np.inf)


def test_loss_values():
    assert loss(LOGIT, 2.0, 1.0) == pytest.approx(0.1269280110429726, rel=1e-12)
    assert loss(LOGIT, 0.0, 0.0) == pytest.approx(np.log(2.0))
    # large margins stay finite
    assert np.isfinite(loss(LOGIT, 800.0, 0.0))
    with pytest.raises(NumericDomainError):
        loss(LOGIT, 0.0, 0.5)


def test_loss_gradient():
    g = loss_gradient(LOGIT, [1.0, 0.0], [0.0, 0.0], 1.0)
    np.testing.assert_allclose(g, [-0.5, 0.0])


def test_batch_gradient_finite_difference():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3)) / 2
    y = (rng.random(7) < 0.5).astype(float)
    theta = rng.normal(size=3) * 0.3
    g = batch_gradient(LOGIT, (X, y), theta, 1.0, 7, 3)
    h = 1e-6
    fd = np.array(
        [
            (batch_objective(LOGIT, (X, y), theta + h * e, 1.0, 7, 3)
             - batch_objective(LOGIT, (X, y), theta - h * e, 1.0, 7, 3)) / (2 * h)
            for e in np.eye(3)
        ]
    )
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_client_mean_equals_global_objective():
    rng = np.random.default_rng(1)
    N, t, d = 3, 5, 2
    X = rng.normal(size=(N, t, d)) / 2
    y = (rng.random((N, t)) < 0.5).astype(float)
    theta = np.array([0.2, -0.4])
    mean = np.mean([batch_objective(LOGIT, (X[i], y[i]), theta, 2.0, t, N) for i in range(N)])
    assert mean == pytest.approx(global_objective(LOGIT, X.reshape(-1, d), y.ravel(), theta, 2.0), rel=1e-12)
    gmean = np.mean([batch_gradient(LOGIT, (X[i], y[i]), theta, 2.0, t, N) for i in range(N)], axis=0)
    np.testing.assert_allclose(gmean, global_gradient(LOGIT, X.reshape(-1, d), y.ravel(), theta, 2.0), rtol=1e-12)


def test_list_of_pairs_accepted():
    data = [([1.0, 0.0], 1.0), ([0.0, 1.0], 0.0)]
    v = batch_objective(LOGIT, data, np.zeros(2), 1.0, 2, 1)
    assert v == pytest.approx(np.log(2.0))


def test_sample_count_checked():
    with pytest.raises(NumericDomainError):
        batch_objective(LOGIT, [([1.0], 1.0)], np.zeros(1), 1.0, 2, 1)
    with pytest.raises(NumericDomainError):
        batch_gradient(LOGIT, [], np.zeros(1), 1.0, 1, 1)
