import math

import numpy as np
import pytest

from glbsim.env import SyntheticEnv
from glbsim.errors import NumericDomainError
from glbsim.fedglb import (
    INF,
    ClientState,
    FedGlbUcb,
    FedGlbVariant1,
    FedGlbVariant3,
    agd_budget,
    agd_solve,
    check_trigger,
    fixed_schedule,
    loss_bound_B1,
    ons_local_update,
    ons_rate,
    practical_alpha,
    select_arm,
    trigger_value,
    variant1_events,
)
from glbsim.glm import GlmFamily
from glbsim.numkern import SpdMatrix
from glbsim.runner import RunConfig, default_D, run_single

LOGIT = GlmFamily.make("logistic", 1.0)


def test_select_arm_examples():
    A = SpdMatrix.scaled_identity(2, 1.0)
    assert select_arm(np.array([1.0, 0.0]), A, 0.0, np.eye(2)) == 0
    assert select_arm(np.zeros(2), SpdMatrix.scaled_identity(2, 3.0), 1.0, np.eye(2)) == 0
    # 0.5 + sqrt(0.5) against sqrt(0.5)
    assert select_arm(np.array([0.5, 0.0]), SpdMatrix.scaled_identity(2, 2.0), 1.0, np.eye(2)) == 0
    assert select_arm(np.array([0.0, 0.5]), SpdMatrix.scaled_identity(2, 2.0), 1.0, np.eye(2)) == 1


def test_select_arm_non_finite():
    with pytest.raises(NumericDomainError, match="arm 1"):
        select_arm(np.ones(2), SpdMatrix.scaled_identity(2, 1.0), 0.0, np.array([[0.0, 1.0], [np.inf, 0.0]]))


def test_ons_worked_example():
    c = ClientState.fresh(1, 1.0 / 0.25)
    x = np.array([1.0])
    c.A.update(x)
    assert c.A.entries[0, 0] == 5.0
    fam = GlmFamily(LOGIT.link_kind, 1.0, 0.25, 0.25, 1.0)
    ons_local_update(c, x, 1.0, fam)
    assert c.theta[0] == pytest.approx(0.4)
    assert c.b[0] == 0.0 and c.z_sq_sum == 0.0


def test_ons_null_observation():
    c = ClientState.fresh(2, 5.0)
    c.theta = np.array([0.1, 0.2])
    ons_local_update(c, np.zeros(2), 1.0, LOGIT)
    np.testing.assert_array_equal(c.theta, [0.1, 0.2])
    np.testing.assert_array_equal(c.b, [0.0, 0.0])


def test_ons_projection_to_sphere():
    c = ClientState.fresh(2, 0.01)
    x = np.array([0.0, 0.05])
    c.A.update(x)
    ons_local_update(c, x, 1.0, LOGIT)
    assert np.linalg.norm(c.theta) == pytest.approx(1.0, abs=1e-9)


def test_trigger_examples():
    c = ClientState.fresh(1, 1.0)
    assert trigger_value(c, 4, 4) == 0.0
    assert not check_trigger(c, 4, 4, 0.5)
    c.logdet_snapshot = c.A.logdet - 0.3
    assert trigger_value(c, 5, 0) == pytest.approx(1.5)
    assert check_trigger(c, 5, 0, 1.0)
    assert not check_trigger(c, 5, 0, INF)


def test_agd_budget_values():
    eps = 1.0 / (10**2 * 100**2)
    # 1 + sqrt(251) log(0.252 * 4 / 2e-6) = 209.02, evaluated independently
    assert agd_budget(100, 10, 1.0, GlmFamily("logistic", 1.0, 0.2, 0.25, 1.0), eps) == 210
    assert agd_budget(1, 1, 1.0, LOGIT, 100.0) == 1
    assert agd_budget(100, 10, 1.0, LOGIT, 1e-300, J_max=7) == 7


def _newton(X, y, lam):
    theta = np.zeros(X.shape[1])
    for _ in range(100):
        mu = 1 / (1 + np.exp(-X @ theta))
        g = X.T @ (mu - y) + lam * theta
        H = (X * (mu * (1 - mu))[:, None]).T @ X + lam * np.eye(X.shape[1])
        theta = theta - np.linalg.solve(H, g)
        if np.linalg.norm(g) < 1e-14:
            break
    return theta


def test_agd_single_point_matches_newton():
    X = np.array([[0.6, -0.3]])
    y = np.array([1.0])
    ref = _newton(X, y, 1.0)
    got = agd_solve(LOGIT, X, y, 1.0, np.zeros(2), 2000)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_agd_stationary_start():
    # identity link, start exactly at the regularized optimum
    fam = GlmFamily.make("identity", 5.0)
    X = np.eye(2)
    theta0 = np.array([0.5, -0.5])
    y = X @ theta0 + 1.0 * theta0  # gradient of (sum l + |theta|^2/2) vanishes at theta0
    out = agd_solve(fam, X, y, 1.0, theta0, 1)
    np.testing.assert_allclose(out, theta0, atol=1e-15)


def test_b1_and_default_D():
    assert loss_bound_B1(10, 100, 1 / (100 * 100**2), 1.0, 1.0) == pytest.approx(0.501)
    assert default_D(2000, 20, 10) == pytest.approx(0.9436958290887741, rel=1e-12)


def test_practical_alpha_zero_scale():
    assert practical_alpha(LOGIT, 5, 3, 10, 1.0, 0.1, 0.0) == 0.0


def test_ons_rate_example():
    fam = GlmFamily.make("logistic", 1.0)
    G2 = 0.25**2 + 1.0
    expect = 0.5 * min(1 / (4 * math.sqrt(G2)), fam.c_mu / G2)
    assert ons_rate(fam, 1) == pytest.approx(expect)


def test_fixed_schedule():
    assert fixed_schedule(10, 3) == {3, 6, 9}
    assert fixed_schedule(10, 10) == set(range(1, 11))
    assert fixed_schedule(10, 1) == {10}


def _drive(learner, env, T, N):
    for t in range(1, T + 1):
        for i in range(N):
            obs = env.sample_arm_set(t, i)
            k = learner.act(t, i, obs)
            learner.observe(t, i, obs, k, env.reward(obs, k))
        learner.end_round(t)


def test_sync_contract_and_bookkeeping():
    N, d, T = 3, 3, 30
    env = SyntheticEnv(LOGIT, d, 5, seed=4)
    alg = FedGlbUcb(LOGIT, N, d, T, D=0.5)
    _drive(alg, env, T, N)
    assert alg.sync_count > 0
    srv = alg.server
    # A_i = base I + synced data + own data since the last sync
    for c in alg.clients:
        np.testing.assert_allclose(c.A.entries, srv.A.entries + c.delta_A, atol=1e-9)
        assert np.linalg.norm(c.theta) <= 1 + 1e-9
    X = alg.X[: alg.n]
    pending = sum(c.delta_A for c in alg.clients)
    np.testing.assert_allclose(srv.A.entries + pending, alg.base * np.eye(d) + X.T @ X, atol=1e-9)


def test_sync_makes_clients_equal():
    N, d = 3, 2
    env = SyntheticEnv(LOGIT, d, 4, seed=1)
    alg = FedGlbUcb(LOGIT, N, d, 5, D=INF)
    _drive(alg, env, 3, N)
    alg.sync(3)
    for c in alg.clients:
        assert c.theta.tobytes() == alg.server.theta.tobytes()
        assert c.A.entries.tobytes() == alg.server.A.entries.tobytes()
        assert c.b.tobytes() == alg.server.b.tobytes()
        assert not c.delta_A.any()


def test_sync_twice_changes_nothing_in_statistics():
    N, d = 2, 2
    env = SyntheticEnv(LOGIT, d, 4, seed=9)
    alg = FedGlbUcb(LOGIT, N, d, 10, D=INF)
    _drive(alg, env, 5, N)
    alg.sync(5)
    A1, th1 = alg.server.A.entries.copy(), alg.server.theta.copy()
    alg.sync(5)
    np.testing.assert_array_equal(alg.server.A.entries, A1)
    assert np.linalg.norm(alg.server.theta - th1) <= 1e-3


def test_theta_hat_matches_least_squares():
    N, d = 2, 3
    env = SyntheticEnv(LOGIT, d, 4, seed=2)
    alg = FedGlbUcb(LOGIT, N, d, 20, D=1.0)
    _drive(alg, env, 20, N)
    c = alg.clients[0]
    ref = np.linalg.lstsq(c.A.entries, c.b, rcond=None)[0]
    np.testing.assert_allclose(c.theta_hat(), ref, atol=1e-8)


def test_zero_D_fires_every_positive_step():
    res = run_single(RunConfig(algorithm="fedglb-ucb", T=6, N=2, d=2, K=3, D=0.0))
    # one sync per round: later clients in the round see t - t_last = 0
    assert res.final["sync_count"] == 6


def test_theoretical_alpha_reproducible():
    cfg = RunConfig(algorithm="fedglb-ucb", T=15, N=3, d=3, K=4, D=0.3, alpha_mode="theoretical")
    a, b = run_single(cfg), run_single(cfg)
    assert a.series.tobytes() == b.series.tobytes()
    assert np.all(np.isfinite(a.series))


def test_variant1_cold_start_and_freeze():
    N, d = 2, 3
    alg = FedGlbVariant1(LOGIT, N, d, 10, B=2)
    assert not alg.theta.any()
    np.testing.assert_array_equal(alg.A.entries, alg.base * np.eye(d))
    env = SyntheticEnv(LOGIT, d, 4, seed=0)
    frozen = alg.theta.copy()
    for i in range(N):
        obs = env.sample_arm_set(1, i)
        k = alg.act(1, i, obs)
        alg.observe(1, i, obs, k, env.reward(obs, k))
    alg.end_round(1)
    assert alg.sync_points == []
    np.testing.assert_array_equal(alg.theta, frozen)


def test_variant1_events_prediction():
    cfg = RunConfig(algorithm="fedglb-ucb-v1", T=40, N=3, d=3, K=4, B=4)
    res = run_single(cfg)
    assert res.final["final_comm_events"] == variant1_events(3, 40, 4, 1.0, LOGIT)


def test_variant3_zero_gradient_batch():
    alg = FedGlbVariant3(LOGIT, 1, 2, 4, B=4)
    A0 = alg.A_last.entries.copy()
    th0 = alg.theta_last.copy()
    alg._global(1)
    np.testing.assert_array_equal(alg.A_last.entries, A0)
    np.testing.assert_array_equal(alg.theta_last, th0)


def test_variant2_single_terminal_sync_equals_independent_ons():
    T = 12
    base = dict(T=T, N=3, d=3, K=4, seed=5)
    v2 = run_single(RunConfig(algorithm="fedglb-ucb-v2", B=1, **base))
    ons = run_single(RunConfig(algorithm="n-ons-glm", D=None, **base))
    np.testing.assert_array_equal(v2.choices, ons.choices)
    assert v2.sync_points == [T]


@pytest.mark.parametrize("algo,kw", [("fedglb-ucb", dict(D=0.2)), ("fedglb-ucb-v2", dict(B=5)), ("fedglb-ucb-v3", dict(B=5))])
def test_models_stay_in_ball(algo, kw):
    from glbsim.runner import make_learner

    cfg = RunConfig(algorithm=algo, T=25, N=3, d=3, K=5, **kw)
    alg = make_learner(cfg, LOGIT)
    env = SyntheticEnv(LOGIT, 3, 5, seed=0)
    for t in range(1, 26):
        for i in range(3):
            obs = env.sample_arm_set(t, i)
            k = alg.act(t, i, obs)
            alg.observe(t, i, obs, k, env.reward(obs, k))
        alg.end_round(t)
        thetas = [c.theta for c in alg.clients] if hasattr(alg, "clients") else alg.theta
        assert max(np.linalg.norm(th) for th in thetas) <= 1 + 1e-9
