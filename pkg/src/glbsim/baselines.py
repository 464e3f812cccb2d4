"""Comparator learners: DisLinUCB, UCB-GLM (shared or per client).

The no-communication ONS baseline is :class:`glbsim.fedglb.NOnsGlm`.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import linalg as sla
from scipy.special import expit

from .errors import NumericDomainError
from .fedglb import INF, Learner, practical_alpha, select_arm
from .numkern import SpdMatrix, ball_projection

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50


def linear_alpha(R: float, d: int, n: int, lam: float, delta: float, S: float, scale: float) -> float:
    """scale * (R sqrt(d log((1 + n/(d lam))/delta)) + sqrt(lam) S)."""
    return scale * (R * math.sqrt(d * math.log((1.0 + n / (d * lam)) / delta)) + math.sqrt(lam) * S)


class DisLinUCB(Learner):
    """Distributed ridge-regression UCB with a log-det trigger.

    Rewards are treated as linear even on logistic data.
    """

    name = "dislinucb"

    def __init__(self, fam, N, d, T, lam=1.0, delta=0.1, D=1.0, alpha_scale=0.25, **_ignored):
        super().__init__(fam, N, d, T, lam, delta)
        if not D >= 0:
            raise NumericDomainError("D must be >= 0")
        self.D = float(D)
        self.alpha_scale = float(alpha_scale)
        self.A_glob = SpdMatrix.scaled_identity(d, lam)
        self.b_glob = np.zeros(d)
        self.n_glob = 0
        self.A = [self.A_glob.copy() for _ in range(N)]
        self.b = [np.zeros(d) for _ in range(N)]
        self.dA = [np.zeros((d, d)) for _ in range(N)]
        self.db = [np.zeros(d) for _ in range(N)]
        self.n_local = [0] * N
        self.snapshot = [self.A_glob.logdet] * N
        self.t_last = 0

    def act(self, t, i, obs):
        A = self.A[i]
        theta = A.inverse @ self.b[i]
        alpha = linear_alpha(
            self.fam.R_max, self.d, self.n_glob + self.n_local[i], self.lam, self.delta,
            self.fam.S_radius, self.alpha_scale,
        )
        return select_arm(theta, A, alpha, obs.arms)

    def observe(self, t, i, obs, index, y):
        x = obs.arms[index]
        self._store(x, y)
        self.A[i].update(x)
        self.b[i] = self.b[i] + x * y
        self.dA[i] += np.outer(x, x)
        self.db[i] = self.db[i] + x * y
        self.n_local[i] += 1
        if self.D == INF:
            return
        ratio = max(self.A[i].logdet - self.snapshot[i], 0.0)
        if (t - self.t_last) * ratio > self.D:
            self.sync(t)

    def sync(self, t):
        N, d = self.N, self.d
        self.A_glob.add_dense(sum(self.dA))
        self.b_glob = self.b_glob + sum(self.db)
        self.n_glob += sum(self.n_local)
        for i in range(N):
            self.A[i] = self.A_glob.copy()
            self.b[i] = self.b_glob.copy()
            self.dA[i] = np.zeros((d, d))
            self.db[i] = np.zeros(d)
            self.n_local[i] = 0
            self.snapshot[i] = self.A_glob.logdet
        self.t_last = t
        self.ledger.record("stats_up", N, N * (d * d + d), t)
        self.ledger.record("stats_down", N, N * (d * d + d), t)
        self.sync_points.append(t)


class MleState:
    """Data buffer plus a warm-started regularized MLE."""

    def __init__(self, d: int, capacity: int):
        self.X = np.empty((capacity, d))
        self.y = np.empty(capacity)
        self.n = 0
        self.theta = np.zeros(d)

    def add(self, x, y):
        self.X[self.n] = x
        self.y[self.n] = y
        self.n += 1


def _nll(fam, X, y, theta, lam):
    z = X @ theta
    if fam.link_kind == "logistic":
        part = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    else:
        part = 0.5 * z * z
    return float(np.sum(part - y * z)) + 0.5 * lam * float(theta @ theta)


def ucb_glm_fit(state: MleState, fam, lam: float, diag=None, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER):
    """Damped Newton on the summed lam-regularized NLL, warm-started.

    The stopping rule is on the summed gradient norm. A result outside the
    ball is projected in the Hessian metric.
    """
    if state.n == 0:
        raise NumericDomainError("cannot fit an MLE on zero samples")
    X, y = state.X[: state.n], state.y[: state.n]
    d = X.shape[1]
    theta = state.theta.copy()
    logistic = fam.link_kind == "logistic"
    H = None
    for _ in range(max_iter):
        z = X @ theta
        mu = expit(z) if logistic else z
        g = X.T @ (mu - y) + lam * theta
        w = mu * (1.0 - mu) if logistic else np.ones_like(z)
        H = (X * w[:, None]).T @ X + lam * np.eye(d)
        if float(np.linalg.norm(g)) <= tol:
            break
        try:
            step = sla.solve(H, g, assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            if diag is not None:
                diag.newton_fallbacks += 1
            log.warning("Hessian solve failed; taking a gradient step")
            step = g / (0.25 * len(y) + lam)
        f0 = _nll(fam, X, y, theta, lam)
        slope = float(g @ step)
        eta = 1.0
        while eta > 1e-10:
            cand = theta - eta * step
            if _nll(fam, X, y, cand, lam) <= f0 - 1e-4 * eta * slope:
                break
            eta *= 0.5
        theta = theta - eta * step
    if float(theta @ theta) > fam.S_radius**2:
        if diag is not None:
            diag.newton_projections += 1
        state.theta = theta
        theta = ball_projection(theta, H, fam.S_radius)
    else:
        state.theta = theta
    return theta


class _UcbGlmBase(Learner):
    def __init__(self, fam, N, d, T, lam=1.0, delta=0.1, alpha_scale=0.25, **_ignored):
        super().__init__(fam, N, d, T, lam, delta)
        self.alpha_scale = float(alpha_scale)
        self.base = lam / fam.c_mu

    def _alpha(self, n):
        return practical_alpha(self.fam, self.d, 1, n, self.lam, self.delta, self.alpha_scale)


class OneUcbGlm(_UcbGlmBase):
    """A single shared UCB-GLM model refit once per round.

    Every round is charged N^2 events, the floor for sharing all data with
    all clients.
    """

    name = "one-ucb-glm"

    def __init__(self, fam, N, d, T, **kw):
        super().__init__(fam, N, d, T, **kw)
        self.state = MleState(d, N * T)
        self.V = SpdMatrix.scaled_identity(d, self.base)
        self.theta = np.zeros(d)
        self._round = []

    def act(self, t, i, obs):
        return select_arm(self.theta, self.V, self._alpha(self.state.n), obs.arms)

    def observe(self, t, i, obs, index, y):
        x = obs.arms[index]
        self._store(x, y)
        self._round.append(x)
        self.state.add(x, y)

    def end_round(self, t):
        for x in self._round:
            self.V.update(x)
        self._round = []
        self.theta = ucb_glm_fit(self.state, self.fam, self.lam, self.diag)
        N, d = self.N, self.d
        self.ledger.record("one_ucb_round", N * N, N * N * d, t)


class NUcbGlm(_UcbGlmBase):
    """Independent per-client UCB-GLM, refit after every pull."""

    name = "n-ucb-glm"

    def __init__(self, fam, N, d, T, **kw):
        super().__init__(fam, N, d, T, **kw)
        self.states = [MleState(d, T) for _ in range(N)]
        self.V = [SpdMatrix.scaled_identity(d, self.base) for _ in range(N)]
        self.theta = [np.zeros(d) for _ in range(N)]

    def act(self, t, i, obs):
        return select_arm(self.theta[i], self.V[i], self._alpha(self.states[i].n), obs.arms)

    def observe(self, t, i, obs, index, y):
        x = obs.arms[index]
        self._store(x, y)
        st = self.states[i]
        st.add(x, y)
        self.V[i].update(x)
        self.theta[i] = ucb_glm_fit(st, self.fam, self.lam, self.diag)


def one_ucb_events(N: int, T: int) -> int:
    return N * N * T
