"""FedGLB-UCB and its three scheduled variants.

Every learner exposes the same three-call interface used by the runner:

``act(t, i, obs)``
    choose an arm index for client ``i`` at round ``t``;
``observe(t, i, obs, index, y)``
    absorb the reward, possibly triggering a synchronization;
``end_round(t)``
    hook run after all N clients acted in round ``t``.

Clients act in index order inside a round. Server-side AGD works on the
concatenation of every client's data; client gradients are never formed
separately because their sum is what the server uses, but the messages they
would generate are metered on the ledger.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, NumericDomainError, RunAbort
from .glm import GlmFamily
from .numkern import SpdMatrix, ball_projection, mahalanobis_norms
from .protocol import CommLedger, meter_agd_sync

log = logging.getLogger(__name__)

INF = math.inf
J_MAX_DEFAULT = 5000


# ---------------------------------------------------------------- schedules


def eps_schedule(rule, N: int, t: int) -> float:
    """Target AGD sub-optimality at a sync performed at round ``t``."""
    if rule in (None, "inv_n2t2"):
        return 1.0 / (N * N * t * t)
    val = float(rule)
    if not val > 0:
        raise NumericDomainError("eps must be positive")
    return val


def fixed_schedule(T: int, B: int) -> frozenset:
    """Sync rounds ``q * floor(T/B)``; B above T degrades to every round."""
    if B < 1:
        raise NumericDomainError("B must be >= 1")
    step = max(T // B, 1)
    return frozenset(range(step, T + 1, step)) if B <= T else frozenset(range(1, T + 1))


# ---------------------------------------------------------------- AGD


def agd_budget_raw(t: int, N: int, lam: float, fam: GlmFamily, eps_t: float, n: int | None = None) -> int:
    """Unclamped iteration budget; ``n`` replaces ``N t`` when given."""
    if not eps_t > 0:
        raise NumericDomainError("eps_t must be positive")
    nt = N * t if n is None else n
    dist_sq = (2.0 * fam.S_radius) ** 2
    arg = (fam.k_mu + 2.0 * lam / nt) * dist_sq / (2.0 * eps_t)
    if arg <= 1.0:
        return 1
    return math.ceil(1.0 + math.sqrt(fam.k_mu * nt / lam + 1.0) * math.log(arg))


def agd_budget(t, N, lam, fam, eps_t, J_max: int = J_MAX_DEFAULT, n=None) -> int:
    return min(max(agd_budget_raw(t, N, lam, fam, eps_t, n), 1), J_max)


def agd_solve(fam: GlmFamily, X, y, lam: float, theta0, J: int):
    """Run J accelerated gradient iterations on (sum l + lam/2 |theta|^2)/n.

    Returns the final iterate before any projection.
    """
    n = len(y)
    step = 1.0 / (fam.k_mu + lam / n)
    logistic = fam.link_kind == "logistic"
    theta = np.array(theta0, dtype=float)
    prev = theta.copy()
    ups = 1.0  # upsilon_1, from upsilon_0 = 0
    for j in range(1, J + 1):
        z = X @ theta
        r = (expit(z) if logistic else z) - y
        grad = (X.T @ r + lam * theta) / n
        cur = theta - step * grad
        ups_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * ups * ups))
        gam = (1.0 - ups) / ups_next
        theta = (1.0 - gam) * cur + gam * prev
        prev = cur
        ups = ups_next
        if not np.all(np.isfinite(theta)):
            raise ConvergenceError(f"AGD iterate became non-finite at step {j}, |grad| = {np.linalg.norm(grad):.3g}")
    return theta


def radial_clip(theta, radius: float):
    """Scale ``theta`` back onto the ball; returns (theta, scaled?)."""
    nrm = float(np.linalg.norm(theta))
    if nrm <= radius:
        return theta, False
    return theta * (radius / nrm), True


# ---------------------------------------------------------------- UCB pieces


def select_arm(theta_hat, A: SpdMatrix, alpha: float, arms) -> int:
    scores = arms @ theta_hat
    if alpha != 0.0:
        scores = scores + alpha * mahalanobis_norms(arms, A)
    bad = np.flatnonzero(~np.isfinite(scores))
    if len(bad):
        raise NumericDomainError(f"non-finite UCB score for arm {int(bad[0])}")
    return int(np.argmax(scores))


def practical_alpha(fam: GlmFamily, d: int, N: int, t: int, lam: float, delta: float, scale: float) -> float:
    if scale == 0.0:
        return 0.0
    c, R, S = fam.c_mu, fam.R_max, fam.S_radius
    inner = d * math.log(1.0 + N * t * c / (d * lam)) + 2.0 * math.log(1.0 / delta)
    return scale * ((R / c) * math.sqrt(inner) + math.sqrt(lam / c) * S)


def _self_normalized_tail(fam: GlmFamily, B: float, N: int, delta: float) -> float:
    """1 + 4B/c + (8R^2/c^2) log((N/delta) sqrt(4 + 8B/c + 64R^4/(4 c^4 delta^2)))."""
    c, R = fam.c_mu, fam.R_max
    root = math.sqrt(4.0 + 8.0 * B / c + 64.0 * R**4 / (4.0 * c**4 * delta**2))
    return 1.0 + 4.0 * B / c + (8.0 * R**2 / c**2) * math.log((N / delta) * root)


def loss_bound_B1(N: int, t_last: int, eps_last: float, lam: float, S: float) -> float:
    if t_last == 0:
        return lam * S * S / 2.0
    return N * t_last * eps_last + lam * S * S / 2.0


def loss_bound_B2(fam, d, N, t_last, eps_last, lam, delta, grad_norm_sum) -> float:
    c, k, R, S = fam.c_mu, fam.k_mu, fam.R_max, fam.S_radius
    stat = (R / c) * math.sqrt(d * math.log(1.0 + N * t_last * c / (d * lam)) + 2.0 * math.log(1.0 / delta))
    opt = 0.0
    if t_last > 0:
        opt = 2.0 * N * t_last * math.sqrt(2.0 * k / (lam * c) + 2.0 / (N * t_last * c)) * math.sqrt(eps_last)
    bracket = stat + opt + math.sqrt(lam / c) * S
    return grad_norm_sum / (2.0 * c) + (c / 2.0) * bracket * bracket


def beta_bound(fam, N, delta, B1, B2, logdet_data, theta_last_norm) -> float:
    """Squared radius of the global ellipsoid; ``logdet_data`` is log det(I + sum of synced x x^T)."""
    c, R, S = fam.c_mu, fam.R_max, fam.S_radius
    L = math.log(1.0 / delta) + 0.5 * logdet_data
    return (
        (8.0 * R**2 / c**2) * L
        + B1
        + (4.0 * R / c) * math.sqrt(2.0 * L) * (theta_last_norm + S + math.sqrt(B1))
        + _self_normalized_tail(fam, B2, N, delta)
    )


def global_alpha(fam, d, N, t, lam, delta, eps_t, scale=1.0) -> float:
    """Width of the ellipsoid centred at an AGD global model (variant 1)."""
    c, k, R, S = fam.c_mu, fam.k_mu, fam.R_max, fam.S_radius
    opt = 0.0
    if t > 0:
        opt = 2.0 * N * t * math.sqrt(2.0 * k / (lam * c) + 2.0 / (N * t * c)) * math.sqrt(eps_t)
    stat = (R / c) * math.sqrt(d * math.log(1.0 + N * t * c / (d * lam)) + 2.0 * math.log(1.0 / delta))
    return scale * (opt + stat + math.sqrt(lam / c) * S)


def _logdet_data(A: SpdMatrix, base: float) -> float:
    """log det(I + A - base I) via a fresh Cholesky."""
    mat = A.entries + (1.0 - base) * np.eye(A.dim)
    sign, val = np.linalg.slogdet(mat)
    if sign <= 0:
        raise NumericDomainError("data Gram matrix is not positive definite")
    return float(val)


# ---------------------------------------------------------------- state


@dataclass
class ClientState:
    theta: np.ndarray
    A: SpdMatrix
    delta_A: np.ndarray
    b: np.ndarray
    logdet_snapshot: float
    grad_norm_sum: float = 0.0
    z_sq_sum: float = 0.0

    @classmethod
    def fresh(cls, d: int, scale: float) -> "ClientState":
        A = SpdMatrix.scaled_identity(d, scale)
        return cls(np.zeros(d), A, np.zeros((d, d)), np.zeros(d), A.logdet)

    def theta_hat(self):
        return self.A.inverse @ self.b


@dataclass
class ServerState:
    theta: np.ndarray
    A: SpdMatrix
    b: np.ndarray
    t_last: int = 0
    z_sq_global: float = 0.0
    logdet_data: float = 0.0
    eps_last: float = 0.0
    sync_count: int = 0


def trigger_value(client: ClientState, t: int, t_last: int) -> float:
    r = client.A.logdet - client.logdet_snapshot
    if r < -1e-9:
        raise NumericDomainError(f"log-det ratio {r} < 0")
    return (t - t_last) * max(r, 0.0)


def check_trigger(client: ClientState, t: int, t_last: int, D: float) -> bool:
    if D == INF:
        return False
    v = trigger_value(client, t, t_last)
    # a zero value never fires: nothing new to share
    return v >= D and v > 0.0


def ons_local_update(client: ClientState, x, y: float, fam: GlmFamily, step_scale: float | None = None) -> bool:
    """One online Newton step on client state; ``A`` must already include x x^T.

    Returns True when the step left the ball and was projected.
    """
    theta = client.theta
    z = float(x @ theta)
    client.b = client.b + x * z
    client.z_sq_sum += z * z
    mu = float(expit(z)) if fam.link_kind == "logistic" else z
    g = x * (mu - y)
    Ainv_g = client.A.inverse @ g
    client.grad_norm_sum += float(g @ Ainv_g)
    eta = 1.0 / fam.c_mu if step_scale is None else step_scale
    prime = theta - eta * Ainv_g
    if float(prime @ prime) <= fam.S_radius**2:
        client.theta = prime
        return False
    client.theta = ball_projection(prime, client.A, fam.S_radius)
    return True


# ---------------------------------------------------------------- learners


@dataclass
class Diagnostics:
    alpha_clamps: int = 0
    j_clamps: int = 0
    radial_scalings: int = 0
    ons_projections: int = 0
    newton_fallbacks: int = 0
    newton_projections: int = 0

    def as_dict(self):
        return dict(self.__dict__)


class Learner:
    """Shared bookkeeping: ledger, diagnostics, sync log, data buffer."""

    name = "learner"

    def __init__(self, fam: GlmFamily, N: int, d: int, T: int, lam: float, delta: float):
        if N < 1 or d < 1 or T < 1:
            raise NumericDomainError("N, d, T must be >= 1")
        if not lam > 0 or not 0 < delta < 1:
            raise NumericDomainError("need lam > 0 and 0 < delta < 1")
        self.fam = fam
        self.N, self.d, self.T = int(N), int(d), int(T)
        self.lam, self.delta = float(lam), float(delta)
        self.ledger = CommLedger()
        self.diag = Diagnostics()
        self.sync_points: list = []
        self.X = np.empty((N * T, d))
        self.y = np.empty(N * T)
        self.n = 0

    @property
    def sync_count(self) -> int:
        return len(self.sync_points)

    def _store(self, x, y):
        self.X[self.n] = x
        self.y[self.n] = y
        self.n += 1

    def act(self, t, i, obs) -> int:
        raise NotImplementedError

    def observe(self, t, i, obs, index, y) -> None:
        raise NotImplementedError

    def end_round(self, t) -> None:
        pass


class FedGlbUcb(Learner):
    """Event-triggered FedGLB-UCB.

    With ``schedule`` (a set of rounds) it becomes the scheduled variant: every
    client in a scheduled round skips its local step and one sync runs when
    the round ends. ``sync_points`` (a set of ``(t, i)`` pairs) instead syncs
    right after client ``i`` acts in round ``t``, which replays an event
    triggered run exactly. ``D = inf`` with neither gives independent ONS
    learners with no communication.
    """

    name = "fedglb-ucb"

    def __init__(
        self,
        fam,
        N,
        d,
        T,
        lam=1.0,
        delta=0.1,
        D=1.0,
        schedule=None,
        sync_points=None,
        alpha_mode="practical",
        alpha_scale=0.25,
        eps_rule="inv_n2t2",
        J_max=J_MAX_DEFAULT,
    ):
        super().__init__(fam, N, d, T, lam, delta)
        if not (D >= 0):
            raise NumericDomainError("D must be >= 0")
        if alpha_mode not in ("practical", "theoretical"):
            raise NumericDomainError(f"unknown alpha mode {alpha_mode!r}")
        self.D = float(D)
        self.schedule = None if schedule is None else frozenset(schedule)
        self.replay = None if sync_points is None else frozenset(tuple(p) for p in sync_points)
        self.alpha_mode = alpha_mode
        self.alpha_scale = float(alpha_scale)
        self.eps_rule = eps_rule
        self.J_max = int(J_max)
        base = lam / fam.c_mu
        self.base = base
        self.clients = [ClientState.fresh(d, base) for _ in range(N)]
        A0 = SpdMatrix.scaled_identity(d, base)
        self.server = ServerState(np.zeros(d), A0, np.zeros(d), logdet_data=0.0)
        self.j_log: list = []
        self.sync_pairs: list = []
        self._alpha_cache = (None, 0.0)
        self._pending = False

    # -- confidence width

    def alpha(self, t: int, client: ClientState, theta_hat) -> float:
        if self.alpha_mode == "practical":
            key, val = self._alpha_cache
            if key != t:
                val = practical_alpha(self.fam, self.d, self.N, t, self.lam, self.delta, self.alpha_scale)
                self._alpha_cache = (t, val)
            return val
        srv = self.server
        S = self.fam.S_radius
        B1 = loss_bound_B1(self.N, srv.t_last, srv.eps_last, self.lam, S)
        B2 = loss_bound_B2(
            self.fam, self.d, self.N, srv.t_last, srv.eps_last, self.lam, self.delta, client.grad_norm_sum
        )
        beta = beta_bound(self.fam, self.N, self.delta, B1, B2, srv.logdet_data, float(np.linalg.norm(srv.theta)))
        sq = (
            beta
            + (self.lam / self.fam.c_mu) * S * S
            - (srv.z_sq_global + client.z_sq_sum)
            + float(theta_hat @ client.b)
        )
        if not math.isfinite(sq):
            raise NumericDomainError("confidence width is not finite")
        if sq < 0.0:
            self.diag.alpha_clamps += 1
            sq = 0.0
        return math.sqrt(sq)

    # -- protocol

    def act(self, t, i, obs):
        c = self.clients[i]
        th = c.theta_hat()
        return select_arm(th, c.A, self.alpha(t, c, th), obs.arms)

    def observe(self, t, i, obs, index, y):
        x = obs.arms[index]
        c = self.clients[i]
        self._store(x, y)
        c.A.update(x)
        c.delta_A += np.outer(x, x)
        if self.replay is not None:
            fire = (t, i) in self.replay
        elif self.schedule is not None:
            fire = t in self.schedule
        else:
            fire = check_trigger(c, t, self.server.t_last, self.D)
        if not fire:
            if ons_local_update(c, x, y, self.fam):
                self.diag.ons_projections += 1
            return
        if self.schedule is not None and self.replay is None:
            self._pending = True
            return
        self.sync_pairs.append((t, i))
        self.sync(t)

    def end_round(self, t):
        if self._pending:
            self._pending = False
            self.sync_pairs.append((t, self.N - 1))
            self.sync(t)

    def sync(self, t: int) -> None:
        srv, fam = self.server, self.fam
        d, N = self.d, self.N
        total_delta = np.zeros((d, d))
        for c in self.clients:
            total_delta += c.delta_A
        srv.A.add_dense(total_delta)
        eps_t = eps_schedule(self.eps_rule, N, t)
        raw = agd_budget_raw(t, N, self.lam, fam, eps_t, n=self.n)
        J = min(max(raw, 1), self.J_max)
        if raw > self.J_max:
            self.diag.j_clamps += 1
            log.warning("AGD budget %d clamped to %d at t=%d", raw, self.J_max, t)
        try:
            theta = agd_solve(fam, self.X[: self.n], self.y[: self.n], self.lam, srv.theta, J)
        except ConvergenceError as exc:
            raise RunAbort(str(exc), t) from None
        theta, scaled = radial_clip(theta, fam.S_radius)
        self.diag.radial_scalings += int(scaled)
        srv.theta = theta
        srv.b = srv.b + total_delta @ theta
        srv.z_sq_global += float(theta @ total_delta @ theta)
        srv.t_last = t
        srv.eps_last = eps_t
        srv.logdet_data = _logdet_data(srv.A, self.base)
        srv.sync_count += 1
        for c in self.clients:
            c.theta = srv.theta.copy()
            c.A = srv.A.copy()
            c.b = srv.b.copy()
            c.delta_A = np.zeros((d, d))
            c.logdet_snapshot = srv.A.logdet
            c.grad_norm_sum = 0.0
            c.z_sq_sum = 0.0
        meter_agd_sync(self.ledger, N, d, J, t)
        self.j_log.append(J)
        self.sync_points.append(t)


class NOnsGlm(FedGlbUcb):
    """Independent per-client ONS learners: FedGLB-UCB with the trigger off."""

    name = "n-ons-glm"

    def __init__(self, fam, N, d, T, **kw):
        kw["D"] = INF
        kw.pop("schedule", None)
        kw.pop("sync_points", None)
        super().__init__(fam, N, d, T, **kw)


class FedGlbVariant2(FedGlbUcb):
    """Scheduled communication with local ONS updates."""

    name = "fedglb-ucb-v2"

    def __init__(self, fam, N, d, T, B=None, schedule=None, sync_points=None, **kw):
        kw.pop("D", None)
        if sync_points is None and schedule is None:
            if B is None:
                raise NumericDomainError("variant 2 needs B, a schedule or sync points")
            schedule = fixed_schedule(T, int(B))
        super().__init__(fam, N, d, T, D=INF, schedule=schedule, sync_points=sync_points, **kw)


class FedGlbVariant1(Learner):
    """Scheduled communication, no local update.

    Between syncs every client selects arms with the last global model and
    Gram matrix; at a scheduled round the Gram matrices go up, AGD runs warm
    started from the previous global model, and (theta, A) come back down.
    """

    name = "fedglb-ucb-v1"

    def __init__(
        self,
        fam,
        N,
        d,
        T,
        lam=1.0,
        delta=0.1,
        B=None,
        schedule=None,
        alpha_mode="practical",
        alpha_scale=0.25,
        eps_rule="inv_n2t2",
        J_max=J_MAX_DEFAULT,
        **_ignored,
    ):
        super().__init__(fam, N, d, T, lam, delta)
        if schedule is None:
            if B is None:
                raise NumericDomainError("variant 1 needs B or a schedule")
            schedule = fixed_schedule(T, int(B))
        self.schedule = frozenset(schedule)
        self.alpha_mode = alpha_mode
        self.alpha_scale = float(alpha_scale)
        self.eps_rule = eps_rule
        self.J_max = int(J_max)
        self.base = lam / fam.c_mu
        self.theta = np.zeros(d)
        self.A = SpdMatrix.scaled_identity(d, self.base)
        self.t_last = 0
        self.eps_last = 0.0
        self.j_log: list = []
        self._alpha = None

    def _width(self, t):
        if self._alpha is not None:
            return self._alpha
        if self.alpha_mode == "practical":
            a = practical_alpha(self.fam, self.d, self.N, self.t_last, self.lam, self.delta, self.alpha_scale)
        else:
            a = global_alpha(self.fam, self.d, self.N, self.t_last, self.lam, self.delta, self.eps_last)
        self._alpha = a
        return a

    def act(self, t, i, obs):
        return select_arm(self.theta, self.A, self._width(t), obs.arms)

    def observe(self, t, i, obs, index, y):
        self._store(obs.arms[index], y)

    def end_round(self, t):
        if t not in self.schedule:
            return
        N, d, fam = self.N, self.d, self.fam
        Xs = self.X[: self.n]
        gram = Xs.T @ Xs
        self.A = SpdMatrix(self.base * np.eye(d) + gram)
        eps_t = eps_schedule(self.eps_rule, N, t)
        raw = agd_budget_raw(t, N, self.lam, fam, eps_t, n=self.n)
        J = min(max(raw, 1), self.J_max)
        if raw > self.J_max:
            self.diag.j_clamps += 1
        try:
            theta = agd_solve(fam, Xs, self.y[: self.n], self.lam, self.theta, J)
        except ConvergenceError as exc:
            raise RunAbort(str(exc), t) from None
        theta, scaled = radial_clip(theta, fam.S_radius)
        self.diag.radial_scalings += int(scaled)
        self.theta = theta
        self.t_last = t
        self.eps_last = eps_t
        self._alpha = None
        self.ledger.record("delta_A_up", N, N * d * d, t)
        self.ledger.record("gradient_up", N * J, N * d * J, t)
        self.ledger.record("model_down", 0, N * d * J, t)
        self.ledger.record("sync_down", N, N * (d * d + d), t)
        self.j_log.append(J)
        self.sync_points.append(t)


def variant1_events(N: int, T: int, B: int, lam: float, fam: GlmFamily, eps_rule="inv_n2t2", J_max=J_MAX_DEFAULT):
    """Total ledger events of a variant-1 run, known before running it.

    Syncs sit at round ends, so the AGD budget depends only on t.
    """
    total = 0
    for t in sorted(fixed_schedule(T, B)):
        J = min(max(agd_budget_raw(t, N, lam, fam, eps_schedule(eps_rule, N, t), n=N * t), 1), J_max)
        total += 2 * N + N * J
    return total


class FedGlbVariant3(Learner):
    """Lazy ONS: one batched ONS step per sync instead of AGD."""

    name = "fedglb-ucb-v3"

    def __init__(
        self,
        fam,
        N,
        d,
        T,
        lam=1.0,
        delta=0.1,
        B=None,
        schedule=None,
        alpha_mode="practical",
        alpha_scale=0.25,
        **_ignored,
    ):
        super().__init__(fam, N, d, T, lam, delta)
        if schedule is None:
            if B is None:
                raise NumericDomainError("variant 3 needs B or a schedule")
            schedule = fixed_schedule(T, int(B))
            batch = math.ceil(N * T / int(B))
        else:
            gaps = np.diff([0] + sorted(schedule))
            batch = N * int(gaps.max()) if len(gaps) else N * T
        self.schedule = frozenset(schedule)
        self.alpha_mode = alpha_mode
        self.alpha_scale = float(alpha_scale)
        self.gamma = ons_rate(fam, batch)
        self.theta_last = np.zeros(d)
        self.A_last = SpdMatrix.scaled_identity(d, lam)
        self.V_last = SpdMatrix.scaled_identity(d, lam)
        self.b_last = np.zeros(d)
        self.z_sq_global = 0.0
        self.global_grad_sum = 0.0
        self._reset_clients()
        self._round = [None] * N
        self.epoch_start = 0

    def _reset_clients(self):
        N = self.N
        self.theta = [self.theta_last.copy() for _ in range(N)]
        self.A = [self.A_last.copy() for _ in range(N)]
        self.V = [self.V_last.copy() for _ in range(N)]
        self.b = [self.b_last.copy() for _ in range(N)]
        self.z_sq = [0.0] * N
        self.grad_sum = [0.0] * N

    def width(self, t, i, theta_hat):
        if self.alpha_mode == "practical":
            return practical_alpha(self.fam, self.d, self.N, t, self.lam, self.delta, self.alpha_scale)
        fam, S = self.fam, self.fam.S_radius
        BP = (self.global_grad_sum + self.grad_sum[i]) / (2.0 * self.gamma) + 2.0 * self.gamma * self.lam * S * S
        sq = (
            self.lam * S * S
            + _self_normalized_tail(fam, BP, self.N, self.delta)
            + float(theta_hat @ self.b[i])
            - (self.z_sq_global + self.z_sq[i])
        )
        if sq < 0.0:
            self.diag.alpha_clamps += 1
            sq = 0.0
        return math.sqrt(sq)

    def act(self, t, i, obs):
        th = self.V[i].inverse @ self.b[i]
        return select_arm(th, self.V[i], self.width(t, i, th), obs.arms)

    def observe(self, t, i, obs, index, y):
        x = obs.arms[index]
        self._store(x, y)
        z = float(x @ self.theta[i])
        mu = float(expit(z)) if self.fam.link_kind == "logistic" else z
        g = x * (mu - y)
        self.A[i].update(g)
        self.V[i].update(x)
        self._round[i] = (x, z, g)

    def end_round(self, t):
        if t not in self.schedule:
            for i, (x, z, g) in enumerate(self._round):
                Ainv_g = self.A[i].inverse @ g
                self.grad_sum[i] += float(g @ Ainv_g)
                prime = self.theta[i] - Ainv_g / self.gamma
                if float(prime @ prime) > self.fam.S_radius**2:
                    prime = ball_projection(prime, self.A[i], self.fam.S_radius)
                    self.diag.ons_projections += 1
                self.theta[i] = prime
                self.b[i] = self.b[i] + x * z
                self.z_sq[i] += z * z
            return
        self._global(t)

    def _global(self, t):
        N, d, fam = self.N, self.d, self.fam
        Xe = self.X[self.epoch_start : self.n]
        ye = self.y[self.epoch_start : self.n]
        z = Xe @ self.theta_last
        mu = expit(z) if fam.link_kind == "logistic" else z
        g = Xe.T @ (mu - ye)
        dV = Xe.T @ Xe
        self.A_last.update(g)
        Ainv_g = self.A_last.inverse @ g
        self.global_grad_sum += float(g @ Ainv_g)
        self.V_last.add_dense(dV)
        self.b_last = self.b_last + dV @ self.theta_last
        self.z_sq_global += float(z @ z)
        prime = self.theta_last - Ainv_g / self.gamma
        if float(prime @ prime) > fam.S_radius**2:
            prime = ball_projection(prime, self.A_last, fam.S_radius)
            self.diag.ons_projections += 1
        self.theta_last = prime
        self.epoch_start = self.n
        self._reset_clients()
        self.ledger.record("gradient_up", N, N * (d + d * d), t)
        self.ledger.record("sync_down", N, N * (2 * d * d + 2 * d), t)
        self.sync_points.append(t)


def ons_rate(fam: GlmFamily, batch: int) -> float:
    """gamma = 1/2 min(1/(4 S G), c_mu / (G^2 batch))."""
    G = fam.grad_bound
    S = fam.S_radius
    return 0.5 * min(1.0 / (4.0 * S * G), fam.c_mu / (G * G * batch))
