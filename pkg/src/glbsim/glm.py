"""Generalized linear model families, losses and the per-client objective.

Only the logistic (Bernoulli) and identity (Gaussian-like, bounded noise)
links are implemented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NumericDomainError

LINKS = ("logistic", "identity")


def lipschitz_constants(link_kind: str, S_radius: float, noise_bound: float = 1.0):
    """Return ``(c_mu, k_mu, R_max)`` for a link on the interval [-S, S].

    For the logistic link the derivative sigma(z)(1 - sigma(z)) is even and
    unimodal, so its infimum over [-S, S] sits at the endpoint.
    """
    if not S_radius > 0:
        raise NumericDomainError("S_radius must be positive")
    if link_kind == "logistic":
        s = float(expit(S_radius))
        return s * (1.0 - s), 0.25, 1.0
    if link_kind == "identity":
        return 1.0, 1.0, float(noise_bound)
    raise NumericDomainError(f"unknown link {link_kind!r}; expected one of {LINKS}")


@dataclass(frozen=True)
class GlmFamily:
    link_kind: str
    S_radius: float
    c_mu: float
    k_mu: float
    R_max: float

    @classmethod
    def make(cls, link_kind: str = "logistic", S_radius: float = 1.0, noise_bound: float = 1.0) -> "GlmFamily":
        c_mu, k_mu, R_max = lipschitz_constants(link_kind, S_radius, noise_bound)
        return cls(link_kind, float(S_radius), c_mu, k_mu, R_max)

    def __post_init__(self):
        if not 0 < self.c_mu <= self.k_mu:
            raise NumericDomainError(f"need 0 < c_mu <= k_mu, got {self.c_mu}, {self.k_mu}")

    @property
    def grad_bound(self) -> float:
        """G = sqrt(k_mu^2 S^2 + R_max^2), bound on |mu(x^T theta) - y|."""
        return float(np.sqrt(self.k_mu**2 * self.S_radius**2 + self.R_max**2))

    def mean(self, z):
        """Vectorized inverse link."""
        if self.link_kind == "logistic":
            return expit(z)
        return np.asarray(z, dtype=float) if np.ndim(z) else float(z)


def _finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise NumericDomainError("non-finite input")


def link_value(fam: GlmFamily, z: float) -> float:
    _finite(z)
    return float(fam.mean(float(z)))


def _log_partition(fam: GlmFamily, z):
    if fam.link_kind == "logistic":
        # log(1 + e^z) without overflow
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return 0.5 * np.square(z)


def _check_support(fam: GlmFamily, y):
    if fam.link_kind == "logistic" and not np.all((y == 0) | (y == 1)):
        raise NumericDomainError("logistic rewards must be 0 or 1")


def loss(fam: GlmFamily, z: float, y: float) -> float:
    """Negative log-likelihood -y z + m(z)."""
    _finite(z, y)
    _check_support(fam, np.asarray(y))
    return float(-y * z + _log_partition(fam, z))


def loss_gradient(fam: GlmFamily, x, theta, y: float):
    """Gradient of l(x^T theta, y) in theta: x (mu(x^T theta) - y)."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _finite(x, theta, y)
    _check_support(fam, np.asarray(y))
    return x * (float(fam.mean(float(x @ theta))) - y)


def _unpack(data):
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        X, y = data
    else:
        if len(data) == 0:
            raise NumericDomainError("client data is empty")
        X = np.array([np.asarray(p[0], dtype=float) for p in data])
        y = np.array([float(p[1]) for p in data])
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise NumericDomainError("client data is empty")
    return X, y


def batch_objective(fam: GlmFamily, data, theta, lam: float, t: int, N: int) -> float:
    """Per-client objective F_{t,i}(theta).

    ``(1/t) sum_s l(x_s^T theta, y_s) + lam/(2 N t) ||theta||^2``. With this
    regularizer the client mean over N equally sized clients is exactly the
    regularized negative log-likelihood divided by N t, whose gradient has the
    ``lam/(N t)`` term used by the distributed solver.
    ``data`` is either a list of ``(x, y)`` pairs or an ``(X, y)`` array pair.
    """
    X, y = _unpack(data)
    if len(y) != t:
        raise NumericDomainError(f"data holds {len(y)} samples but t={t}")
    if not lam > 0:
        raise NumericDomainError("lambda must be positive")
    theta = np.asarray(theta, dtype=float)
    z = X @ theta
    total = float(np.sum(-y * z + _log_partition(fam, z)))
    return total / t + lam / (2.0 * N * t) * float(theta @ theta)


def batch_gradient(fam: GlmFamily, data, theta, lam: float, t: int, N: int):
    """Gradient of :func:`batch_objective`."""
    X, y = _unpack(data)
    if len(y) != t:
        raise NumericDomainError(f"data holds {len(y)} samples but t={t}")
    if not lam > 0:
        raise NumericDomainError("lambda must be positive")
    theta = np.asarray(theta, dtype=float)
    resid = fam.mean(X @ theta) - y
    return X.T @ resid / t + lam / (N * t) * theta


def global_objective(fam: GlmFamily, X, y, theta, lam: float) -> float:
    """Regularized NLL averaged over all n samples: (sum l + lam/2 |theta|^2) / n.

    Equals the client mean of :func:`batch_objective` when every client holds
    the same number of samples.
    """
    n = len(y)
    z = X @ theta
    return (float(np.sum(-y * z + _log_partition(fam, z))) + 0.5 * lam * float(theta @ theta)) / n


def global_gradient(fam: GlmFamily, X, y, theta, lam: float):
    n = len(y)
    return (X.T @ (fam.mean(X @ theta) - y) + lam * theta) / n


def global_hessian(fam: GlmFamily, X, theta, lam: float):
    """Hessian of the *summed* regularized NLL (not divided by n)."""
    z = X @ theta
    if fam.link_kind == "logistic":
        s = expit(z)
        w = s * (1.0 - s)
    else:
        w = np.ones_like(z)
    return (X * w[:, None]).T @ X + lam * np.eye(X.shape[1])
