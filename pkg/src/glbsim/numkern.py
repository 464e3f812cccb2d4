"""Dense SPD matrix kernels.

``SpdMatrix`` keeps a symmetric positive-definite matrix together with its
inverse and log-determinant, and maintains both incrementally under rank-one
updates (Sherman-Morrison and the matrix determinant lemma). Every
``REFRESH_EVERY`` updates the caches are rebuilt from a Cholesky factorization
so round-off cannot accumulate without bound.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .errors import ConvergenceError, InternalConsistencyError, NumericDomainError

REFRESH_EVERY = 512
BISECTION_TOL = 1e-10
BISECTION_MAX_ITER = 200


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericDomainError("non-finite input")


class SpdMatrix:
    """Symmetric positive-definite matrix with cached inverse and log-det.

    Instances are mutated in place by :meth:`update`; use :meth:`copy` before
    handing a matrix to another owner.
    """

    __slots__ = ("entries", "inverse", "logdet", "_since_refresh")

    def __init__(self, entries, inverse=None, logdet=None):
        entries = np.array(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise NumericDomainError(f"expected a square matrix, got shape {entries.shape}")
        _check_finite(entries)
        self.entries = 0.5 * (entries + entries.T)
        if inverse is None or logdet is None:
            self.inverse, self.logdet = _dense_inverse_logdet(self.entries)
        else:
            self.inverse = np.array(inverse, dtype=float)
            self.logdet = float(logdet)
        self._since_refresh = 0

    @classmethod
    def scaled_identity(cls, dim: int, scale: float) -> "SpdMatrix":
        if dim < 1 or not scale > 0:
            raise NumericDomainError("need dim >= 1 and scale > 0")
        eye = np.eye(dim)
        return cls(scale * eye, eye / scale, dim * np.log(scale))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def copy(self) -> "SpdMatrix":
        out = SpdMatrix.__new__(SpdMatrix)
        out.entries = self.entries.copy()
        out.inverse = self.inverse.copy()
        out.logdet = self.logdet
        out._since_refresh = self._since_refresh
        return out

    def update(self, x) -> float:
        """Add ``x x^T`` in place and return the log-det increment."""
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        u = self.inverse @ x
        q = float(x @ u)
        denom = 1.0 + q
        if not denom > 0.0:
            raise InternalConsistencyError(f"1 + x^T M^-1 x = {denom} <= 0; inverse cache corrupted")
        self.entries += np.outer(x, x)
        self.inverse -= np.outer(u, u) / denom
        inc = float(np.log1p(q))
        self.logdet += inc
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY:
            self.refresh()
        return inc

    def add_dense(self, delta) -> None:
        """Add a symmetric PSD matrix and rebuild the caches densely."""
        self.entries = self.entries + delta
        self.entries = 0.5 * (self.entries + self.entries.T)
        self.refresh()

    def refresh(self) -> None:
        self.inverse, self.logdet = _dense_inverse_logdet(self.entries)
        self._since_refresh = 0

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim}, logdet={self.logdet:.6g})"


def _dense_inverse_logdet(entries):
    try:
        c, low = sla.cho_factor(entries, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError(f"matrix is not positive definite: {exc}") from None
    inv = sla.cho_solve((c, low), np.eye(entries.shape[0]), check_finite=False)
    inv = 0.5 * (inv + inv.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return inv, logdet


def rank_one_update(M: SpdMatrix, x) -> SpdMatrix:
    """Return a new matrix equal to ``M + x x^T``; ``M`` is left untouched."""
    out = M.copy()
    out.update(x)
    return out


def mahalanobis_norm(x, M: SpdMatrix) -> float:
    """sqrt(x^T M^{-1} x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    q = float(x @ M.inverse @ x)
    return float(np.sqrt(q)) if q > 0.0 else 0.0


def mahalanobis_norms(X, M: SpdMatrix):
    """Row-wise :func:`mahalanobis_norm` for a stack of vectors."""
    X = np.asarray(X, dtype=float)
    q = np.einsum("kd,de,ke->k", X, M.inverse, X)
    return np.sqrt(np.maximum(q, 0.0))


def solve_spd(M: SpdMatrix, v):
    """M^{-1} v using the cached inverse."""
    v = np.asarray(v, dtype=float)
    _check_finite(v)
    return M.inverse @ v


def logdet_ratio(M_now: SpdMatrix, logdet_snapshot: float) -> float:
    """log det(M_now) - logdet_snapshot; never meaningfully negative."""
    r = M_now.logdet - logdet_snapshot
    if r < -1e-9:
        raise InternalConsistencyError(f"log-det ratio {r} < 0: snapshot is not a predecessor of M")
    return max(r, 0.0)


def ball_projection(theta_prime, M, radius: float):
    """Closest point of the Euclidean ball ``||theta|| <= radius`` in the M-norm.

    ``M`` may be an :class:`SpdMatrix` or a plain symmetric array. Interior
    points are returned unchanged. Otherwise the minimizer is
    ``(M + nu I)^{-1} M theta'`` with the multiplier ``nu >= 0`` located by
    bisection on the decreasing map ``nu -> ||theta(nu)||``.
    """
    theta_prime = np.asarray(theta_prime, dtype=float)
    _check_finite(theta_prime)
    if not radius > 0:
        raise NumericDomainError("radius must be positive")
    if float(np.linalg.norm(theta_prime)) <= radius:
        return theta_prime.copy()

    mat = M.entries if isinstance(M, SpdMatrix) else np.asarray(M, dtype=float)
    evals, evecs = np.linalg.eigh(mat)
    coef = evecs.T @ theta_prime

    def norm_at(nu):
        return float(np.linalg.norm(evals * coef / (evals + nu)))

    lo, hi = 0.0, max(float(evals[-1]), 1e-12)
    for _ in range(BISECTION_MAX_ITER):
        if norm_at(hi) < radius:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ConvergenceError("ball_projection could not bracket the multiplier")

    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        gap = norm_at(mid) - radius
        if abs(gap) <= BISECTION_TOL or mid <= lo or mid >= hi:
            break
        if gap > 0:
            lo = mid
        else:
            hi = mid
    nu = mid
    out = evecs @ (evals * coef / (evals + nu))
    if abs(float(np.linalg.norm(out)) - radius) > 1e-9:
        raise ConvergenceError(
            f"ball_projection bisection ended {abs(float(np.linalg.norm(out)) - radius):.3g} from the sphere"
        )
    return out
