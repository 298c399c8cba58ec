"""Linear algebra helpers and random variate generators used by the sampler.

All samplers take an explicit :class:`numpy.random.Generator`; nothing here
touches global random state.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit as _expit

LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails Cholesky factorization."""


class DegreesOfFreedomTooSmall(ValueError):
    pass


class DomainError(ValueError):
    pass


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct ids give statistically independent sequences and the same pair
    always reproduces the same draws.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def cholesky(A, jitter: bool = False) -> np.ndarray:
    """Lower Cholesky factor of ``A``.

    With ``jitter=True`` a failed factorization is retried once after adding
    ``1e-8 * trace/dim`` to the diagonal (used inside the sampler only).
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        if not jitter:
            raise NotPositiveDefinite("matrix is not positive definite") from None
    dim = A.shape[-1]
    eps = 1e-8 * np.trace(A, axis1=-2, axis2=-1) / dim
    try:
        return np.linalg.cholesky(A + np.multiply.outer(eps, np.eye(dim)))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("matrix is not positive definite after jitter") from None


def is_spd(A, rtol: float = 1e-12) -> bool:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        return False
    scale = max(np.abs(A).max(), 1e-300)
    if np.abs(A - A.T).max() > rtol * scale:
        return False
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def spd_inverse(A, jitter: bool = False) -> np.ndarray:
    L = cholesky(A, jitter=jitter)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def sample_mvn(mean, chol, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mean, chol @ chol.T)."""
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    if chol.shape != (mean.shape[0], mean.shape[0]):
        raise ValueError("mean and chol dimensions disagree")
    return mean + chol @ rng.standard_normal(mean.shape[0])


def sample_mvn_precision(mean, prec_chol, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mean, P^-1) given the lower Cholesky factor of P.

    Works on stacked inputs: ``mean`` (..., D), ``prec_chol`` (..., D, D).
    """
    z = rng.standard_normal(np.shape(mean))
    # x = mean + L^-T z  has covariance (L L^T)^-1
    return mean + _solve_lower_t(prec_chol, z)


def _solve_lower_t(L, z):
    """Solve L^T x = z for stacked lower-triangular L."""
    L = np.asarray(L)
    if L.ndim == 2:
        return solve_triangular(L, z, lower=True, trans="T")
    return np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]


def mvn_logpdf(x, mean, cov) -> float:
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    r = solve_triangular(L, x - mean, lower=True)
    D = x.shape[0]
    return float(-0.5 * (D * LOG_2PI + r @ r) - np.log(np.diag(L)).sum())


def mvn_logpdf_precision(x, mean, prec_chol) -> np.ndarray:
    """Log N(x; mean, P^-1) with ``prec_chol`` the Cholesky factor of P.

    Broadcasts over leading axes of ``x``/``mean``/``prec_chol``.
    """
    r = np.einsum("...ji,...j->...i", prec_chol, x - mean)
    D = np.shape(x)[-1]
    logdet = np.log(np.diagonal(prec_chol, axis1=-2, axis2=-1)).sum(-1)
    return -0.5 * (D * LOG_2PI + (r * r).sum(-1)) + logdet


def wishart_factor(df: float, scale_chol, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Lower Cholesky factor(s) of W(df, scale) draws, scale = L L^T.

    Bartlett: W = (L A)(L A)^T with A lower triangular, A_ii^2 ~ chi2(df - i)
    and standard normal entries below the diagonal.
    """
    L = np.asarray(scale_chol, dtype=float)
    D = L.shape[0]
    if not df > D - 1:
        raise DegreesOfFreedomTooSmall(f"df={df} must exceed dim-1={D - 1}")
    shape = () if size is None else (size,)
    A = np.zeros(shape + (D, D))
    A[..., np.arange(D), np.arange(D)] = np.sqrt(rng.chisquare(df - np.arange(D), size=shape + (D,)))
    rows, cols = np.tril_indices(D, -1)
    A[..., rows, cols] = rng.standard_normal(shape + (len(rows),))
    return L @ A


def sample_wishart(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Draw from W(df, scale) with E[W] = df * scale."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    LA = wishart_factor(df, cholesky(scale, jitter=True), rng)
    W = LA @ LA.T
    return 0.5 * (W + W.T)


def sample_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw parameterized by shape and rate (mean shape/rate)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("gamma shape and rate must be positive")
    out = rng.gamma(shape, 1.0 / rate, size=size)
    return float(out) if np.ndim(out) == 0 else out


def sample_binomial(n, p, rng: np.random.Generator):
    n = np.asarray(n)
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    out = rng.binomial(n, p)
    return int(out) if np.ndim(out) == 0 else out


def expit(x):
    return _expit(x)


def logit(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("logit is only defined on the open interval (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out
