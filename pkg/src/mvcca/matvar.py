"""Matrix-variate normal kernel and the symmetric linear algebra used everywhere.

Conventions
-----------
``vec`` stacks columns (Fortran order).  If ``X ~ MN(M, Sigma, Phi)`` with
``Sigma`` the ``m x m`` column covariance and ``Phi`` the ``n x n`` row
covariance, then ``vec(X) ~ N(vec(M), kron(Phi, Sigma))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, StructuralError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SpdPolicy:
    """How symmetric positive definite matrices are regularized before use.

    ``jitter`` is relative: the ridge added is ``jitter * mean(|diag(A)|)``.
    A factorization whose condition number exceeds ``max_condition`` is
    refused with :class:`NumericalError`.
    """

    jitter: float = 1e-9
    max_condition: float = 1e9

    def __post_init__(self):
        if not self.jitter >= 0:
            raise StructuralError(f"jitter must be non-negative, got {self.jitter}")
        if not self.max_condition > 1:
            raise StructuralError(f"max_condition must exceed 1, got {self.max_condition}")


DEFAULT_POLICY = SpdPolicy()
EXACT = SpdPolicy(jitter=0.0, max_condition=math.inf)


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stacked vectorization; batches ``(..., m, n)`` map to ``(..., m*n)``."""
    X = np.asarray(X)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def unvec(v: np.ndarray, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (n, m)), -1, -2)


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _check_square(A: np.ndarray, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructuralError(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def jitter_amount(A: np.ndarray, policy: SpdPolicy) -> float:
    if policy.jitter == 0:
        return 0.0
    scale = float(np.mean(np.abs(np.diag(A)))) if A.size else 0.0
    return policy.jitter * (scale if scale > 0 else 1.0)


def spd_eigh(A: np.ndarray, policy: SpdPolicy = DEFAULT_POLICY,
             name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the jittered, symmetrized ``A``.

    Raises :class:`NumericalError` naming ``name`` when the result is not
    positive definite or is too badly conditioned for ``policy``.
    """
    A = _check_square(A, name)
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{name} has non-finite entries")
    k = A.shape[0]
    Aj = symmetrize(A) + jitter_amount(A, policy) * np.eye(k)
    w, V = np.linalg.eigh(Aj)
    if k == 0:
        return w, V
    if w[0] <= 0:
        raise NumericalError(
            f"{name} is not positive definite after jitter (min eigenvalue {w[0]:.3e})")
    cond = w[-1] / w[0]
    if cond > policy.max_condition:
        raise NumericalError(
            f"{name} is singular to working precision after jitter "
            f"(condition number {cond:.3e} > {policy.max_condition:.1e})")
    return w, V


def spd_inverse(A: np.ndarray, policy: SpdPolicy = DEFAULT_POLICY,
                name: str = "matrix") -> np.ndarray:
    """Inverse of ``A + jitter*I`` through its eigendecomposition."""
    w, V = spd_eigh(A, policy, name)
    return symmetrize((V / w) @ V.T)


def spd_logdet(A: np.ndarray, policy: SpdPolicy = DEFAULT_POLICY,
               name: str = "matrix") -> float:
    w, _ = spd_eigh(A, policy, name)
    return float(np.sum(np.log(w)))


def spd_inverse_and_logdet(A, policy=DEFAULT_POLICY, name="matrix"):
    w, V = spd_eigh(A, policy, name)
    return symmetrize((V / w) @ V.T), float(np.sum(np.log(w)))


def spd_inv_sqrt(A: np.ndarray, policy: SpdPolicy = DEFAULT_POLICY,
                 name: str = "matrix") -> np.ndarray:
    w, V = spd_eigh(A, policy, name)
    return symmetrize((V / np.sqrt(w)) @ V.T)


def psd_floor(A: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below at ``floor``."""
    w, V = np.linalg.eigh(symmetrize(A))
    if w[0] >= floor:
        return symmetrize(A)
    return symmetrize((V * np.maximum(w, floor)) @ V.T)


def sign_normalize(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def sym_geig(A: np.ndarray, B: np.ndarray,
             policy: SpdPolicy = DEFAULT_POLICY) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``A v = lam B v`` for symmetric ``A`` and SPD ``B``.

    Returns
    -------
    eigenvalues : ndarray, shape (k,)
        Sorted descending.
    eigenvectors : ndarray, shape (k, k)
        Columns normalized so that ``V.T @ B @ V = I`` and signed so each
        column's largest-magnitude entry is positive.
    """
    A = _check_square(A, "A")
    B = _check_square(B, "B")
    if A.shape != B.shape:
        raise StructuralError(f"A {A.shape} and B {B.shape} differ in shape")
    tol = 1e-10 * max(1.0, float(np.max(np.abs(A)))) if A.size else 0.0
    if A.size and np.max(np.abs(A - A.T)) > tol:
        raise StructuralError("A is not symmetric")
    w, V = spd_eigh(B, policy, "B")
    b_inv_sqrt = (V / np.sqrt(w)) @ V.T
    reduced = symmetrize(b_inv_sqrt @ A @ b_inv_sqrt)
    lam, U = np.linalg.eigh(reduced)
    order = np.argsort(lam)[::-1]
    return lam[order], sign_normalize(b_inv_sqrt @ U[:, order])


@dataclass(frozen=True)
class MatrixNormalParams:
    """Parameters of ``MN(mean, col_cov, row_cov)``."""

    mean: np.ndarray
    col_cov: np.ndarray
    row_cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        col = _check_square(self.col_cov, "col_cov")
        row = _check_square(self.row_cov, "row_cov")
        if mean.shape != (col.shape[0], row.shape[0]):
            raise StructuralError(
                f"mean shape {mean.shape} does not match covariances "
                f"({col.shape[0]}, {row.shape[0]})")
        for name, S in (("col_cov", col), ("row_cov", row)):
            if np.max(np.abs(S - S.T)) > 1e-12 * max(1.0, float(np.max(np.abs(S)))):
                raise StructuralError(f"{name} is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "col_cov", col)
        object.__setattr__(self, "row_cov", row)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


def log_density(X: np.ndarray, params: MatrixNormalParams,
                policy: SpdPolicy = EXACT) -> float:
    """Log of the matrix-variate normal density at ``X``.

    By default the covariances are used exactly (no jitter); pass a
    :class:`SpdPolicy` to regularize them first.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape != params.shape:
        raise StructuralError(f"X has shape {X.shape}, expected {params.shape}")
    m, n = params.shape
    col_inv, col_logdet = spd_inverse_and_logdet(params.col_cov, policy, "col_cov")
    row_inv, row_logdet = spd_inverse_and_logdet(params.row_cov, policy, "row_cov")
    D = X - params.mean
    quad = float(np.sum((col_inv @ D @ row_inv) * D))
    return -0.5 * (m * n * LOG_2PI + n * col_logdet + m * row_logdet + quad)


def _cholesky(A: np.ndarray, policy: SpdPolicy, name: str) -> np.ndarray:
    spd_eigh(A, policy, name)
    Aj = symmetrize(A) + jitter_amount(A, policy) * np.eye(A.shape[0])
    return np.linalg.cholesky(Aj)


def sample(params: MatrixNormalParams, seed: int, size: int | None = None,
           policy: SpdPolicy = EXACT) -> np.ndarray:
    """Draw ``M + A E B^T`` with ``A A^T = col_cov`` and ``B B^T = row_cov``.

    Returns one ``m x n`` matrix, or ``size`` of them stacked on axis 0.
    """
    A = _cholesky(params.col_cov, policy, "col_cov")
    B = _cholesky(params.row_cov, policy, "row_cov")
    rng = np.random.default_rng(seed)
    shape = params.shape if size is None else (size,) + params.shape
    E = rng.standard_normal(shape)
    return params.mean + A @ E @ B.T


def to_vec_normal(params: MatrixNormalParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``vec(X)``: ``vec(M)`` and ``kron(row_cov, col_cov)``."""
    return vec(params.mean), np.kron(params.row_cov, params.col_cov)


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                    policy: SpdPolicy = EXACT) -> float:
    """Multivariate normal log-density (used for small dense checks)."""
    x = np.asarray(x, dtype=float).ravel()
    d = x - np.asarray(mean, dtype=float).ravel()
    inv, logdet = spd_inverse_and_logdet(cov, policy, "cov")
    return -0.5 * (d.size * LOG_2PI + logdet + float(d @ inv @ d))


def psd_within(A: np.ndarray, tol: float = 1e-10) -> bool:
    """True when ``A`` is symmetric and its smallest eigenvalue is >= -tol (relative)."""
    A = np.asarray(A, dtype=float)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > tol * scale:
        return False
    return bool(np.linalg.eigvalsh(symmetrize(A))[0] >= -tol * scale)


def random_spd(rng: np.random.Generator, k: int, ridge: float = 0.5) -> np.ndarray:
    """Random well-conditioned SPD matrix, for tests and demos."""
    A = rng.standard_normal((k, k))
    return symmetrize(A @ A.T / k + ridge * np.eye(k))
