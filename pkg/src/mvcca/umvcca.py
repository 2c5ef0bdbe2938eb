"""Unilateral matrix-variate CCA.

Both views share the row count ``m`` and are concatenated side by side,
``X = [X1, X2]`` (``m x (n1+n2)``), giving the one-sided factor model
``X = Z R^T + Xi`` with ``Z ~ MN(0, I_m, I)`` and
``Xi ~ MN(0, I_m, blockdiag(PsiR1, PsiR2))``.  Rows are independent, so EM
is ordinary factor analysis over ``m * N`` row vectors with a
block-diagonal noise covariance.

The left-sided variant is obtained by transposing both views before
fitting (see :meth:`PairedMatrixDataset.transposed`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dataset import PairedMatrixDataset
from .errors import NumericalError, StructuralError
from .matvar import (
    DEFAULT_POLICY,
    LOG_2PI,
    SpdPolicy,
    psd_floor,
    spd_inverse,
    spd_inverse_and_logdet,
    symmetrize,
)
from .trace import TraceRow


@dataclass(frozen=True)
class UmvccaModel:
    R: np.ndarray
    PsiR1: np.ndarray
    PsiR2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    @property
    def n1(self) -> int:
        return self.PsiR1.shape[0]

    @property
    def R1(self) -> np.ndarray:
        return self.R[:self.n1]

    @property
    def R2(self) -> np.ndarray:
        return self.R[self.n1:]

    @property
    def m(self) -> int:
        return self.mean1.shape[0]

    @property
    def d2(self) -> int:
        return self.R.shape[1]

    @property
    def PsiR(self) -> np.ndarray:
        return sla.block_diag(self.PsiR1, self.PsiR2)

    def posterior_row_cov(self, policy: SpdPolicy = DEFAULT_POLICY) -> np.ndarray:
        """``S = (R^T PsiR^{-1} R + I)^{-1}``, shared by every row of ``Z``."""
        Pr = _block_inverse(self.PsiR1, self.PsiR2, policy) @ self.R
        return spd_inverse(self.R.T @ Pr + np.eye(self.d2), policy, "S^{-1}")


def _block_inverse(P1, P2, policy):
    return sla.block_diag(spd_inverse(P1, policy, "PsiR1"), spd_inverse(P2, policy, "PsiR2"))


def _stacked(pairs: PairedMatrixDataset, mean1, mean2) -> np.ndarray:
    pairs.require_both()
    if pairs.shape1[0] != pairs.shape2[0]:
        raise StructuralError(
            f"views must share the row count (got {pairs.shape1[0]} and {pairs.shape2[0]})")
    X1, X2 = pairs.centered(mean1, mean2)
    return np.concatenate([X1, X2], axis=2)


def _loglik_from_scatter(R, PsiR, scatter, N, m, policy):
    p = R.shape[0]
    inv, logdet = spd_inverse_and_logdet(R @ R.T + PsiR, policy, "R R^T + PsiR")
    return -0.5 * N * (m * p * LOG_2PI + m * logdet + float(np.sum(inv * scatter)))


def umvcca_loglik(model: UmvccaModel, pairs: PairedMatrixDataset,
                  policy: SpdPolicy = DEFAULT_POLICY) -> float:
    """Sum over samples of ``log MN(X_n; 0, I_m, R R^T + PsiR)`` on centered data."""
    X = _stacked(pairs, model.mean1, model.mean2)
    if X.shape[1:] != (model.m, model.R.shape[0]):
        raise StructuralError(f"data shape {X.shape[1:]} does not match the model")
    N = len(X)
    scatter = np.einsum("nij,nik->jk", X, X) / N
    return _loglik_from_scatter(model.R, model.PsiR, scatter, N, model.m, policy)


def umvcca_fit(pairs: PairedMatrixDataset, d2: int, max_iters: int = 500,
               tol: float = 1e-7, seed: int = 0, policy: SpdPolicy = DEFAULT_POLICY,
               init: UmvccaModel | None = None):
    """Fit by EM.  Returns ``(model, trace)``.

    ``R`` starts at uniform(0, 1) entries and both noise blocks at the
    identity (unless ``init`` is given).  Iteration stops when the relative
    change in log-likelihood falls below ``tol``.
    """
    X = _stacked(pairs, pairs.mean1, pairs.mean2)
    N, m, p = X.shape
    n1 = pairs.shape1[1]
    if N < 2:
        raise StructuralError("need at least two samples")
    if not 1 <= d2 <= p:
        raise StructuralError(f"d2={d2} must lie in [1, {p}]")
    scatter = symmetrize(np.einsum("nij,nik->jk", X, X) / N)

    if init is None:
        R = np.random.default_rng(seed).uniform(size=(p, d2))
        Psi1, Psi2 = np.eye(n1), np.eye(p - n1)
    else:
        R, Psi1, Psi2 = init.R.copy(), init.PsiR1.copy(), init.PsiR2.copy()

    prev = _loglik_from_scatter(R, sla.block_diag(Psi1, Psi2), scatter, N, m, policy)
    trace = []
    for it in range(1, max_iters + 1):
        Psi_inv = _block_inverse(Psi1, Psi2, policy)
        S = spd_inverse(R.T @ Psi_inv @ R + np.eye(d2), policy, "S^{-1}")
        B = scatter @ Psi_inv @ R @ S
        inner = symmetrize(m * S + S @ R.T @ Psi_inv @ B)
        R_new = np.linalg.solve(inner, B.T).T
        Psi_full = (scatter - B @ R_new.T) / m
        Psi1_new = psd_floor(Psi_full[:n1, :n1])
        Psi2_new = psd_floor(Psi_full[n1:, n1:])
        deltas = {"R1": float(np.linalg.norm(R_new[:n1] - R[:n1])),
                  "R2": float(np.linalg.norm(R_new[n1:] - R[n1:]))}
        R, Psi1, Psi2 = R_new, Psi1_new, Psi2_new
        ll = _loglik_from_scatter(R, sla.block_diag(Psi1, Psi2), scatter, N, m, policy)
        if not math.isfinite(ll):
            raise NumericalError(f"UMVCCA log-likelihood became non-finite at iteration {it}")
        trace.append(TraceRow(it, ll, deltas))
        if abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
    return UmvccaModel(R, Psi1, Psi2, pairs.mean1, pairs.mean2), trace


def umvcca_posterior_mean(model: UmvccaModel, X1=None, X2=None,
                          policy: SpdPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``E[Z | X] = X_c PsiR^{-1} R S`` (``m x d2``, or stacked for batches).

    An absent view is replaced by its training mean, i.e. zeros after
    centering.
    """
    if X1 is None and X2 is None:
        raise StructuralError("at least one view must be given")
    centered = []
    for X, mu in ((X1, model.mean1), (X2, model.mean2)):
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.shape[-2:] != mu.shape:
                raise StructuralError(f"input shape {X.shape[-2:]} does not match {mu.shape}")
            X = X - mu
        centered.append(X)
    lead = next(X for X in centered if X is not None).shape[:-2]
    Xc = np.concatenate([np.zeros(lead + mu.shape) if X is None else X
                         for X, mu in zip(centered, (model.mean1, model.mean2))], axis=-1)
    Psi_inv = _block_inverse(model.PsiR1, model.PsiR2, policy)
    S = spd_inverse(model.R.T @ Psi_inv @ model.R + np.eye(model.d2), policy, "S^{-1}")
    return Xc @ (Psi_inv @ model.R @ S)


def umvcca_reconstruct(model: UmvccaModel, Z: np.ndarray, view: int) -> np.ndarray:
    """``Z R_view^T + mean_view``."""
    if view == 1:
        return Z @ model.R1.T + model.mean1
    if view == 2:
        return Z @ model.R2.T + model.mean2
    raise StructuralError(f"view must be 1 or 2, got {view!r}")
