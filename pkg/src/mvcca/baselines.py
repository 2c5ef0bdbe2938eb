"""Classical CCA, two-dimensional CCA, and probabilistic CCA.

These serve as comparison methods and, in the case of 2DCCA, as the
initializer for the bilateral model.
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
    sign_normalize,
    spd_eigh,
    spd_inverse,
    spd_inverse_and_logdet,
    sym_geig,
    symmetrize,
)
from .trace import TraceRow


def _as_views(view1, view2):
    X1 = np.asarray(view1, dtype=float)
    X2 = np.asarray(view2, dtype=float)
    if X1.ndim != 2 or X2.ndim != 2:
        raise StructuralError("views must be 2-D arrays of shape (N, dim)")
    if len(X1) != len(X2):
        raise StructuralError(f"views have {len(X1)} and {len(X2)} samples")
    if len(X1) < 2:
        raise StructuralError("need at least two samples")
    return X1, X2


def _check_rank(d, m1, m2):
    if not 1 <= d <= min(m1, m2):
        raise StructuralError(f"d={d} must lie in [1, min({m1}, {m2})]")


def _covariances(X1, X2):
    mu1, mu2 = X1.mean(axis=0), X2.mean(axis=0)
    A, B = X1 - mu1, X2 - mu2
    N = len(A)
    return mu1, mu2, symmetrize(A.T @ A / N), A.T @ B / N, symmetrize(B.T @ B / N)


# --- CCA ---------------------------------------------------------------------

@dataclass(frozen=True)
class CcaModel:
    W1: np.ndarray
    W2: np.ndarray
    correlations: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    @property
    def d(self) -> int:
        return self.W1.shape[1]


def cca_from_covariances(C11, C12, C22, d, policy: SpdPolicy = DEFAULT_POLICY):
    """Top-``d`` canonical pairs from (auto/cross) covariance blocks.

    Whitening both views turns the pair of generalized eigenproblems into a
    single SVD of ``C11^{-1/2} C12 C22^{-1/2}``; the left/right singular
    vectors map back to directions with unit projected variance.
    """
    w1, V1 = spd_eigh(C11, policy, "C11")
    w2, V2 = spd_eigh(C22, policy, "C22")
    iso1 = (V1 / np.sqrt(w1)) @ V1.T
    iso2 = (V2 / np.sqrt(w2)) @ V2.T
    U, s, Vt = np.linalg.svd(iso1 @ C12 @ iso2)
    W1 = iso1 @ U[:, :d]
    W2 = iso2 @ Vt[:d].T
    signed = sign_normalize(W1)
    flip = np.sign(np.sum(signed * W1, axis=0))
    return signed, W2 * flip, np.clip(s[:d], 0.0, 1.0)


def cca_fit(view1, view2, d: int, policy: SpdPolicy = DEFAULT_POLICY) -> CcaModel:
    """Classical CCA on row-sample matrices ``view1`` (N, m1) and ``view2`` (N, m2)."""
    X1, X2 = _as_views(view1, view2)
    _check_rank(d, X1.shape[1], X2.shape[1])
    mu1, mu2, C11, C12, C22 = _covariances(X1, X2)
    W1, W2, rho = cca_from_covariances(C11, C12, C22, d, policy)
    return CcaModel(W1, W2, rho, mu1, mu2)


def cca_project(model: CcaModel, x, view: int) -> np.ndarray:
    """``W_view^T (x - mean_view)`` for one vector or a batch of row vectors."""
    W, mu = {1: (model.W1, model.mean1), 2: (model.W2, model.mean2)}[_view(view)]
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(mu):
        raise StructuralError(f"input has dimension {x.shape[-1]}, view {view} expects {len(mu)}")
    return (x - mu) @ W


def _view(view) -> int:
    if view not in (1, 2):
        raise StructuralError(f"view must be 1 or 2, got {view!r}")
    return view


# --- 2DCCA -------------------------------------------------------------------

@dataclass(frozen=True)
class TdccaModel:
    L1: np.ndarray
    L2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    @property
    def d1(self) -> int:
        return self.L1.shape[1]

    @property
    def d2(self) -> int:
        return self.R1.shape[1]


def _paired_cca_block(S11, S12, S22, d, policy):
    """Leading ``d`` solutions of the stacked two-view eigenproblem.

    Each half is rescaled to unit variance under its own block.
    """
    m1 = len(S11)
    A = np.block([[np.zeros_like(S11), S12], [S12.T, np.zeros_like(S22)]])
    B = sla.block_diag(S11, S22)
    lam, V = sym_geig(symmetrize(A), B, policy)
    V = V[:, :d]
    P1, P2 = V[:m1], V[m1:]
    for P, S in ((P1, S11), (P2, S22)):
        var = np.einsum("ik,ij,jk->k", P, S, P)
        P /= np.sqrt(np.maximum(var, np.finfo(float).tiny))
    return lam[:d], P1, P2


def _leading_right_vectors(Xc, d):
    scatter = np.einsum("nij,nik->jk", Xc, Xc) / len(Xc)
    w, V = np.linalg.eigh(symmetrize(scatter))
    return sign_normalize(V[:, ::-1][:, :d])


def tdcca_fit(pairs: PairedMatrixDataset, d1: int, d2: int, max_iters: int = 200,
              tol: float = 1e-6, policy: SpdPolicy = DEFAULT_POLICY):
    """Two-dimensional CCA by alternating left/right eigenproblems.

    The right maps start at the leading eigenvectors of each view's column
    scatter, so the fit is deterministic.  Returns ``(model, trace)``; the
    trace objective is the leading eigenvalue of the left-side problem.
    """
    pairs.require_both()
    (m1, n1), (m2, n2) = pairs.shape1, pairs.shape2
    if len(pairs) < 2:
        raise StructuralError("need at least two samples")
    if not 1 <= d1 <= min(m1, m2):
        raise StructuralError(f"d1={d1} must lie in [1, {min(m1, m2)}]")
    if not 1 <= d2 <= min(n1, n2):
        raise StructuralError(f"d2={d2} must lie in [1, {min(n1, n2)}]")
    X1, X2 = pairs.centered()
    N = len(X1)
    R1, R2 = _leading_right_vectors(X1, d2), _leading_right_vectors(X2, d2)
    L1 = np.zeros((m1, d1))
    L2 = np.zeros((m2, d1))
    trace = []
    for it in range(1, max_iters + 1):
        Y1, Y2 = X1 @ R1, X2 @ R2
        S11 = np.einsum("nik,njk->ij", Y1, Y1) / N
        S12 = np.einsum("nik,njk->ij", Y1, Y2) / N
        S22 = np.einsum("nik,njk->ij", Y2, Y2) / N
        lam_l, L1n, L2n = _paired_cca_block(S11, S12, S22, d1, policy)

        U1 = np.swapaxes(X1, 1, 2) @ L1n
        U2 = np.swapaxes(X2, 1, 2) @ L2n
        T11 = np.einsum("nik,njk->ij", U1, U1) / N
        T12 = np.einsum("nik,njk->ij", U1, U2) / N
        T22 = np.einsum("nik,njk->ij", U2, U2) / N
        _, R1n, R2n = _paired_cca_block(T11, T12, T22, d2, policy)

        deltas = {
            "L1": float(np.linalg.norm(L1n - L1)), "L2": float(np.linalg.norm(L2n - L2)),
            "R1": float(np.linalg.norm(R1n - R1)), "R2": float(np.linalg.norm(R2n - R2)),
        }
        L1, L2, R1, R2 = L1n, L2n, R1n, R2n
        trace.append(TraceRow(it, float(lam_l[0]), deltas))
        if max(deltas.values()) < tol:
            break
    return TdccaModel(L1, L2, R1, R2, pairs.mean1, pairs.mean2), trace


def tdcca_project(model: TdccaModel, X, view: int) -> np.ndarray:
    """``L^T (X - mean) R`` for one matrix or a stack of matrices."""
    j = _view(view)
    L, R, mu = ((model.L1, model.R1, model.mean1) if j == 1
                else (model.L2, model.R2, model.mean2))
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != mu.shape:
        raise StructuralError(f"input shape {X.shape[-2:]} != view {view} shape {mu.shape}")
    return L.T @ (X - mu) @ R


# --- PCCA --------------------------------------------------------------------

@dataclass(frozen=True)
class PccaModel:
    W1: np.ndarray
    W2: np.ndarray
    Psi1: np.ndarray
    Psi2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def W(self) -> np.ndarray:
        return np.vstack([self.W1, self.W2])

    def joint_covariance(self) -> np.ndarray:
        W = self.W
        return W @ W.T + sla.block_diag(self.Psi1, self.Psi2)


def pcca_fit_ml(view1, view2, d: int, policy: SpdPolicy = DEFAULT_POLICY) -> PccaModel:
    """Closed-form maximum-likelihood PCCA.

    Loadings are ``C_jj U_j diag(rho)^{1/2}`` with ``U_j`` the canonical
    directions; the noise is the remaining covariance, floored to PSD.
    """
    X1, X2 = _as_views(view1, view2)
    _check_rank(d, X1.shape[1], X2.shape[1])
    mu1, mu2, C11, C12, C22 = _covariances(X1, X2)
    U1, U2, rho = cca_from_covariances(C11, C12, C22, d, policy)
    root = np.sqrt(rho)
    W1 = C11 @ U1 * root
    W2 = C22 @ U2 * root
    return PccaModel(W1, W2, psd_floor(C11 - W1 @ W1.T), psd_floor(C22 - W2 @ W2.T), mu1, mu2)


def pcca_loglik(model: PccaModel, view1, view2, policy: SpdPolicy = DEFAULT_POLICY) -> float:
    """Observed-data Gaussian log-likelihood of the stacked views."""
    X1, X2 = _as_views(view1, view2)
    X = np.hstack([X1 - model.mean1, X2 - model.mean2])
    N, p = X.shape
    inv, logdet = spd_inverse_and_logdet(model.joint_covariance(), policy, "W W^T + Psi")
    return -0.5 * N * (p * LOG_2PI + logdet) - 0.5 * float(np.sum((X @ inv) * X))


def _block_inverse(Psi1, Psi2, policy):
    return sla.block_diag(spd_inverse(Psi1, policy, "Psi1"), spd_inverse(Psi2, policy, "Psi2"))


def pcca_fit_em(view1, view2, d: int, max_iters: int = 1000, tol: float = 1e-8,
                seed: int = 0, policy: SpdPolicy = DEFAULT_POLICY,
                init: PccaModel | None = None):
    """PCCA by expectation-maximization.

    Starts from uniform(0, 1) loadings and identity noise unless ``init`` is
    given.  Stops once the relative log-likelihood change drops below
    ``tol``.  Returns ``(model, trace)``.
    """
    X1, X2 = _as_views(view1, view2)
    m1, m2 = X1.shape[1], X2.shape[1]
    _check_rank(d, m1, m2)
    mu1, mu2 = X1.mean(axis=0), X2.mean(axis=0)
    X = np.hstack([X1 - mu1, X2 - mu2])
    N = len(X)
    scatter = symmetrize(X.T @ X / N)

    if init is None:
        W = np.random.default_rng(seed).uniform(size=(m1 + m2, d))
        Psi1, Psi2 = np.eye(m1), np.eye(m2)
    else:
        W, Psi1, Psi2 = init.W.copy(), init.Psi1.copy(), init.Psi2.copy()

    def loglik(W, Psi1, Psi2):
        return pcca_loglik(PccaModel(W[:m1], W[m1:], Psi1, Psi2, mu1, mu2), X1, X2, policy)

    prev = loglik(W, Psi1, Psi2)
    trace = []
    for it in range(1, max_iters + 1):
        Psi_inv = _block_inverse(Psi1, Psi2, policy)
        M = spd_inverse(W.T @ Psi_inv @ W + np.eye(d), policy, "M")
        B = scatter @ Psi_inv @ W @ M
        W_new = np.linalg.solve(symmetrize(M + M @ W.T @ Psi_inv @ B), B.T).T
        Psi_full = scatter - B @ W_new.T
        # Block-diagonal constraint: the constrained maximizer keeps the diagonal blocks.
        Psi1_new = psd_floor(Psi_full[:m1, :m1])
        Psi2_new = psd_floor(Psi_full[m1:, m1:])
        deltas = {"W1": float(np.linalg.norm(W_new[:m1] - W[:m1])),
                  "W2": float(np.linalg.norm(W_new[m1:] - W[m1:]))}
        W, Psi1, Psi2 = W_new, Psi1_new, Psi2_new
        ll = loglik(W, Psi1, Psi2)
        if not math.isfinite(ll):
            raise NumericalError(f"PCCA log-likelihood became non-finite at iteration {it}")
        trace.append(TraceRow(it, ll, deltas))
        if abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
    return PccaModel(W[:m1], W[m1:], Psi1, Psi2, mu1, mu2), trace


def pcca_posterior_mean(model: PccaModel, x1=None, x2=None,
                        policy: SpdPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Posterior mean of the latent vector.

    A missing view is imputed by its training mean, so it adds no evidence
    but the posterior precision still counts both views.
    """
    if x1 is None and x2 is None:
        raise StructuralError("at least one view must be given")
    terms = []
    precision = np.eye(model.d)
    for x, W, Psi, mu in ((x1, model.W1, model.Psi1, model.mean1),
                          (x2, model.W2, model.Psi2, model.mean2)):
        Pw = spd_inverse(Psi, policy, "Psi") @ W
        precision = precision + W.T @ Pw
        if x is None:
            continue
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(mu):
            raise StructuralError(f"input has dimension {x.shape[-1]}, expected {len(mu)}")
        terms.append((x - mu) @ Pw)
    evidence = sum(terms[1:], terms[0])
    return evidence @ spd_inverse(precision, policy, "posterior precision")
