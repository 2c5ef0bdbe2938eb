"""Bilateral matrix-variate CCA fitted by variational EM.

Each view follows ``X^j = L^j Z R^j^T + Xi^j`` with a shared latent
``Z ~ MN(0, I_d1, I_d2)`` and noise ``Xi^j ~ MN(0, PsiL^j, PsiR^j)``
(column-stacked vec covariance ``PsiR^j kron PsiL^j``).  The variational
family is ``q(Z_n) = MN(C_n, O, S)`` with ``O`` and ``S`` shared by all
samples.

Throughout, ``AL^j = L^j^T PsiL^j^{-1} L^j`` and
``AR^j = R^j^T PsiR^j^{-1} R^j``.  Under ``q``,

* ``E[(Z - C) A (Z - C)^T] = tr(A S) O``
* ``E[(Z - C)^T B (Z - C)] = tr(B O) S``

which is all the bound and the updates need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .baselines import tdcca_fit
from .dataset import PairedMatrixDataset
from .errors import NumericalError, StructuralError
from .matvar import (
    DEFAULT_POLICY,
    LOG_2PI,
    SpdPolicy,
    psd_floor,
    spd_eigh,
    spd_inverse,
    spd_inverse_and_logdet,
    symmetrize,
)
from .trace import TraceRow

# 2DCCA initialization meets rank-deficient scatter matrices whenever N is
# small relative to the image size; a larger ridge keeps it well posed.
INIT_POLICY = SpdPolicy(jitter=1e-6, max_condition=1e12)


@dataclass(frozen=True)
class BmvccaModel:
    L1: np.ndarray
    L2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    PsiL1: np.ndarray
    PsiL2: np.ndarray
    PsiR1: np.ndarray
    PsiR2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    def __post_init__(self):
        d1, d2 = self.L1.shape[1], self.R1.shape[1]
        for j in (1, 2):
            L, R, PL, PR, mu = self.view(j)
            m, n = mu.shape
            if L.shape != (m, d1) or R.shape != (n, d2):
                raise StructuralError(
                    f"view {j}: loadings {L.shape}, {R.shape} do not fit mean {mu.shape}"
                    f" with latent {d1}x{d2}")
            if PL.shape != (m, m) or PR.shape != (n, n):
                raise StructuralError(f"view {j}: noise covariances have the wrong shape")

    @property
    def d1(self) -> int:
        return self.L1.shape[1]

    @property
    def d2(self) -> int:
        return self.R1.shape[1]

    def view(self, j: int):
        """``(L, R, PsiL, PsiR, mean)`` of view ``j``."""
        if j == 1:
            return self.L1, self.R1, self.PsiL1, self.PsiR1, self.mean1
        if j == 2:
            return self.L2, self.R2, self.PsiL2, self.PsiR2, self.mean2
        raise StructuralError(f"view must be 1 or 2, got {j!r}")


@dataclass(frozen=True)
class VariationalState:
    C: np.ndarray  # (N, d1, d2)
    O: np.ndarray
    S: np.ndarray

    @classmethod
    def prior(cls, N: int, d1: int, d2: int) -> "VariationalState":
        return cls(np.zeros((N, d1, d2)), np.eye(d1), np.eye(d2))


@dataclass(frozen=True)
class _ViewStats:
    """Inverses and quadratic forms of one view at fixed parameters."""

    L: np.ndarray
    R: np.ndarray
    PsiL_inv: np.ndarray
    PsiR_inv: np.ndarray
    logdet_L: float
    logdet_R: float
    AL: np.ndarray
    AR: np.ndarray


def _stats(model: BmvccaModel, j: int, policy: SpdPolicy) -> _ViewStats:
    L, R, PL, PR, _ = model.view(j)
    PLi, ldl = spd_inverse_and_logdet(PL, policy, f"PsiL{j}")
    PRi, ldr = spd_inverse_and_logdet(PR, policy, f"PsiR{j}")
    return _ViewStats(L, R, PLi, PRi, ldl, ldr, symmetrize(L.T @ PLi @ L),
                      symmetrize(R.T @ PRi @ R))


def _centered_views(model: BmvccaModel, pairs: PairedMatrixDataset):
    pairs.require_both()
    if pairs.shape1 != model.mean1.shape or pairs.shape2 != model.mean2.shape:
        raise StructuralError(
            f"data shapes {pairs.shape1}, {pairs.shape2} do not match the model"
            f" ({model.mean1.shape}, {model.mean2.shape})")
    return pairs.centered(model.mean1, model.mean2)


def _check_state(model: BmvccaModel, state: VariationalState, N: int):
    if state.C.shape != (N, model.d1, model.d2):
        raise StructuralError(f"state means have shape {state.C.shape}, expected "
                              f"{(N, model.d1, model.d2)}")
    if state.O.shape != (model.d1, model.d1) or state.S.shape != (model.d2, model.d2):
        raise StructuralError("state covariances do not match the latent size")


def _vec(B):
    return np.swapaxes(B, -1, -2).reshape(B.shape[:-2] + (-1,))


def _unvec(v, d1, d2):
    return np.swapaxes(v.reshape(v.shape[:-1] + (d2, d1)), -1, -2)


def _posterior_means(stats, centered, d1, d2, policy):
    """Solve ``(sum_j AR^j kron AL^j + I) vec C = vec(sum_j L^T PsiL^-1 X PsiR^-1 R)``.

    ``centered`` holds one entry per view, ``None`` for an absent view (zero
    evidence).  The system matrix is factored once for the whole batch.
    """
    system = np.eye(d1 * d2)
    rhs = 0.0
    for st, X in zip(stats, centered):
        system = system + np.kron(st.AR, st.AL)
        if X is not None:
            rhs = rhs + (st.L.T @ st.PsiL_inv) @ X @ (st.PsiR_inv @ st.R)
    w, V = spd_eigh(symmetrize(system), policy, "latent precision")
    sol = ((_vec(rhs) @ V) / w) @ V.T
    return _unvec(sol, d1, d2)


def variational_e_step(model: BmvccaModel, pairs: PairedMatrixDataset,
                       state: VariationalState,
                       policy: SpdPolicy = DEFAULT_POLICY) -> VariationalState:
    """Update ``O``, then ``S`` (using the new ``O``), then every ``C_n``."""
    X1, X2 = _centered_views(model, pairs)
    _check_state(model, state, len(X1))
    d1, d2 = model.d1, model.d2
    stats = (_stats(model, 1, policy), _stats(model, 2, policy))
    S = state.S
    O = d2 * spd_inverse(sum(np.trace(st.AR @ S) * st.AL for st in stats)
                         + np.trace(S) * np.eye(d1), policy, "O^{-1}")
    O = symmetrize(O)
    S = d1 * spd_inverse(sum(np.trace(st.AL @ O) * st.AR for st in stats)
                         + np.trace(O) * np.eye(d2), policy, "S^{-1}")
    S = symmetrize(S)
    C = _posterior_means(stats, (X1, X2), d1, d2, policy)
    return VariationalState(C, O, S)


def _gauge(PsiL, PsiR):
    """Rescale so ``tr(PsiL) = rows``; ``PsiR`` takes the inverse factor."""
    k = len(PsiL) / np.trace(PsiL)
    return PsiL * k, PsiR / k


def _m_step_view(L, R, PsiL, PsiR, X, state, policy, j):
    N, m, n = X.shape
    C, O, S = state.C, state.O, state.S

    PRi = spd_inverse(PsiR, policy, f"PsiR{j}")
    AR = R.T @ PRi @ R
    D = X - L @ C @ R.T
    P_L = np.einsum("nik,kl,njl->ij", D, PRi, D, optimize=True)
    PsiL = psd_floor(P_L / (N * n) + np.trace(AR @ S) * (L @ O @ L.T) / n)

    PLi = spd_inverse(PsiL, policy, f"PsiL{j}")
    AL = L.T @ PLi @ L
    P = np.einsum("nki,kl,nlj->ij", D, PLi, D, optimize=True)
    PsiR = psd_floor(P / (N * m) + np.trace(AL @ O) * (R @ S @ R.T) / m)

    PRi = spd_inverse(PsiR, policy, f"PsiR{j}")
    AR = R.T @ PRi @ R
    XR = X @ (PRi @ R)
    num = np.einsum("nik,nlk->il", XR, C)
    den = np.einsum("nik,kl,njl->ij", C, AR, C, optimize=True) + N * np.trace(AR @ S) * O
    L = np.linalg.solve(symmetrize(den), num.T).T

    AL = L.T @ PLi @ L
    XL = np.swapaxes(X, 1, 2) @ (PLi @ L)
    num = np.einsum("nik,nkl->il", XL, C)
    den = np.einsum("nki,kl,nlj->ij", C, AL, C, optimize=True) + N * np.trace(AL @ O) * S
    R = np.linalg.solve(symmetrize(den), num.T).T
    return L, R, PsiL, PsiR


def variational_m_step(model: BmvccaModel, pairs: PairedMatrixDataset,
                       state: VariationalState, policy: SpdPolicy = DEFAULT_POLICY,
                       gauge: bool = True) -> BmvccaModel:
    """Per view: ``PsiL``, ``PsiR``, ``L``, ``R`` in turn, each a coordinate maximizer.

    The residual scatters use ``D_n = X_n - L C_n R^T``; the variational
    covariance enters through the ``tr(.) L O L^T`` and ``tr(.) R S R^T``
    terms.  With ``gauge`` set, ``PsiL`` is finally rescaled to trace equal
    to its row count, which leaves the bound unchanged.
    """
    X1, X2 = _centered_views(model, pairs)
    _check_state(model, state, len(X1))
    out = {}
    for j, X in ((1, X1), (2, X2)):
        L, R, PL, PR, _ = model.view(j)
        L, R, PL, PR = _m_step_view(L, R, PL, PR, X, state, policy, j)
        if gauge:
            PL, PR = _gauge(PL, PR)
        out.update({f"L{j}": L, f"R{j}": R, f"PsiL{j}": PL, f"PsiR{j}": PR})
    return replace(model, **out)


def entropy(state: VariationalState, policy: SpdPolicy = DEFAULT_POLICY) -> float:
    """Entropy of one ``MN(C, O, S)`` factor."""
    d1, d2 = len(state.O), len(state.S)
    _, ldo = spd_inverse_and_logdet(state.O, policy, "O")
    _, lds = spd_inverse_and_logdet(state.S, policy, "S")
    return 0.5 * d1 * d2 * (1.0 + LOG_2PI) + 0.5 * (d2 * ldo + d1 * lds)


def lower_bound(model: BmvccaModel, pairs: PairedMatrixDataset, state: VariationalState,
                policy: SpdPolicy = DEFAULT_POLICY) -> float:
    """Evidence lower bound summed over samples."""
    X1, X2 = _centered_views(model, pairs)
    N = len(X1)
    _check_state(model, state, N)
    C, O, S = state.C, state.O, state.S
    d1, d2 = model.d1, model.d2
    total = 0.0
    for j, X in ((1, X1), (2, X2)):
        st = _stats(model, j, policy)
        m, n = X.shape[1:]
        D = X - st.L @ C @ st.R.T
        quad = float(np.einsum("ij,njk,kl,nil->", st.PsiL_inv, D, st.PsiR_inv, D,
                               optimize=True))
        total += -0.5 * N * (m * n * LOG_2PI + n * st.logdet_L + m * st.logdet_R)
        total += -0.5 * quad - 0.5 * N * np.trace(st.AR @ S) * np.trace(st.AL @ O)
    total += -0.5 * N * (d1 * d2 * LOG_2PI + np.trace(O) * np.trace(S))
    total += -0.5 * float(np.sum(C * C))
    return float(total + N * entropy(state, policy))


def posterior_means(model: BmvccaModel, X1=None, X2=None,
                    policy: SpdPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Variational means ``C`` for one pair or a stack of pairs.

    An absent view is set to its training mean: it adds no evidence while
    the latent precision still counts both views.
    """
    if X1 is None and X2 is None:
        raise StructuralError("at least one view must be given")
    centered = []
    for j, X in ((1, X1), (2, X2)):
        mu = model.view(j)[4]
        if X is not None:
            X = np.asarray(X, dtype=float)
            if X.shape[-2:] != mu.shape:
                raise StructuralError(
                    f"view {j} input shape {X.shape[-2:]} does not match {mu.shape}")
            X = X - mu
        centered.append(X)
    stats = (_stats(model, 1, policy), _stats(model, 2, policy))
    return _posterior_means(stats, centered, model.d1, model.d2, policy)


def initial_model(pairs: PairedMatrixDataset, d1: int, d2: int,
                  init_policy: SpdPolicy = INIT_POLICY) -> BmvccaModel:
    """Loadings from 2DCCA with identity noise covariances.

    2DCCA returns projection directions ``W`` (codes ``W^T X``); the
    generative loadings that reproduce ``X`` from those codes are the dual
    basis ``W (W^T W)^{-1}``, which spans the same subspace but carries the
    data's scale.
    """
    tdcca, _ = tdcca_fit(pairs, d1, d2, policy=init_policy)
    (m1, n1), (m2, n2) = pairs.shape1, pairs.shape2
    dual = lambda W: np.linalg.solve(W.T @ W, W.T).T
    return BmvccaModel(dual(tdcca.L1), dual(tdcca.L2), dual(tdcca.R1), dual(tdcca.R2),
                       np.eye(m1), np.eye(m2), np.eye(n1), np.eye(n2),
                       pairs.mean1, pairs.mean2)


def _sqrt_and_inverse(M, policy, name):
    w, V = spd_eigh(M, policy, name)
    root = np.sqrt(w)
    return (V * root) @ V.T, (V / root) @ V.T


def expand_latent(model: BmvccaModel, state: VariationalState,
                  policy: SpdPolicy = DEFAULT_POLICY):
    """Reparameterize ``Z -> G^{-1} Z H^{-T}`` to maximize the bound over ``G`` and ``H``.

    Moving ``L -> L G`` and ``R -> R H`` together with the matching change of
    ``C``, ``O`` and ``S`` leaves the data term of the bound unchanged, so
    only the prior and entropy terms move.  Their maximizer over ``G`` is
    ``G G^T = (sum_n C C^T + N tr(S) O) / (N d2)``, and symmetrically for
    ``H``; one pass of each is applied.  Returns ``(model, state)``.
    """
    C, O, S = state.C, state.O, state.S
    N, d1, d2 = C.shape
    M = (np.einsum("nik,njk->ij", C, C) + N * np.trace(S) * O) / (N * d2)
    G, Gi = _sqrt_and_inverse(symmetrize(M), policy, "left latent moment")
    C, O = Gi @ C, symmetrize(Gi @ O @ Gi)
    M = (np.einsum("nki,nkj->ij", C, C) + N * np.trace(O) * S) / (N * d1)
    H, Hi = _sqrt_and_inverse(symmetrize(M), policy, "right latent moment")
    C, S = C @ Hi, symmetrize(Hi @ S @ Hi)
    model = replace(model, L1=model.L1 @ G, L2=model.L2 @ G, R1=model.R1 @ H,
                    R2=model.R2 @ H)
    return model, VariationalState(C, O, S)


def bmvcca_fit(pairs: PairedMatrixDataset, d1: int, d2: int, max_iters: int = 300,
               tol: float = 1e-7, seed: int = 0, policy: SpdPolicy = DEFAULT_POLICY,
               init: BmvccaModel | None = None, init_policy: SpdPolicy = INIT_POLICY,
               callback=None, expand: bool = False):
    """Variational EM.  Returns ``(model, state, trace)``.

    Each iteration is one E-step followed by one M-step; the trace row holds
    the bound after the M-step and the Frobenius movement of each loading.
    Iteration stops once the relative change of the bound drops below
    ``tol``.  A closing E-step makes ``state`` consistent with ``model``.
    ``callback(iteration, model, state)``, if given, is called after each
    M-step with the updated model and the E-step state it was fitted to.

    The bound is flat along ``L -> L G``, ``R -> R H`` up to the prior
    term, so plain variational EM creeps along those directions long after
    the subspaces have settled.  ``expand=True`` follows each M-step with
    :func:`expand_latent`, which removes that creep while keeping every step
    bound-increasing.

    The fit is deterministic; ``seed`` is accepted for interface symmetry
    with the other fits and does not affect the 2DCCA start.
    """
    pairs.require_both()
    (m1, n1), (m2, n2) = pairs.shape1, pairs.shape2
    if len(pairs) < 2:
        raise StructuralError("need at least two samples")
    if not 1 <= d1 <= min(m1, m2):
        raise StructuralError(f"d1={d1} must lie in [1, {min(m1, m2)}]")
    if not 1 <= d2 <= min(n1, n2):
        raise StructuralError(f"d2={d2} must lie in [1, {min(n1, n2)}]")
    model = initial_model(pairs, d1, d2, init_policy) if init is None else init
    state = VariationalState.prior(len(pairs), d1, d2)

    prev = None
    trace = []
    for it in range(1, max_iters + 1):
        state = variational_e_step(model, pairs, state, policy)
        new = variational_m_step(model, pairs, state, policy)
        if expand:
            new, state = expand_latent(new, state, policy)
        if callback is not None:
            callback(it, new, state)
        bound = lower_bound(new, pairs, state, policy)
        if not math.isfinite(bound):
            raise NumericalError(f"BMVCCA lower bound became non-finite at iteration {it}")
        deltas = {name: float(np.linalg.norm(getattr(new, name) - getattr(model, name)))
                  for name in ("L1", "L2", "R1", "R2")}
        model = new
        trace.append(TraceRow(it, bound, deltas))
        if prev is not None and abs(bound - prev) <= tol * abs(prev):
            break
        prev = bound
    state = variational_e_step(model, pairs, state, policy)
    return model, state, trace
