"""Latent codes, reconstruction and the two classification rules.

Every fitted model maps an observation (one or both views) to a code:

========  ================================================
model     code
========  ================================================
cca       ``W^T (x - mean)``, averaged over views if both
tdcca     ``L^T (X - mean) R``, averaged over views if both
pcca      posterior mean of ``z``
umvcca    posterior mean of ``Z`` (``m x d2``)
bmvcca    variational mean ``C`` (``d1 x d2``)
========  ================================================

Vector models take flattened inputs (see :func:`flatten`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import (
    CcaModel,
    PccaModel,
    TdccaModel,
    cca_project,
    pcca_posterior_mean,
    tdcca_project,
)
from .bmvcca import BmvccaModel, VariationalState, posterior_means
from .errors import StructuralError
from .matvar import DEFAULT_POLICY, LOG_2PI, SpdPolicy, spd_inverse_and_logdet
from .umvcca import UmvccaModel, umvcca_posterior_mean

MODEL_KINDS = ("cca", "pcca", "tdcca", "umvcca", "bmvcca")
_KIND_OF = {CcaModel: "cca", PccaModel: "pcca", TdccaModel: "tdcca",
            UmvccaModel: "umvcca", BmvccaModel: "bmvcca"}


def model_kind(model) -> str:
    try:
        return _KIND_OF[type(model)]
    except KeyError:
        raise StructuralError(f"not a fitted model: {type(model).__name__}") from None


@dataclass(frozen=True)
class SubspaceCode:
    values: np.ndarray
    source_view: int | str
    model_kind: str

    def __post_init__(self):
        if self.source_view not in (1, 2, "both"):
            raise StructuralError(f"source_view must be 1, 2 or 'both', got {self.source_view!r}")
        if self.model_kind not in MODEL_KINDS:
            raise StructuralError(f"unknown model kind {self.model_kind!r}")
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise StructuralError("code has non-finite entries")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LabeledGallery:
    """Reference codes with labels; ``means`` holds the ``C_n`` used by ptest."""

    codes: tuple[SubspaceCode, ...]
    labels: tuple[str, ...]
    means: np.ndarray | None = None

    def __post_init__(self):
        codes, labels = tuple(self.codes), tuple(str(x) for x in self.labels)
        if not codes:
            raise StructuralError("gallery is empty")
        if len(codes) != len(labels):
            raise StructuralError(f"{len(codes)} codes but {len(labels)} labels")
        shape = codes[0].values.shape
        if any(c.values.shape != shape for c in codes):
            raise StructuralError("gallery codes differ in shape")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "labels", labels)
        if self.means is not None:
            means = np.asarray(self.means, dtype=float)
            if len(means) != len(codes):
                raise StructuralError("gallery means and codes differ in length")
            object.__setattr__(self, "means", means)

    @classmethod
    def from_codes(cls, values, labels, model_kind: str, source_view="both",
                   keep_means: bool = False) -> "LabeledGallery":
        values = np.asarray(values, dtype=float)
        codes = tuple(SubspaceCode(v, source_view, model_kind) for v in values)
        return cls(codes, tuple(labels), values if keep_means else None)

    def matrix(self) -> np.ndarray:
        return np.stack([c.values.ravel() for c in self.codes])


def flatten(X) -> np.ndarray:
    """Column-stacked vec of one matrix or of each matrix in a stack."""
    X = np.asarray(X, dtype=float)
    return np.swapaxes(X, -1, -2).reshape(X.shape[:-2] + (-1,))


def encode(model, X1=None, X2=None, policy: SpdPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Codes for one observation or a stack of them (leading batch axis).

    Missing views are passed as ``None``.  For the probabilistic models a
    missing view is mean-imputed; for cca/tdcca the code of the present
    view is returned, or the average of both view codes.
    """
    if X1 is None and X2 is None:
        raise StructuralError("at least one view must be given")
    kind = model_kind(model)
    if kind == "pcca":
        return pcca_posterior_mean(model, X1, X2, policy)
    if kind == "umvcca":
        return umvcca_posterior_mean(model, X1, X2, policy)
    if kind == "bmvcca":
        return posterior_means(model, X1, X2, policy)
    project = cca_project if kind == "cca" else tdcca_project
    views = [project(model, X, j) for j, X in ((1, X1), (2, X2)) if X is not None]
    return views[0] if len(views) == 1 else 0.5 * (views[0] + views[1])


def project_pair(model: BmvccaModel, X1, X2,
                 policy: SpdPolicy = DEFAULT_POLICY) -> SubspaceCode:
    """Variational mean ``C`` of one pair at the fitted parameters."""
    _require_bmvcca(model)
    X1, X2 = _matrix(X1, model.mean1, 1), _matrix(X2, model.mean2, 2)
    return SubspaceCode(posterior_means(model, X1, X2, policy), "both", "bmvcca")


def project_single(model: BmvccaModel, X, view: int,
                   policy: SpdPolicy = DEFAULT_POLICY) -> SubspaceCode:
    """:func:`project_pair` with the other view held at its training mean."""
    _require_bmvcca(model)
    if view not in (1, 2):
        raise StructuralError(f"view must be 1 or 2, got {view!r}")
    X = _matrix(X, model.view(view)[4], view)
    other = model.view(3 - view)[4]
    X1, X2 = (X, other) if view == 1 else (other, X)
    return SubspaceCode(posterior_means(model, X1, X2, policy), view, "bmvcca")


def reconstruct(model: BmvccaModel, code: SubspaceCode, view: int) -> np.ndarray:
    """``L^j C R^j^T + mean^j``."""
    _require_bmvcca(model)
    L, R, _, _, mu = model.view(view)
    C = np.asarray(code.values if isinstance(code, SubspaceCode) else code, dtype=float)
    if C.shape[-2:] != (model.d1, model.d2):
        raise StructuralError(f"code shape {C.shape[-2:]} != {(model.d1, model.d2)}")
    return L @ C @ R.T + mu


def classify_nn(gallery: LabeledGallery, probe: SubspaceCode) -> str:
    """Label of the nearest gallery code (Euclidean, lowest index on ties)."""
    G = gallery.matrix()
    p = np.asarray(probe.values if isinstance(probe, SubspaceCode) else probe).ravel()
    if p.shape != G.shape[1:]:
        raise StructuralError(f"probe has {p.size} entries, gallery codes {G.shape[1]}")
    return gallery.labels[int(np.argmin(np.sum((G - p) ** 2, axis=1)))]


def ptest_scores(model: BmvccaModel, means, X, view: int,
                 policy: SpdPolicy = DEFAULT_POLICY,
                 state: VariationalState | None = None) -> np.ndarray:
    """Score of a probe ``X`` from ``view`` against each gallery mean ``C_n``.

    Without ``state``: ``-tr(PsiL^-1 D_n PsiR^-1 D_n^T)`` with
    ``D_n = X - mean - L C_n R^T``, which ranks entries exactly as the
    expected log-likelihood does.  With ``state`` (supplying ``O`` and
    ``S``): the full ``E_q[ln p(X | Z_n)]``.
    """
    _require_bmvcca(model)
    L, R, PsiL, PsiR, mu = model.view(view)
    Xc = _matrix(X, mu, view) - mu
    C = np.asarray(means, dtype=float)
    if C.ndim != 3 or C.shape[1:] != (model.d1, model.d2):
        raise StructuralError(f"gallery means must have shape (N, {model.d1}, {model.d2})")
    if len(C) == 0:
        raise StructuralError("gallery is empty")
    PLi, ldl = spd_inverse_and_logdet(PsiL, policy, f"PsiL{view}")
    PRi, ldr = spd_inverse_and_logdet(PsiR, policy, f"PsiR{view}")
    AL, AR = L.T @ PLi @ L, R.T @ PRi @ R
    # expand the quadratic form so each entry costs O(d1 d2 (d1 + d2))
    base = float(np.sum((PLi @ Xc @ PRi) * Xc))
    cross = np.einsum("ij,nij->n", L.T @ PLi @ Xc @ PRi @ R, C)
    own = np.einsum("nij,jk,nlk,li->n", C, AR, C, AL, optimize=True)
    reduced = -(base - 2 * cross + own)
    if state is None:
        return reduced
    m, n = mu.shape
    const = -0.5 * (m * n * LOG_2PI + n * ldl + m * ldr) \
        - 0.5 * np.trace(AR @ state.S) * np.trace(AL @ state.O)
    return 0.5 * reduced + const


def classify_ptest(model: BmvccaModel, gallery: LabeledGallery, X, view: int,
                   policy: SpdPolicy = DEFAULT_POLICY) -> str:
    """Label of the gallery entry whose ``C_n`` best explains the probe."""
    if gallery.means is None:
        raise StructuralError("ptest needs gallery means C_n")
    scores = ptest_scores(model, gallery.means, X, view, policy)
    return gallery.labels[int(np.argmax(scores))]


def _require_bmvcca(model):
    if not isinstance(model, BmvccaModel):
        raise StructuralError(f"expected a BMVCCA model, got {type(model).__name__}")


def _matrix(X, mu, view):
    X = np.asarray(X, dtype=float)
    if X.shape != mu.shape:
        raise StructuralError(f"view {view} input shape {X.shape} does not match {mu.shape}")
    return X
