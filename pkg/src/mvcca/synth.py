"""Synthetic two-view matrix data drawn from the bilateral latent model.

``X^j_n = L^j Z_n R^j^T + Xi^j_n`` with loadings drawn elementwise from
uniform(0, 1), ``Z_n ~ MN(0, I, I)`` and ``Xi ~ MN(0, s I, s I)`` where
``s = noise_scale`` (so each noise entry has variance ``s**2``).

Loadings, latents, noise and class offsets come from independent streams
derived from the master seed, so datasets of different sizes built from one
seed are nested prefixes of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PairedMatrixDataset
from .errors import StructuralError

_LOADINGS, _LATENTS, _NOISE, _CLASSES = range(4)


@dataclass(frozen=True)
class SynthSpec:
    """Configuration of one synthetic dataset.

    With ``unilateral=True`` the left maps are the identity: ``Z_n`` is
    ``m x d2`` (``m1 == m2 == m`` required, ``d1`` is ignored).  With
    ``class_count`` set, sample ``n`` belongs to class ``n % class_count``
    and its latent mean is that class's offset, scaled by
    ``class_separation``.
    """

    m1: int
    n1: int
    m2: int
    n2: int
    d1: int
    d2: int
    n_samples: int
    noise_scale: float = 0.1
    seed: int = 0
    loading_law: str = "uniform01"
    class_count: int | None = None
    class_separation: float = 1.0
    unilateral: bool = False
    noise_seed: int | None = None

    def __post_init__(self):
        dims = (self.m1, self.n1, self.m2, self.n2, self.d2, self.n_samples)
        if min(dims) < 1 or (not self.unilateral and self.d1 < 1):
            raise StructuralError("dimensions and n_samples must be positive")
        if self.noise_scale < 0:
            raise StructuralError("noise_scale must be non-negative")
        if self.loading_law != "uniform01":
            raise StructuralError(f"unknown loading_law {self.loading_law!r}")
        if self.unilateral:
            if self.m1 != self.m2:
                raise StructuralError("unilateral data needs m1 == m2")
        elif self.d1 > min(self.m1, self.m2):
            raise StructuralError("d1 must not exceed min(m1, m2)")
        if self.d2 > min(self.n1, self.n2):
            raise StructuralError("d2 must not exceed min(n1, n2)")
        if self.class_count is not None and self.class_count < 1:
            raise StructuralError("class_count must be positive")

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.m1 if self.unilateral else self.d1, self.d2)


@dataclass(frozen=True)
class GroundTruth:
    L1: np.ndarray
    L2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    Z: np.ndarray
    labels: tuple[str, ...] | None = None
    class_offsets: np.ndarray | None = None


def _stream(seed: int, counter: int) -> np.random.Generator:
    return np.random.default_rng([seed, counter])


def generate(spec: SynthSpec) -> tuple[PairedMatrixDataset, GroundTruth]:
    rng = _stream(spec.seed, _LOADINGS)
    if spec.unilateral:
        L1 = L2 = np.eye(spec.m1)
    else:
        L1 = rng.uniform(size=(spec.m1, spec.d1))
        L2 = rng.uniform(size=(spec.m2, spec.d1))
    R1 = rng.uniform(size=(spec.n1, spec.d2))
    R2 = rng.uniform(size=(spec.n2, spec.d2))

    N = spec.n_samples
    Z = _stream(spec.seed, _LATENTS).standard_normal((N,) + spec.latent_shape)
    labels = offsets = None
    if spec.class_count:
        offsets = spec.class_separation * _stream(spec.seed, _CLASSES).standard_normal(
            (spec.class_count,) + spec.latent_shape)
        cls = np.arange(N) % spec.class_count
        Z = Z + offsets[cls]
        labels = tuple(str(c) for c in cls)

    noise_rng = _stream(spec.seed if spec.noise_seed is None else spec.noise_seed, _NOISE)
    E1 = noise_rng.standard_normal((N, spec.m1, spec.n1))
    E2 = noise_rng.standard_normal((N, spec.m2, spec.n2))
    # MN(0, sI, sI): vec covariance s^2 I
    X1 = L1 @ Z @ R1.T + spec.noise_scale * E1
    X2 = L2 @ Z @ R2.T + spec.noise_scale * E2
    ids = tuple(f"s{n:05d}" for n in range(N))
    return (PairedMatrixDataset(X1, X2, ids=ids, labels=labels),
            GroundTruth(L1, L2, R1, R2, Z, labels, offsets))


def recovery_error(estimates, truth) -> float:
    """Distance between unit-normalized scalar latent sequences, minimized over sign.

    Only defined for ``1 x 1`` latents, where the model fixes the latent up
    to a scale factor.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise StructuralError(f"shapes differ: {est.shape} vs {tru.shape}")
    if est.ndim >= 2 and est.shape[-2:] != (1, 1) or est.ndim == 2 and est.shape[-1] != 1:
        raise StructuralError("recovery_error needs 1 x 1 latents")
    e, t = est.ravel(), tru.ravel()
    ne, nt = np.linalg.norm(e), np.linalg.norm(t)
    if ne == 0 or nt == 0:
        raise StructuralError("sequences must be nonzero")
    e, t = e / ne, t / nt
    return float(min(np.linalg.norm(e - t), np.linalg.norm(-e - t)))


def alignment_cosine(u, v) -> float:
    """``|u.v| / (|u| |v|)``."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise StructuralError(f"lengths differ: {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise StructuralError("alignment_cosine is undefined for a zero vector")
    return float(min(1.0, abs(u @ v) / (nu * nv)))


# Frozen 20-class stand-in for a cross-modal recognition task.  The class
# separation was calibrated so nearest-neighbour matching within view 2
# reaches at least 80% accuracy; the first CLASSIFICATION_TRAIN samples train,
# the rest are probes.
CLASSIFICATION_FIXTURE = SynthSpec(16, 16, 16, 16, 3, 3, 600, noise_scale=0.1, seed=11,
                                   class_count=20, class_separation=2.0)
CLASSIFICATION_TRAIN = 400


def train_test_split(data: PairedMatrixDataset, n_train: int):
    """First ``n_train`` samples and the remainder."""
    if not 0 < n_train < len(data):
        raise StructuralError(f"n_train must lie in (0, {len(data)})")
    return data.subset(np.arange(n_train)), data.subset(np.arange(n_train, len(data)))
