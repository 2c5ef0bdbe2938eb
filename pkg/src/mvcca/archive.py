"""Versioned JSON persistence for fitted models.

An archive looks like::

    {"format_version": 1, "model_kind": "bmvcca",
     "matrices": {"L1": {"rows": 3, "cols": 2, "data": [...]}, ...},
     "hyperparameters": {"d1": 2, "d2": 2, "jitter": 1e-09},
     "fit": {"seed": 0, "iterations": 41, "final_objective": -1234.5},
     "pca": null}

``data`` is row-major.  Vectors carry ``"vector": true`` and ``cols = 1``.
Floats are written with Python's shortest round-trip repr, so loading
reproduces every entry bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import CcaModel, PccaModel, TdccaModel
from .bmvcca import BmvccaModel
from .dataset import atomic_write_text
from .errors import StructuralError
from .inference import encode, flatten, model_kind
from .matvar import DEFAULT_POLICY, SpdPolicy
from .umvcca import UmvccaModel

ARCHIVE_VERSION = 1

_CLASSES = {"cca": CcaModel, "pcca": PccaModel, "tdcca": TdccaModel,
            "umvcca": UmvccaModel, "bmvcca": BmvccaModel}

# Symbolic shapes per kind; a 1-tuple marks a vector.
_SCHEMAS = {
    "cca": {"W1": ("p1", "d"), "W2": ("p2", "d"), "correlations": ("d",),
            "mean1": ("p1",), "mean2": ("p2",)},
    "pcca": {"W1": ("p1", "d"), "W2": ("p2", "d"), "Psi1": ("p1", "p1"),
             "Psi2": ("p2", "p2"), "mean1": ("p1",), "mean2": ("p2",)},
    "tdcca": {"L1": ("m1", "d1"), "L2": ("m2", "d1"), "R1": ("n1", "d2"),
              "R2": ("n2", "d2"), "mean1": ("m1", "n1"), "mean2": ("m2", "n2")},
    "umvcca": {"R": ("n", "d2"), "PsiR1": ("n1", "n1"), "PsiR2": ("n2", "n2"),
               "mean1": ("m", "n1"), "mean2": ("m", "n2")},
    "bmvcca": {"L1": ("m1", "d1"), "L2": ("m2", "d1"), "R1": ("n1", "d2"),
               "R2": ("n2", "d2"), "PsiL1": ("m1", "m1"), "PsiL2": ("m2", "m2"),
               "PsiR1": ("n1", "n1"), "PsiR2": ("n2", "n2"),
               "mean1": ("m1", "n1"), "mean2": ("m2", "n2")},
}
_PCA_SCHEMA = {"basis1": ("p1", "k"), "basis2": ("p2", "k"),
               "mean1": ("p1",), "mean2": ("p2",)}


@dataclass(frozen=True)
class PcaProjection:
    """Per-view principal subspaces applied to flattened inputs before a vector model."""

    basis1: np.ndarray
    basis2: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray

    @property
    def k(self) -> int:
        return self.basis1.shape[1]

    def apply(self, x, view: int) -> np.ndarray:
        basis, mu = (self.basis1, self.mean1) if view == 1 else (self.basis2, self.mean2)
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(mu):
            raise StructuralError(f"view {view} has {x.shape[-1]} features, PCA expects {len(mu)}")
        return (x - mu) @ basis


def fit_pca(x1, x2, k: int) -> PcaProjection:
    """Leading ``k`` principal directions of each flattened view."""
    bases, means = [], []
    for x in (x1, x2):
        x = np.asarray(x, dtype=float)
        if not 1 <= k <= min(x.shape):
            raise StructuralError(f"--pca-pre k={k} must lie in [1, {min(x.shape)}]")
        mu = x.mean(axis=0)
        _, _, Vt = np.linalg.svd(x - mu, full_matrices=False)
        V = Vt[:k].T
        # sign convention: largest-magnitude entry of each direction positive
        pivot = V[np.argmax(np.abs(V), axis=0), np.arange(k)]
        bases.append(V * np.where(pivot < 0, -1.0, 1.0))
        means.append(mu)
    return PcaProjection(bases[0], bases[1], means[0], means[1])


@dataclass(frozen=True)
class ModelArchive:
    model: object
    hyperparameters: dict = field(default_factory=dict)
    seed: int | None = None
    iterations: int = 0
    final_objective: float | None = None
    pca: PcaProjection | None = None

    @property
    def kind(self) -> str:
        return model_kind(self.model)

    @property
    def policy(self) -> SpdPolicy:
        jitter = self.hyperparameters.get("jitter")
        return DEFAULT_POLICY if jitter is None else SpdPolicy(jitter=float(jitter))

    @property
    def side(self) -> str:
        return self.hyperparameters.get("side", "right")

    def features(self, X, view: int) -> np.ndarray:
        """Map raw matrices (one or a stack) to what the model consumes."""
        X = np.asarray(X, dtype=float)
        if self.kind in ("cca", "pcca"):
            x = flatten(X)
            return x if self.pca is None else self.pca.apply(x, view)
        if self.kind == "umvcca" and self.side == "left":
            return np.swapaxes(X, -1, -2)
        return X

    def encode(self, X1=None, X2=None) -> np.ndarray:
        f = lambda X, j: None if X is None else self.features(X, j)
        return encode(self.model, f(X1, 1), f(X2, 2), self.policy)


def _matrix_doc(A: np.ndarray) -> dict:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise StructuralError("cannot archive non-finite entries")
    if A.ndim == 1:
        return {"rows": len(A), "cols": 1, "vector": True, "data": A.tolist()}
    return {"rows": A.shape[0], "cols": A.shape[1], "data": A.ravel().tolist()}


def _parse_matrix(name: str, doc) -> np.ndarray:
    if not isinstance(doc, dict) or not {"rows", "cols", "data"} <= doc.keys():
        raise StructuralError(f"matrix {name!r} needs rows, cols and data")
    rows, cols, data = doc["rows"], doc["cols"], doc["data"]
    if not (isinstance(rows, int) and isinstance(cols, int) and rows >= 0 and cols >= 0):
        raise StructuralError(f"matrix {name!r} has invalid dimensions")
    if not isinstance(data, list) or len(data) != rows * cols:
        raise StructuralError(f"matrix {name!r} declares {rows}x{cols} but has "
                              f"{len(data) if isinstance(data, list) else 'no'} entries")
    try:
        A = np.array(data, dtype=float)
    except (TypeError, ValueError):
        raise StructuralError(f"matrix {name!r} has non-numeric entries") from None
    if A.ndim != 1 or not np.all(np.isfinite(A)):
        raise StructuralError(f"matrix {name!r} has non-finite or nested entries")
    if doc.get("vector", False):
        if cols != 1:
            raise StructuralError(f"vector {name!r} must have cols = 1")
        return A
    return A.reshape(rows, cols)


def _check_schema(kind: str, schema: dict, mats: dict) -> None:
    missing = schema.keys() - mats.keys()
    extra = mats.keys() - schema.keys()
    if missing or extra:
        raise StructuralError(f"{kind} archive: missing {sorted(missing)}, unexpected {sorted(extra)}")
    bound: dict[str, int] = {}
    for name, dims in schema.items():
        A = mats[name]
        if A.ndim != len(dims):
            raise StructuralError(f"{kind} archive: {name} must be {'a vector' if len(dims) == 1 else 'a matrix'}")
        for sym, size in zip(dims, A.shape):
            if bound.setdefault(sym, size) != size:
                raise StructuralError(f"{kind} archive: {name} has {sym}={size}, "
                                      f"inconsistent with {sym}={bound[sym]}")
    if kind == "umvcca" and bound["n"] != bound["n1"] + bound["n2"]:
        raise StructuralError("umvcca archive: R must have n1 + n2 rows")


def archive_to_json(archive: ModelArchive) -> str:
    kind = archive.kind
    mats = {f.name: _matrix_doc(getattr(archive.model, f.name))
            for f in dataclasses.fields(archive.model)}
    pca = None
    if archive.pca is not None:
        pca = {f.name: _matrix_doc(getattr(archive.pca, f.name))
               for f in dataclasses.fields(archive.pca)}
    objective = archive.final_objective
    doc = {
        "format_version": ARCHIVE_VERSION,
        "model_kind": kind,
        "matrices": mats,
        "hyperparameters": dict(archive.hyperparameters),
        "fit": {"seed": archive.seed, "iterations": archive.iterations,
                "final_objective": None if objective is None or not math.isfinite(objective)
                else float(objective)},
        "pca": pca,
    }
    return json.dumps(doc, indent=1, allow_nan=False)


def archive_from_json(text: str, source: str = "archive") -> ModelArchive:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{source}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise StructuralError(f"{source}: archive must be a JSON object")
    version = doc.get("format_version")
    if version != ARCHIVE_VERSION:
        raise StructuralError(f"{source}: unsupported archive format_version {version!r} "
                              f"(expected {ARCHIVE_VERSION})")
    kind = doc.get("model_kind")
    if kind not in _SCHEMAS:
        raise StructuralError(f"{source}: unknown model_kind {kind!r}")
    raw = doc.get("matrices")
    if not isinstance(raw, dict):
        raise StructuralError(f"{source}: 'matrices' must be an object")
    mats = {name: _parse_matrix(name, m) for name, m in raw.items()}
    _check_schema(kind, _SCHEMAS[kind], mats)
    model = _CLASSES[kind](**mats)

    pca = None
    if doc.get("pca") is not None:
        if kind not in ("cca", "pcca"):
            raise StructuralError(f"{source}: PCA pre-projection only applies to cca/pcca")
        if not isinstance(doc["pca"], dict):
            raise StructuralError(f"{source}: 'pca' must be an object")
        pm = {name: _parse_matrix(name, m) for name, m in doc["pca"].items()}
        _check_schema("pca", _PCA_SCHEMA, pm)
        pca = PcaProjection(**pm)
        if pca.k != model.W1.shape[0] or pca.k != model.W2.shape[0]:
            raise StructuralError(f"{source}: PCA output size {pca.k} does not match the model")

    hyper = doc.get("hyperparameters", {})
    fit = doc.get("fit", {})
    if not isinstance(hyper, dict) or not isinstance(fit, dict):
        raise StructuralError(f"{source}: 'hyperparameters' and 'fit' must be objects")
    if hyper.get("side", "right") not in ("right", "left"):
        raise StructuralError(f"{source}: side must be 'right' or 'left'")
    return ModelArchive(model, hyper, fit.get("seed"), int(fit.get("iterations", 0)),
                        fit.get("final_objective"), pca)


def save_model(archive: ModelArchive, path) -> None:
    atomic_write_text(path, archive_to_json(archive))


def load_model(path) -> ModelArchive:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc.strerror}") from None
    return archive_from_json(text, str(path))
