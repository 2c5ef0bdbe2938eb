"""Paired two-view matrix data and its on-disk formats.

A manifest is a JSON document::

    {"format_version": 1, "matrix_format": "pgm8" | "csv",
     "pairs": [{"id": "a", "view1": "a_vis.pgm", "view2": "a_nir.pgm", "label": "7"}]}

Paths are resolved relative to the manifest.  A probe manifest may omit one
view entirely (``null`` or missing for every pair).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StructuralError

MANIFEST_VERSION = 1
MATRIX_FORMATS = ("pgm8", "csv")


@dataclass(frozen=True)
class PairedMatrixDataset:
    """``N`` aligned observations ``(X1[n], X2[n])`` stored as 3-D arrays.

    Either view may be ``None`` for probe-only data; fitting requires both.
    """

    X1: np.ndarray | None
    X2: np.ndarray | None
    ids: tuple[str, ...] | None = None
    labels: tuple[str, ...] | None = None
    mean1: np.ndarray | None = None
    mean2: np.ndarray | None = None

    def __post_init__(self):
        n = None
        for name in ("X1", "X2"):
            X = getattr(self, name)
            if X is None:
                continue
            X = np.asarray(X, dtype=float)
            if X.ndim == 2:
                X = X[None]
            if X.ndim != 3:
                raise StructuralError(f"{name} must have shape (N, rows, cols), got {X.shape}")
            if n is not None and len(X) != n:
                raise StructuralError(f"views have different sample counts ({n} vs {len(X)})")
            n = len(X)
            object.__setattr__(self, name, X)
            mean_name = "mean" + name[1]
            mean = getattr(self, mean_name)
            if mean is None:
                mean = X.mean(axis=0)
            mean = np.asarray(mean, dtype=float)
            if mean.shape != X.shape[1:]:
                raise StructuralError(f"{mean_name} shape {mean.shape} != {X.shape[1:]}")
            object.__setattr__(self, mean_name, mean)
        if n is None:
            raise StructuralError("dataset needs at least one view")
        for name in ("ids", "labels"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(str(x) for x in v)
                if len(v) != n:
                    raise StructuralError(f"{name} has {len(v)} entries for {n} samples")
                object.__setattr__(self, name, v)
        if self.ids is not None and len(set(self.ids)) != len(self.ids):
            raise StructuralError("ids must be unique")

    def __len__(self) -> int:
        return len(self.X1 if self.X1 is not None else self.X2)

    def view(self, j: int) -> np.ndarray:
        X = {1: self.X1, 2: self.X2}.get(j)
        if j not in (1, 2):
            raise StructuralError(f"view must be 1 or 2, got {j}")
        if X is None:
            raise StructuralError(f"dataset has no view {j}")
        return X

    def require_both(self) -> None:
        if self.X1 is None or self.X2 is None:
            raise StructuralError("both views are required")

    @property
    def shape1(self) -> tuple[int, int]:
        return self.view(1).shape[1:]

    @property
    def shape2(self) -> tuple[int, int]:
        return self.view(2).shape[1:]

    def centered(self, mean1=None, mean2=None) -> tuple[np.ndarray, np.ndarray]:
        """Both views minus the given means (defaults: the dataset's own)."""
        self.require_both()
        m1 = self.mean1 if mean1 is None else mean1
        m2 = self.mean2 if mean2 is None else mean2
        return self.X1 - m1, self.X2 - m2

    def subset(self, idx) -> "PairedMatrixDataset":
        idx = np.asarray(idx)
        pick = lambda t: None if t is None else tuple(np.asarray(t, dtype=object)[idx])
        return PairedMatrixDataset(
            None if self.X1 is None else self.X1[idx],
            None if self.X2 is None else self.X2[idx],
            ids=pick(self.ids), labels=pick(self.labels))

    def transposed(self) -> "PairedMatrixDataset":
        """Swap rows and columns of every matrix in both views."""
        t = lambda X: None if X is None else np.swapaxes(X, 1, 2)
        tm = lambda M: None if M is None else M.T
        return PairedMatrixDataset(t(self.X1), t(self.X2), self.ids, self.labels,
                                   tm(self.mean1), tm(self.mean2))


# --- matrix files -----------------------------------------------------------

def read_pgm8(path) -> np.ndarray:
    """Read a binary 8-bit PGM (P5, maxval 255) scaled to [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc.strerror}") from None
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise StructuralError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise StructuralError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise StructuralError(f"{path}: malformed PGM header") from None
    if maxval != 255 or width <= 0 or height <= 0:
        raise StructuralError(f"{path}: expected 8-bit PGM with maxval 255, got maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=pos)
    if pixels.size < width * height:
        raise StructuralError(f"{path}: pixel data truncated")
    return pixels[:width * height].reshape(height, width).astype(float) / 255.0


def write_pgm8(path, X: np.ndarray) -> None:
    """Write values in [0, 1] as a binary 8-bit PGM."""
    X = np.clip(np.rint(np.asarray(X, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    h, w = X.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + X.tobytes())


def read_csv_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc.strerror}") from None
    rows = [line for line in text.splitlines() if line.strip()]
    try:
        M = [[float(v) for v in line.split(",")] for line in rows]
    except ValueError:
        raise StructuralError(f"{path}: non-numeric CSV entry") from None
    if not M or len({len(r) for r in M}) != 1:
        raise StructuralError(f"{path}: CSV rows must be non-empty and equally long")
    return np.array(M, dtype=float)


def write_csv_matrix(path, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Path(path).write_text("".join(",".join(repr(float(v)) for v in row) + "\n" for row in X))


READERS = {"pgm8": read_pgm8, "csv": read_csv_matrix}


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# --- manifests --------------------------------------------------------------

def load_dataset(manifest_path) -> PairedMatrixDataset:
    """Load every pair listed in a manifest."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise StructuralError(f"cannot read manifest {manifest_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{manifest_path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise StructuralError(f"{manifest_path}: manifest must be a JSON object")
    if doc.get("format_version") != MANIFEST_VERSION:
        raise StructuralError(
            f"{manifest_path}: unsupported format_version {doc.get('format_version')!r}")
    fmt = doc.get("matrix_format")
    if fmt not in READERS:
        raise StructuralError(f"{manifest_path}: matrix_format must be one of {MATRIX_FORMATS}")
    pairs = doc.get("pairs")
    if not isinstance(pairs, list) or not pairs:
        raise StructuralError(f"{manifest_path}: 'pairs' must be a non-empty list")
    base = manifest_path.parent
    ids, labels = [], []
    views: dict[int, list] = {1: [], 2: []}
    for k, entry in enumerate(pairs):
        if not isinstance(entry, dict) or "id" not in entry:
            raise StructuralError(f"{manifest_path}: pair {k} needs an 'id'")
        ids.append(str(entry["id"]))
        labels.append(str(entry.get("label", entry["id"])))
        for j in (1, 2):
            ref = entry.get(f"view{j}")
            views[j].append(None if ref is None else READERS[fmt](base / ref))
    if len(set(ids)) != len(ids):
        raise StructuralError(f"{manifest_path}: duplicate pair ids")
    arrays = {}
    for j in (1, 2):
        mats = views[j]
        present = [M for M in mats if M is not None]
        if not present:
            arrays[j] = None
            continue
        if len(present) != len(mats):
            missing = ids[next(i for i, M in enumerate(mats) if M is None)]
            raise StructuralError(f"{manifest_path}: pair {missing!r} lacks view{j}")
        shape = present[0].shape
        for i, M in enumerate(mats):
            if M.shape != shape:
                ref = pairs[i][f"view{j}"]
                raise StructuralError(f"{base / ref}: shape {M.shape} differs from {shape}")
        arrays[j] = np.stack(mats)
    return PairedMatrixDataset(arrays[1], arrays[2], ids=ids, labels=labels)


def save_dataset(ds: PairedMatrixDataset, directory, matrix_format: str = "csv") -> Path:
    """Write every matrix plus a manifest into ``directory``; returns the manifest path."""
    if matrix_format not in MATRIX_FORMATS:
        raise StructuralError(f"matrix_format must be one of {MATRIX_FORMATS}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    writer = write_pgm8 if matrix_format == "pgm8" else write_csv_matrix
    ext = "pgm" if matrix_format == "pgm8" else "csv"
    ids = ds.ids or tuple(f"{i:05d}" for i in range(len(ds)))
    labels = ds.labels or ids
    pairs = []
    for i, (pid, label) in enumerate(zip(ids, labels)):
        entry = {"id": pid, "label": label}
        for j, X in ((1, ds.X1), (2, ds.X2)):
            if X is not None:
                name = f"{pid}_v{j}.{ext}"
                writer(directory / name, X[i])
                entry[f"view{j}"] = name
        pairs.append(entry)
    manifest = directory / "manifest.json"
    doc = {"format_version": MANIFEST_VERSION, "matrix_format": matrix_format, "pairs": pairs}
    atomic_write_text(manifest, json.dumps(doc, indent=1))
    return manifest
