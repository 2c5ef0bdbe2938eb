"""Command-line harness: ``mvcca <command> [options]``.

Exit status is 0 on success, 2 for usage or structural problems (bad flags,
inconsistent dimensions, missing or malformed inputs) and 3 for numerical
failures.  Every failure prints one diagnostic line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from .archive import ModelArchive, fit_pca, load_model, save_model
from .baselines import cca_fit, pcca_fit_em, pcca_fit_ml, tdcca_fit
from .bmvcca import bmvcca_fit, posterior_means
from .dataset import PairedMatrixDataset, atomic_write_text, load_dataset, save_dataset
from .errors import NumericalError, StructuralError
from .inference import (
    LabeledGallery,
    SubspaceCode,
    classify_nn,
    classify_ptest,
    flatten,
    reconstruct,
)
from .matvar import SpdPolicy, unvec
from .synth import (
    CLASSIFICATION_FIXTURE,
    CLASSIFICATION_TRAIN,
    SynthSpec,
    alignment_cosine,
    generate,
    recovery_error,
    train_test_split,
)
from .trace import TraceRow
from .umvcca import umvcca_fit, umvcca_reconstruct

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

# CLI model names; "2dcca" is stored as kind "tdcca"
FIT_MODELS = ("cca", "pcca", "2dcca", "umvcca", "bmvcca")

# Setups of the synthetic reproductions
FIG1_SPEC = dict(m1=32, n1=32, m2=32, n2=32, d1=15, d2=15, n_samples=1000, noise_scale=0.1)
FIG23_SPEC = dict(m1=32, n1=32, m2=32, n2=32, d1=1, d2=1, n_samples=1000, noise_scale=0.1)
FIG23_SIZES = (10, 20, 50, 100, 200, 500, 1000)
FIG4_SPEC = dict(m1=32, n1=32, m2=32, n2=32, d1=0, d2=1, n_samples=1000, noise_scale=0.1,
                 unilateral=True)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- tables -------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_table(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StructuralError(f"cannot read {path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise StructuralError(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise StructuralError(f"{path}: ragged rows")
    return header, body


def write_trace(path, trace: list[TraceRow]) -> None:
    names = list(trace[0].deltas) if trace else []
    write_table(path, ["iteration", "objective"] + [f"delta_{n}" for n in names],
                ([r.iteration, float(r.objective)] + [float(r.deltas[n]) for n in names]
                 for r in trace))


def read_trace(path) -> list[TraceRow]:
    header, body = read_table(path)
    if header[:2] != ["iteration", "objective"] or \
            not all(h.startswith("delta_") for h in header[2:]):
        raise StructuralError(f"{path}: not a trace table")
    try:
        return [TraceRow(int(r[0]), float(r[1]),
                         {h[6:]: float(v) for h, v in zip(header[2:], r[2:])}) for r in body]
    except ValueError:
        raise StructuralError(f"{path}: non-numeric trace entry") from None


def write_codes(path, ids, labels, codes) -> None:
    codes = np.asarray(codes, dtype=float)
    flat = flatten(codes) if codes.ndim == 3 else codes
    header = ["id", "label"] + [f"c{k + 1}" for k in range(flat.shape[1])]
    write_table(path, header, ([i, lab] + list(row) for i, lab, row in zip(ids, labels, flat)))


def read_codes(path) -> tuple[list[str], list[str], np.ndarray]:
    header, body = read_table(path)
    if header[:2] != ["id", "label"]:
        raise StructuralError(f"{path}: not a code table")
    try:
        values = np.array([[float(v) for v in r[2:]] for r in body], dtype=float)
    except ValueError:
        raise StructuralError(f"{path}: non-numeric code entry") from None
    return [r[0] for r in body], [r[1] for r in body], values.reshape(len(body), len(header) - 2)


# --- helpers ------------------------------------------------------------------

def _policy(args) -> SpdPolicy:
    return SpdPolicy(jitter=args.jitter)


def _pca_pre(value: str):
    if value == "none":
        return None
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'none', got {value!r}")
    if k < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {k}")
    return k


def _iter_kwargs(args) -> dict:
    kw = {}
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.tol is not None:
        kw["tol"] = args.tol
    return kw


def _labels(ds: PairedMatrixDataset) -> tuple[str, ...]:
    return ds.labels or ds.ids or tuple(str(i) for i in range(len(ds)))


def _ids(ds: PairedMatrixDataset) -> tuple[str, ...]:
    return ds.ids or tuple(f"{i:05d}" for i in range(len(ds)))


def feature_count(archive: ModelArchive) -> int:
    m = archive.model
    kind = archive.kind
    if kind in ("cca", "pcca"):
        return m.d
    if kind == "umvcca":
        return m.m * m.d2
    return m.d1 * m.d2


def _code_shape(archive: ModelArchive) -> tuple[int, ...]:
    m, kind = archive.model, archive.kind
    if kind in ("cca", "pcca"):
        return (m.d,)
    if kind == "umvcca":
        return (m.m, m.d2)
    return (m.d1, m.d2)


def _views_for(source: str, ds: PairedMatrixDataset):
    if source == "both":
        ds.require_both()
        return ds.X1, ds.X2
    return (ds.view(1), None) if source == "1" else (None, ds.view(2))


# --- commands -----------------------------------------------------------------

def cmd_synth_gen(args) -> None:
    out = Path(args.out)
    if args.preset == "classification":
        data, _ = generate(CLASSIFICATION_FIXTURE)
        train, test = train_test_split(data, CLASSIFICATION_TRAIN)
        save_dataset(train, out / "train", args.format)
        save_dataset(test, out / "test", args.format)
        return
    spec = SynthSpec(args.m1, args.n1, args.m2, args.n2, args.d1, args.d2, args.n_samples,
                     noise_scale=args.noise, seed=args.seed, class_count=args.classes,
                     class_separation=args.separation, unilateral=args.unilateral)
    data, _ = generate(spec)
    save_dataset(data, out, args.format)


def fit_archive(args, data: PairedMatrixDataset) -> tuple[ModelArchive, list[TraceRow]]:
    policy = _policy(args)
    model_name = args.model
    hyper = {"jitter": args.jitter, "d1": args.d1, "d2": args.d2}
    if args.pca_pre is not None and model_name not in ("cca", "pcca"):
        raise UsageError("--pca-pre applies only to cca and pcca")
    data.require_both()
    trace: list[TraceRow] = []
    pca = None
    if model_name in ("cca", "pcca"):
        x1, x2 = flatten(data.X1), flatten(data.X2)
        if args.pca_pre is not None:
            pca = fit_pca(x1, x2, args.pca_pre)
            x1, x2 = pca.apply(x1, 1), pca.apply(x2, 2)
        d = args.d1 * args.d2
        if model_name == "cca":
            model = cca_fit(x1, x2, d, policy)
            objective = float(np.sum(model.correlations))
        elif args.method == "ml":
            model = pcca_fit_ml(x1, x2, d, policy)
            objective = None
        else:
            model, trace = pcca_fit_em(x1, x2, d, seed=args.seed, policy=policy,
                                       **_iter_kwargs(args))
            objective = trace[-1].objective if trace else None
        hyper.update(d=d, method=args.method if model_name == "pcca" else None)
    elif model_name == "2dcca":
        model, trace = tdcca_fit(data, args.d1, args.d2, policy=policy, **_iter_kwargs(args))
        objective = trace[-1].objective if trace else None
    elif model_name == "umvcca":
        fit_data = data.transposed() if args.side == "left" else data
        model, trace = umvcca_fit(fit_data, args.d2, seed=args.seed, policy=policy,
                                  **_iter_kwargs(args))
        objective = trace[-1].objective
        hyper.update(side=args.side)
    else:
        model, _, trace = bmvcca_fit(data, args.d1, args.d2, seed=args.seed, policy=policy,
                                     expand=args.expand, **_iter_kwargs(args))
        objective = trace[-1].objective
        hyper.update(expand=args.expand)
    hyper = {k: v for k, v in hyper.items() if v is not None}
    archive = ModelArchive(model, hyper, args.seed, len(trace), objective, pca)
    hyper = {**hyper, "feature_count": feature_count(archive)}
    return replace(archive, hyperparameters=hyper), trace


def cmd_fit(args) -> None:
    data = load_dataset(args.data)
    archive, trace = fit_archive(args, data)
    save_model(archive, args.out)
    trace_path = args.trace or Path(args.out).with_suffix(".trace.csv")
    write_trace(trace_path, trace)


def cmd_project(args) -> None:
    archive = load_model(args.model)
    data = load_dataset(args.data)
    codes = archive.encode(*_views_for(args.view, data))
    write_codes(args.out, _ids(data), _labels(data), codes)


def cmd_reconstruct(args) -> None:
    archive = load_model(args.model)
    kind = archive.kind
    if kind not in ("bmvcca", "umvcca"):
        raise UsageError(f"reconstruct needs a bmvcca or umvcca model, not {kind}")
    ids, labels, flat = read_codes(args.codes)
    shape = _code_shape(archive)
    if flat.shape[1] != int(np.prod(shape)):
        raise StructuralError(f"{args.codes}: codes have {flat.shape[1]} entries, "
                              f"model expects {shape[0]}x{shape[1]}")
    C = unvec(flat, *shape)
    view = int(args.view)
    if kind == "bmvcca":
        X = reconstruct(archive.model, C, view)
    else:
        X = umvcca_reconstruct(archive.model, C, view)
        if archive.side == "left":
            X = np.swapaxes(X, 1, 2)
    pair = (X, None) if view == 1 else (None, X)
    save_dataset(PairedMatrixDataset(*pair, ids=ids, labels=labels), args.out, args.format)


def predict(args):
    """``(archive, ids, true labels, predicted labels)`` for every probe."""
    archive = load_model(args.model)
    gallery_data = load_dataset(args.gallery)
    probe_data = load_dataset(args.probe)
    view = int(args.probe_view)
    probes = probe_data.view(view)
    if args.criterion == "ptest":
        if archive.kind != "bmvcca":
            raise UsageError("ptest needs a bmvcca model")
        gallery_data.require_both()
        means = archive.encode(gallery_data.X1, gallery_data.X2)
        gallery = LabeledGallery.from_codes(means, _labels(gallery_data), "bmvcca",
                                            keep_means=True)
        predicted = [classify_ptest(archive.model, gallery, X, view, archive.policy)
                     for X in probes]
    else:
        source = args.gallery_view or args.probe_view
        codes = archive.encode(*_views_for(source, gallery_data))
        gallery = LabeledGallery.from_codes(codes, _labels(gallery_data), archive.kind,
                                            source if source == "both" else int(source))
        X1, X2 = (probes, None) if view == 1 else (None, probes)
        probe_codes = archive.encode(X1, X2)
        predicted = [classify_nn(gallery, SubspaceCode(c, view, archive.kind))
                     for c in probe_codes]
    return archive, list(_ids(probe_data)), list(_labels(probe_data)), predicted


def cmd_classify(args) -> None:
    _, ids, truth, predicted = predict(args)
    write_table(args.out, ["id", "label", "predicted"], zip(ids, truth, predicted))


def cmd_eval(args) -> None:
    archive, _, truth, predicted = predict(args)
    totals = Counter(truth)
    correct = Counter(t for t, p in zip(truth, predicted) if t == p)
    errors = len(truth) - sum(correct.values())
    metrics = {
        "criterion": args.criterion,
        "model_kind": archive.kind,
        "feature_count": feature_count(archive),
        "n_probes": len(truth),
        "n_errors": errors,
        "error_rate": errors / len(truth),
        "per_class": {lab: {"total": totals[lab], "correct": correct[lab],
                            "errors": totals[lab] - correct[lab]} for lab in sorted(totals)},
    }
    atomic_write_text(args.out, json.dumps(metrics, indent=1))


def cmd_repro_fig1(args) -> None:
    spec = SynthSpec(**{**FIG1_SPEC, "n_samples": args.n_samples}, seed=args.seed)
    data, _ = generate(spec)
    _, _, trace = bmvcca_fit(data, spec.d1, spec.d2, max_iters=args.max_iters, tol=args.tol,
                             seed=args.seed, policy=_policy(args), expand=args.expand)
    write_trace(args.out, trace)


def cmd_repro_fig23(args) -> None:
    rows = []
    for N in args.sizes:
        data, truth = generate(SynthSpec(**{**FIG23_SPEC, "n_samples": N}, seed=args.seed))
        z = truth.Z.ravel()

        def record(it, model, state, N=N, data=data, truth=truth, z=z):
            C = posterior_means(model, data.X1, data.X2, _policy(args))
            r = np.corrcoef(C.ravel(), z)[0, 1]
            rows.append([N, it, recovery_error(C, truth.Z), float(abs(r))])

        bmvcca_fit(data, 1, 1, max_iters=args.max_iters, tol=args.tol, seed=args.seed,
                   policy=_policy(args), callback=record)
    write_table(args.out, ["n_samples", "iteration", "recovery_error", "abs_pearson"], rows)


def cmd_repro_fig4(args) -> None:
    data, truth = generate(SynthSpec(**FIG4_SPEC, seed=args.seed))
    model, _ = umvcca_fit(data, 1, max_iters=args.max_iters, tol=args.tol, seed=args.seed,
                          policy=_policy(args))
    rows = []
    for view, true, learned in ((1, truth.R1, model.R1), (2, truth.R2, model.R2)):
        t = true[:, 0] / np.linalg.norm(true)
        v = learned[:, 0] / np.linalg.norm(learned)
        v = v if t @ v >= 0 else -v
        cos = alignment_cosine(t, v)
        rows += [[view, i + 1, float(a), float(b), cos] for i, (a, b) in enumerate(zip(t, v))]
    write_table(args.out, ["view", "index", "true", "learned", "alignment_cosine"], rows)


# --- parser -------------------------------------------------------------------

def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _sizes(text: str) -> list[int]:
    return [_positive(t) for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mvcca", description="Matrix-variate probabilistic CCA harness.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jitter=True, seed=True):
        if jitter:
            sp.add_argument("--jitter", type=float, default=1e-9,
                            help="relative ridge added before SPD factorizations")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth-gen", help="write a synthetic paired dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--preset", choices=["classification"],
                   help="write the frozen 20-class fixture as train/ and test/")
    for name, default in (("m1", 16), ("n1", 16), ("m2", 16), ("n2", 16), ("d1", 3), ("d2", 3),
                          ("n-samples", 200)):
        s.add_argument(f"--{name}", type=_positive, default=default)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--classes", type=_positive)
    s.add_argument("--separation", type=float, default=1.0)
    s.add_argument("--unilateral", action="store_true")
    s.add_argument("--format", choices=["csv", "pgm8"], default="csv")
    common(s, jitter=False)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("fit", help="fit a model and write an archive plus trace CSV")
    s.add_argument("--data", required=True, help="training manifest")
    s.add_argument("--model", required=True, choices=FIT_MODELS)
    s.add_argument("--d1", type=_positive, default=1)
    s.add_argument("--d2", type=_positive, default=1)
    s.add_argument("--max-iters", type=_positive)
    s.add_argument("--tol", type=float)
    s.add_argument("--pca-pre", type=_pca_pre, default=None, metavar="k|none")
    s.add_argument("--method", choices=["ml", "em"], default="ml", help="pcca solver")
    s.add_argument("--side", choices=["right", "left"], default="right", help="umvcca side")
    s.add_argument("--expand", action="store_true",
                   help="bmvcca: add a latent-whitening step after each M-step")
    s.add_argument("--out", required=True, help="archive path (JSON)")
    s.add_argument("--trace", help="trace CSV path (default: next to the archive)")
    common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("project", help="write latent codes for a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--view", choices=["1", "2", "both"], default="both")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("reconstruct", help="map codes back to one view")
    s.add_argument("--model", required=True)
    s.add_argument("--codes", required=True)
    s.add_argument("--view", choices=["1", "2"], required=True)
    s.add_argument("--format", choices=["csv", "pgm8"], default="csv")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_reconstruct)

    for name, func, helptext in (("classify", cmd_classify, "write per-probe predictions"),
                                 ("eval", cmd_eval, "write classification metrics JSON")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model", required=True)
        s.add_argument("--gallery", required=True, help="labeled gallery manifest")
        s.add_argument("--probe", required=True, help="labeled probe manifest")
        s.add_argument("--criterion", choices=["nn", "ptest"], default="nn")
        s.add_argument("--probe-view", choices=["1", "2"], default="2")
        s.add_argument("--gallery-view", choices=["1", "2", "both"],
                       help="nn gallery codes (default: the probe view)")
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("repro-fig1", help="bmvcca convergence trace on the 32x32, d=15 setup")
    s.add_argument("--out", required=True)
    s.add_argument("--max-iters", type=_positive, default=100)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--n-samples", type=_positive, default=FIG1_SPEC["n_samples"])
    s.add_argument("--expand", action="store_true")
    common(s)
    s.set_defaults(func=cmd_repro_fig1)

    s = sub.add_parser("repro-fig23", help="scalar latent recovery per iteration and sample size")
    s.add_argument("--out", required=True)
    s.add_argument("--sizes", type=_sizes, default=list(FIG23_SIZES))
    s.add_argument("--max-iters", type=_positive, default=300)
    s.add_argument("--tol", type=float, default=1e-7)
    common(s)
    s.set_defaults(func=cmd_repro_fig23)

    s = sub.add_parser("repro-fig4", help="true versus learned umvcca right maps")
    s.add_argument("--out", required=True)
    s.add_argument("--max-iters", type=_positive, default=500)
    s.add_argument("--tol", type=float, default=1e-7)
    common(s)
    s.set_defaults(func=cmd_repro_fig4)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (UsageError, StructuralError, OSError) as exc:
        return _fail(exc, EXIT_USAGE)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(exc, EXIT_NUMERICAL)
    return EXIT_OK


def _fail(exc: Exception, code: int) -> int:
    kind = "usage error" if code == EXIT_USAGE else "numerical error"
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"mvcca: {kind}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
