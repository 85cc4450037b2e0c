"""Command-line interface: ``kronlearn <subcommand> ...``.

Reports are tab-separated text on stdout. Every run first prints its
resolved configuration as ``# key<TAB>value`` lines. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import sys
import time

import numpy as np

from . import __version__
from .data import (DEFAULT_SEED, DataError, auc, dataset_paths, generate_checkerboard,
                   load_dataset, make_rng, read_edges, read_matrix, save_dataset, vertex_disjoint_split)
from .kron import edge_kernel_operator, explicit_sampled_kron_matvec, sampled_kron_matvec
from .learners import EarlyStopping, TrainConfig, TrainingError, train
from .losses import LOSSES
from .matrix import KernelSpec, kernel_matrix
from .model import ModelFormatError, PredictionRequest, load_model, predict, save_model
from .solvers import SolverError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# explicit baseline refuses edge matrices with more entries than this
BENCH_NAIVE_GUARD = 2 * 10**9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _kernel(text):
    try:
        return KernelSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(row):
    print("\t".join(str(x) for x in row))


def _echo_config(command, pairs):
    _emit(["# command", command])
    for key, value in pairs:
        _emit([f"# {key}", value])


def _fmt(x):
    return "NA" if x is None else f"{x:.10g}"


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    if not 0 < args.density <= 1:
        raise UsageError(f"--density must be in (0, 1], got {args.density}")
    if not 0 <= args.flip_prob < 0.5:
        raise UsageError(f"--flip-prob must be in [0, 0.5), got {args.flip_prob}")
    _echo_config("simulate", [("m", args.m), ("q", args.q), ("density", args.density),
                              ("flip_prob", args.flip_prob), ("seed", args.seed),
                              ("out_prefix", args.out_prefix)])
    try:
        data = generate_checkerboard(args.m, args.q, args.density, args.flip_prob, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        paths = save_dataset(data, args.out_prefix)
    except OSError as exc:
        raise DataError(f"cannot write {args.out_prefix}: {exc.strerror}") from None
    _emit(["edges", data.n])
    for name, path in zip(("start", "end", "edges"), paths):
        _emit([f"{name}_file", path])


# -- train --------------------------------------------------------------------

def _kernels(args):
    start = args.start_kernel or args.kernel
    end = args.end_kernel or args.kernel
    return start, end


def _load_prefix(prefix):
    return load_dataset(*dataset_paths(prefix))


def _train_config(args, early_stop=None):
    start, end = _kernels(args)
    if args.mode == "primal" and (start.kind != "linear" or end.kind != "linear"):
        raise UsageError(f"primal mode needs linear vertex kernels, got start={start} end={end}")
    try:
        return TrainConfig(loss=args.loss, lam=args.lam, outer_iters=args.outer, inner_iters=args.inner,
                           step_size=args.delta, early_stop=early_stop, track=True)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_pairs(args):
    start, end = _kernels(args)
    return [("loss", args.loss), ("mode", args.mode), ("start_kernel", start), ("end_kernel", end),
            ("lambda", repr(args.lam)), ("outer", args.outer), ("inner", args.inner),
            ("delta", repr(args.delta)), ("seed", args.seed)]


def cmd_train(args):
    _train_config(args)
    early = None
    pairs = _train_pairs(args) + [("data", args.data), ("early_stop_files", args.early_stop_files),
                                  ("patience", args.patience), ("model_out", args.model_out)]
    _echo_config("train", pairs)
    data = _load_prefix(args.data)
    if args.early_stop_files:
        early = EarlyStopping(_load_prefix(args.early_stop_files), args.patience)
    cfg = _train_config(args, early)
    start, end = _kernels(args)
    t0 = time.perf_counter()
    model = train(data, cfg, args.mode, start, end)
    elapsed = time.perf_counter() - t0
    header = ["round", "objective"] + (["val_auc"] if early else [])
    _emit(header)
    for row in model.history:
        out = [row["round"], _fmt(row["objective"])]
        if early:
            out.append(_fmt(row.get("val_auc")))
        _emit(out)
    try:
        save_model(model, args.model_out)
    except OSError as exc:
        raise DataError(f"cannot write model to {args.model_out}: {exc.strerror}") from None
    _emit(["# train_seconds", f"{elapsed:.3f}"])


# -- predict / evaluate -------------------------------------------------------

def _load_request(prefix):
    start_path, end_path, edge_path = dataset_paths(prefix)
    D = read_matrix(start_path)
    T = read_matrix(end_path)
    s, e, y = read_edges(edge_path, require_labels=False)
    try:
        return PredictionRequest(D, T, s, e), y
    except IndexError as exc:
        raise DataError(f"{edge_path}: {exc}") from None


def cmd_predict(args):
    _echo_config("predict", [("model", args.model), ("data", args.data), ("out", args.out)])
    model = load_model(args.model)
    req, _ = _load_request(args.data)
    scores = predict(model, req)
    try:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{x!r}\n" for x in scores.tolist())
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc.strerror}") from None
    _emit(["predictions", len(scores)])


def _last_column(path):
    A = read_matrix(path)
    return A[:, -1]


def cmd_evaluate(args):
    _echo_config("evaluate", [("scores", args.scores), ("labels", args.labels)])
    scores = _last_column(args.scores)
    labels = _last_column(args.labels)
    if scores.shape != labels.shape:
        raise DataError(f"{args.scores} has {len(scores)} scores but {args.labels} has {len(labels)} labels")
    _emit(["auc", f"{auc(scores, labels):.4f}"])


# -- cv -----------------------------------------------------------------------

def cmd_cv(args):
    _train_config(args)
    _echo_config("cv", _train_pairs(args) + [("data", args.data), ("folds", args.folds)])
    data = _load_prefix(args.data)
    try:
        plan = vertex_disjoint_split(data, args.folds, args.folds, args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    cfg = _train_config(args)
    start, end = _kernels(args)
    _emit(["start_fold", "end_fold", "n_train", "n_test", "auc"])
    pooled_scores, pooled_labels, aucs = [], [], []
    for i, j, tr_idx, te_idx in plan.rounds():
        if tr_idx.size == 0 or te_idx.size == 0:
            _emit([i, j, tr_idx.size, te_idx.size, "NA"])
            continue
        # keep the full vertex sets so test indices stay valid
        tr = data.subset(tr_idx, compact=False)
        model = train(tr, cfg, args.mode, start, end)
        te = data.subset(te_idx, compact=False)
        scores = predict(model, PredictionRequest.from_dataset(te))
        pooled_scores.append(scores)
        pooled_labels.append(te.labels)
        try:
            value = auc(scores, te.labels)
            aucs.append(value)
        except ValueError:
            value = None
        _emit([i, j, tr_idx.size, te_idx.size, _fmt(value)])
    if aucs:
        _emit(["mean_auc", _fmt(float(np.mean(aucs)))])
    if pooled_scores:
        try:
            _emit(["pooled_auc", _fmt(auc(np.concatenate(pooled_scores), np.concatenate(pooled_labels)))])
        except ValueError:
            _emit(["pooled_auc", "NA"])


# -- bench --------------------------------------------------------------------

def _bench_operator(rng, m, q, n):
    X = rng.uniform(0.0, 100.0, size=(m, 1))
    Z = rng.uniform(0.0, 100.0, size=(q, 1))
    spec = KernelSpec("gaussian", 1e-3)
    K, G = kernel_matrix(X, X, spec), kernel_matrix(Z, Z, spec)
    s = rng.integers(0, m, size=n)
    e = rng.integers(0, q, size=n)
    return edge_kernel_operator(K, G, s, e, s, e), rng.standard_normal(n)


def _time_best(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args):
    _echo_config("bench", [("sizes", ",".join(map(str, args.sizes))), ("mode", args.mode), ("m", args.m),
                           ("q", args.q), ("repeats", args.repeats), ("seed", args.seed)])
    rng = make_rng(args.seed)
    _emit(["n", "seconds", "ratio_to_previous", "status"])
    prev = None
    for n in args.sizes:
        op, v = _bench_operator(rng, args.m, args.q, n)
        if args.mode == "naive" and n * n > BENCH_NAIVE_GUARD:
            _emit([n, "NA", "NA", "skipped:guard"])
            prev = None
            continue
        fn = (lambda: sampled_kron_matvec(op, v)) if args.mode == "fast" else (
            lambda: explicit_sampled_kron_matvec(op, v))
        seconds = _time_best(fn, args.repeats)
        ratio = "NA" if prev is None else f"{seconds / prev:.3f}"
        _emit([n, f"{seconds:.6f}", ratio, "ok"])
        prev = seconds


# -- parser -------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--loss", default="l2svm", choices=LOSSES)
    p.add_argument("--mode", default="dual", choices=("dual", "primal"))
    p.add_argument("--kernel", type=_kernel, default=KernelSpec("linear"),
                   help="linear, gaussian:<gamma> or precomputed (both sides)")
    p.add_argument("--start-kernel", type=_kernel, default=None, help="override --kernel for start vertices")
    p.add_argument("--end-kernel", type=_kernel, default=None, help="override --kernel for end vertices")
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    p.add_argument("--outer", type=_positive_int, default=10)
    p.add_argument("--inner", type=_positive_int, default=10)
    p.add_argument("--delta", type=_positive_float, default=1.0, help="Newton step size")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def build_parser():
    parser = _Parser(prog="kronlearn", description="Kronecker product kernel learning on bipartite graphs.")
    parser.add_argument("--version", action="version", version=f"kronlearn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="generate a checkerboard dataset")
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--q", type=_positive_int, required=True)
    p.add_argument("--density", type=float, default=0.25)
    p.add_argument("--flip-prob", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("data", help="dataset prefix (<prefix>.start.txt, .end.txt, .edges.txt)")
    _add_train_flags(p)
    p.add_argument("--early-stop-files", default=None, help="validation dataset prefix")
    p.add_argument("--patience", type=_positive_int, default=3)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score edges with a trained model")
    p.add_argument("data", help="request prefix; the edge file may omit labels")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="AUC of scores against labels")
    p.add_argument("--scores", required=True, help="one score per line")
    p.add_argument("--labels", required=True, help="labels in the last column (an edge file works)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="vertex-disjoint k x k cross-validation")
    p.add_argument("data")
    _add_train_flags(p)
    p.add_argument("--folds", type=_positive_int, default=3)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("bench", help="time the sampled Kronecker product")
    p.add_argument("--sizes", type=lambda s: [_positive_int(x) for x in s.split(",")], required=True,
                   help="comma-separated edge counts")
    p.add_argument("--mode", default="fast", choices=("fast", "naive"))
    p.add_argument("--m", type=_positive_int, default=200)
    p.add_argument("--q", type=_positive_int, default=200)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, OSError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, SolverError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
