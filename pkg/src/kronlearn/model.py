"""Trained predictors, prediction over new edges, and the model file format.

A model file is line-oriented text::

    kronlearn-model/1
    kind dual
    start_kernel gaussian:1.0
    end_kernel gaussian:1.0
    start_vertices <m> <d>
    end_vertices <q> <r>
    edges <n>
    [start_features]
    ...                 m rows of d numbers (absent when precomputed)
    [end_features]
    ...
    [edges]
    <start> <end> <coefficient>
    [end]

Primal models carry ``kind primal``, ``dims <d> <r>`` and a ``[weights]``
section with one number per line. Floats are written with ``repr`` so every
value reloads bit for bit.
"""
from dataclasses import dataclass, field

import numpy as np

from .kron import edge_feature_operator, edge_kernel_operator, sampled_kron_matvec
from .matrix import KernelSpec, as_matrix, as_vector, kernel_matrix

__all__ = [
    "FORMAT_VERSION",
    "ModelFormatError",
    "DualModel",
    "PrimalModel",
    "PredictionRequest",
    "predict",
    "predict_dual",
    "predict_primal",
    "save_model",
    "load_model",
]

FORMAT_VERSION = "kronlearn-model/1"


class ModelFormatError(ValueError):
    """A model file could not be parsed."""


@dataclass
class PredictionRequest:
    """Edges to score.

    ``start_features`` (u rows) and ``end_features`` (v rows) describe the
    new vertices; for precomputed-kernel models they are the u x m and v x q
    kernel blocks against the training vertices.
    """

    start_features: np.ndarray
    end_features: np.ndarray
    start_idx: np.ndarray
    end_idx: np.ndarray

    def __post_init__(self):
        self.start_features = as_matrix(self.start_features, "request start features")
        self.end_features = as_matrix(self.end_features, "request end features")
        self.start_idx = np.ascontiguousarray(self.start_idx, dtype=np.intp)
        self.end_idx = np.ascontiguousarray(self.end_idx, dtype=np.intp)
        if self.start_idx.shape != self.end_idx.shape or self.start_idx.ndim != 1:
            raise ValueError("request index sequences must be vectors of equal length")
        for idx, bound, side in ((self.start_idx, self.start_features.shape[0], "start"),
                                 (self.end_idx, self.end_features.shape[0], "end")):
            bad = np.flatnonzero((idx < 0) | (idx >= bound))
            if bad.size:
                h = int(bad[0])
                raise IndexError(f"request edge {h}: {side} index {idx[h]} out of range [0, {bound})")

    @classmethod
    def from_dataset(cls, data):
        return cls(data.start_features, data.end_features, data.start_idx, data.end_idx)

    def __len__(self):
        return len(self.start_idx)


@dataclass
class DualModel:
    """Kernel expansion over the training edges.

    ``f(d, t) = sum_i a_i k(d_{start_i}, d) g(t_{end_i}, t)``. With
    precomputed kernels the feature arrays are ``None`` and ``m``/``q``
    record the training vertex counts.
    """

    coefficients: np.ndarray
    start_idx: np.ndarray
    end_idx: np.ndarray
    start_kernel: KernelSpec
    end_kernel: KernelSpec
    start_features: np.ndarray = None
    end_features: np.ndarray = None
    m: int = None
    q: int = None
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.coefficients = as_vector(self.coefficients, "dual coefficients")
        self.start_idx = np.ascontiguousarray(self.start_idx, dtype=np.intp)
        self.end_idx = np.ascontiguousarray(self.end_idx, dtype=np.intp)
        n = len(self.coefficients)
        if self.start_idx.shape != (n,) or self.end_idx.shape != (n,):
            raise ValueError("coefficient count must equal the number of training edges")
        for side in ("start", "end"):
            spec = getattr(self, side + "_kernel")
            feats = getattr(self, side + "_features")
            count_attr = "m" if side == "start" else "q"
            if spec.kind == "precomputed":
                if getattr(self, count_attr) is None:
                    raise ValueError(f"precomputed {side} kernel needs the training vertex count")
                setattr(self, side + "_features", None)
            else:
                if feats is None:
                    raise ValueError(f"{side} kernel {spec} needs training vertex features")
                feats = as_matrix(feats, f"{side} features")
                setattr(self, side + "_features", feats)
                setattr(self, count_attr, feats.shape[0])
        if self.start_idx.size and (self.start_idx.min() < 0 or self.start_idx.max() >= self.m):
            raise ValueError("training start index out of range")
        if self.end_idx.size and (self.end_idx.min() < 0 or self.end_idx.max() >= self.q):
            raise ValueError("training end index out of range")

    @property
    def n(self):
        return len(self.coefficients)


@dataclass
class PrimalModel:
    """Weights over Kronecker edge features, ``w[j * d + i]`` for end feature j, start feature i."""

    weights: np.ndarray
    d: int
    r: int
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = as_vector(self.weights, "primal weights")
        self.d, self.r = int(self.d), int(self.r)
        if len(self.weights) != self.d * self.r:
            raise ValueError(f"weight vector has length {len(self.weights)}, expected d*r = {self.d * self.r}")


def _request_kernel(spec, new, train, count, side):
    if spec.kind == "precomputed":
        if new.shape[1] != count:
            raise ValueError(
                f"precomputed {side} kernel block has {new.shape[1]} columns, model has {count} training vertices")
        return new
    if new.shape[1] != train.shape[1]:
        raise ValueError(
            f"{side} features have dimension {new.shape[1]}, model was trained on {train.shape[1]}")
    return kernel_matrix(new, train, spec)


def predict_dual(model, req, sparse=True):
    """Score request edges with a dual model.

    With ``sparse`` the coefficients equal to exactly 0.0 are dropped, and
    kernel blocks are only evaluated against training vertices that still
    carry a coefficient.
    """
    a = model.coefficients
    keep = np.flatnonzero(a != 0.0) if sparse else np.arange(len(a))
    if keep.size == 0:
        # still validate the request against the model
        _request_kernel(model.start_kernel, req.start_features[:0], model.start_features, model.m, "start")
        _request_kernel(model.end_kernel, req.end_features[:0], model.end_features, model.q, "end")
        return np.zeros(len(req))
    s, e = model.start_idx[keep], model.end_idx[keep]
    if sparse:
        us, s = np.unique(s, return_inverse=True)
        ue, e = np.unique(e, return_inverse=True)
    else:
        us, ue = np.arange(model.m), np.arange(model.q)
    start_train = None if model.start_features is None else model.start_features[us]
    end_train = None if model.end_features is None else model.end_features[ue]
    K = _request_kernel(model.start_kernel, req.start_features, start_train, model.m, "start")
    G = _request_kernel(model.end_kernel, req.end_features, end_train, model.q, "end")
    if model.start_kernel.kind == "precomputed":
        K = K[:, us]
    if model.end_kernel.kind == "precomputed":
        G = G[:, ue]
    op = edge_kernel_operator(K, G, req.start_idx, req.end_idx, s, e)
    return sampled_kron_matvec(op, a[keep])


def predict_primal(model, req):
    D, T = req.start_features, req.end_features
    if D.shape[1] != model.d or T.shape[1] != model.r:
        raise ValueError(
            f"request features are {D.shape[1]}/{T.shape[1]}-dimensional, model expects {model.d}/{model.r}")
    op = edge_feature_operator(D, T, req.start_idx, req.end_idx)
    return sampled_kron_matvec(op, model.weights)


def predict(model, req):
    if isinstance(model, PrimalModel):
        return predict_primal(model, req)
    return predict_dual(model, req)


# -- serialization ------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def _write_rows(fh, A):
    for row in A:
        fh.write(" ".join(_fmt(x) for x in row))
        fh.write("\n")


def save_model(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_VERSION + "\n")
        if isinstance(model, PrimalModel):
            fh.write("kind primal\n")
            fh.write(f"dims {model.d} {model.r}\n")
            fh.write("[weights]\n")
            fh.writelines(_fmt(x) + "\n" for x in model.weights)
        else:
            fh.write("kind dual\n")
            fh.write(f"start_kernel {model.start_kernel}\n")
            fh.write(f"end_kernel {model.end_kernel}\n")
            d = 0 if model.start_features is None else model.start_features.shape[1]
            r = 0 if model.end_features is None else model.end_features.shape[1]
            fh.write(f"start_vertices {model.m} {d}\n")
            fh.write(f"end_vertices {model.q} {r}\n")
            fh.write(f"edges {model.n}\n")
            fh.write("[start_features]\n")
            if model.start_features is not None:
                _write_rows(fh, model.start_features)
            fh.write("[end_features]\n")
            if model.end_features is not None:
                _write_rows(fh, model.end_features)
            fh.write("[edges]\n")
            fh.writelines(f"{s} {e} {_fmt(a)}\n" for s, e, a in
                          zip(model.start_idx.tolist(), model.end_idx.tolist(), model.coefficients.tolist()))
        fh.write("[end]\n")


class _Reader:
    def __init__(self, path):
        self.path = path
        try:
            with open(path, encoding="utf-8") as fh:
                self.lines = fh.read().split("\n")
        except OSError as exc:
            raise ModelFormatError(f"{path}: cannot read ({exc.strerror})") from None
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def fail(self, msg, lineno=None):
        lineno = self.pos if lineno is None else lineno
        raise ModelFormatError(f"{self.path}:{lineno}: {msg}")

    def next(self, what):
        if self.pos >= len(self.lines):
            raise ModelFormatError(f"{self.path}: truncated file, missing {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def field(self, key, count):
        parts = self.next(f"header field '{key}'").split()
        if not parts or parts[0] != key or len(parts) != count + 1:
            self.fail(f"expected '{key}' with {count} value(s), found {' '.join(parts)!r}")
        return parts[1:]

    def section(self, name):
        line = self.next(f"section [{name}]")
        if line.strip() != f"[{name}]":
            self.fail(f"expected section [{name}], found {line.strip()!r}")

    def ints(self, key, count):
        try:
            return [int(x) for x in self.field(key, count)]
        except ValueError:
            self.fail(f"'{key}' values must be integers")

    def rows(self, count, width, name):
        out = np.empty((count, width))
        for i in range(count):
            parts = self.next(f"row {i + 1} of [{name}] (expected {count})").split()
            if len(parts) != width:
                self.fail(f"[{name}] row has {len(parts)} values, expected {width}")
            try:
                out[i] = [float(x) for x in parts]
            except ValueError:
                self.fail(f"cannot parse number in [{name}]")
        return out


def load_model(path):
    rd = _Reader(path)
    version = rd.next("format version line").strip()
    if version != FORMAT_VERSION:
        rd.fail(f"unsupported model format {version!r}, expected {FORMAT_VERSION!r}")
    kind = rd.field("kind", 1)[0]
    if kind == "primal":
        d, r = rd.ints("dims", 2)
        rd.section("weights")
        w = rd.rows(d * r, 1, "weights").ravel()
        rd.section("end")
        return PrimalModel(w, d, r)
    if kind != "dual":
        rd.fail(f"unknown model kind {kind!r}")
    try:
        start_kernel = KernelSpec.parse(rd.field("start_kernel", 1)[0])
        end_kernel = KernelSpec.parse(rd.field("end_kernel", 1)[0])
    except ValueError as exc:
        rd.fail(str(exc))
    m, d = rd.ints("start_vertices", 2)
    q, r = rd.ints("end_vertices", 2)
    (n,) = rd.ints("edges", 1)
    rd.section("start_features")
    D = rd.rows(m, d, "start_features") if start_kernel.kind != "precomputed" else None
    rd.section("end_features")
    T = rd.rows(q, r, "end_features") if end_kernel.kind != "precomputed" else None
    rd.section("edges")
    s = np.empty(n, dtype=np.intp)
    e = np.empty(n, dtype=np.intp)
    a = np.empty(n)
    for h in range(n):
        parts = rd.next(f"edge {h + 1} of [edges] (expected {n})").split()
        if len(parts) != 3:
            rd.fail(f"edge line has {len(parts)} fields, expected 3")
        try:
            s[h], e[h], a[h] = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            rd.fail("cannot parse edge line")
    rd.section("end")
    try:
        return DualModel(a, s, e, start_kernel, end_kernel, D, T, m=m, q=q)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
