"""Bipartite edge datasets: file I/O, checkerboard simulation, vertex-disjoint
cross-validation splits and AUC.

File formats (UTF-8, LF, no header):

* vertex files: one vertex per line, whitespace-separated decimal features
  (or one kernel row per line for precomputed kernels);
* edge files: ``start_index end_index label`` per line, 0-based indices.
  Prediction requests may omit the label column.

Randomness comes from numpy's PCG64 bit generator seeded with the integer
seed (``numpy.random.Generator(numpy.random.PCG64(seed))``); see
:func:`generate_checkerboard` for the exact draw order.
"""
from dataclasses import dataclass
import os

import numpy as np
from scipy.stats import rankdata

from .matrix import as_matrix

__all__ = [
    "DataError",
    "BipartiteDataset",
    "SplitPlan",
    "make_rng",
    "read_matrix",
    "write_matrix",
    "read_edges",
    "write_edges",
    "load_dataset",
    "save_dataset",
    "checkerboard_label",
    "generate_checkerboard",
    "sample_edges",
    "vertex_disjoint_split",
    "train_validation_split",
    "auc",
]

DEFAULT_SEED = 0
# below this density, edges are drawn by rejection instead of Fisher-Yates
_REJECTION_DENSITY = 0.01


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class BipartiteDataset:
    """Labeled edges between two vertex sets.

    ``start_features`` is m x d and ``end_features`` q x r; with precomputed
    kernels they hold the m x m and q x q training kernels instead. Edge ``h``
    joins start vertex ``start_idx[h]`` and end vertex ``end_idx[h]``.
    """

    start_features: np.ndarray
    end_features: np.ndarray
    start_idx: np.ndarray
    end_idx: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        try:
            self.start_features = as_matrix(self.start_features, "start vertex features")
            self.end_features = as_matrix(self.end_features, "end vertex features")
        except ValueError as exc:
            raise DataError(str(exc)) from None
        self.start_idx = np.ascontiguousarray(self.start_idx, dtype=np.intp)
        self.end_idx = np.ascontiguousarray(self.end_idx, dtype=np.intp)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        n = len(self.labels)
        if n < 1:
            raise DataError("dataset has no edges")
        if self.start_idx.shape != (n,) or self.end_idx.shape != (n,):
            raise DataError("edge index sequences and labels differ in length")
        if not np.all(np.isfinite(self.labels)):
            raise DataError("labels contain non-finite values")
        for idx, bound, side in ((self.start_idx, self.m, "start"), (self.end_idx, self.q, "end")):
            bad = np.flatnonzero((idx < 0) | (idx >= bound))
            if bad.size:
                h = int(bad[0])
                raise DataError(f"edge {h}: {side} index {idx[h]} out of range [0, {bound})")

    @property
    def m(self):
        return self.start_features.shape[0]

    @property
    def q(self):
        return self.end_features.shape[0]

    @property
    def n(self):
        return len(self.labels)

    def subset(self, edges, compact=True):
        """Dataset restricted to the given edge positions.

        With ``compact`` only the vertices touched by those edges are kept and
        indices are renumbered (order of first appearance by vertex index).
        """
        edges = np.asarray(edges, dtype=np.intp)
        s, e = self.start_idx[edges], self.end_idx[edges]
        if not compact:
            return BipartiteDataset(self.start_features, self.end_features, s, e, self.labels[edges])
        us, s_new = np.unique(s, return_inverse=True)
        ue, e_new = np.unique(e, return_inverse=True)
        return BipartiteDataset(self.start_features[us], self.end_features[ue],
                                s_new, e_new, self.labels[edges])


# -- file I/O -----------------------------------------------------------------

def _lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def read_matrix(path):
    """Whitespace-separated decimal matrix, one row per line."""
    rows = []
    width = None
    for lineno, line in enumerate(_lines(path), 1):
        parts = line.split()
        if not parts:
            raise DataError(f"{path}:{lineno}: empty line")
        try:
            row = [float(x) for x in parts]
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse number in {line.strip()!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
        if not all(np.isfinite(row)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no rows")
    return np.array(rows, dtype=np.float64)


def write_matrix(path, A):
    A = np.asarray(A, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in A:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_edges(path, require_labels=True):
    """Read an edge file; returns ``(start_idx, end_idx, labels or None)``."""
    starts, ends, labels = [], [], []
    ncols = None
    for lineno, line in enumerate(_lines(path), 1):
        parts = line.split()
        if ncols is None:
            ncols = len(parts)
            allowed = (3,) if require_labels else (2, 3)
            if ncols not in allowed:
                raise DataError(f"{path}:{lineno}: expected 'start end label', found {ncols} columns")
        elif len(parts) != ncols:
            raise DataError(f"{path}:{lineno}: expected {ncols} columns, found {len(parts)}")
        try:
            starts.append(int(parts[0]))
            ends.append(int(parts[1]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: vertex indices must be integers") from None
        if ncols == 3:
            try:
                lab = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse label {parts[2]!r}") from None
            if not np.isfinite(lab):
                raise DataError(f"{path}:{lineno}: non-finite label")
            labels.append(lab)
    if ncols is None:
        raise DataError(f"{path}: no edges")
    y = np.array(labels, dtype=np.float64) if ncols == 3 else None
    return np.array(starts, dtype=np.intp), np.array(ends, dtype=np.intp), y


def write_edges(path, start_idx, end_idx, labels=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if labels is None:
            fh.writelines(f"{s} {e}\n" for s, e in zip(start_idx.tolist(), end_idx.tolist()))
        else:
            fh.writelines(f"{s} {e} {y!r}\n" for s, e, y in
                          zip(start_idx.tolist(), end_idx.tolist(), np.asarray(labels, dtype=float).tolist()))


def _check_edge_range(path, idx, bound, side):
    bad = np.flatnonzero((idx < 0) | (idx >= bound))
    if bad.size:
        h = int(bad[0])
        raise DataError(f"{path}:{h + 1}: {side} index {idx[h]} out of range [0, {bound})")


def load_dataset(start_path, end_path, edge_path):
    D = read_matrix(start_path)
    T = read_matrix(end_path)
    s, e, y = read_edges(edge_path)
    _check_edge_range(edge_path, s, D.shape[0], "start")
    _check_edge_range(edge_path, e, T.shape[0], "end")
    return BipartiteDataset(D, T, s, e, y)


def dataset_paths(prefix):
    return prefix + ".start.txt", prefix + ".end.txt", prefix + ".edges.txt"


def save_dataset(data, prefix):
    """Write ``<prefix>.start.txt``, ``<prefix>.end.txt`` and ``<prefix>.edges.txt``."""
    start_path, end_path, edge_path = dataset_paths(prefix)
    parent = os.path.dirname(start_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_matrix(start_path, data.start_features)
    write_matrix(end_path, data.end_features)
    write_edges(edge_path, data.start_idx, data.end_idx, data.labels)
    return start_path, end_path, edge_path


# -- simulation ---------------------------------------------------------------

def checkerboard_label(d, t):
    """+1 when floor(d) and floor(t) have the same parity, else -1."""
    same = (np.floor(d).astype(np.int64) % 2) == (np.floor(t).astype(np.int64) % 2)
    return np.where(same, 1.0, -1.0)


def sample_edges(rng, m, q, n):
    """Draw ``n`` distinct flat indices from ``range(m * q)``, sorted.

    Partial Fisher-Yates when ``n / (m q)`` exceeds 1%: the swap targets are
    drawn in one call, ``rng.integers(arange(n), m*q)``. Otherwise rejection:
    ``rng.integers(m*q)`` one at a time, duplicates skipped.
    """
    total = m * q
    if n > total:
        raise ValueError(f"cannot draw {n} distinct edges from {total}")
    if n > _REJECTION_DENSITY * total:
        pool = np.arange(total, dtype=np.int64)
        targets = rng.integers(np.arange(n), total)
        for k, j in enumerate(targets.tolist()):
            pool[k], pool[j] = pool[j], pool[k]
        chosen = pool[:n]
    else:
        seen = set()
        picked = []
        while len(picked) < n:
            x = int(rng.integers(total))
            if x not in seen:
                seen.add(x)
                picked.append(x)
        chosen = np.array(picked, dtype=np.int64)
    return np.sort(chosen)


def generate_checkerboard(m, q, density=0.25, flip_prob=0.2, seed=DEFAULT_SEED, return_clean=False):
    """Simulate the checkerboard edge-labeling problem.

    Draw order from ``make_rng(seed)``: m start features ``uniform(0, 100)``,
    q end features ``uniform(0, 100)``, the edge sample
    (:func:`sample_edges`), then n ``uniform(0, 1)`` draws deciding label
    flips (flip when the draw is below ``flip_prob``).
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must be in (0, 1], got {density}")
    if not 0.0 <= flip_prob < 0.5:
        raise ValueError(f"flip probability must be in [0, 0.5), got {flip_prob}")
    if m < 1 or q < 1:
        raise ValueError("need at least one start and one end vertex")
    n = int(round(density * m * q))
    if n < 1:
        raise ValueError(f"density {density} gives no edges for a {m}x{q} grid")
    rng = make_rng(seed)
    d = rng.uniform(0.0, 100.0, size=m)
    t = rng.uniform(0.0, 100.0, size=q)
    flat = sample_edges(rng, m, q, n)
    s, e = np.divmod(flat, q)
    clean = checkerboard_label(d[s], t[e])
    flips = rng.random(n) < flip_prob
    y = np.where(flips, -clean, clean)
    data = BipartiteDataset(d.reshape(-1, 1), t.reshape(-1, 1), s, e, y)
    if return_clean:
        return data, clean
    return data


# -- splitting ----------------------------------------------------------------

@dataclass
class SplitPlan:
    """Fold assignment of start and end vertices.

    Round ``(i, j)`` tests on edges whose start vertex is in start fold i and
    end vertex in end fold j, and trains on edges whose start fold differs
    from i and end fold differs from j. The remaining edges are unused.
    """

    start_folds: np.ndarray
    end_folds: np.ndarray
    edge_start_folds: np.ndarray
    edge_end_folds: np.ndarray

    @property
    def k_start(self):
        return int(self.start_folds.max()) + 1

    @property
    def k_end(self):
        return int(self.end_folds.max()) + 1

    def round_edges(self, i, j):
        """``(train_edges, test_edges)`` positions for block ``(i, j)``."""
        fs, fe = self.edge_start_folds, self.edge_end_folds
        test = np.flatnonzero((fs == i) & (fe == j))
        train = np.flatnonzero((fs != i) & (fe != j))
        return train, test

    def rounds(self):
        for i in range(self.k_start):
            for j in range(self.k_end):
                train, test = self.round_edges(i, j)
                yield i, j, train, test


def _assign_folds(rng, count, k, side):
    if k < 2:
        raise ValueError(f"need at least 2 {side} folds, got {k}")
    if count < k:
        raise ValueError(f"cannot split {count} {side} vertices into {k} nonempty folds")
    folds = np.empty(count, dtype=np.intp)
    folds[rng.permutation(count)] = np.arange(count) % k
    return folds


def vertex_disjoint_split(data, start_folds=3, end_folds=3, seed=DEFAULT_SEED):
    """Randomly partition start and end vertices into folds (3x3 by default)."""
    rng = make_rng(seed)
    fs = _assign_folds(rng, data.m, start_folds, "start")
    fe = _assign_folds(rng, data.q, end_folds, "end")
    return SplitPlan(fs, fe, fs[data.start_idx], fe[data.end_idx])


def train_validation_split(data, validation_fraction=0.25, seed=DEFAULT_SEED):
    """Vertex-disjoint train/validation split for early stopping.

    A ``validation_fraction`` share of start vertices and of end vertices is
    held out; validation edges join two held-out vertices, training edges two
    kept ones. Both returned datasets are compacted.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation fraction must be in (0, 1)")
    rng = make_rng(seed)
    vs = max(1, int(round(validation_fraction * data.m)))
    ve = max(1, int(round(validation_fraction * data.q)))
    if vs >= data.m or ve >= data.q:
        raise ValueError("too few vertices for a train/validation split")
    hold_s = np.zeros(data.m, dtype=bool)
    hold_s[rng.permutation(data.m)[:vs]] = True
    hold_e = np.zeros(data.q, dtype=bool)
    hold_e[rng.permutation(data.q)[:ve]] = True
    es, ee = hold_s[data.start_idx], hold_e[data.end_idx]
    train = np.flatnonzero(~es & ~ee)
    valid = np.flatnonzero(es & ee)
    if train.size == 0 or valid.size == 0:
        raise ValueError("train/validation split left one side without edges")
    return data.subset(train), data.subset(valid)


# -- evaluation ---------------------------------------------------------------

def auc(scores, labels):
    """Area under the ROC curve from rank sums; ties count one half.

    Labels are {-1, +1}; both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be vectors of equal length")
    pos = labels == 1.0
    neg = labels == -1.0
    if not np.all(pos | neg):
        raise ValueError("AUC labels must be -1 or +1")
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
