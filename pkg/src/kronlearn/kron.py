"""Sampled Kronecker products ``R (M kron N) C^T v`` without forming ``M kron N``.

Rows of ``M kron N`` are addressed by pairs ``(p, q)`` (row of ``M``, row of
``N``), columns by pairs ``(r, t)``; flat index ``p * c + q`` for rows and
``r * d + t`` for columns, 0-based throughout.

The fast product first scatters ``v`` into a sparse ``d x b`` matrix ``V``
(duplicate column edges add up), multiplies it by one factor, then gathers
each output as a length-``d`` or length-``b`` inner product. Both orders are
implemented; the cheaper one is picked from the operator dimensions.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SampledKronOperator",
    "index_decompose",
    "sampled_kron_matvec",
    "sampled_kron_matvec_transposed",
    "naive_sampled_kron_matvec",
    "explicit_sampled_kron_matvec",
    "NAIVE_MAX_ENTRIES",
    "edge_kernel_operator",
    "edge_feature_operator",
]

NAIVE_MAX_ENTRIES = 10**6

# elements per temporary in the gather phase (~32 MB of float64)
_GATHER_BLOCK_ELEMS = 1 << 22


def _as_index(idx, bound, name):
    idx = np.ascontiguousarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"{name} must be a 1-d index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        bad = int(np.flatnonzero((idx < 0) | (idx >= bound))[0])
        raise IndexError(f"{name}[{bad}] = {idx[bad]} out of range [0, {bound})")
    return idx


@dataclass(frozen=True)
class SampledKronOperator:
    """The matrix ``R (M kron N) C^T`` held as factors plus index sequences.

    Attributes
    ----------
    M : ndarray, shape (a, b)
    N : ndarray, shape (c, d)
    p, q : int arrays of length f
        Output rows: row ``h`` of the result is row ``p[h] * c + q[h]`` of
        ``M kron N``.
    r, t : int arrays of length e
        Input columns: entry ``g`` of the input vector multiplies column
        ``r[g] * d + t[g]``.
    """

    M: np.ndarray
    N: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        N = np.asarray(self.N, dtype=np.float64)
        if M.ndim != 2 or N.ndim != 2:
            raise ValueError("factors must be 2-dimensional")
        a, b = M.shape
        c, d = N.shape
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "p", _as_index(self.p, a, "p"))
        object.__setattr__(self, "q", _as_index(self.q, c, "q"))
        object.__setattr__(self, "r", _as_index(self.r, b, "r"))
        object.__setattr__(self, "t", _as_index(self.t, d, "t"))
        if len(self.p) != len(self.q):
            raise ValueError(f"row index sequences differ in length ({len(self.p)} vs {len(self.q)})")
        if len(self.r) != len(self.t):
            raise ValueError(f"column index sequences differ in length ({len(self.r)} vs {len(self.t)})")
        if len(self.p) == 0 or len(self.r) == 0:
            raise ValueError("operator needs at least one row edge and one column edge")

    @property
    def shape(self):
        return len(self.p), len(self.r)

    @property
    def dims(self):
        """``(a, b, c, d, e, f)`` as used in the cost model."""
        a, b = self.M.shape
        c, d = self.N.shape
        return a, b, c, d, len(self.r), len(self.p)

    def transpose(self):
        """``C (M^T kron N^T) R^T`` as an operator over transposed views."""
        return SampledKronOperator(self.M.T, self.N.T, self.r, self.t, self.p, self.q)

    def select(self, rows=None, cols=None):
        """Restrict to a subset of output rows and/or input columns."""
        p, q, r, t = self.p, self.q, self.r, self.t
        if rows is not None:
            p, q = p[rows], q[rows]
        if cols is not None:
            r, t = r[cols], t[cols]
        return SampledKronOperator(self.M, self.N, p, q, r, t)

    def matvec(self, v, branch=None):
        return sampled_kron_matvec(self, v, branch=branch)

    def rmatvec(self, v):
        return sampled_kron_matvec_transposed(self, v)


def index_decompose(i, c, a=None):
    """Split a flat row index of ``M kron N`` into ``(p, q)``.

    ``c`` is the row count of ``N``; ``a`` (row count of ``M``), when given,
    bounds the admissible range. Works elementwise on integer arrays.
    """
    if c < 1:
        raise ValueError(f"row count of second factor must be positive, got {c}")
    i_arr = np.asarray(i)
    upper = None if a is None else a * c
    if np.any(i_arr < 0) or (upper is not None and np.any(i_arr >= upper)):
        raise IndexError(f"flat index {i} out of range [0, {upper if upper is not None else 'inf'})")
    p, q = np.divmod(i_arr, c)
    if np.ndim(p) == 0:
        return int(p), int(q)
    return p, q


def choose_branch(op):
    a, b, c, d, e, f = op.dims
    # tie goes to the T-path
    return "T" if a * e + d * f <= c * e + b * f else "S"


def _rowdot(A, ia, B, ib):
    """out[h] = <A[ia[h]], B[ib[h]]>, blocked to bound temporaries."""
    n = len(ia)
    out = np.empty(n)
    width = max(1, A.shape[1])
    step = max(1, _GATHER_BLOCK_ELEMS // width)
    for s in range(0, n, step):
        np.einsum("ij,ij->i", A[ia[s:s + step]], B[ib[s:s + step]], out=out[s:s + step])
    return out


def sampled_kron_matvec(op, v, branch=None):
    """Compute ``u = R (M kron N) C^T v``.

    Parameters
    ----------
    op : SampledKronOperator
    v : array, shape (e,)
    branch : {None, "T", "S"}
        Force an evaluation order; by default the cheaper of
        ``a*e + d*f`` (T-path) and ``c*e + b*f`` (S-path) is used.

    Returns
    -------
    ndarray, shape (f,)
    """
    v = np.asarray(v, dtype=np.float64)
    a, b, c, d, e, f = op.dims
    if v.shape != (e,):
        raise ValueError(f"input vector has length {v.shape}, operator expects {e}")
    if branch is None:
        branch = choose_branch(op)
    # V (d x b) with vec(V) = C^T v; coo -> csr sums duplicate edges
    V = sp.csr_matrix((v, (op.t, op.r)), shape=(d, b))
    if branch == "T":
        # T = V M^T, stored transposed (a x d) so rows index p
        Tt = np.asarray((V @ op.M.T).T, order="C")
        return _rowdot(op.N, op.q, Tt, op.p)
    if branch == "S":
        # S = N V, built as (V^T N^T)^T
        S = np.asarray((V.T.tocsr() @ op.N.T).T, order="C")
        return _rowdot(S, op.q, op.M, op.p)
    raise ValueError(f"branch must be 'T' or 'S', got {branch!r}")


def sampled_kron_matvec_transposed(op, v, branch=None):
    """Compute ``C (M^T kron N^T) R^T v`` for ``v`` of length f."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (len(op.p),):
        raise ValueError(f"input vector has length {v.shape}, transposed operator expects {len(op.p)}")
    return sampled_kron_matvec(op.transpose(), v, branch=branch)


def naive_sampled_kron_matvec(op, v, max_entries=NAIVE_MAX_ENTRIES):
    """Reference product: materialize ``M kron N``, select rows/columns, multiply.

    Only for small operators; refuses when ``a*b*c*d`` exceeds ``max_entries``.
    """
    v = np.asarray(v, dtype=np.float64)
    a, b, c, d, e, f = op.dims
    if v.shape != (e,):
        raise ValueError(f"input vector has length {v.shape}, operator expects {e}")
    size = a * b * c * d
    if size > max_entries:
        raise MemoryError(f"explicit Kronecker product has {size} entries, guard is {max_entries}")
    full = np.kron(op.M, op.N)
    rows = op.p * c + op.q
    cols = op.r * d + op.t
    return full[rows][:, cols] @ v


def explicit_sampled_kron_matvec(op, v, max_entries=None, block_rows=256):
    """Baseline product through the explicit ``f x e`` matrix ``R (M kron N) C^T``.

    Entry ``(h, g)`` is ``M[p_h, r_g] * N[q_h, t_g]``. The matrix is formed
    ``block_rows`` rows at a time so memory stays at ``O(block_rows * e)``
    while the work is the full ``O(f * e)``.
    """
    v = np.asarray(v, dtype=np.float64)
    a, b, c, d, e, f = op.dims
    if v.shape != (e,):
        raise ValueError(f"input vector has length {v.shape}, operator expects {e}")
    if max_entries is not None and e * f > max_entries:
        raise MemoryError(f"explicit edge matrix has {e * f} entries, guard is {max_entries}")
    out = np.empty(f)
    for s in range(0, f, block_rows):
        block = op.M[np.ix_(op.p[s:s + block_rows], op.r)]
        block *= op.N[np.ix_(op.q[s:s + block_rows], op.t)]
        out[s:s + block_rows] = block @ v
    return out


def edge_kernel_operator(K, G, row_start, row_end, col_start, col_end):
    """Edge kernel block ``R (G kron K) C^T``.

    ``K`` holds start-vertex kernel values (rows: output side, columns:
    coefficient side) and ``G`` end-vertex ones. Rows of the result are the
    edges ``(row_start[h], row_end[h])``, columns ``(col_start[g], col_end[g])``.
    """
    return SampledKronOperator(G, K, row_end, row_start, col_end, col_start)


def edge_feature_operator(D, T, start_idx, end_idx):
    """Explicit edge features ``R (T kron D)`` for linear vertex kernels.

    Column ``j * D.shape[1] + i`` pairs end feature ``j`` with start
    feature ``i``, so a primal weight vector reshaped to ``(r, d)`` is the
    bilinear form ``f(d, t) = t^T W d``.
    """
    d = D.shape[1]
    r = T.shape[1]
    cols = np.arange(r * d)
    return SampledKronOperator(T, D, end_idx, start_idx, cols // d, cols % d)
