"""Dense matrix helpers and vertex kernel matrices.

Matrices and vectors are plain C-ordered float64 numpy arrays. The helpers
here validate shapes and finiteness at the boundaries where data enters the
library (files, kernel evaluation) and leave the arithmetic to numpy.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelSpec",
    "as_matrix",
    "as_vector",
    "kernel_matrix",
    "matvec",
    "matvec_transposed",
    "check_symmetric",
]

# rows per block when evaluating Gaussian kernels; bounds the n1*n2*f buffer
_GAUSS_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class KernelSpec:
    """Vertex kernel: ``linear``, ``gaussian`` (with ``gamma``) or ``precomputed``."""

    kind: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian", "precomputed"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gaussian kernel needs gamma > 0, got {self.gamma!r}")

    @classmethod
    def parse(cls, text):
        """Parse ``linear``, ``precomputed`` or ``gaussian:<gamma>``."""
        text = text.strip()
        if text in ("linear", "precomputed"):
            return cls(text)
        if text.startswith("gaussian:"):
            try:
                gamma = float(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad gaussian width in {text!r}") from None
            return cls("gaussian", gamma)
        raise ValueError(f"kernel must be linear, precomputed or gaussian:<gamma>, got {text!r}")

    def __str__(self):
        if self.kind == "gaussian":
            return f"gaussian:{self.gamma!r}"
        return self.kind


def as_matrix(values, name="matrix"):
    A = np.ascontiguousarray(values, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def as_vector(values, name="vector"):
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def _sq_dists(X1, X2):
    # direct differences; the |x|^2 + |y|^2 - 2<x,y> expansion cancels badly
    # for nearby points, which is exactly where the Gaussian kernel matters
    n1, n2 = X1.shape[0], X2.shape[0]
    out = np.empty((n1, n2))
    step = max(1, _GAUSS_BLOCK_ELEMS // max(1, n2 * X1.shape[1]))
    for start in range(0, n1, step):
        diff = X1[start:start + step, None, :] - X2[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[start:start + step])
    return out


def kernel_matrix(X1, X2, spec):
    """Kernel evaluations between the rows of ``X1`` and ``X2``.

    Parameters
    ----------
    X1 : array, shape (n1, f)
    X2 : array, shape (n2, f)
    spec : KernelSpec
        ``linear`` or ``gaussian``; precomputed kernels are supplied as
        matrices and never evaluated here.

    Returns
    -------
    ndarray, shape (n1, n2)

    Raises
    ------
    FloatingPointError
        If an entry overflows to a non-finite value.
    """
    X1 = as_matrix(X1, "X1")
    X2 = as_matrix(X2, "X2")
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: X1 is {X1.shape[0]}x{X1.shape[1]}, "
            f"X2 is {X2.shape[0]}x{X2.shape[1]}")
    if spec.kind == "precomputed":
        raise ValueError("precomputed kernels cannot be evaluated from features")
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.kind == "linear":
            K = X1 @ X2.T
        else:
            K = _sq_dists(X1, X2)
            K *= -spec.gamma
            np.exp(K, out=K)
    if not np.all(np.isfinite(K)):
        raise FloatingPointError(f"{spec.kind} kernel overflowed; rescale the features")
    return K


def matvec(A, v):
    A = np.asarray(A)
    v = np.asarray(v)
    if A.ndim != 2 or v.ndim != 1 or A.shape[1] != v.shape[0]:
        raise ValueError(f"cannot multiply {A.shape} matrix by vector of length {v.shape}")
    return A @ v


def matvec_transposed(A, v):
    """``A.T @ v`` through a transposed view; no copy of ``A`` is made."""
    A = np.asarray(A)
    v = np.asarray(v)
    if A.ndim != 2 or v.ndim != 1 or A.shape[0] != v.shape[0]:
        raise ValueError(f"cannot multiply transpose of {A.shape} matrix by vector of length {v.shape}")
    return A.T @ v


def check_symmetric(K, name="kernel", tol=1e-8):
    """Reject a square training kernel that is not symmetric within ``tol``."""
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"{name} must be square, got shape {K.shape}")
    scale = max(1.0, float(np.max(np.abs(K))) if K.size else 1.0)
    asym = float(np.max(np.abs(K - K.T))) if K.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"{name} is not symmetric (max |K - K^T| = {asym:.3g})")
    return K
