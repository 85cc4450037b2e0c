"""Loss functions over a prediction vector, with gradients and Hessian-vector products.

Every function takes the full prediction vector ``p`` and label vector ``y``
and runs in O(n), including the pairwise RankRLS loss.
"""
import numpy as np
from scipy.special import expit

__all__ = [
    "LOSSES",
    "TRAINABLE_LOSSES",
    "HessianOp",
    "check_labels",
    "loss_value",
    "loss_gradient",
    "loss_hessian",
    "l1svm_value_subgradient",
]

TRAINABLE_LOSSES = ("ridge", "l2svm", "logistic", "rankrls")
LOSSES = TRAINABLE_LOSSES + ("l1svm",)
CLASSIFICATION_LOSSES = ("l2svm", "logistic", "l1svm")

L1SVM_MESSAGE = (
    "l1svm cannot be trained: its generalized Hessian is identically zero, and "
    "the truncated Newton trainers need a loss that is differentiable with a "
    "nonzero (generalized) Hessian; use l2svm instead")


def _check_kind(kind, allowed=LOSSES):
    if kind not in allowed:
        if kind == "l1svm":
            raise ValueError(L1SVM_MESSAGE)
        raise ValueError(f"unknown loss {kind!r}; expected one of {', '.join(allowed)}")


def check_labels(kind, y):
    """Reject labels outside {-1, +1} for classification losses."""
    if kind in CLASSIFICATION_LOSSES:
        y = np.asarray(y)
        bad = (y != 1.0) & (y != -1.0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"{kind} needs labels in {{-1, +1}}; y[{i}] = {y[i]!r}")


def _prepare(kind, p, y, allowed=LOSSES):
    _check_kind(kind, allowed)
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} must be vectors of equal length")
    check_labels(kind, y)
    return p, y


def loss_value(kind, p, y):
    p, y = _prepare(kind, p, y)
    if kind == "ridge":
        r = p - y
        return 0.5 * float(r @ r)
    if kind == "l2svm":
        h = np.maximum(0.0, 1.0 - p * y)
        return 0.5 * float(h @ h)
    if kind == "logistic":
        return float(np.sum(np.logaddexp(0.0, -y * p)))
    if kind == "rankrls":
        # 1/4 sum_ij (e_i - e_j)^2 == n/2 sum_i (e_i - mean(e))^2
        e = y - p
        c = e - e.mean()
        return 0.5 * len(e) * float(c @ c)
    return l1svm_value_subgradient(p, y)[0]


def loss_gradient(kind, p, y):
    """Gradient (subgradient for l1svm) of the loss with respect to ``p``."""
    p, y = _prepare(kind, p, y)
    if kind == "ridge":
        return p - y
    if kind == "l2svm":
        # margin points (p*y == 1) contribute nothing
        return np.where(p * y < 1.0, p - y, 0.0)
    if kind == "logistic":
        return -y * expit(-y * p)
    if kind == "rankrls":
        e = y - p
        return e.sum() - len(e) * e
    return l1svm_value_subgradient(p, y)[1]


class HessianOp:
    """Loss Hessian (generalized for l2svm) applied as ``H @ v``.

    Univariate losses keep the diagonal; RankRLS keeps only ``n`` since its
    Hessian is ``n I - 1 1^T``.
    """

    def __init__(self, kind, n, diagonal=None):
        self.kind = kind
        self.n = n
        self.diagonal = diagonal

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"Hessian of size {self.n} applied to vector of shape {v.shape}")
        if self.kind == "ridge":
            return v.copy()
        if self.kind == "rankrls":
            return self.n * v - v.sum()
        return self.diagonal * v

    __call__ = apply

    def to_dense(self):
        if self.kind == "ridge":
            return np.eye(self.n)
        if self.kind == "rankrls":
            return self.n * np.eye(self.n) - np.ones((self.n, self.n))
        return np.diag(self.diagonal)


def loss_hessian(kind, p, y):
    p, y = _prepare(kind, p, y, allowed=TRAINABLE_LOSSES)
    n = len(p)
    if kind == "l2svm":
        return HessianOp(kind, n, (p * y < 1.0).astype(np.float64))
    if kind == "logistic":
        s = expit(y * p)
        return HessianOp(kind, n, s * (1.0 - s))
    return HessianOp(kind, n)


def l1svm_value_subgradient(p, y):
    """Hinge loss and the subgradient ``-y_i`` inside the margin, 0 outside."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} must be vectors of equal length")
    check_labels("l1svm", y)
    margin = 1.0 - p * y
    value = float(np.sum(np.maximum(0.0, margin)))
    return value, np.where(margin > 0.0, -y, 0.0)
