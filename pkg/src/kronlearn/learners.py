"""Kronecker kernel learners: ridge regression and truncated Newton training.

All products with the edge kernel matrix ``R (G kron K) R^T`` or the edge
feature matrix ``R (T kron D)`` go through the sampled Kronecker product;
nothing of size n x n or (d r) x (d r) is ever formed.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .data import auc
from .kron import (edge_feature_operator, edge_kernel_operator, sampled_kron_matvec,
                   sampled_kron_matvec_transposed)
from .losses import L1SVM_MESSAGE, TRAINABLE_LOSSES, check_labels, loss_gradient, loss_hessian, loss_value
from .matrix import KernelSpec, check_symmetric, kernel_matrix
from .model import DualModel, PredictionRequest, PrimalModel
from .solvers import DEFAULT_TOL, LinearOperator, SolverBreakdown, solve_general, solve_symmetric

__all__ = [
    "TrainConfig",
    "EarlyStopping",
    "TrainingError",
    "vertex_kernels",
    "early_stop_check",
    "train_ridge_dual",
    "train_ridge_primal",
    "train_newton_dual",
    "train_newton_primal",
    "train",
]

log = logging.getLogger(__name__)

MAX_HALVINGS = 10


class TrainingError(ArithmeticError):
    """Training produced a non-finite objective."""


@dataclass
class EarlyStopping:
    """Stop when validation AUC has not improved for ``patience`` rounds."""

    validation: object
    patience: int = 3

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``inner_iters`` caps each linear solve; for ridge regression, which is a
    single linear solve, it is the total iteration budget.
    """

    loss: str = "l2svm"
    lam: float = 1e-4
    outer_iters: int = 10
    inner_iters: int = 10
    step_size: float = 1.0
    tol: float = DEFAULT_TOL
    early_stop: EarlyStopping = None
    track: bool = False

    def __post_init__(self):
        if self.loss == "l1svm":
            raise ValueError(L1SVM_MESSAGE)
        if self.loss not in TRAINABLE_LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {', '.join(TRAINABLE_LOSSES)}")
        if not self.lam > 0:
            raise ValueError(f"regularization lambda must be positive, got {self.lam}")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be at least 1")
        if not self.step_size > 0:
            raise ValueError(f"step size must be positive, got {self.step_size}")


def vertex_kernels(data, start_kernel, end_kernel):
    """Training kernel matrices ``K`` (m x m) and ``G`` (q x q)."""
    mats = []
    for feats, spec, side in ((data.start_features, start_kernel, "start"),
                              (data.end_features, end_kernel, "end")):
        if spec.kind == "precomputed":
            mats.append(check_symmetric(feats, f"precomputed {side} kernel"))
        else:
            mats.append(kernel_matrix(feats, feats, spec))
    return mats[0], mats[1]


def early_stop_check(history, patience):
    """Decide whether to stop from per-round validation AUCs.

    Returns ``(stop, best_round)`` with 1-based rounds. Only a strict
    improvement resets the patience counter.
    """
    if not history:
        raise ValueError("early stopping needs at least one recorded round")
    scores = np.asarray(history, dtype=np.float64)
    best = int(np.argmax(scores)) + 1
    return len(scores) - best >= patience, best


class _Validator:
    """Scores the validation edges for successive coefficient vectors."""

    def __init__(self, es, scorer):
        self.es = es
        self.scorer = scorer
        self.aucs = []
        self.best_coef = None

    def record(self, coef):
        score = auc(self.scorer(coef), self.es.validation.labels)
        self.aucs.append(score)
        stop, best = early_stop_check(self.aucs, self.es.patience)
        if best == len(self.aucs):
            self.best_coef = coef.copy()
        return score, stop

    def best(self):
        _, best = early_stop_check(self.aucs, self.es.patience)
        return self.best_coef, best


def _dual_validator(es, data, start_kernel, end_kernel):
    if es is None:
        return None
    val = es.validation
    req = PredictionRequest.from_dataset(val)
    Kv = req.start_features if start_kernel.kind == "precomputed" else \
        kernel_matrix(req.start_features, data.start_features, start_kernel)
    Gv = req.end_features if end_kernel.kind == "precomputed" else \
        kernel_matrix(req.end_features, data.end_features, end_kernel)
    op = edge_kernel_operator(Kv, Gv, req.start_idx, req.end_idx, data.start_idx, data.end_idx)

    def score(a):
        nz = np.flatnonzero(a)
        if nz.size == 0:
            return np.zeros(val.n)
        return sampled_kron_matvec(op.select(cols=nz), a[nz])
    return _Validator(es, score)


def _primal_validator(es):
    if es is None:
        return None
    val = es.validation
    op = edge_feature_operator(val.start_features, val.end_features, val.start_idx, val.end_idx)
    return _Validator(es, lambda w: sampled_kron_matvec(op, w))


def _sparse_matvec(op, v, rows=None):
    """``op @ v`` skipping zero entries of ``v``; with ``rows`` only those outputs."""
    nz = np.flatnonzero(v)
    f = op.shape[0] if rows is None else len(rows)
    if nz.size == 0 or f == 0:
        return np.zeros(f)
    return sampled_kron_matvec(op.select(rows=rows, cols=nz), v[nz])


def _check_dual_inputs(data, K, G):
    K = np.asarray(K, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if K.shape != (data.m, data.m):
        raise ValueError(f"start kernel is {K.shape}, dataset has {data.m} start vertices")
    if G.shape != (data.q, data.q):
        raise ValueError(f"end kernel is {G.shape}, dataset has {data.q} end vertices")
    return K, G


def _dual_model(a, data, start_kernel, end_kernel, history):
    pre_s = start_kernel.kind == "precomputed"
    pre_e = end_kernel.kind == "precomputed"
    return DualModel(a, data.start_idx, data.end_idx, start_kernel, end_kernel,
                     None if pre_s else data.start_features,
                     None if pre_e else data.end_features, m=data.m, q=data.q, history=history)


def _objective_row(rnd, obj, validator, coef):
    row = {"round": rnd, "objective": obj}
    if validator is not None:
        row["val_auc"], stop = validator.record(coef)
        return row, stop
    return row, False


# -- ridge regression ---------------------------------------------------------

def train_ridge_dual(data, K, G, cfg, start_kernel=KernelSpec("linear"), end_kernel=KernelSpec("linear")):
    """Solve ``(R (G kron K) R^T + lam I) a = y`` with MINRES.

    The kernel specs only label the returned model; ``K`` and ``G`` are the
    training kernels actually used.
    """
    K, G = _check_dual_inputs(data, K, G)
    y = data.labels
    op = edge_kernel_operator(K, G, data.start_idx, data.end_idx, data.start_idx, data.end_idx)
    A = LinearOperator(data.n, lambda v: sampled_kron_matvec(op, v) + cfg.lam * v)
    validator = _dual_validator(cfg.early_stop, data, start_kernel, end_kernel)
    history = []

    def callback(it, a):
        if not (cfg.track or validator is not None):
            return False
        obj = None
        if cfg.track:
            p = _sparse_matvec(op, a)
            obj = loss_value("ridge", p, y) + 0.5 * cfg.lam * float(a @ p)
        row, stop = _objective_row(it, obj, validator, a)
        history.append(row)
        return stop

    report = solve_symmetric(A, y, cfg.inner_iters, cfg.tol, callback=callback)
    a = report.solution
    if validator is not None:
        a, best = validator.best()
        log.info("ridge early stopping: best round %d of %d", best, len(history))
    return _dual_model(a, data, start_kernel, end_kernel, history)


def train_ridge_primal(data, cfg):
    """Solve ``(X^T X + lam I) w = X^T y`` with ``X = R (T kron D)``, by MINRES."""
    X = edge_feature_operator(data.start_features, data.end_features, data.start_idx, data.end_idx)
    y = data.labels
    dim = X.shape[1]
    A = LinearOperator(dim, lambda w: sampled_kron_matvec_transposed(X, sampled_kron_matvec(X, w)) + cfg.lam * w)
    b = sampled_kron_matvec_transposed(X, y)
    validator = _primal_validator(cfg.early_stop)
    history = []

    def callback(it, w):
        if not (cfg.track or validator is not None):
            return False
        obj = None
        if cfg.track:
            p = sampled_kron_matvec(X, w)
            obj = loss_value("ridge", p, y) + 0.5 * cfg.lam * float(w @ w)
        row, stop = _objective_row(it, obj, validator, w)
        history.append(row)
        return stop

    report = solve_symmetric(A, b, cfg.inner_iters, cfg.tol, callback=callback)
    w = report.solution
    if validator is not None:
        w, _ = validator.best()
    return PrimalModel(w, data.start_features.shape[1], data.end_features.shape[1], history=history)


# -- truncated Newton ---------------------------------------------------------

def _newton_loop(cfg, n_coef, y, predict, solve, regularizer):
    """Outer truncated Newton iterations shared by the dual and primal trainers.

    ``predict(c)`` gives training predictions, ``solve(c, p)`` an approximate
    Newton direction, ``regularizer(c, p)`` the value of ``lam/2 ||f||^2``.
    Yields ``(round, coef, p, objective)`` after each accepted step.
    """
    check_labels(cfg.loss, y)
    c = np.zeros(n_coef)
    p = np.zeros(len(y))
    obj = loss_value(cfg.loss, p, y) + regularizer(c, p)
    for rnd in range(1, cfg.outer_iters + 1):
        x = solve(c, p)
        step = cfg.step_size
        c_new = c - step * x
        p_new = predict(c_new)
        obj_new = loss_value(cfg.loss, p_new, y) + regularizer(c_new, p_new)
        halvings = 0
        slack = 1e-9 * max(1.0, abs(obj))
        # predictions are linear in the coefficients: p(s) = p + (s/step) (p_new - p)
        dp = (p_new - p) / step
        while not obj_new <= obj + slack and halvings < MAX_HALVINGS:
            halvings += 1
            s = step / 2.0 ** halvings
            c_try, p_try = c - s * x, p + s * dp
            obj_new = loss_value(cfg.loss, p_try, y) + regularizer(c_try, p_try)
            c_new = c_try
        if not np.isfinite(obj_new):
            raise TrainingError(
                f"non-finite objective {obj_new} at round {rnd}: |coef|={np.linalg.norm(c):.6g}, "
                f"|p|={np.linalg.norm(p):.6g}, |direction|={np.linalg.norm(x):.6g}, "
                f"previous objective={obj:.10g}")
        if halvings:
            if not obj_new <= obj + slack:
                log.warning("round %d: no descent after %d halvings; stopping", rnd, halvings)
                return
            log.info("round %d: step halved %d times", rnd, halvings)
            # recompute from the accepted coefficients rather than trusting p + s dp
            p_new = predict(c_new)
            obj_new = loss_value(cfg.loss, p_new, y) + regularizer(c_new, p_new)
        c, p, obj = c_new, p_new, obj_new
        yield rnd, c, p, obj


def _solve_general_robust(A, b, cfg):
    try:
        return solve_general(A, b, cfg.inner_iters, cfg.tol)
    except SolverBreakdown as exc:
        log.warning("inner solve broke down (%s); retrying with TFQMR and a perturbed shadow vector", exc)
        rng = np.random.default_rng(0)
        shadow = b + 1e-3 * np.linalg.norm(b) / np.sqrt(len(b)) * rng.standard_normal(len(b))
        return solve_general(A, b, cfg.inner_iters, cfg.tol, method="tfqmr", shadow=shadow)


def train_newton_dual(data, K, G, cfg, start_kernel=KernelSpec("linear"), end_kernel=KernelSpec("linear")):
    """Dual truncated Newton training.

    Each round recomputes ``p = R (G kron K) R^T a``, solves
    ``(H R (G kron K) R^T + lam I) x = g + lam a`` with at most
    ``cfg.inner_iters`` GMRES iterations and updates ``a <- a - step x``.
    For l2svm the rows outside the margin (``p_i y_i >= 1``) are solved in
    closed form, which sets their coefficients to exactly zero, and the
    iterative solve runs on the active rows only.
    """
    K, G = _check_dual_inputs(data, K, G)
    y = data.labels
    lam = cfg.lam
    op = edge_kernel_operator(K, G, data.start_idx, data.end_idx, data.start_idx, data.end_idx)
    n = data.n

    def predict(a):
        return _sparse_matvec(op, a)

    def regularizer(a, p):
        return 0.5 * lam * float(a @ p)

    def solve(a, p):
        g = loss_gradient(cfg.loss, p, y)
        H = loss_hessian(cfg.loss, p, y)
        b = g + lam * a
        if cfg.loss == "l2svm":
            # Rows outside the margin read lam x_i = lam a_i, so x_i = a_i and
            # those coefficients drop to exactly zero. What remains is
            # (K_SS + lam I) x_S = b_S - K_SN a_N over the active rows S.
            active = np.flatnonzero(H.diagonal)
            x = a.copy()
            if active.size == 0:
                return x
            a_out = a.copy()
            a_out[active] = 0.0
            rhs = b[active] - _sparse_matvec(op, a_out, rows=active)
            sub = op.select(rows=active, cols=active)

            def apply(v):
                return _sparse_matvec(sub, v) + lam * v
            x[active] = _solve_general_robust(LinearOperator(active.size, apply), rhs, cfg).solution
            return x

        def apply(v):
            return H.apply(_sparse_matvec(op, v)) + lam * v
        return _solve_general_robust(LinearOperator(n, apply), b, cfg).solution

    validator = _dual_validator(cfg.early_stop, data, start_kernel, end_kernel)
    history = []
    a = np.zeros(n)
    for rnd, a, p, obj in _newton_loop(cfg, n, y, predict, solve, regularizer):
        row, stop = _objective_row(rnd, obj, validator, a)
        history.append(row)
        log.debug("round %d objective %.10g", rnd, obj)
        if stop:
            break
    if validator is not None and validator.aucs:
        a, best = validator.best()
        log.info("early stopping: best round %d of %d", best, len(history))
    return _dual_model(a, data, start_kernel, end_kernel, history)


def train_newton_primal(data, cfg):
    """Primal truncated Newton training with linear vertex kernels.

    The Newton system ``(X^T H X + lam I) x = X^T g + lam w`` is symmetric
    positive definite for the diagonal-Hessian losses and RankRLS, so it is
    solved with MINRES.
    """
    X = edge_feature_operator(data.start_features, data.end_features, data.start_idx, data.end_idx)
    y = data.labels
    lam = cfg.lam
    dim = X.shape[1]

    def predict(w):
        return sampled_kron_matvec(X, w)

    def regularizer(w, p):
        return 0.5 * lam * float(w @ w)

    def solve(w, p):
        g = loss_gradient(cfg.loss, p, y)
        H = loss_hessian(cfg.loss, p, y)
        if cfg.loss == "l2svm":
            active = np.flatnonzero(H.diagonal)
            Xs = X.select(rows=active) if active.size else None

            def apply(v):
                if Xs is None:
                    return lam * v
                return sampled_kron_matvec_transposed(Xs, sampled_kron_matvec(Xs, v)) + lam * v
        else:
            def apply(v):
                return sampled_kron_matvec_transposed(X, H.apply(sampled_kron_matvec(X, v))) + lam * v
        rhs = sampled_kron_matvec_transposed(X, g) + lam * w
        return solve_symmetric(LinearOperator(dim, apply), rhs, cfg.inner_iters, cfg.tol).solution

    validator = _primal_validator(cfg.early_stop)
    history = []
    w = np.zeros(dim)
    for rnd, w, p, obj in _newton_loop(cfg, dim, y, predict, solve, regularizer):
        row, stop = _objective_row(rnd, obj, validator, w)
        history.append(row)
        if stop:
            break
    if validator is not None and validator.aucs:
        w, _ = validator.best()
    return PrimalModel(w, data.start_features.shape[1], data.end_features.shape[1], history=history)


def train(data, cfg, mode="dual", start_kernel=KernelSpec("linear"), end_kernel=KernelSpec("linear")):
    """Train with the one-shot ridge solver for ``ridge`` and truncated Newton otherwise."""
    if mode == "primal":
        if start_kernel.kind != "linear" or end_kernel.kind != "linear":
            raise ValueError("primal training needs explicit features and linear vertex kernels")
        if cfg.loss == "ridge":
            return train_ridge_primal(data, cfg)
        return train_newton_primal(data, cfg)
    if mode != "dual":
        raise ValueError(f"mode must be 'dual' or 'primal', got {mode!r}")
    K, G = vertex_kernels(data, start_kernel, end_kernel)
    if cfg.loss == "ridge":
        return train_ridge_dual(data, K, G, cfg, start_kernel, end_kernel)
    return train_newton_dual(data, K, G, cfg, start_kernel, end_kernel)
