"""Matrix-free Krylov solvers.

``solve_symmetric`` is MINRES (Paige & Saunders). ``solve_general`` is
restarted GMRES by default, with transpose-free QMR (Freund) as an
alternative. All of them start from the zero vector, touch the operator only
through ``apply`` and count one iteration per operator application, so an
iteration cap is also a cap on matvecs.

GMRES is the default because under the small caps used by the Newton
trainers it minimizes the residual over the whole Krylov space, while
TFQMR's squared polynomials can stall for the first few dozen steps on
ill-conditioned kernel systems.
"""
from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "LinearOperator",
    "SolveReport",
    "SolverError",
    "SolverBreakdown",
    "solve_symmetric",
    "solve_general",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-6
_EPS = np.finfo(np.float64).eps


class SolverError(ArithmeticError):
    """Non-finite values appeared during an iterative solve."""


class SolverBreakdown(SolverError):
    """A Krylov recurrence divided by an (almost) zero inner product."""


class LinearOperator:
    """Square operator given by a matvec closure.

    Parameters
    ----------
    dim : int
    apply : callable
        ``v -> A @ v``.
    apply_transposed : callable, optional
        ``v -> A.T @ v``; none of the solvers here need it.
    """

    def __init__(self, dim, apply, apply_transposed=None):
        self.dim = int(dim)
        self._apply = apply
        self._apply_transposed = apply_transposed
        self.calls = 0

    def apply(self, v):
        self.calls += 1
        out = np.asarray(self._apply(v), dtype=np.float64)
        if out.shape != (self.dim,):
            raise ValueError(f"operator returned shape {out.shape}, expected ({self.dim},)")
        return out

    __call__ = apply

    def apply_transposed(self, v):
        if self._apply_transposed is None:
            raise NotImplementedError("operator has no transpose")
        return np.asarray(self._apply_transposed(v), dtype=np.float64)

    @classmethod
    def from_matrix(cls, A):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"operator matrix must be square, got {A.shape}")
        return cls(A.shape[0], lambda v: A @ v, lambda v: A.T @ v)


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    converged: bool


def _prepare(A, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.dim,):
        raise ValueError(f"right-hand side has shape {b.shape}, operator dimension is {A.dim}")
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side contains non-finite entries")
    return b


def _report(A, b, x, iterations, tol):
    r = b - A.apply(x)
    bnorm = float(np.linalg.norm(b))
    rel = float(np.linalg.norm(r)) / max(bnorm, _EPS)
    if not math.isfinite(rel):
        raise SolverError(f"non-finite residual after {iterations} iterations")
    return SolveReport(x, iterations, rel, rel <= tol)


def _check_finite(name, value, it):
    if not math.isfinite(value):
        raise SolverError(f"{name} became {value} at iteration {it}")


def solve_symmetric(A, b, max_iters, tol=DEFAULT_TOL, callback=None, reorthogonalize=True):
    """MINRES for symmetric (possibly indefinite) ``A``.

    Stops when the recurrence estimate of the relative residual drops to
    ``tol`` or after ``max_iters`` operator applications. Hitting the cap is
    not an error; ``converged`` is judged on the recomputed residual.
    ``callback(iteration, x)`` runs after every iteration and may return
    True to stop early.

    With ``reorthogonalize`` every new Lanczos vector is orthogonalized
    against all previous ones. This costs one stored vector per iteration
    but keeps the finite-precision iteration close to exact MINRES; without
    it, orthogonality loss can delay convergence well past ``dim``
    iterations on spectra spread over a few decades.
    """
    b = _prepare(A, b)
    n = A.dim
    x = np.zeros(n)
    beta1 = float(np.linalg.norm(b))
    if beta1 == 0.0:
        return SolveReport(x, 0, 0.0, True)

    r1 = b.copy()
    r2 = b.copy()
    y = b.copy()
    w = np.zeros(n)
    w2 = np.zeros(n)
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0

    # Lanczos vectors, grown by doubling
    basis = np.empty((min(max_iters, 64) if reorthogonalize else 0, n))
    it = 0
    while it < max_iters:
        it += 1
        v = y / beta
        y = A.apply(v)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        _check_finite("alpha", alfa, it)
        y -= (alfa / beta) * r2
        if reorthogonalize:
            if it > basis.shape[0]:
                basis = np.concatenate([basis, np.empty((min(basis.shape[0], max_iters - basis.shape[0]), n))])
            basis[it - 1] = v
            V = basis[:it]
            y -= V.T @ (V @ y)
        r1, r2 = r2, y
        oldb = beta
        beta = float(np.linalg.norm(y))
        _check_finite("beta", beta, it)

        # apply previous rotation, then build the next one
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), _EPS)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x += phi * w

        if callback is not None and callback(it, x):
            break
        if phibar / beta1 <= tol or beta == 0.0:
            break
    return _report(A, b, x, it, tol)


def solve_general(A, b, max_iters, tol=DEFAULT_TOL, callback=None, method="gmres",
                  restart=None, shadow=None):
    """Solve ``A x = b`` for general square ``A`` without using ``A.T``.

    Parameters
    ----------
    A : LinearOperator
    b : array
    max_iters : int
        Cap on operator applications.
    tol : float
        Relative residual target.
    callback : callable, optional
        ``callback(iteration, x) -> bool``; True stops the solve.
    method : {"gmres", "tfqmr"}
    restart : int, optional
        GMRES basis size before a restart (default ``min(max_iters, 100)``).
    shadow : array, optional
        TFQMR shadow residual (default ``b``); callers that hit
        :class:`SolverBreakdown` can retry with a perturbed one.
    """
    if method == "gmres":
        return _gmres(A, b, max_iters, tol, callback, restart)
    if method == "tfqmr":
        return _tfqmr(A, b, max_iters, tol, callback, shadow)
    raise ValueError(f"method must be 'gmres' or 'tfqmr', got {method!r}")


def _gmres(A, b, max_iters, tol, callback, restart):
    b = _prepare(A, b)
    n = A.dim
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return SolveReport(x, 0, 0.0, True)
    restart = max(1, min(max_iters, 100) if restart is None else int(restart))

    it = 0
    r = b
    beta = bnorm
    while it < max_iters:
        k_max = min(restart, max_iters - it)
        V = np.empty((k_max + 1, n))
        H = np.zeros((k_max + 1, k_max))
        cs = np.zeros(k_max)
        sn = np.zeros(k_max)
        g = np.zeros(k_max + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        stop = False
        while k < k_max:
            w = A.apply(V[k])
            it += 1
            if not np.all(np.isfinite(w)):
                raise SolverError(f"operator returned non-finite values at iteration {it}")
            # modified Gram-Schmidt
            for j in range(k + 1):
                H[j, k] = float(w @ V[j])
                w -= H[j, k] * V[j]
            h_next = float(np.linalg.norm(w))
            _check_finite("Arnoldi norm", h_next, it)
            for j in range(k):
                hj, hj1 = H[j, k], H[j + 1, k]
                H[j, k] = cs[j] * hj + sn[j] * hj1
                H[j + 1, k] = -sn[j] * hj + cs[j] * hj1
            denom = math.hypot(H[k, k], h_next)
            if denom == 0.0:
                raise SolverBreakdown(f"singular Hessenberg column at iteration {it}")
            cs[k], sn[k] = H[k, k] / denom, h_next / denom
            H[k, k] = denom
            g[k + 1] = -sn[k] * g[k]
            g[k] *= cs[k]
            k += 1
            happy = h_next <= _EPS * bnorm
            if not happy:
                V[k] = w / h_next
            done = abs(g[k]) <= tol * bnorm or happy or it >= max_iters
            if callback is not None:
                xk = x + V[:k].T @ _upper_solve(H[:k, :k], g[:k])
                if callback(it, xk):
                    x = xk
                    stop = True
                    break
            if done:
                break
        if not stop:
            x = x + V[:k].T @ _upper_solve(H[:k, :k], g[:k])
        if stop or abs(g[k]) <= tol * bnorm or it >= max_iters:
            break
        r = b - A.apply(x)
        beta = float(np.linalg.norm(r))
        if beta <= tol * bnorm:
            break
    return _report(A, b, x, it, tol)


def _upper_solve(R, g):
    y = np.empty(len(g))
    for i in range(len(g) - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def _tfqmr(A, b, max_iters, tol, callback, shadow):
    b = _prepare(A, b)
    n = A.dim
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return SolveReport(x, 0, 0.0, True)

    rstar = b.copy() if shadow is None else np.asarray(shadow, dtype=np.float64)
    u = b.copy()
    w = b.copy()
    d = np.zeros(n)
    uhat = A.apply(u)
    v = uhat.copy()
    theta = eta = alpha = 0.0
    tau = bnorm
    rho = float(rstar @ b)
    if rho == 0.0:
        raise SolverBreakdown("shadow residual is orthogonal to the right-hand side")
    rho_last = rho

    it = 0
    while it < max_iters:
        even = it % 2 == 0
        if even:
            sigma = float(rstar @ v)
            _check_finite("sigma", sigma, it + 1)
            if sigma == 0.0:
                raise SolverBreakdown(f"rstar . v = 0 at iteration {it + 1}")
            alpha = rho / sigma
            u_next = u - alpha * v
        w -= alpha * uhat
        d = u + (theta * theta / alpha) * eta * d
        theta = float(np.linalg.norm(w)) / tau
        _check_finite("theta", theta, it + 1)
        c = 1.0 / math.sqrt(1.0 + theta * theta)
        tau *= theta * c
        eta = c * c * alpha
        x += eta * d
        it += 1

        if callback is not None and callback(it, x):
            break
        # tau * sqrt(k + 1) bounds the true residual norm after k half-steps
        if tau * math.sqrt(it + 1) <= tol * bnorm:
            break
        if it >= max_iters:
            break
        if even:
            uhat = A.apply(u_next)
            u = u_next
            rho_last = rho
        else:
            rho = float(rstar @ w)
            if rho_last == 0.0:
                raise SolverBreakdown(f"rho = 0 at iteration {it}")
            beta = rho / rho_last
            u = w + beta * u
            v = beta * uhat + beta * beta * v
            uhat = A.apply(u)
            v += uhat
    return _report(A, b, x, it, tol)
