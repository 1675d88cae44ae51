"""Least-squares solvers for ``min ||Y - Phi theta||^2``.

Two variants are provided: the plain square solve (``Phi`` is lower
triangular, so this is forward substitution) and a nonnegativity-constrained
solve where chosen coordinates are left free. The constrained solver is the
Lawson-Hanson active-set method extended with always-free coordinates; it
terminates finitely and accepts a warm-start passive set, which is what makes
sweeping it over thousands of neighbouring grid nodes affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractError, SolverError
from .model import SampledSignal
from .regressor import RegressorMatrix, build_phi

KKT_RTOL = 1e-10


@dataclass(frozen=True)
class LsSolution:
    theta: np.ndarray
    residual_ss: float
    active_set: tuple[int, ...] = ()
    iterations: int = 0
    passive: np.ndarray | None = field(default=None, repr=False)

    @property
    def x2_init(self) -> float:
        return float(self.theta[0])

    @property
    def weights(self) -> np.ndarray:
        return self.theta[1:]


def _values(y) -> np.ndarray:
    if isinstance(y, SampledSignal):
        return y.values
    return np.asarray(y, dtype=float).reshape(-1)


def _matrix(phi) -> np.ndarray:
    return phi.values if isinstance(phi, RegressorMatrix) else np.asarray(phi, dtype=float)


def _residual_ss(A, theta, b) -> float:
    r = b - A @ theta
    return float(r @ r)


def solve_unconstrained(phi, y) -> LsSolution:
    """Exact solve of the square lower-triangular system by forward substitution."""
    A = _matrix(phi)
    b = _values(y)
    if A.shape != (b.size, b.size):
        raise ContractError(f"Phi shape {A.shape} does not match {b.size} samples")
    diag = np.diag(A)
    if np.any(diag == 0) or not np.all(np.isfinite(diag)):
        raise SolverError("regressor has a zero diagonal entry")
    theta = solve_triangular(A, b, lower=True, check_finite=False)
    return LsSolution(theta, _residual_ss(A, theta, b))


def solve_nnls(phi, y, free_indices=(0,), *, warm_start=None, maxiter=None) -> LsSolution:
    """Least squares with ``theta_j >= 0`` for every ``j`` not in ``free_indices``.

    Indices are zero-based; by default only ``theta[0] = x2(t_1)`` is free.

    Parameters
    ----------
    phi : RegressorMatrix or array_like, shape (m, n)
    y : SampledSignal or array_like, shape (m,)
    free_indices : iterable of int
        Unconstrained coordinates.
    warm_start : array_like of bool, optional
        Initial guess of the passive (nonzero) set, e.g. from a neighbouring
        grid node. Only affects speed, never the solution.
    maxiter : int, optional
        Cap on outer iterations, default ``3 * n``.

    Returns
    -------
    LsSolution
        ``active_set`` lists the constrained coordinates held at zero.

    Raises
    ------
    SolverError
        If the iteration cap is reached.
    """
    A = _matrix(phi)
    b = _values(y)
    m, n = A.shape
    if m != b.size:
        raise ContractError(f"Phi has {m} rows but y has {b.size} entries")
    free = np.zeros(n, dtype=bool)
    idx = np.asarray(list(free_indices), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError("free index out of range")
    free[idx] = True
    if maxiter is None:
        maxiter = 3 * n

    gram = A.T @ A
    atb = A.T @ b
    scale = np.max(np.abs(atb)) if n else 0.0
    if scale == 0.0:
        theta = np.zeros(n)
        return LsSolution(theta, _residual_ss(A, theta, b), tuple(np.flatnonzero(~free)),
                          0, free.copy())
    tol = KKT_RTOL * scale

    def sub_solve(P):
        s = np.zeros(n)
        if P.any():
            G = gram[np.ix_(P, P)]
            try:
                c = np.linalg.cholesky(G)
                s[P] = solve_triangular(c.T, solve_triangular(c, atb[P], lower=True,
                                                               check_finite=False),
                                        lower=False, check_finite=False)
            except np.linalg.LinAlgError:
                s[P] = np.linalg.lstsq(A[:, P], b, rcond=None)[0]
        return s

    # warm start: prune the guessed support until its subspace solution is
    # feasible; from x = 0 this is a valid (if crude) sequence of LH steps
    P = free.copy()
    if warm_start is not None:
        P |= np.asarray(warm_start, dtype=bool) & ~free
    while True:
        x = sub_solve(P)
        bad = P & ~free & (x <= 0)
        if not bad.any():
            break
        P &= ~bad

    it = 0
    stalled = False
    while not stalled:
        w = atb - gram @ x
        cand = ~P & ~free & (w > tol)
        if not cand.any():
            break
        if it >= maxiter:
            raise SolverError(f"NNLS did not converge in {maxiter} iterations")
        it += 1
        j = np.flatnonzero(cand)[np.argmax(w[cand])]
        P[j] = True
        while True:
            s = sub_solve(P)
            bad = P & ~free & (s <= 0)
            if not bad.any():
                x = s
                break
            if bad[j] and x[j] == 0.0:
                # entering coordinate cannot move: gradient was rounding noise
                P[j] = False
                stalled = True
                break
            xb, sb = x[bad], s[bad]
            alpha = np.min(xb / (xb - sb))
            x = x + alpha * (s - x)
            P &= ~(~free & (x <= 0))
            x[~P] = 0.0

    # final solve on the optimal support with an orthogonal factorization
    if P.any():
        x = np.zeros(n)
        x[P] = np.linalg.lstsq(A[:, P], b, rcond=None)[0]
        x[~free] = np.maximum(x[~free], 0.0)
    active = tuple(int(i) for i in np.flatnonzero(~P & ~free))
    return LsSolution(x, _residual_ss(A, x, b), active, it, P.copy())


def residual_g(b1: float, b2: float, y: SampledSignal, *, constrain_x2_init=False) -> float:
    """Residual sum of squares of the nonnegative fit at rates ``(b1, b2)``."""
    phi = build_phi(b1, b2, y.times)
    free = () if constrain_x2_init else (0,)
    return solve_nnls(phi, y, free).residual_ss
