"""Least-squares convex regression (the n(n-1)-constraint QP), for small n only."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .core import Dataset, InvalidInputError

MAX_N = 300


class LseConvergenceError(RuntimeError):
    def __init__(self, msg, fit=None, violation=np.inf):
        super().__init__(msg)
        self.fit = fit
        self.violation = violation


@dataclass(frozen=True)
class LseFit:
    fitted: np.ndarray
    subgradients: np.ndarray
    objective: float
    max_violation: float
    status: str = "optimal"


def _constraint_matrix(x: np.ndarray) -> sp.csr_matrix:
    """Rows encode yhat_j - yhat_i - g_i.(x_j - x_i) for every ordered pair i != j."""
    n, p = x.shape
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    m = ii.size
    r = np.arange(m)
    diff = x[jj] - x[ii]
    rows = np.concatenate([r, r, np.repeat(r, p)])
    cols = np.concatenate([jj, ii, (n + ii[:, None] * p + np.arange(p)).ravel()])
    vals = np.concatenate([np.ones(m), -np.ones(m), -diff.ravel()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n + n * p))


def max_violation(fitted: np.ndarray, subgradients: np.ndarray, x: np.ndarray) -> float:
    """Largest amount by which any supporting-hyperplane constraint is broken."""
    # support[i, j] = yhat_i + g_i.(x_j - x_i)
    support = fitted[:, None] + subgradients @ x.T - np.sum(subgradients * x, axis=1)[:, None]
    gap = support - fitted[None, :]
    np.fill_diagonal(gap, -np.inf)
    return float(max(gap.max(), 0.0))


def lse_fit(data: Dataset, tol: float = 1e-6, max_iter: int = 500, max_n: int = MAX_N) -> LseFit:
    n, p = data.n, data.p
    if n > max_n:
        raise InvalidInputError(f"LSE is limited to n <= {max_n} observations (got {n})")
    if n == 1:
        return LseFit(data.y.copy(), np.zeros((1, p)), 0.0, 0.0)
    a = _constraint_matrix(data.x)
    z = cp.Variable(n + n * p)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z[:n] - data.y)), [a @ z >= 0])
    try:
        with warnings.catch_warnings():
            # accuracy is judged below from the status and the measured violation
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, max_iter=max_iter,
                       tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    except cp.error.SolverError as exc:
        raise LseConvergenceError(f"QP solver failed: {exc}") from exc
    if z.value is None:
        raise LseConvergenceError(f"QP solver returned no iterate (status {prob.status})")
    fitted = np.array(z.value[:n])
    grads = np.array(z.value[n:]).reshape(n, p)
    viol = max_violation(fitted, grads, data.x)
    r = data.y - fitted
    fit = LseFit(fitted, grads, float(r @ r), viol, prob.status)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or viol > tol:
        raise LseConvergenceError(
            f"LSE did not reach tolerance {tol:g} (status {prob.status}, violation {viol:.3g})",
            fit, viol,
        )
    return fit


def lse_predict(fit: LseFit, data: Dataset, x) -> np.ndarray:
    """Max over the n fitted supporting hyperplanes; scalar in, scalar out."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and x.shape[0] == data.p
    xs = x.reshape(1, -1) if single else np.atleast_2d(x)
    if xs.shape[1] != data.p:
        raise InvalidInputError(f"expected covariates of dimension p={data.p}")
    offs = fit.fitted - np.sum(fit.subgradients * data.x, axis=1)
    vals = (xs @ fit.subgradients.T + offs).max(axis=1)
    return float(vals[0]) if single else vals
