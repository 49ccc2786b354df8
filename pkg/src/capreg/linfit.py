"""Ordinary least-squares hyperplane fits on observation subsets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, Hyperplane, InvalidInputError

# singular values below RCOND * s_max are treated as zero
RCOND = 1e-10


@dataclass(frozen=True)
class FitResult:
    hyperplane: Hyperplane
    sse: float
    rank_deficient: bool


def design(x: np.ndarray) -> np.ndarray:
    """Intercept-augmented design matrix ``[1, x]``."""
    return np.hstack([np.ones((x.shape[0], 1)), x])


def lstsq_coef(x1: np.ndarray, y: np.ndarray):
    """Minimum-norm least-squares coefficients on an augmented design.

    Returns ``(coef, sse, rank_deficient)``.
    """
    coef, _, rank, _ = np.linalg.lstsq(x1, y, rcond=RCOND)
    r = y - x1 @ coef
    return coef, float(r @ r), rank < x1.shape[1]


def fit_ls(rows: Dataset) -> FitResult:
    if rows.n == 0:
        raise InvalidInputError("cannot fit a hyperplane to an empty subset")
    coef, sse, deficient = lstsq_coef(design(rows.x), rows.y)
    return FitResult(Hyperplane(coef[0], coef[1:]), sse, deficient)


def leverage(rows: Dataset) -> np.ndarray:
    """Diagonal of the hat matrix for the intercept-augmented design."""
    x1 = design(rows.x)
    if x1.shape[0] < x1.shape[1]:
        raise InvalidInputError(f"leverage needs at least p+1={x1.shape[1]} rows")
    s = np.linalg.svd(x1, compute_uv=False)
    if s[-1] <= RCOND * s[0]:
        raise InvalidInputError("design is rank deficient; leverage undefined")
    q, _ = np.linalg.qr(x1)
    return np.einsum("ij,ij->i", q, q)
