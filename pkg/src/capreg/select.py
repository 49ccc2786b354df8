"""Generalized cross-validation for max-affine partition models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CONCAVE, Dataset, InvalidInputError, ModelSequence, PartitionModel


@dataclass(frozen=True)
class GcvReport:
    scores: np.ndarray
    selected: int
    assignment: np.ndarray


def _home(model: PartitionModel, n: int) -> np.ndarray:
    home = np.full(n, -1, dtype=np.intp)
    for k, s in enumerate(model.subsets):
        home[s] = k
    if np.any(home < 0):
        raise InvalidInputError("model subsets do not cover every observation")
    return home


def gcv_terms(model: PartitionModel, data: Dataset):
    """Per-observation GCV residuals and the inflation-adjusted piece choice k(i)."""
    y = data.y
    if model.orientation == CONCAVE:
        model = model.negated()
        y = -y
    p = data.p
    sizes = model.sizes
    if len(sizes) != model.k:
        raise InvalidInputError("gcv needs a model that carries its observation partition")
    if np.any(sizes <= p + 1):
        raise InvalidInputError(
            f"every subset needs more than p+1={p + 1} observations for GCV; sizes are {sizes.tolist()}"
        )
    home = _home(model, data.n)
    vals = model.plane_values(data.x)
    rows = np.arange(data.n)
    denom = np.ones_like(vals)
    denom[rows, home] = 1.0 - (p + 1) / sizes[home]
    choice = np.argmax(vals / denom, axis=1)
    resid = (y - vals[rows, choice]) / denom[rows, choice]
    return resid, choice


def gcv_score(model: PartitionModel, data: Dataset) -> float:
    resid, _ = gcv_terms(model, data)
    return float(np.mean(resid * resid))


def select_model(seq, data: Dataset = None, atol: float = 0.0) -> int:
    """Index of the lowest GCV score, ties going to the smaller model.

    ``seq`` is either a :class:`ModelSequence` (scores recomputed when ``data``
    is given) or a plain sequence of scores. Scores within ``atol`` of the
    minimum count as ties.
    """
    if isinstance(seq, ModelSequence):
        scores = np.array([gcv_score(m, data) for m in seq.models]) if data is not None else seq.gcv
    else:
        scores = np.asarray(seq, dtype=float)
    if scores.size == 0:
        raise InvalidInputError("cannot select from an empty sequence")
    scores = np.where(np.isnan(scores), np.inf, scores)
    best = scores.min()
    if not np.isfinite(best):
        return 0
    return int(np.flatnonzero(scores <= best + atol)[0])


def gcv_report(seq: ModelSequence, data: Dataset) -> GcvReport:
    scores = np.array([gcv_score(m, data) for m in seq.models])
    sel = select_model(scores)
    _, choice = gcv_terms(seq.models[sel], data)
    return GcvReport(scores, sel, choice)
