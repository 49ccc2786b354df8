"""Convex Adaptive Partitioning: split generation, selection, refitting, stopping.

The engine always fits a convex (max-affine) model. Concave fits negate the
response on the way in and the hyperplanes on the way out.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    CARDINAL,
    CONCAVE,
    CONVEX,
    RANDOM_PROJECTION,
    CapConfig,
    Dataset,
    InvalidInputError,
    ModelSequence,
    PartitionModel,
    induced_partition,
    n_min,
)
from .linfit import design, lstsq_coef
from .select import gcv_score, select_model

log = logging.getLogger(__name__)


class NoFeasibleSplit(Exception):
    """No candidate split satisfies the minimum subset size; growth stops."""


def knots(L: int) -> np.ndarray:
    """Evenly spaced proportions l / (L + 1), l = 1..L."""
    if L < 1:
        raise InvalidInputError("need at least one knot")
    return np.arange(1, L + 1) / (L + 1)


def random_directions(count: int, p: int, seed) -> np.ndarray:
    """``count`` standard-normal projection vectors of length ``p`` (one per row).

    ``seed`` may be an integer or an existing ``numpy.random.Generator``.
    """
    if count < 1:
        raise InvalidInputError("need at least one direction")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((count, p))


@dataclass
class CandidateSplit:
    """One dyadic split of subset ``subset_index`` along ``direction``.

    ``knot_index == L`` marks the median fallback split.
    """

    subset_index: int
    direction_index: int
    direction: np.ndarray
    knot_index: int
    threshold: float
    left: np.ndarray
    right: np.ndarray
    left_coef: np.ndarray
    right_coef: np.ndarray
    local_sse: float
    base: PartitionModel
    train_mse: float = np.nan

    @property
    def key(self):
        return (self.subset_index, self.direction_index, self.knot_index)

    @property
    def model(self) -> PartitionModel:
        k = self.subset_index
        a = np.append(self.base.intercepts, self.right_coef[0])
        b = np.vstack([self.base.slopes, self.right_coef[1:]])
        a[k] = self.left_coef[0]
        b[k] = self.left_coef[1:]
        subsets = list(self.base.subsets)
        subsets[k] = self.left
        subsets.append(self.right)
        return PartitionModel(a, b, tuple(subsets), self.base.orientation, dict(self.base.meta))


def _coefs(model: PartitionModel) -> np.ndarray:
    return np.hstack([model.intercepts[:, None], model.slopes])


def _max_excluding(vals: np.ndarray) -> np.ndarray:
    """Column k of the result is the row-wise max over every column except k."""
    n, K = vals.shape
    if K == 1:
        return np.full((n, 1), -np.inf)
    rows = np.arange(n)
    top = np.argmax(vals, axis=1)
    v1 = vals[rows, top]
    rest = vals.copy()
    rest[rows, top] = -np.inf
    v2 = rest.max(axis=1)
    out = np.repeat(v1[:, None], K, axis=1)
    out[rows, top] = v2
    return out


def global_mse(model: PartitionModel, data: Dataset) -> float:
    r = data.y - model.predict(data.x)
    return float(np.mean(r * r))


def _directions(cfg: CapConfig, p: int, rng) -> np.ndarray:
    if cfg.strategy == CARDINAL:
        return np.eye(p)
    return random_directions(cfg.directions or p, p, rng)


def generate_candidates(model: PartitionModel, data: Dataset, cfg: CapConfig,
                        directions: Optional[np.ndarray] = None,
                        nmin: Optional[int] = None) -> list:
    """All admissible dyadic splits of the current model, scored by global MSE.

    Candidates are returned in lexicographic (subset, direction, knot) order.
    """
    if model.orientation != CONVEX:
        raise InvalidInputError("candidate generation works on convex models; negate first")
    n, p = data.n, data.p
    if nmin is None:
        nmin = n_min(n, p, cfg.D, cfg.min_obs_override)
    if directions is None:
        directions = _directions(cfg, p, cfg.seed)
    cardinal = cfg.strategy == CARDINAL and directions.shape == (p, p) and np.array_equal(directions, np.eye(p))
    a = knots(cfg.L)
    x, y = data.x, data.y
    x1 = design(x)
    others = _max_excluding(x1 @ _coefs(model).T)

    out = []
    for k, idx in enumerate(model.subsets):
        m = len(idx)
        if m < 2 * nmin:
            continue
        xk1 = x1[idx]
        yk = y[idx]
        for j, g in enumerate(directions):
            z = x[idx, j] if cardinal else x[idx] @ g
            order = np.argsort(z, kind="stable")
            zs = z[order]
            lo, hi = zs[0], zs[-1]
            thresholds = a * lo + (1.0 - a) * hi
            counts = np.searchsorted(zs, thresholds, side="right")
            ok = (counts >= nmin) & (counts <= m - nmin)
            picks = [(l, thresholds[l], counts[l]) for l in range(cfg.L) if ok[l]]
            if not picks:
                med = float(np.median(zs))
                c = int(np.searchsorted(zs, med, side="right"))
                if nmin <= c <= m - nmin:
                    picks = [(cfg.L, med, c)]
            fits = {}
            pair = []
            for l, b, c in picks:
                if c not in fits:
                    lsel, rsel = order[:c], order[c:]
                    cl, sl, _ = lstsq_coef(xk1[lsel], yk[lsel])
                    cr, sr, _ = lstsq_coef(xk1[rsel], yk[rsel])
                    fits[c] = (cl, cr, sl + sr, idx[lsel], idx[rsel])
                cl, cr, sse, left, right = fits[c]
                pair.append(CandidateSplit(k, j, np.array(g), l, float(b), left, right,
                                           cl, cr, sse, model))
            if not pair:
                continue
            bl = np.array([c.left_coef for c in pair])
            br = np.array([c.right_coef for c in pair])
            fhat = np.maximum(np.maximum(x1 @ bl.T, x1 @ br.T), others[:, k:k + 1])
            res = y[:, None] - fhat
            mse = np.mean(res * res, axis=0)
            for c, v in zip(pair, mse):
                c.train_mse = float(v)
            out.extend(pair)
    return out


def select_split(candidates: list, objective: str = "global") -> CandidateSplit:
    """Lowest-error candidate; exact ties go to the lexicographically smallest key."""
    if not candidates:
        raise NoFeasibleSplit("no admissible split")
    if objective == "global":
        score = lambda c: c.train_mse
    elif objective == "local":
        score = lambda c: c.local_sse
    else:
        raise InvalidInputError(f"unknown objective {objective!r}")
    return min(candidates, key=lambda c: (score(c), c.key))


def refit(model: PartitionModel, data: Dataset, nmin: int) -> PartitionModel:
    """Refit every hyperplane on the partition the hyperplanes themselves induce.

    The input model is returned unchanged when any induced subset would hold
    fewer than ``nmin`` observations.
    """
    parts = induced_partition(model, data)
    if any(len(s) == 0 or len(s) < nmin for s in parts):
        return model
    x1 = design(data.x)
    coefs = [lstsq_coef(x1[s], data.y[s])[0] for s in parts]
    coefs = np.array(coefs)
    return PartitionModel(coefs[:, 0], coefs[:, 1:], tuple(parts), model.orientation, dict(model.meta))


def _gcv_or_inf(model: PartitionModel, data: Dataset) -> float:
    try:
        return gcv_score(model, data)
    except InvalidInputError:
        return np.inf


def _fit_path(data: Dataset, cfg: CapConfig, fast: bool) -> ModelSequence:
    n, p = data.n, data.p
    nmin = n_min(n, p, cfg.D, cfg.min_obs_override)
    meta = {"D": cfg.D, "L": cfg.L, "seed": cfg.seed, "n": n}
    x1 = design(data.x)
    coef, _, _ = lstsq_coef(x1, data.y)
    model = PartitionModel(coef[:1], coef[None, 1:], (np.arange(n),), CONVEX, meta)
    models = [model]
    scores = [_gcv_or_inf(model, data)]
    rng = np.random.default_rng(cfg.seed)

    while np.any(model.sizes >= 2 * nmin):
        dirs = _directions(cfg, p, rng)
        cands = generate_candidates(model, data, cfg, dirs, nmin)
        if not cands:
            break
        best = select_split(cands, cfg.split_objective)
        model = best.model
        if cfg.refit_enabled:
            model = refit(model, data, nmin)
        models.append(model)
        scores.append(_gcv_or_inf(model, data))
        log.debug("K=%d gcv=%.6g", model.k, scores[-1])
        if fast and len(scores) >= 3 and scores[-1] > scores[-2] and scores[-2] > scores[-3]:
            break

    scores = np.array(scores)
    # scores at rounding level (noiseless fits) are indistinguishable
    atol = 1e-20 * float(np.mean(data.y * data.y))
    return ModelSequence(tuple(models), scores, select_model(scores, atol=atol))


def _run(data: Dataset, cfg: CapConfig, fast: bool) -> ModelSequence:
    if cfg.orientation == CONCAVE:
        seq = _fit_path(Dataset(data.x, -data.y), cfg, fast)
        return replace(seq, models=tuple(m.negated() for m in seq.models))
    return _fit_path(data, cfg, fast)


def run_cap(data: Dataset, cfg: CapConfig = CapConfig()) -> ModelSequence:
    """Full CAP path: grow until no subset can be split, then pick K by GCV."""
    return _run(data, cfg, fast=False)


def run_fast_cap(data: Dataset, cfg: CapConfig = CapConfig(strategy=RANDOM_PROJECTION)) -> ModelSequence:
    """Fast CAP: random projection directions and GCV-based early stopping."""
    if cfg.strategy != RANDOM_PROJECTION:
        raise InvalidInputError("Fast CAP requires the random-projection strategy")
    return _run(data, cfg, fast=True)


def fit(data: Dataset, cfg: CapConfig = CapConfig(), fast: bool = False) -> ModelSequence:
    if fast and cfg.strategy != RANDOM_PROJECTION:
        cfg = replace(cfg, strategy=RANDOM_PROJECTION)
    return run_fast_cap(data, cfg) if fast else run_cap(data, cfg)


class CapRegressor:
    """fit/predict wrapper returning the GCV-selected CAP model."""

    def __init__(self, cfg: CapConfig = CapConfig(), fast: bool = False):
        self.cfg = cfg
        self.fast = fast
        self.model_: Optional[PartitionModel] = None
        self.sequence_: Optional[ModelSequence] = None

    def fit(self, x, y) -> "CapRegressor":
        self.sequence_ = fit(Dataset(x, y), self.cfg, self.fast)
        self.model_ = self.sequence_.best
        return self

    def predict(self, x) -> np.ndarray:
        return self.model_.predict(x)
