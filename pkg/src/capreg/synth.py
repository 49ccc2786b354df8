"""Synthetic convex regression benchmarks and the empirical rate harness."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .core import Dataset, InvalidInputError

# Dirichlet(1, ..., 1) draw used as the fixed index vector of problem 2
PROBLEM2_WEIGHTS = np.array(
    [0.0680, 0.0160, 0.1707, 0.1513, 0.1790, 0.2097, 0.0548, 0.0337, 0.0377, 0.0791]
)

TEST_SIZE = 10_000
TEST_SEED = 20_130_101


@dataclass(frozen=True)
class ProblemSpec:
    problem: str
    n: int
    seed: int
    noise: Optional[float] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InvalidInputError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.n < 1:
            raise InvalidInputError("n must be at least 1")

    def generate(self):
        gen, _, _, default_noise = PROBLEMS[self.problem]
        return gen(self.n, self.seed, self.noise if self.noise is not None else default_noise)


def mean_problem1(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return (x[:, 0] + 0.5 * x[:, 1] + x[:, 2]) ** 2 - x[:, 3] + 0.25 * x[:, 4] ** 2


def mean_problem2(x: np.ndarray) -> np.ndarray:
    return np.exp(np.atleast_2d(x) @ PROBLEM2_WEIGHTS)


def mean_quad2d(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return x[:, 0] ** 2 + x[:, 1] ** 2


def _draw(n, seed, noise, p, covariates, mean):
    rng = np.random.default_rng(seed)
    x = covariates(rng, (n, p))
    f = mean(x)
    y = f + noise * rng.standard_normal(n)
    return Dataset(x, y), f


def gen_problem1(n: int, seed: int, noise: float = 1.0):
    """5-d Gaussian covariates, quadratic-plus-linear mean, N(0, 1) noise."""
    return _draw(n, seed, noise, 5, lambda r, s: r.standard_normal(s), mean_problem1)


def gen_problem2(n: int, seed: int, noise: float = 0.1):
    """10-d Gaussian covariates, exp of a single index, N(0, 0.1^2) noise."""
    return _draw(n, seed, noise, 10, lambda r, s: r.standard_normal(s), mean_problem2)


def gen_quad2d(n: int, seed: int, noise: float = 0.25):
    return _draw(n, seed, noise, 2, lambda r, s: r.uniform(-1.0, 1.0, s), mean_quad2d)


PROBLEMS = {
    "1": (gen_problem1, mean_problem1, 5, 1.0),
    "2": (gen_problem2, mean_problem2, 10, 0.1),
    "quad2d": (gen_quad2d, mean_quad2d, 2, 0.25),
}


def holdout_set(problem: str, size: int = TEST_SIZE, seed: int = TEST_SEED):
    """Fixed covariates and noiseless means used for every test-MSE computation."""
    gen = PROBLEMS[str(problem)][0]
    data, f = gen(size, seed, 0.0)
    return data.x, f


def write_csv(path, data: Dataset, mean: Optional[np.ndarray] = None) -> None:
    header = [f"x{j + 1}" for j in range(data.p)] + ["y"]
    if mean is not None:
        header.append("true_mean")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]] + [repr(float(data.y[i]))]
            if mean is not None:
                row.append(repr(float(mean[i])))
            w.writerow(row)


def loglog_slope(ns: Iterable[float], mses: Iterable[float]) -> float:
    """OLS slope of log(sqrt(MSE)) against log(n); NaN when undefined."""
    ns = np.asarray(list(ns), dtype=float)
    mses = np.asarray(list(mses), dtype=float)
    if len(ns) < 2 or np.any(mses <= 0) or not np.all(np.isfinite(mses)):
        return math.nan
    return float(np.polyfit(np.log(ns), 0.5 * np.log(mses), 1)[0])


def rate_study(problem: str, n_grid, seeds, fitter: Callable, on_cell: Optional[Callable] = None):
    """Average test MSE per grid size and the log-log convergence slope.

    ``fitter(data)`` returns a predictor ``f(x) -> yhat``; the special string
    ``"true mean"`` predicts the noiseless mean itself. ``on_cell`` receives
    ``(n, seed, mse, seconds, predictor)`` for every cell.
    Returns ``(slope, {n: mean_mse})``.
    """
    n_grid = list(n_grid)
    if len(n_grid) < 3:
        raise InvalidInputError("rate study needs at least three sample sizes")
    gen, mean, _, noise = PROBLEMS[str(problem)]
    xt, ft = holdout_set(str(problem))
    avg = {}
    for n in n_grid:
        errs = []
        for seed in seeds:
            data, _ = gen(n, seed, noise)
            t0 = time.perf_counter()
            predict = mean if fitter == "true mean" else fitter(data)
            secs = time.perf_counter() - t0
            err = float(np.mean((predict(xt) - ft) ** 2))
            errs.append(err)
            if on_cell is not None:
                on_cell(n, seed, err, secs, predict)
        avg[n] = float(np.mean(errs))
    return loglog_slope(avg.keys(), avg.values()), avg
