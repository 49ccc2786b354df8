"""American basket call pricing by regression-based approximate dynamic programming.

Continuation values are regressed on the current asset prices, stepping
backwards from maturity; the resulting exercise policy is then valued on an
independent set of paths, which yields a lower bound on the option price.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CapConfig, InvalidInputError, RANDOM_PROJECTION
from .engine import CapRegressor
from .linfit import RCOND

REGRESSORS = ("cap", "fastcap", "poly")


class RegressionFailure(RuntimeError):
    def __init__(self, t, cause):
        super().__init__(f"continuation regression failed at exercise date t={t}: {cause}")
        self.t = t


@dataclass(frozen=True)
class OptionSpec:
    n_assets: int = 1
    s0: float = 100.0
    strike: float = 110.0
    maturity: float = 0.25
    drift: float = 0.05
    vol: float = 0.10
    rho: float = 0.5
    rate: Optional[float] = None
    steps: int = 50

    def __post_init__(self):
        if self.n_assets < 1:
            raise InvalidInputError("need at least one asset")
        if not self.s0 > 0:
            raise InvalidInputError("initial price must be positive")
        if not self.maturity > 0:
            raise InvalidInputError("maturity must be positive")
        if self.vol < 0:
            raise InvalidInputError("volatility must be non-negative")
        if self.steps < 1:
            raise InvalidInputError("need at least one exercise date")
        if self.n_assets > 1 and not (-1.0 / (self.n_assets - 1) < self.rho <= 1.0):
            raise InvalidInputError(
                f"correlation {self.rho} is invalid for {self.n_assets} assets; "
                f"need -1/(N-1) < rho <= 1"
            )

    @property
    def r(self) -> float:
        return self.drift if self.rate is None else self.rate

    @property
    def dt(self) -> float:
        return self.maturity / self.steps


@dataclass(frozen=True)
class PathSet:
    """Prices at exercise dates 1..steps, shape ``(paths, steps, assets)``."""

    prices: np.ndarray
    seed: int

    @property
    def m(self) -> int:
        return self.prices.shape[0]


@dataclass
class ValuePolicy:
    regressors: list
    kind: str

    def continuation(self, t: int, state: np.ndarray) -> np.ndarray:
        return self.regressors[t - 1].predict(state)


def _correlation_factor(n: int, rho: float) -> np.ndarray:
    corr = np.full((n, n), rho)
    np.fill_diagonal(corr, 1.0)
    w, v = np.linalg.eigh(corr)
    return v * np.sqrt(np.clip(w, 0.0, None))


def simulate_paths(spec: OptionSpec, m: int, seed: int) -> PathSet:
    """Exact log-Euler correlated geometric Brownian motion."""
    if m < 1:
        raise InvalidInputError("need at least one path")
    n, dt = spec.n_assets, spec.dt
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, spec.steps, n)) @ _correlation_factor(n, spec.rho).T
    t = np.arange(1, spec.steps + 1)[None, :, None] * dt
    logs = (spec.drift - 0.5 * spec.vol ** 2) * t + spec.vol * math.sqrt(dt) * np.cumsum(z, axis=1)
    return PathSet(spec.s0 * np.exp(logs), seed)


def payoff(state, strike: float):
    """Basket call payoff max(mean(S) - K, 0) over the last axis."""
    state = np.asarray(state, dtype=float)
    return np.maximum(state.mean(axis=-1) - strike, 0.0)


class PolynomialRegressor:
    """Least squares on (1, S_i, S_i^2, S_i^3, S_i S_j, h) with prices scaled by S0."""

    def __init__(self, strike: float, scale: float = 1.0):
        self.strike = strike
        self.scale = scale
        self.coef_ = None

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x / self.scale
        cols = [np.ones((x.shape[0], 1)), s, s ** 2, s ** 3]
        i, j = np.triu_indices(x.shape[1], k=1)
        if i.size:
            cols.append(s[:, i] * s[:, j])
        cols.append((payoff(x, self.strike) / self.scale)[:, None])
        return np.hstack(cols)

    def fit(self, x, y):
        self.coef_ = np.linalg.lstsq(self.features(x), y, rcond=RCOND)[0]
        return self

    def predict(self, x):
        return self.features(x) @ self.coef_


def make_regressor(kind: str, spec: OptionSpec, cfg: Optional[CapConfig] = None):
    if kind == "cap":
        return CapRegressor(cfg or CapConfig())
    if kind == "fastcap":
        cfg = cfg or CapConfig(strategy=RANDOM_PROJECTION, directions=min(spec.n_assets, 10))
        return CapRegressor(cfg, fast=True)
    if kind == "poly":
        return PolynomialRegressor(spec.strike, spec.s0)
    raise InvalidInputError(f"unknown regressor {kind!r}; choose from {REGRESSORS}")


def backward_induct(paths: PathSet, spec: OptionSpec, kind: str = "cap",
                    cfg: Optional[CapConfig] = None, itm_only: bool = False) -> ValuePolicy:
    """Regress discounted next-date values on current prices, t = steps-1 .. 1."""
    if paths.prices.shape[1:] != (spec.steps, spec.n_assets):
        raise InvalidInputError("path set does not match the option's dates and assets")
    disc = math.exp(-spec.r * spec.dt)
    value = payoff(paths.prices[:, -1], spec.strike)
    regs = [None] * (spec.steps - 1)
    for t in range(spec.steps - 1, 0, -1):
        x = paths.prices[:, t - 1]
        h = payoff(x, spec.strike)
        target = disc * value
        rows = h > 0 if itm_only else np.ones(len(h), dtype=bool)
        reg = make_regressor(kind, spec, cfg)
        try:
            if rows.sum() > spec.n_assets + 1:
                reg.fit(x[rows], target[rows])
            else:
                # too few in-the-money paths: regress on everything instead
                reg.fit(x, target)
            cont = reg.predict(x)
        except Exception as exc:  # noqa: BLE001 - surfaced with the failing date
            raise RegressionFailure(t, exc) from exc
        if not np.all(np.isfinite(cont)):
            raise RegressionFailure(t, "non-finite continuation values")
        regs[t - 1] = reg
        value = np.maximum(h, cont)
    return ValuePolicy(regs, kind)


def _discounted_stopping_payoffs(policy: ValuePolicy, paths: PathSet, spec: OptionSpec) -> np.ndarray:
    m = paths.m
    out = np.zeros(m)
    alive = np.ones(m, dtype=bool)
    for t in range(1, spec.steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x = paths.prices[idx, t - 1]
        h = payoff(x, spec.strike)
        # exercising for a zero payoff would forfeit the option for nothing
        stop = (h > 0) & (h >= policy.continuation(t, x))
        out[idx[stop]] = math.exp(-spec.r * t * spec.dt) * h[stop]
        alive[idx[stop]] = False
    last = np.flatnonzero(alive)
    out[last] = math.exp(-spec.r * spec.maturity) * payoff(paths.prices[last, -1], spec.strike)
    return out


def evaluate_policy(policy: ValuePolicy, paths: PathSet, spec: OptionSpec):
    """Mean discounted payoff of the induced exercise rule and its standard error."""
    v = _discounted_stopping_payoffs(policy, paths, spec)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def european_value(paths: PathSet, spec: OptionSpec):
    v = math.exp(-spec.r * spec.maturity) * payoff(paths.prices[:, -1], spec.strike)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se
