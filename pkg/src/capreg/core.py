"""Domain types and max-affine bookkeeping shared by every fitter."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

CONVEX = "convex"
CONCAVE = "concave"
CARDINAL = "cardinal"
RANDOM_PROJECTION = "random-projection"


class InvalidInputError(ValueError):
    """Raised when data or a model does not satisfy an operation's preconditions."""


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or y.ndim != 1:
            raise InvalidInputError("x must be (n, p) and y must be (n,)")
        if x.shape[0] != y.shape[0]:
            raise InvalidInputError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidInputError("dataset needs n >= 1 and p >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class Hyperplane:
    alpha: float
    beta: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not (math.isfinite(self.alpha) and np.all(np.isfinite(beta))):
            raise InvalidInputError("hyperplane coefficients must be finite")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)

    def __call__(self, x) -> float:
        return self.alpha + float(np.dot(self.beta, x))


@dataclass(frozen=True)
class PartitionModel:
    """K hyperplanes plus the observation partition they were fit on.

    Coefficients are stored row-wise: ``intercepts[k]`` and ``slopes[k]``.
    Evaluation takes the max over pieces (min for concave orientation).
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    subsets: tuple
    orientation: str = CONVEX
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        b = np.asarray(self.slopes, dtype=float)
        if b.ndim == 1:
            b = b.reshape(len(a), -1)
        if b.shape[0] != a.shape[0] or a.shape[0] < 1:
            raise InvalidInputError("need K >= 1 intercepts matching K slope rows")
        if self.orientation not in (CONVEX, CONCAVE):
            raise InvalidInputError(f"unknown orientation {self.orientation!r}")
        subsets = tuple(np.sort(np.asarray(s, dtype=np.intp)) for s in self.subsets)
        if subsets and len(subsets) != a.shape[0]:
            raise InvalidInputError("number of subsets must equal number of hyperplanes")
        a.setflags(write=False)
        b.setflags(write=False)
        for s in subsets:
            s.setflags(write=False)
        object.__setattr__(self, "intercepts", a)
        object.__setattr__(self, "slopes", b)
        object.__setattr__(self, "subsets", subsets)

    @classmethod
    def from_hyperplanes(cls, hyperplanes: Sequence[Hyperplane], subsets=(), orientation=CONVEX, meta=None):
        a = np.array([h.alpha for h in hyperplanes])
        b = np.vstack([h.beta for h in hyperplanes])
        return cls(a, b, tuple(subsets), orientation, dict(meta or {}))

    @property
    def k(self) -> int:
        return self.intercepts.shape[0]

    @property
    def p(self) -> int:
        return self.slopes.shape[1]

    @property
    def hyperplanes(self) -> list:
        return [Hyperplane(a, b) for a, b in zip(self.intercepts, self.slopes)]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.subsets], dtype=np.intp)

    def negated(self) -> "PartitionModel":
        flipped = CONCAVE if self.orientation == CONVEX else CONVEX
        return PartitionModel(-self.intercepts, -self.slopes, self.subsets, flipped, dict(self.meta))

    def plane_values(self, x: np.ndarray) -> np.ndarray:
        """Return the (m, K) matrix of every hyperplane evaluated at every row of ``x``."""
        x = _as_rows(x, self.p)
        return x @ self.slopes.T + self.intercepts

    def predict(self, x: np.ndarray) -> np.ndarray:
        vals = self.plane_values(x)
        if self.orientation == CONVEX:
            return vals.max(axis=1)
        return vals.min(axis=1)

    def to_dict(self) -> dict:
        return {
            "orientation": self.orientation,
            "p": self.p,
            "hyperplanes": [
                {"alpha": float(a), "beta": [float(v) for v in b]}
                for a, b in zip(self.intercepts, self.slopes)
            ],
            "subsets": [[int(i) for i in s] for s in self.subsets],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionModel":
        planes = d["hyperplanes"]
        p = int(d["p"])
        a = np.array([h["alpha"] for h in planes], dtype=float)
        b = np.array([h["beta"] for h in planes], dtype=float).reshape(len(planes), p)
        return cls(a, b, tuple(np.array(s, dtype=np.intp) for s in d.get("subsets", [])),
                   d.get("orientation", CONVEX), dict(d.get("meta", {})))

    def to_json(self) -> str:
        # json emits floats via repr, which round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PartitionModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ModelSequence:
    """Models M_1..M_K along a CAP path; ``models[i]`` has ``i + 1`` pieces."""

    models: tuple
    gcv: np.ndarray
    selected: int

    @property
    def best(self) -> PartitionModel:
        return self.models[self.selected]

    @property
    def selected_k(self) -> int:
        return self.models[self.selected].k

    def __len__(self):
        return len(self.models)


@dataclass(frozen=True)
class CapConfig:
    D: float = 3.0
    L: int = 10
    strategy: str = CARDINAL
    directions: Optional[int] = None
    split_objective: str = "global"
    refit_enabled: bool = True
    orientation: str = CONVEX
    seed: int = 0
    min_obs_override: Optional[int] = None

    def __post_init__(self):
        if not self.D > 0:
            raise InvalidInputError("D must be positive")
        if int(self.L) != self.L or self.L < 1:
            raise InvalidInputError("L must be a positive integer")
        if self.strategy not in (CARDINAL, RANDOM_PROJECTION):
            raise InvalidInputError(f"unknown strategy {self.strategy!r}")
        if self.directions is not None and self.directions < 1:
            raise InvalidInputError("direction count must be positive")
        if self.split_objective not in ("global", "local"):
            raise InvalidInputError(f"unknown split objective {self.split_objective!r}")
        if self.orientation not in (CONVEX, CONCAVE):
            raise InvalidInputError(f"unknown orientation {self.orientation!r}")
        if self.min_obs_override is not None and self.min_obs_override < 1:
            raise InvalidInputError("min_obs_override must be a positive integer")


@dataclass(frozen=True)
class PartitionDiagnostics:
    diameters: np.ndarray
    min_eigenvalue: float


def _as_rows(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if p == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != p:
        raise InvalidInputError(f"expected covariates of dimension p={p}, got shape {x.shape}")
    return x


def evaluate(model: PartitionModel, x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.p:
        raise InvalidInputError(f"expected a covariate vector of length {model.p}, got {x.shape[0]}")
    return float(model.predict(x.reshape(1, -1))[0])


def assign_subset(model: PartitionModel, x) -> int:
    """Index of the dominant piece at ``x``; ties go to the lowest index."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.p:
        raise InvalidInputError(f"expected a covariate vector of length {model.p}, got {x.shape[0]}")
    vals = model.plane_values(x.reshape(1, -1))[0]
    # argmax/argmin return the first occurrence, which is the tie-break we want
    return int(np.argmax(vals) if model.orientation == CONVEX else np.argmin(vals))


def n_min(n: int, p: int, D: float, override: Optional[int] = None) -> int:
    """Minimum subset cardinality: ceil(max(n / (D ln n), 2(p + 1)))."""
    if override is not None:
        return int(override)
    if n < 1 or p < 1 or not D > 0:
        raise InvalidInputError("n_min needs n >= 1, p >= 1, D > 0")
    floor = 2 * (p + 1)
    if n == 1:
        return floor
    return int(math.ceil(max(n / (D * math.log(n)), floor)))


def _dominant(vals: np.ndarray, orientation: str) -> np.ndarray:
    return np.argmax(vals, axis=1) if orientation == CONVEX else np.argmin(vals, axis=1)


def induced_partition(hyperplanes, data: Dataset, orientation: str = CONVEX) -> list:
    """Assign each observation to its dominant hyperplane; empty subsets are kept."""
    if isinstance(hyperplanes, PartitionModel):
        model = hyperplanes
    else:
        if len(hyperplanes) == 0:
            raise InvalidInputError("need at least one hyperplane")
        model = PartitionModel.from_hyperplanes(hyperplanes, orientation=orientation)
    owner = _dominant(model.plane_values(data.x), model.orientation)
    return [np.flatnonzero(owner == k) for k in range(model.k)]


def _diameter(pts: np.ndarray, chunk: int = 2048) -> float:
    m = pts.shape[0]
    if m < 2:
        return 0.0
    sq = np.einsum("ij,ij->i", pts, pts)
    best = 0.0
    for start in range(0, m, chunk):
        blk = pts[start:start + chunk]
        d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * blk @ pts.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))


def diagnostics(model: PartitionModel, data: Dataset) -> PartitionDiagnostics:
    """Empirical subset diameters and the smallest eigenvalue of |C_k|^-1 G_k."""
    diam = np.array([_diameter(data.x[s]) for s in model.subsets])
    lam = math.inf
    for s, d in zip(model.subsets, diam):
        if d == 0.0:
            lam = 0.0
            continue
        xs = data.x[s]
        gam = np.hstack([np.ones((len(s), 1)), (xs - xs.mean(axis=0)) / d])
        g = gam.T @ gam / len(s)
        lam = min(lam, float(np.linalg.eigvalsh(g)[0]))
    if not model.subsets:
        lam = 0.0
    return PartitionDiagnostics(diam, lam)
