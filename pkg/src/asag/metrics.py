"""Sample-quality and attention diagnostics for the toy experiments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, DimensionError, InputError

MAX_POINTS = 10_000


@dataclass
class MetricReport:
    energy_distance: float
    mode_coverage: float
    mean_plan_entropy: float | None = None
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["rows"]:
            d.pop("rows")
        return d


def _mean_pairwise(a: np.ndarray, b: np.ndarray, block: int = 1024) -> float:
    # fsum over row sums keeps the result independent of blocking order
    rows = np.concatenate([cdist(a[i:i + block], b).sum(axis=1) for i in range(0, len(a), block)])
    return math.fsum(rows) / (len(a) * len(b))


def _subsample(x: np.ndarray, seed: int) -> np.ndarray:
    if len(x) <= MAX_POINTS:
        return x
    idx = np.random.default_rng(seed).choice(len(x), MAX_POINTS, replace=False)
    return x[np.sort(idx)]


def energy_distance(a, b, subsample_seed: int = 0) -> float:
    """``2 E|A - B| - E|A - A'| - E|B - B'|`` over all pairs (V-statistic)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise InputError("energy_distance needs two nonempty sample sets")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimensionality differs: {a.shape[1]} vs {b.shape[1]}")
    a, b = _subsample(a, subsample_seed), _subsample(b, subsample_seed + 1)
    val = 2 * _mean_pairwise(a, b) - _mean_pairwise(a, a) - _mean_pairwise(b, b)
    return max(val, 0.0)


def mode_coverage(samples, mode_centers, radius: float) -> float:
    centers = np.atleast_2d(np.asarray(mode_centers, dtype=np.float64))
    if centers.size == 0:
        raise InputError("mode_coverage needs at least one center")
    if radius <= 0:
        raise InputError("radius must be positive")
    pts = np.asarray(samples, dtype=np.float64).reshape(-1, centers.shape[1])
    if len(pts) == 0:
        return 0.0
    hit = (cdist(centers, pts) <= radius).any(axis=1)
    return float(hit.mean())


def entropy_profile(trace) -> np.ndarray:
    """Mean perturbed-layer attention row entropy at each sampling step."""
    records = getattr(trace, "records", trace)
    if not records:
        raise ContractError("trace is empty")
    if any(r.plan_entropy is None for r in records):
        raise ContractError("trace has no attention entropy records")
    return np.array([float(np.mean(r.plan_entropy)) for r in records])
