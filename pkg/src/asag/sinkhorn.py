"""Entropy-regularized optimal transport solved with log-domain Sinkhorn."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, NonConvergenceWarning
from .tensor import logsumexp_rows

ORIENTATIONS = ("similarity_max", "adversarial", "external")


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    orientation: str = "external"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError(f"cost must be square, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("cost matrix has non-finite entries")
        if self.orientation not in ORIENTATIONS:
            raise InputError(f"unknown cost orientation {self.orientation!r}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def similarity(cls, q, k) -> "CostMatrix":
        """``1 - Q K^T``: cheap transport between similar query/key pairs."""
        return cls(1.0 - np.asarray(q) @ np.asarray(k).T, "similarity_max")

    @classmethod
    def adversarial(cls, q, k) -> "CostMatrix":
        """``Q K^T``: cheap transport between dissimilar pairs."""
        return cls(np.asarray(q) @ np.asarray(k).T, "adversarial")


@dataclass(frozen=True)
class Marginals:
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("mu", "nu"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.ndim != 1:
                raise DimensionError(f"{name} must be a vector")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise InputError(f"{name} must be a probability vector")
            object.__setattr__(self, name, p)
        if self.mu.shape != self.nu.shape:
            raise DimensionError("marginals must have equal length")

    @classmethod
    def uniform(cls, n: int) -> "Marginals":
        p = np.full(n, 1.0 / n)
        return cls(p, p.copy())


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 1.0
    eps_max: float = 1e-3
    max_iters: int = 50

    def __post_init__(self):
        if not self.lam > 0:
            raise InputError("lambda must be positive")
        if not self.eps_max > 0:
            raise InputError("eps_max must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")


@dataclass
class TransportPlan:
    plan: np.ndarray
    iterations: int
    residual: float
    u: np.ndarray = field(repr=False, default=None)
    v: np.ndarray = field(repr=False, default=None)
    converged: bool = True

    @property
    def n(self) -> int:
        return self.plan.shape[0]

    def marginal_error(self, marg: Marginals | None = None) -> float:
        marg = marg or Marginals.uniform(self.n)
        return max(np.abs(self.plan.sum(1) - marg.mu).max(),
                   np.abs(self.plan.sum(0) - marg.nu).max())


def sinkhorn_log_potentials(log_kernel: np.ndarray, log_mu: np.ndarray, log_nu: np.ndarray,
                            eps_max: float, max_iters: int):
    """Batched log-domain Sinkhorn on ``log_kernel`` of shape ``[..., n, m]``.

    Each matrix in the batch stops on its own once the L1 change of its
    column potential drops to ``eps_max``.  Returns ``(u, v, iterations,
    residual)`` with per-matrix iteration counts and final residuals.
    """
    batch = log_kernel.shape[:-2]
    n, m = log_kernel.shape[-2:]
    log_kernel = log_kernel.reshape(-1, n, m)
    b = log_kernel.shape[0]
    u = np.zeros((b, n))
    v = np.zeros((b, m))
    iters = np.zeros(b, dtype=np.int64)
    resid = np.full(b, np.inf)
    active = np.ones(b, dtype=bool)
    log_kernel_t = np.swapaxes(log_kernel, -1, -2)
    for i in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        lk, lkt, v_prev = log_kernel[idx], log_kernel_t[idx], v[idx]
        u_new = log_mu - logsumexp_rows(lk + v_prev[..., None, :])
        v_new = log_nu - logsumexp_rows(lkt + u_new[..., None, :])
        delta = np.abs(v_new - v_prev).sum(axis=-1)
        u[idx], v[idx] = u_new, v_new
        iters[idx] = i
        resid[idx] = delta
        active[idx] = delta > eps_max
        if not active.any():
            break
    return (u.reshape(batch + (n,)), v.reshape(batch + (m,)),
            iters.reshape(batch), resid.reshape(batch))


def sinkhorn_log_domain(cost: CostMatrix, marg: Marginals | None, cfg: SinkhornConfig) -> TransportPlan:
    """Solve ``min <P, M> - H(P)/lam`` over couplings of ``marg`` (uniform if None)."""
    if not isinstance(cost, CostMatrix):
        cost = CostMatrix(cost)
    marg = marg or Marginals.uniform(cost.n)
    if marg.mu.shape[0] != cost.n:
        raise DimensionError(f"marginals of length {marg.mu.shape[0]} for a {cost.n}x{cost.n} cost")
    with np.errstate(divide="ignore"):
        log_mu, log_nu = np.log(marg.mu), np.log(marg.nu)
    log_kernel = -cfg.lam * cost.values
    u, v, iters, resid = sinkhorn_log_potentials(log_kernel, log_mu, log_nu, cfg.eps_max, cfg.max_iters)
    plan = np.exp(u[:, None] + log_kernel + v[None, :])
    residual = float(resid)
    converged = residual <= cfg.eps_max
    if residual > 10 * cfg.eps_max:
        warnings.warn(f"Sinkhorn stopped after {int(iters)} iterations with residual {residual:.3g}",
                      NonConvergenceWarning, stacklevel=2)
    return TransportPlan(plan, int(iters), residual, u, v, converged)


def plan_entropy(p) -> float:
    """Shannon entropy ``-sum P log P`` with ``0 log 0 = 0``."""
    plan = p.plan if isinstance(p, TransportPlan) else np.asarray(p, dtype=np.float64)
    if np.any(plan < 0):
        raise InputError("transport plan has negative entries")
    nz = plan[plan > 0]
    return float(-(nz * np.log(nz)).sum())


def ot_objective(p, cost, lam: float) -> float:
    """``<P, M> - (1/lam) <P, log P>`` with the sign convention written as is.

    Note that ``-<P, log P> = H(P)``, so this equals ``<P, M> + H(P)/lam``.
    The quantity Sinkhorn minimizes is :func:`regularized_cost`.
    """
    plan = p.plan if isinstance(p, TransportPlan) else np.asarray(p, dtype=np.float64)
    m = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if plan.shape != m.shape:
        raise DimensionError(f"plan {plan.shape} and cost {m.shape} differ in shape")
    if not lam > 0:
        raise InputError("lambda must be positive")
    return float((plan * m).sum() + plan_entropy(plan) / lam)


def regularized_cost(p, cost, lam: float) -> float:
    """``<P, M> - H(P)/lam``, the objective whose minimizer Sinkhorn returns."""
    plan = p.plan if isinstance(p, TransportPlan) else np.asarray(p, dtype=np.float64)
    m = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if plan.shape != m.shape:
        raise DimensionError(f"plan {plan.shape} and cost {m.shape} differ in shape")
    return float((plan * m).sum() - plan_entropy(plan) / lam)


def uniform_plan(n: int) -> TransportPlan:
    if n < 1:
        raise InputError("uniform_plan needs n >= 1")
    return TransportPlan(np.full((n, n), 1.0 / (n * n)), 0, 0.0,
                         np.full(n, -np.log(n)), np.full(n, -np.log(n)))
