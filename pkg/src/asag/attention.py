"""Softmax attention and the perturbed variants used to build weak predictions.

Every operator takes an :class:`AttentionBatch` whose arrays have shape
``[..., n, d_head]`` (usually ``[heads, n, d_head]``, or ``[batch, heads, n,
d_head]`` inside the denoiser) and treats each leading index independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .sinkhorn import SinkhornConfig, sinkhorn_log_potentials

MODES = ("softmax", "sinkhorn_similarity", "asa", "identity", "blurred", "uniform")


@dataclass(frozen=True)
class AttentionBatch:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q, k, v = (np.asarray(a, dtype=np.float64) for a in (self.q, self.k, self.v))
        if not (q.shape == k.shape == v.shape):
            raise DimensionError(f"q, k, v shapes differ: {q.shape}, {k.shape}, {v.shape}")
        if q.ndim < 2 or q.shape[-2] < 1 or q.shape[-1] < 1:
            raise DimensionError(f"attention batch needs shape [..., n, d], got {q.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.q.shape[-2]

    @property
    def d_head(self) -> int:
        return self.q.shape[-1]

    def scores(self) -> np.ndarray:
        return self.q @ np.swapaxes(self.k, -1, -2)


@dataclass(frozen=True)
class AttentionMode:
    """Which attention operator to run.

    ``lam=None`` means the default regularization ``1/sqrt(d_head)``.
    ``rescale`` multiplies Sinkhorn plans by ``n`` so rows sum to one.
    """

    tag: str = "softmax"
    lam: float | None = None
    eps_max: float = 1e-3
    max_iters: int = 50
    blur_sigma: float = 1.0
    rescale: bool = True

    def __post_init__(self):
        if self.tag not in MODES:
            raise InputError(f"unknown attention mode {self.tag!r}")
        if self.blur_sigma < 0:
            raise InputError("blur_sigma must be nonnegative")

    def sinkhorn_config(self, d_head: int) -> SinkhornConfig:
        lam = 1.0 / math.sqrt(d_head) if self.lam is None else self.lam
        return SinkhornConfig(lam, self.eps_max, self.max_iters)


@dataclass
class AttentionResult:
    output: np.ndarray
    weights: np.ndarray
    iterations: np.ndarray | None = None
    residual: np.ndarray | None = field(default=None, repr=False)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_weights(b: AttentionBatch) -> np.ndarray:
    return _softmax_rows(b.scores() / math.sqrt(b.d_head))


def self_attention(b: AttentionBatch) -> np.ndarray:
    return softmax_weights(b) @ b.v


def _sinkhorn_weights(b: AttentionBatch, cost: np.ndarray, cfg: SinkhornConfig, rescale: bool):
    n = b.n
    log_marg = np.full(n, -math.log(n))
    log_kernel = -cfg.lam * cost
    u, v, iters, resid = sinkhorn_log_potentials(log_kernel, log_marg, log_marg,
                                                 cfg.eps_max, cfg.max_iters)
    plan = np.exp(u[..., :, None] + log_kernel + v[..., None, :])
    if rescale:
        plan = plan * n
    return plan, iters, resid


def sinkhorn_attention_result(b: AttentionBatch, cfg: SinkhornConfig, rescale: bool = True,
                              adversarial: bool = False) -> AttentionResult:
    cost = b.scores() if adversarial else 1.0 - b.scores()
    w, iters, resid = _sinkhorn_weights(b, cost, cfg, rescale)
    return AttentionResult(w @ b.v, w, iters, resid)


def sinkhorn_attention(b: AttentionBatch, cfg: SinkhornConfig, rescale: bool = True) -> np.ndarray:
    """Doubly stochastic attention on the similarity cost ``1 - Q K^T``."""
    return sinkhorn_attention_result(b, cfg, rescale).output


def adversarial_sinkhorn_attention(b: AttentionBatch, cfg: SinkhornConfig,
                                   rescale: bool = True) -> np.ndarray:
    """Sinkhorn attention on ``Q K^T``, which pushes mass toward dissimilar pairs."""
    return sinkhorn_attention_result(b, cfg, rescale, adversarial=True).output


def identity_attention(b: AttentionBatch) -> np.ndarray:
    return b.v


def gaussian_kernel1d(sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Normalized Gaussian taps on ``[-r, r]`` with ``r = int(truncate*sigma + 0.5)``."""
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    radius = int(truncate * sigma + 0.5)
    if sigma == 0 or radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def blur_matrix(n: int, sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Row ``i`` holds the weights that blurring assigns to positions ``0..n-1``.

    Padding mirrors the sequence including its edge sample (``c b a | a b c``),
    which makes the padded signal periodic with period ``2n``; the taps are
    folded by residue so very wide kernels stay cheap.
    """
    w = gaussian_kernel1d(sigma, truncate)
    radius = (w.size - 1) // 2
    period = 2 * n
    offsets = np.arange(-radius, radius + 1)
    folded = np.bincount(np.mod(offsets, period), weights=w, minlength=period)
    pos = np.arange(period)
    mirrored = np.where(pos < n, pos, period - 1 - pos)
    out = np.zeros((n, n))
    for i in range(n):
        np.add.at(out[i], mirrored[(i + pos) % period], folded)
    return out


def blurred_weights(b: AttentionBatch, sigma: float) -> np.ndarray:
    logits = b.scores() / math.sqrt(b.d_head)
    if sigma > 0:
        logits = logits @ blur_matrix(b.n, sigma).T
    return _softmax_rows(logits)


def blurred_attention(b: AttentionBatch, sigma: float) -> np.ndarray:
    """Gaussian-blur each row of the pre-softmax logits along the key axis."""
    return blurred_weights(b, sigma) @ b.v


def uniform_attention(b: AttentionBatch) -> np.ndarray:
    return np.broadcast_to(b.v.mean(axis=-2, keepdims=True), b.v.shape).copy()


def attend(b: AttentionBatch, mode: AttentionMode) -> AttentionResult:
    """Run ``mode``'s operator and return the output together with its weights."""
    tag = mode.tag
    if tag == "softmax":
        w = softmax_weights(b)
        return AttentionResult(w @ b.v, w)
    if tag in ("sinkhorn_similarity", "asa"):
        return sinkhorn_attention_result(b, mode.sinkhorn_config(b.d_head), mode.rescale,
                                         adversarial=tag == "asa")
    if tag == "identity":
        w = np.broadcast_to(np.eye(b.n), b.q.shape[:-2] + (b.n, b.n))
        return AttentionResult(b.v.copy(), w)
    if tag == "blurred":
        w = blurred_weights(b, mode.blur_sigma)
        return AttentionResult(w @ b.v, w)
    w = np.full(b.q.shape[:-2] + (b.n, b.n), 1.0 / b.n)
    return AttentionResult(uniform_attention(b), w)


def row_entropy(weights: np.ndarray) -> np.ndarray:
    """Entropy of each attention row, averaged over rows: shape ``weights.shape[:-2]``."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log(w), 0.0)
    return -terms.sum(axis=-1).mean(axis=-1)
