"""Small class-conditional transformer that predicts the noise on a point set.

Points are tokens; the sinusoidal timestep embedding and the class embedding
are added to every token.  The output head adds a time-gated multiple of the
input to the transformer's prediction.  Selected blocks can swap their softmax attention
for one of the perturbed operators in :mod:`asag.attention` at call time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .attention import AttentionBatch, AttentionMode, attend, row_entropy
from .diffusion import NoiseSchedule, dsm_loss, q_sample_batch
from .errors import ContractError, InputError, TrainingDivergence
from .tensor import Rng, Tensor

NULL_CLASS = -1


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 8
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 4
    d_ff: int = 128
    point_dim: int = 2

    def __post_init__(self):
        if self.n_layers < 2:
            raise InputError("the denoiser needs at least two blocks")
        if self.d_model % self.n_heads:
            raise InputError("d_model must be divisible by n_heads")
        if self.num_classes < 0:
            raise InputError("num_classes must be nonnegative")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class DenoiserParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.tensors.items()}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "in.w": (cfg.point_dim, d), "in.b": (d,),
        "time.w1": (d, d), "time.b1": (d,), "time.w2": (d, d), "time.b2": (d,),
        "class.table": (cfg.num_classes + 1, d),
    }
    for i in range(cfg.n_layers):
        p = f"block{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "q.w": (d, d), p + "k.w": (d, d), p + "v.w": (d, d),
            p + "o.w": (d, d), p + "o.b": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff1.w": (d, f), p + "ff1.b": (f,), p + "ff2.w": (f, d), p + "ff2.b": (d,),
        })
    shapes.update({"out.ln.g": (d,), "out.ln.b": (d,), "out.w": (d, cfg.point_dim),
                   "out.b": (cfg.point_dim,), "out.skip.w": (d, 1), "out.skip.b": (1,)})
    return shapes


def init_params(cfg: ModelConfig, rng: Rng) -> DenoiserParams:
    """Gaussian weights with variance 1/fan_in; zero output head, biases and LN shifts."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            tensors[name] = np.ones(shape)
        elif name == "class.table":
            tensors[name] = rng.normal(shape)
        elif name.startswith("out.") or len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(shape) / math.sqrt(shape[0])
    return DenoiserParams(cfg, tensors)


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def _class_rows(cfg: ModelConfig, c, batch: int) -> np.ndarray:
    if c is None:
        c = NULL_CLASS
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (batch,))
    bad = (c != NULL_CLASS) & ((c < 0) | (c >= cfg.num_classes))
    if bad.any():
        raise InputError(f"class id {int(c[bad][0])} outside 0..{cfg.num_classes - 1} (or null)")
    return np.where(c == NULL_CLASS, cfg.num_classes, c)


def check_layers(cfg: ModelConfig, mode: AttentionMode | None, layers) -> frozenset[int]:
    layers = frozenset(int(i) for i in (layers or ()))
    if any(not 0 <= i < cfg.n_layers for i in layers):
        raise InputError(f"layer indices {sorted(layers)} outside 0..{cfg.n_layers - 1}")
    if mode is not None and mode.tag != "softmax" and not layers:
        raise ContractError(f"attention mode {mode.tag!r} needs a non-empty layer selection")
    return layers


def forward(params: DenoiserParams, x_t, t, c, mode: AttentionMode | None = None, layers=(),
            record: list | None = None, weights: dict[str, Tensor] | None = None) -> Tensor:
    """Taped forward pass.  ``weights`` overrides the parameter tensors (for training)."""
    cfg = params.config
    layers = check_layers(cfg, mode, layers)
    perturb = mode is not None and mode.tag != "softmax"
    W = weights or {k: Tensor(v) for k, v in params.tensors.items()}
    x = np.asarray(x_t, dtype=np.float64)
    B, n, _ = x.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    rows = _class_rows(cfg, c, B)
    H, dh, D = cfg.n_heads, cfg.d_head, cfg.d_model

    h = Tensor(x) @ W["in.w"] + W["in.b"]
    temb = tt.silu(Tensor(timestep_embedding(t, D)) @ W["time.w1"] + W["time.b1"])
    temb = temb @ W["time.w2"] + W["time.b2"]
    cond = temb + tt.gather_rows(W["class.table"], rows)
    h = h + cond.reshape(B, 1, D)

    for i in range(cfg.n_layers):
        p = f"block{i}."
        a = tt.layer_norm(h, W[p + "ln1.g"], W[p + "ln1.b"])
        q, k, v = ((a @ W[p + s]).reshape(B, n, H, dh).transpose(0, 2, 1, 3)
                   for s in ("q.w", "k.w", "v.w"))
        if perturb and i in layers:
            res = attend(AttentionBatch(q.data, k.data, v.data), mode)
            att_out = Tensor(res.output)
            if record is not None:
                record.append({"layer": i, "perturbed": True, "mode": mode.tag,
                               "entropy": row_entropy(res.weights).mean(axis=-1),
                               "iterations": None if res.iterations is None
                               else res.iterations.max(axis=-1)})
        else:
            att = tt.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)))
            att_out = att @ v
            if record is not None:
                record.append({"layer": i, "perturbed": False, "mode": "softmax",
                               "entropy": row_entropy(att.data).mean(axis=-1), "iterations": None})
        merged = att_out.transpose(0, 2, 1, 3).reshape(B, n, D)
        h = h + (merged @ W[p + "o.w"] + W[p + "o.b"])
        m = tt.layer_norm(h, W[p + "ln2.g"], W[p + "ln2.b"])
        h = h + (tt.silu(m @ W[p + "ff1.w"] + W[p + "ff1.b"]) @ W[p + "ff2.w"] + W[p + "ff2.b"])

    out = tt.layer_norm(h, W["out.ln.g"], W["out.ln.b"])
    # time-gated linear skip: eps is close to x_t at high noise
    gate = (temb @ W["out.skip.w"] + W["out.skip.b"]).reshape(B, 1, 1)
    return out @ W["out.w"] + W["out.b"] + Tensor(x) * gate


def predict_eps(params: DenoiserParams, x_t, t, c=None, mode: AttentionMode | None = None,
                layers=(), record: list | None = None) -> np.ndarray:
    """Noise prediction for ``x_t`` of shape ``[B, n, 2]`` (or ``[n, 2]``).

    ``c`` is a class id, ``None``/``NULL_CLASS`` for the null condition, or a
    per-set array.  Blocks listed in ``layers`` use ``mode``'s attention; all
    other blocks keep softmax attention.
    """
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    out = forward(params, x, t, c, mode, layers, record).data
    return out[0] if single else out


def loss_and_grads(params: DenoiserParams, x0, labels, t, eps, sched: NoiseSchedule):
    W = {k: Tensor(v, requires_grad=True) for k, v in params.tensors.items()}
    x_t = q_sample_batch(x0, t, eps, sched)
    pred = forward(params, x_t, t, labels, weights=W)
    loss = dsm_loss(pred, Tensor(eps))
    names = list(W)
    grads = tt.grad_of(loss, [W[k] for k in names])
    return float(loss.data), dict(zip(names, grads))


@dataclass
class TrainResult:
    params: DenoiserParams
    losses: list[float]


def train(params: DenoiserParams, dataset, sched: NoiseSchedule, rng: Rng, epochs: int, lr: float,
          batch_size: int = 64, p_drop: float = 0.1) -> TrainResult:
    """Plain gradient descent on the noise-prediction loss.

    ``dataset`` is ``(points [N, n, 2], labels [N])``.  Each step draws
    ``t`` uniformly from ``1..T`` and replaces the label by the null class
    with probability ``p_drop``.
    """
    x_all, y_all = (np.asarray(a) for a in dataset)
    if len(x_all) == 0:
        raise InputError("training set is empty")
    cfg = params.config
    y_all = y_all.astype(np.int64)
    if cfg.num_classes > 0 and np.any((y_all < 0) | (y_all >= cfg.num_classes)):
        raise InputError("training labels outside the class range")
    params = params.copy()
    losses: list[float] = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(x_all))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            x0 = x_all[idx]
            labels = y_all[idx] if cfg.num_classes > 0 else np.full(idx.size, NULL_CLASS)
            drop = rng.uniform(idx.size) < p_drop
            labels = np.where(drop, NULL_CLASS, labels)
            t = rng.integers(1, sched.T + 1, size=idx.size)
            eps = rng.normal(x0.shape)
            loss, grads = loss_and_grads(params, x0, labels, t, eps, sched)
            if not np.isfinite(loss):
                raise TrainingDivergence(step, loss)
            for k, g in grads.items():
                params.tensors[k] -= lr * g
            losses.append(loss)
            step += 1
    return TrainResult(params, losses)
