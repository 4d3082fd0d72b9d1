"""Guided DDIM sampling: CFG, PAG/SEG-style baselines and adversarial Sinkhorn guidance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMode
from .diffusion import NoiseSchedule, ddim_step, ddim_timesteps
from .errors import ContractError, DimensionError, InputError
from .model import NULL_CLASS, DenoiserParams, predict_eps
from .tensor import Rng

METHODS = ("none", "cfg", "pag", "seg", "asag", "sink", "uniform")

# attention operator used for the weak prediction of each perturbation method
_METHOD_MODE = {"pag": "identity", "seg": "blurred", "asag": "asa",
                "sink": "sinkhorn_similarity", "uniform": "uniform"}

# PAG and SEG are conventionally run at a larger scale than ASAG
DEFAULT_SCALE = {"pag": 3.0, "seg": 3.0}


def default_scale(method: str) -> float:
    return DEFAULT_SCALE.get(method, 1.5)


@dataclass(frozen=True)
class GuidanceSpec:
    """How the weak prediction is built and how strongly to extrapolate away from it.

    ``cfg_scale`` switches on joint classifier-free guidance.  ``composition``
    picks how the two combine: ``"sequential"`` applies CFG to both the base
    and the perturbed predictions and then extrapolates between them;
    ``"additive"`` sums the two guidance deltas.
    """

    method: str = "asag"
    s: float = 1.5
    cfg_scale: float | None = None
    layers: tuple[int, ...] = (1, 2)
    lam: float | None = None
    eps_max: float = 1e-3
    max_iters: int = 50
    blur_sigma: float = 16.0
    rescale: bool = True
    composition: str = "sequential"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown guidance method {self.method!r}")
        if self.s < 0:
            raise InputError("guidance scale must be nonnegative")
        if self.cfg_scale is not None and self.cfg_scale < 0:
            raise InputError("cfg_scale must be nonnegative")
        if self.composition not in ("sequential", "additive"):
            raise InputError(f"unknown composition {self.composition!r}")

    @property
    def perturbs_attention(self) -> bool:
        return self.method in _METHOD_MODE

    @property
    def uses_sinkhorn(self) -> bool:
        return self.method in ("asag", "sink")

    def attention_mode(self) -> AttentionMode:
        return AttentionMode(_METHOD_MODE[self.method], lam=self.lam, eps_max=self.eps_max,
                             max_iters=self.max_iters, blur_sigma=self.blur_sigma,
                             rescale=self.rescale)

    def is_vanilla(self) -> bool:
        cfg_off = self.cfg_scale is None or self.cfg_scale == 0
        if self.method == "none":
            return cfg_off
        if self.method == "cfg":
            return self.s == 0
        return self.s == 0 and cfg_off


def guided_epsilon(eps, eps_weak, s: float):
    """``eps + s * (eps - eps_weak)``."""
    eps, eps_weak = np.asarray(eps), np.asarray(eps_weak)
    if eps.shape != eps_weak.shape:
        raise DimensionError(f"shapes differ: {eps.shape} vs {eps_weak.shape}")
    if s < 0:
        raise InputError("guidance scale must be nonnegative")
    return eps + s * (eps - eps_weak)


def guidance_energy(eps, eps_weak):
    eps, eps_weak = np.asarray(eps), np.asarray(eps_weak)
    if eps.shape != eps_weak.shape:
        raise DimensionError(f"shapes differ: {eps.shape} vs {eps_weak.shape}")
    return eps - eps_weak


@dataclass
class StepRecord:
    step: int
    t: int
    delta_norm: np.ndarray
    plan_entropy: np.ndarray | None = None
    base_entropy: np.ndarray | None = None
    iterations: np.ndarray | None = None


@dataclass
class GuidanceTrace:
    method: str
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def rows(self):
        """One flat dict per (chain, step), ordered by chain then step."""
        if not self.records:
            return
        chains = self.records[0].delta_norm.shape[0]
        for ch in range(chains):
            for r in self.records:
                row = {"chain": ch, "step": r.step, "t": r.t, "method": self.method,
                       "delta_norm": float(r.delta_norm[ch])}
                if r.plan_entropy is not None:
                    row["plan_entropy"] = float(r.plan_entropy[ch])
                    row["base_entropy"] = float(r.base_entropy[ch])
                if r.iterations is not None:
                    row["sinkhorn_iterations"] = int(r.iterations[ch])
                yield row


def _layer_stats(record: list, layers) -> tuple[np.ndarray, np.ndarray | None]:
    picked = [r for r in record if r["layer"] in layers]
    entropy = np.mean([r["entropy"] for r in picked], axis=0)
    its = [r["iterations"] for r in picked if r["iterations"] is not None]
    return entropy, (np.max(its, axis=0) if its else None)


def _predict_guided(params, x, t, c, spec: GuidanceSpec, step: int):
    """Guided noise prediction for one step plus its trace record."""
    cfg_on = spec.cfg_scale is not None and spec.cfg_scale != 0 and spec.method != "cfg"
    layers = set(spec.layers)
    want_stats = spec.perturbs_attention and not spec.is_vanilla()
    base_rec: list | None = [] if want_stats else None
    eps_c = predict_eps(params, x, t, c, record=base_rec)
    if spec.is_vanilla():
        return eps_c, StepRecord(step, t, np.zeros(x.shape[0]))

    if spec.method == "none":
        eps_u = predict_eps(params, x, t, NULL_CLASS)
        out = guided_epsilon(eps_c, eps_u, spec.cfg_scale)
        return out, StepRecord(step, t, _norms(eps_c - eps_u))
    if spec.method == "cfg":
        eps_u = predict_eps(params, x, t, NULL_CLASS)
        return guided_epsilon(eps_c, eps_u, spec.s), StepRecord(step, t, _norms(eps_c - eps_u))

    mode = spec.attention_mode()
    weak_rec: list = []
    weak_c = predict_eps(params, x, t, c, mode, spec.layers, record=weak_rec)
    if cfg_on:
        eps_u = predict_eps(params, x, t, NULL_CLASS)
        base = guided_epsilon(eps_c, eps_u, spec.cfg_scale)
        if spec.composition == "sequential":
            weak_u = predict_eps(params, x, t, NULL_CLASS, mode, spec.layers)
            weak = guided_epsilon(weak_c, weak_u, spec.cfg_scale)
            delta = guidance_energy(base, weak)
        else:
            delta = guidance_energy(eps_c, weak_c)
        out = base + spec.s * delta
    else:
        delta = guidance_energy(eps_c, weak_c)
        out = guided_epsilon(eps_c, weak_c, spec.s)
    plan_h, iters = _layer_stats(weak_rec, layers)
    base_h, _ = _layer_stats(base_rec, layers)
    return out, StepRecord(step, t, _norms(delta), plan_h, base_h, iters)


def _norms(delta: np.ndarray) -> np.ndarray:
    return np.sqrt((delta.reshape(delta.shape[0], -1) ** 2).sum(axis=1))


def _check_condition(params: DenoiserParams, spec: GuidanceSpec, c) -> None:
    needs_class = spec.method == "cfg" or (spec.cfg_scale not in (None, 0) and spec.method != "none") \
        or (spec.method == "none" and spec.cfg_scale not in (None, 0))
    if not needs_class:
        return
    if params.config.num_classes == 0:
        raise ContractError("classifier-free guidance needs a class-conditional checkpoint")
    cs = np.atleast_1d(NULL_CLASS if c is None else np.asarray(c))
    if np.any(cs == NULL_CLASS):
        raise ContractError("classifier-free guidance needs a class to guide toward, got the null class")


def initial_noise(rng: Rng, chains: int, n_points: int, dim: int = 2) -> np.ndarray:
    """``x_T`` with one substream per chain, so chains are reproducible on their own."""
    return np.stack([rng.substream(i).normal((n_points, dim)) for i in range(chains)])


def asag_sample(params: DenoiserParams, sched: NoiseSchedule, spec: GuidanceSpec, c, steps: int,
                rng: Rng, chains: int = 1, n_points: int = 16, x_T: np.ndarray | None = None):
    """Guided DDIM sampling; returns ``(x0 [chains, n_points, 2], trace)``."""
    if steps > sched.T:
        raise ContractError(f"steps={steps} exceeds T={sched.T}")
    _check_condition(params, spec, c)
    x = initial_noise(rng, chains, n_points, params.config.point_dim) if x_T is None \
        else np.array(x_T, dtype=np.float64)
    ts = ddim_timesteps(sched.T, steps)
    trace = GuidanceTrace(spec.method)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps, rec = _predict_guided(params, x, t, c, spec, i)
        trace.records.append(rec)
        x = ddim_step(x, eps, t, t_prev, sched)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"sampler produced non-finite values at step {i} (t={t})")
    return x, trace


def scale_sweep(params: DenoiserParams, sched: NoiseSchedule, base_spec: GuidanceSpec, scales, c,
                steps: int, rng: Rng, reference: np.ndarray, mode_centers: np.ndarray,
                radius: float, chains: int = 64, n_points: int = 16) -> list[dict]:
    """Run guided sampling at each scale from the same ``x_T`` and score the results."""
    from .metrics import energy_distance, mode_coverage

    scales = list(scales)
    if not scales:
        raise InputError("scale_sweep needs at least one scale")
    x_T = initial_noise(rng, chains, n_points, params.config.point_dim)
    rows = []
    for s in scales:
        spec = GuidanceSpec(**{**base_spec.__dict__, "s": float(s)})
        x0, trace = asag_sample(params, sched, spec, c, steps, rng, x_T=x_T)
        pts = x0.reshape(-1, x0.shape[-1])
        ent = [r.plan_entropy.mean() for r in trace.records if r.plan_entropy is not None]
        rows.append({"scale": float(s),
                     "energy_distance": energy_distance(pts, reference),
                     "mode_coverage": mode_coverage(pts, mode_centers, radius),
                     "mean_plan_entropy": float(np.mean(ent)) if ent else float("nan")})
    return rows
