"""Adversarial Sinkhorn attention guidance for toy diffusion models."""

from .attention import AttentionBatch, AttentionMode, attend
from .diffusion import NoiseSchedule, ddim_sample, ddim_step, make_schedule, q_sample, tweedie_denoise
from .guidance import GuidanceSpec, GuidanceTrace, asag_sample, scale_sweep
from .metrics import MetricReport, energy_distance, entropy_profile, mode_coverage
from .model import DenoiserParams, ModelConfig, init_params, predict_eps, train
from .sinkhorn import CostMatrix, Marginals, SinkhornConfig, TransportPlan, plan_entropy, sinkhorn_log_domain
from .tensor import Rng, Tensor, grad_of

__all__ = [
    "AttentionBatch", "AttentionMode", "attend",
    "NoiseSchedule", "ddim_sample", "ddim_step", "make_schedule", "q_sample", "tweedie_denoise",
    "GuidanceSpec", "GuidanceTrace", "asag_sample", "scale_sweep",
    "MetricReport", "energy_distance", "entropy_profile", "mode_coverage",
    "DenoiserParams", "ModelConfig", "init_params", "predict_eps", "train",
    "CostMatrix", "Marginals", "SinkhornConfig", "TransportPlan", "plan_entropy", "sinkhorn_log_domain",
    "Rng", "Tensor", "grad_of",
]
