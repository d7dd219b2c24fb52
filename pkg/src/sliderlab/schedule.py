"""Noise schedules, forward noising, DDPM/DDIM reverse steps, guided sampling.

Timesteps are 1-based (t in 1..T); schedule arrays are stored 0-based, so
``beta[t-1]`` is the variance added at step t. ``alpha_bar`` is the running
product of (1 - beta) and carries the signal fraction sqrt(alpha_bar_t) of
the forward process z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserModel, predict_eps
from .encoder import PromptEncoder, PromptSpec, encode
from .errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def abar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractError(f"timestep {t} outside 1..{self.T}")


def make_schedule(T: int, beta) -> NoiseSchedule:
    """Build a schedule from a constant beta (float), a linear (start, end)
    range, or a full length-T array.

    sigma is the DDPM posterior choice sigma_t^2 = beta_t (1 - abar_{t-1})
    / (1 - abar_t) with abar_0 = 1, so sigma_1 = 0.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if np.isscalar(beta):
        betas = np.full(T, float(beta))
    elif np.ndim(beta) > 0 and len(beta) == T and T != 2:
        betas = np.asarray(beta, dtype=np.float64)
    elif len(beta) == 2:
        start, end = (float(b) for b in beta)
        betas = np.linspace(start, end, T)
    else:
        raise ConfigError(f"beta must be a scalar, a (start, end) pair, or length-{T} array")
    if not np.all((betas > 0) & (betas < 1)):
        raise ConfigError("beta values must lie strictly in (0, 1)")
    alpha_bar = np.cumprod(1.0 - betas)
    abar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma = np.sqrt(betas * (1.0 - abar_prev) / (1.0 - alpha_bar))
    return NoiseSchedule(T=T, beta=betas, alpha_bar=alpha_bar, sigma=sigma)


def default_schedule() -> NoiseSchedule:
    # T=100 with beta_end=0.12 terminates at abar_T ~ 2e-3 so z_T ~ N(0, I)
    # is a faithful start for the reverse chain (0.02 would leave abar_T ~ 0.37).
    return make_schedule(100, (1e-4, 0.12))


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward-noise z0 to step t: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"q_sample: z0 {z0.shape} and eps {eps.shape} differ")
    abar = sched.abar(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def q_sample_rows(z0: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Vectorized q_sample with a per-row timestep array."""
    abar = sched.alpha_bar[np.asarray(t) - 1][:, None]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def reverse_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule,
                 noise: np.ndarray | None = None) -> np.ndarray:
    """One DDPM ancestral step: posterior mean plus sigma_t * noise."""
    sched._check_t(t)
    beta_t = float(sched.beta[t - 1])
    abar_t = sched.abar(t)
    mean = (z_t - beta_t / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(1.0 - beta_t)
    if noise is None:
        return mean
    return mean + float(sched.sigma[t - 1]) * noise


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update: predict z0, then re-noise to t_prev.

    t_prev = 0 returns the z0 prediction itself.
    """
    sched._check_t(t)
    if t_prev >= t:
        raise ContractError(f"ddim_step: t_prev={t_prev} must be < t={t}")
    abar_t = sched.abar(t)
    z0_hat = (z_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    if t_prev == 0:
        return z0_hat
    abar_prev = sched.abar(t_prev)
    return np.sqrt(abar_prev) * z0_hat + np.sqrt(1.0 - abar_prev) * eps_hat


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced, strictly decreasing timesteps starting at T."""
    ts = np.unique(np.round(np.linspace(T, 1, steps)).astype(int))[::-1]
    return ts


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_u + w (eps_c - eps_u); affine in w."""
    return eps_uncond + w * (eps_cond - eps_uncond)


@dataclass(frozen=True)
class SampleRequest:
    prompt: PromptSpec = field(default_factory=PromptSpec)
    steps: int = 50
    cfg_scale: float = 7.5
    n_samples: int = 1
    seed: int = 0
    sampler: str = "ddim"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be positive, got {self.n_samples}")
        if self.cfg_scale < 0:
            raise ConfigError(f"cfg_scale must be nonnegative, got {self.cfg_scale}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")


def sample(model: DenoiserModel, req: SampleRequest, encoder: PromptEncoder,
           sched: NoiseSchedule, overrides: dict | None = None) -> np.ndarray:
    """Draw req.n_samples outputs from seeded Gaussian z_T with CFG.

    Per step: eps_hat = eps_uncond + w (eps_cond - eps_uncond) where the
    unconditional branch uses the empty (null) prompt. Deterministic given
    the seed. Returns an (n_samples, data_dim) array.
    """
    if not model.frozen:
        raise ContractError("sample: model must be frozen")
    if req.steps > sched.T:
        raise ContractError(f"steps={req.steps} exceeds schedule T={sched.T}")
    if req.sampler == "ddpm" and req.steps != sched.T:
        raise ConfigError("ddpm sampler runs the full chain: steps must equal T")

    w = req.cfg_scale
    cond = encode(encoder, req.prompt, overrides).values
    null = encode(encoder, PromptSpec()).values
    rng = np.random.default_rng(req.seed)
    z = rng.standard_normal((req.n_samples, model.data_dim))

    def eps_hat(z_t: np.ndarray, t: int) -> np.ndarray:
        if w == 1.0:
            return predict_eps(model, z_t, t, cond).values
        if w == 0.0:
            return predict_eps(model, z_t, t, null).values
        e_u = predict_eps(model, z_t, t, null).values
        e_c = predict_eps(model, z_t, t, cond).values
        return cfg_combine(e_u, e_c, w)

    if req.sampler == "ddpm":
        for t in range(sched.T, 0, -1):
            noise = rng.standard_normal(z.shape) if t > 1 else np.zeros_like(z)
            z = reverse_step(z, eps_hat(z, t), t, sched, noise)
    else:
        ts = ddim_timesteps(sched.T, req.steps)
        for i, t in enumerate(ts):
            t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
            z = ddim_step(z, eps_hat(z, int(t)), int(t), t_prev, sched)
    return z
