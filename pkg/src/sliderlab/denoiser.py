"""Conditional MLP noise predictors of two capacities, plus base training.

Both architectures consume concat(z_t, timestep embedding, conditioning)
row-wise and emit an eps prediction of z's shape, so anything trained
against the same prompt encoder accepts identical inputs. The final layer
is zero-initialized: a fresh model predicts zero noise everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor, backward, optimizer_step
from .data import ToyDataset
from .encoder import PromptEncoder, PromptSpec, encode, encoder_hash
from .errors import ConfigError, ContractError, DivergenceError, ShapeError

ARCH_WIDTHS = {
    "model_a": (64, 64),
    "model_b": (128, 128, 128),
}


@dataclass
class DenoiserModel:
    arch: str
    layer_widths: tuple[int, ...]
    data_dim: int
    t_embed_dim: int
    cond_dim: int
    T: int
    params: list[Tensor]
    frozen: bool
    encoder_hash: bytes

    @property
    def weights(self) -> list[tuple[Tensor, Tensor]]:
        return [(self.params[i], self.params[i + 1]) for i in range(0, len(self.params), 2)]


def build_denoiser(arch: str, encoder: PromptEncoder, T: int, seed: int = 0,
                   data_dim: int = 2, t_embed_dim: int = 16) -> DenoiserModel:
    if arch not in ARCH_WIDTHS:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {sorted(ARCH_WIDTHS)}")
    widths = ARCH_WIDTHS[arch]
    rng = np.random.default_rng(seed)
    dims = [data_dim + t_embed_dim + encoder.d, *widths, data_dim]
    params: list[Tensor] = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        if last:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append(ad.parameter(w, name=f"{arch}.w{i}"))
        params.append(ad.parameter(np.zeros(fan_out), name=f"{arch}.b{i}"))
    return DenoiserModel(arch=arch, layer_widths=widths, data_dim=data_dim,
                         t_embed_dim=t_embed_dim, cond_dim=encoder.d, T=T,
                         params=params, frozen=False,
                         encoder_hash=encoder_hash(encoder))


def freeze(model: DenoiserModel) -> None:
    for p in model.params:
        p.requires_grad = False
        p.grad = None
    model.frozen = True


def count_params(model: DenoiserModel) -> int:
    """Exact parameter count, trainable plus frozen."""
    return int(sum(p.values.size for p in model.params))


def params_digest(model: DenoiserModel, encoder: PromptEncoder | None = None) -> str:
    """SHA-256 over all parameter bytes (and encoder state when given)."""
    h = hashlib.sha256()
    for p in model.params:
        h.update(p.values.tobytes())
    if encoder is not None:
        h.update(encoder.state_bytes())
    return h.hexdigest()


def timestep_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of t/T; t may be an int or an int array."""
    x = np.atleast_1d(np.asarray(t, dtype=np.float64)) / T
    half = dim // 2
    freqs = np.pi * (2.0 ** np.arange(half))
    args = x[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def predict_eps(model: DenoiserModel, z_t: np.ndarray, t, cond) -> Tensor:
    """Forward pass; differentiable w.r.t. ``cond`` even when frozen.

    z_t: (n, data_dim). t: int or (n,) ints in 1..T. cond: Tensor or array of
    shape (d,) or (n, d); a 1-D cond is broadcast across the batch.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 2 or z_t.shape[1] != model.data_dim:
        raise ShapeError(f"predict_eps: z_t must be (n, {model.data_dim}), got {z_t.shape}")
    n = z_t.shape[0]
    t_arr = np.atleast_1d(np.asarray(t))
    if np.any((t_arr < 1) | (t_arr > model.T)):
        raise ContractError(f"timestep outside 1..{model.T}")

    cond_t = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=np.float64))
    if cond_t.values.shape[-1] != model.cond_dim:
        raise ContractError(
            f"conditioning dim {cond_t.values.shape[-1]} does not match encoder d={model.cond_dim}")
    if cond_t.values.ndim == 1:
        cond_t = ad.broadcast(cond_t, (n, model.cond_dim))
    elif cond_t.values.shape[0] != n:
        raise ShapeError(f"cond batch {cond_t.values.shape[0]} != z batch {n}")

    temb = timestep_embedding(t_arr, model.T, model.t_embed_dim)
    if temb.shape[0] == 1 and n > 1:
        temb = np.repeat(temb, n, axis=0)
    x = ad.concat([Tensor(z_t), Tensor(temb), cond_t], axis=1)
    layers = model.weights
    for i, (w, b) in enumerate(layers):
        x = ad.add(ad.matmul(x, w), b)
        if i < len(layers) - 1:
            x = ad.silu(x)
    return x


@dataclass
class TrainBaseConfig:
    iterations: int = 12000
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    null_prompt_rate: float = 0.1
    seed: int = 0


@dataclass
class TrainReport:
    loss_curve: np.ndarray
    epoch_size: int

    @property
    def epoch_means(self) -> np.ndarray:
        n_full = len(self.loss_curve) // self.epoch_size
        if n_full == 0:
            return np.asarray([])
        chunk = self.loss_curve[: n_full * self.epoch_size]
        return chunk.reshape(n_full, self.epoch_size).mean(axis=1)


def train_base(model: DenoiserModel, dataset: ToyDataset, sched, encoder: PromptEncoder,
               config: TrainBaseConfig | None = None) -> TrainReport:
    """Minimize the conditional denoising loss; freezes the model afterward.

    Each step draws a batch of points with uniform timesteps and Gaussian
    noise; a null_prompt_rate fraction of rows trains unconditionally so
    classifier-free guidance has a real null branch.
    """
    from .schedule import q_sample_rows  # local import to avoid a cycle

    config = config or TrainBaseConfig()
    if model.frozen:
        raise ContractError("train_base: model is frozen")
    if len(dataset) == 0:
        raise ContractError("train_base: dataset is empty")

    epoch_size = max(1, len(dataset) // config.batch_size)
    if config.iterations == 0:
        freeze(model)
        return TrainReport(loss_curve=np.asarray([]), epoch_size=epoch_size)

    conds = np.stack([encode(encoder, cap).values for cap in dataset.captions])
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(kind="adamw", learning_rate=config.learning_rate,
                         weight_decay=config.weight_decay,
                         beta1=config.betas[0], beta2=config.betas[1])
    losses = np.empty(config.iterations)
    for step in range(config.iterations):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        t = rng.integers(1, sched.T + 1, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, model.data_dim))
        z_t = q_sample_rows(dataset.points[idx], t, eps, sched)
        cond = conds[idx].copy()
        cond[rng.random(config.batch_size) < config.null_prompt_rate] = 0.0

        pred = predict_eps(model, z_t, t, cond)
        loss = ad.mse(pred, Tensor(eps))
        value = float(loss.values)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", last_stable_step=step - 1)
        backward(loss)
        optimizer_step(opt, model.params)
        losses[step] = value

    freeze(model)
    return TrainReport(loss_curve=losses, epoch_size=epoch_size)
