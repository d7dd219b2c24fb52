"""Learn concept-slider embeddings against a frozen model and encoder.

A slider is a single trainable embedding vector. Training matches the
frozen model's prediction under the slider-augmented prompt to a composed
target: the base concept prediction plus alpha * eta times the summed
difference between positive- and negative-attribute predictions (optionally
within preservation contexts). Erasure is the same construction with the
difference term negated, retraining an existing token's embedding as an
override instead of introducing a new token.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor, backward, optimizer_step
from .data import ToyDataset
from .denoiser import DenoiserModel, predict_eps
from .encoder import PromptEncoder, PromptSpec, encode, encoder_hash
from .errors import ConfigError, ContractError, DivergenceError, UnknownTokenError

PRESERVE_SUM_LIMIT = 4  # full sum over contexts up to this size, else sample one


@dataclass
class ConceptSlider:
    """One learned embedding of encoder dimension d plus training metadata."""

    name: str
    embedding: np.ndarray
    alpha_train_range: tuple[float, float] = (0.0, 3.0)
    eta: float = 1.0
    encoder_hash: bytes = b""
    kind: str = "textual"  # textual | visual | erasure
    target_token: str = ""
    loss_curve: np.ndarray | None = None


@dataclass(frozen=True)
class ConceptRecipe:
    """Target concept plus the positive/negative prompt templates.

    ``preserve`` lists contexts the edit should leave untouched; the
    difference term is evaluated inside each one.
    """

    c_t: PromptSpec
    c_plus: PromptSpec
    c_minus: PromptSpec | None = None
    preserve: tuple[PromptSpec, ...] = ()

    def __post_init__(self):
        if self.c_minus is not None and self.c_plus == self.c_minus:
            raise ConfigError("recipe: c_plus and c_minus must differ when both set")


@dataclass(frozen=True)
class SliderTrainConfig:
    iterations: int = 3000
    batch_size: int = 1
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eta: float = 1.0
    alpha_range: tuple[float, float] = (0.0, 3.0)
    latent_source: str = "dataset"  # dataset | model_sampled
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.alpha_range[0] > self.alpha_range[1]:
            raise ConfigError(f"invalid alpha_range {self.alpha_range}")
        if self.latent_source not in ("dataset", "model_sampled"):
            raise ConfigError(f"unknown latent_source {self.latent_source!r}")


def compose_target_eps(model: DenoiserModel, z_t: np.ndarray, t: int,
                       recipe: ConceptRecipe, alpha: float, eta: float,
                       encoder: PromptEncoder, erase_mode: bool = False,
                       contexts: tuple[PromptSpec, ...] | None = None,
                       cond_cache: dict | None = None) -> np.ndarray:
    """Composed target prediction; a plain array, so no gradient flows back.

    target = eps(c_t) + alpha * eta * sum_ctx [eps(c_plus + ctx) - eps(c_minus + ctx)]
    with the alpha term negated in erase mode. An empty preservation set
    contributes a single context-free difference. ``contexts`` overrides
    recipe.preserve (used by trainers that sample large preservation sets).
    """
    if contexts is None:
        contexts = recipe.preserve
    c_minus = recipe.c_minus if recipe.c_minus is not None else PromptSpec()

    def cond_of(prompt: PromptSpec) -> np.ndarray:
        if cond_cache is not None and prompt in cond_cache:
            return cond_cache[prompt]
        values = encode(encoder, prompt).values
        if cond_cache is not None:
            cond_cache[prompt] = values
        return values

    base = predict_eps(model, z_t, t, cond_of(recipe.c_t)).values
    diff = np.zeros_like(base)
    for ctx in contexts or (PromptSpec(),):
        plus = predict_eps(model, z_t, t, cond_of(recipe.c_plus.concat(ctx))).values
        minus = predict_eps(model, z_t, t, cond_of(c_minus.concat(ctx))).values
        diff += plus - minus
    sign = -1.0 if erase_mode else 1.0
    return base + (sign * alpha * eta) * diff


def _draw_z0(model: DenoiserModel, recipe_prompt: PromptSpec, dataset: ToyDataset,
             latent_source: str, rng: np.random.Generator, encoder, sched) -> np.ndarray:
    if latent_source == "dataset":
        return dataset.points[rng.integers(0, len(dataset))][None, :]
    from .schedule import SampleRequest, sample
    req = SampleRequest(prompt=recipe_prompt, steps=min(20, sched.T), cfg_scale=1.0,
                        n_samples=1, seed=int(rng.integers(2 ** 62)), sampler="ddim")
    return sample(model, req, encoder, sched)


def _check_frozen(model: DenoiserModel) -> None:
    if not model.frozen:
        raise ContractError("slider training requires a frozen model")


def _assert_model_untouched(model: DenoiserModel) -> None:
    # Frozen params must never receive gradients; that would mean the graph
    # recorded an edge into the model.
    for p in model.params:
        if p.grad is not None:
            raise AssertionError(f"frozen parameter {p.name} received a gradient")


def _pick_contexts(preserve: tuple[PromptSpec, ...], rng: np.random.Generator):
    if len(preserve) <= PRESERVE_SUM_LIMIT:
        return None  # compose_target_eps uses the full recipe sum
    return (preserve[rng.integers(0, len(preserve))],)


def train_textual_slider(model: DenoiserModel, dataset: ToyDataset, recipe: ConceptRecipe,
                         config: SliderTrainConfig, encoder: PromptEncoder, sched,
                         token: str = "<slider>") -> ConceptSlider:
    """Learn a fresh placeholder token embedding for the recipe's concept.

    Per iteration: draw a latent, a uniform timestep, Gaussian noise and a
    uniform alpha; noise the latent; regress the slider-conditioned
    prediction onto the composed target. Only the slider embedding moves.
    """
    from .schedule import q_sample_rows

    _check_frozen(model)
    if token in encoder.vocab:
        raise ConfigError(f"slider token {token!r} already exists in the vocabulary")

    emb = ad.parameter(np.zeros(encoder.d), name=token)
    opt = OptimizerState(kind="adamw", learning_rate=config.learning_rate,
                         weight_decay=config.weight_decay,
                         beta1=config.betas[0], beta2=config.betas[1])
    rng = np.random.default_rng(config.seed)
    cond_cache: dict = {}
    losses = np.empty(config.iterations)
    for step in range(config.iterations):
        total = None
        for _ in range(config.batch_size):
            z0 = _draw_z0(model, recipe.c_t, dataset, config.latent_source, rng, encoder, sched)
            t = int(rng.integers(1, sched.T + 1))
            eps = rng.standard_normal((1, model.data_dim))
            alpha = float(rng.uniform(*config.alpha_range))
            z_t = q_sample_rows(z0, np.asarray([t]), eps, sched)

            target = compose_target_eps(model, z_t, t, recipe, alpha, config.eta, encoder,
                                        contexts=_pick_contexts(recipe.preserve, rng),
                                        cond_cache=cond_cache)
            prompt = recipe.c_t.with_token(token, alpha)
            pred = predict_eps(model, z_t, t, encode(encoder, prompt, overrides={token: emb}))
            term = ad.mse(pred, Tensor(target))
            total = term if total is None else ad.add(total, term)
        value = float(total.values)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", last_stable_step=step - 1)
        backward(total)
        _assert_model_untouched(model)
        optimizer_step(opt, [emb])
        losses[step] = value

    return ConceptSlider(name=token, embedding=emb.values.copy(),
                         alpha_train_range=config.alpha_range, eta=config.eta,
                         encoder_hash=encoder_hash(encoder), kind="textual",
                         loss_curve=losses)


def train_visual_slider(model: DenoiserModel, pairs_a: np.ndarray, pairs_b: np.ndarray,
                        c_t: PromptSpec, config: SliderTrainConfig, encoder: PromptEncoder,
                        sched, token: str = "<slider>") -> ConceptSlider:
    """Learn a slider from high/low attribute example pairs.

    Each iteration draws one item from each side, shares t and a strictly
    positive alpha, and fits the +alpha branch to side A and the -alpha
    branch to side B with independent noise draws.
    """
    from .schedule import q_sample_rows

    _check_frozen(model)
    pairs_a = np.atleast_2d(np.asarray(pairs_a, dtype=np.float64))
    pairs_b = np.atleast_2d(np.asarray(pairs_b, dtype=np.float64))
    if len(pairs_a) == 0 or len(pairs_b) == 0:
        raise ConfigError("visual slider needs nonempty A and B pair sets")
    if token in encoder.vocab:
        raise ConfigError(f"slider token {token!r} already exists in the vocabulary")

    emb = ad.parameter(np.zeros(encoder.d), name=token)
    opt = OptimizerState(kind="adamw", learning_rate=config.learning_rate,
                         weight_decay=config.weight_decay,
                         beta1=config.betas[0], beta2=config.betas[1])
    rng = np.random.default_rng(config.seed)
    losses = np.empty(config.iterations)
    alpha_max = config.alpha_range[1]
    for step in range(config.iterations):
        a = pairs_a[rng.integers(0, len(pairs_a))][None, :]
        b = pairs_b[rng.integers(0, len(pairs_b))][None, :]
        t = int(rng.integers(1, sched.T + 1))
        alpha = (1.0 - rng.random()) * alpha_max  # uniform over (0, alpha_max]
        eps_a = rng.standard_normal((1, model.data_dim))
        eps_b = rng.standard_normal((1, model.data_dim))
        z_a = q_sample_rows(a, np.asarray([t]), eps_a, sched)
        z_b = q_sample_rows(b, np.asarray([t]), eps_b, sched)

        pred_a = predict_eps(model, z_a, t,
                             encode(encoder, c_t.with_token(token, alpha), overrides={token: emb}))
        pred_b = predict_eps(model, z_b, t,
                             encode(encoder, c_t.with_token(token, -alpha), overrides={token: emb}))
        loss = ad.add(ad.mse(pred_a, Tensor(eps_a)), ad.mse(pred_b, Tensor(eps_b)))
        value = float(loss.values)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", last_stable_step=step - 1)
        backward(loss)
        _assert_model_untouched(model)
        optimizer_step(opt, [emb])
        losses[step] = value

    return ConceptSlider(name=token, embedding=emb.values.copy(),
                         alpha_train_range=config.alpha_range, eta=config.eta,
                         encoder_hash=encoder_hash(encoder), kind="visual",
                         loss_curve=losses)


def train_erasure(model: DenoiserModel, dataset: ToyDataset, target_token: str,
                  recipe: ConceptRecipe, config: SliderTrainConfig,
                  encoder: PromptEncoder, sched) -> ConceptSlider:
    """Relearn an existing token's embedding so it suppresses its concept.

    The frozen table is untouched: training produces an override embedding
    that is injected whenever a prompt contains ``target_token``. The target
    uses the negated composition with c_plus = the concept to erase.
    """
    from .schedule import q_sample_rows

    _check_frozen(model)
    if target_token not in encoder.vocab:
        raise UnknownTokenError(target_token)

    emb = ad.parameter(np.zeros(encoder.d), name=target_token)
    opt = OptimizerState(kind="adamw", learning_rate=config.learning_rate,
                         weight_decay=config.weight_decay,
                         beta1=config.betas[0], beta2=config.betas[1])
    rng = np.random.default_rng(config.seed)
    # The override must suppress the concept inside arbitrary prompts, so
    # each step draws one preservation context and applies it consistently
    # to the base term, the difference term and the prediction prompt.
    contexts = recipe.preserve or (PromptSpec(),)
    ctx_recipes = [replace(recipe, c_t=recipe.c_t.concat(ctx), preserve=())
                   for ctx in contexts]
    cond_cache: dict = {}
    losses = np.empty(config.iterations)
    for step in range(config.iterations):
        pick = int(rng.integers(0, len(contexts)))
        ctx, ctx_recipe = contexts[pick], ctx_recipes[pick]
        z0 = _draw_z0(model, ctx_recipe.c_t, dataset, config.latent_source, rng, encoder, sched)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal((1, model.data_dim))
        alpha = float(rng.uniform(*config.alpha_range))
        z_t = q_sample_rows(z0, np.asarray([t]), eps, sched)

        target = compose_target_eps(model, z_t, t, ctx_recipe, alpha, config.eta, encoder,
                                    erase_mode=True, contexts=(ctx,),
                                    cond_cache=cond_cache)
        prompt = ctx_recipe.c_t.with_token(target_token, alpha)
        pred = predict_eps(model, z_t, t,
                           encode(encoder, prompt, overrides={target_token: emb}))
        loss = ad.mse(pred, Tensor(target))
        value = float(loss.values)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {step}", last_stable_step=step - 1)
        backward(loss)
        _assert_model_untouched(model)
        optimizer_step(opt, [emb])
        losses[step] = value

    return ConceptSlider(name=target_token, embedding=emb.values.copy(),
                         alpha_train_range=config.alpha_range, eta=config.eta,
                         encoder_hash=encoder_hash(encoder), kind="erasure",
                         target_token=target_token, loss_curve=losses)


def apply_sliders(prompt: PromptSpec,
                  sliders: list[tuple[ConceptSlider, float]]) -> tuple[PromptSpec, dict]:
    """Attach sliders to a prompt: returns (augmented prompt, overrides).

    Textual/visual sliders append their token at the requested weight;
    erasure sliders only register their override, which fires iff the
    prompt already names the target token.
    """
    overrides: dict[str, np.ndarray] = {}
    out = prompt
    for slider, alpha in sliders:
        if slider.kind == "erasure":
            overrides[slider.target_token] = slider.embedding
        else:
            out = out.with_token(slider.name, alpha)
            overrides[slider.name] = slider.embedding
    return out, overrides


def slider_payload_bytes(slider: ConceptSlider) -> int:
    """Serialized embedding payload size: 4 bytes per dimension (float32)."""
    return 4 * slider.embedding.size
