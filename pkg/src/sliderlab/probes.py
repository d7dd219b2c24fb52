"""Quantitative verification: analytic concept probes and slider reports.

The probes replace a learned alignment model with closed-form attribute
measurements on generated 2-D samples (radius, circular-mean angle, spread
around the sample centroid). Sweeps draw an independent noise stream per
alpha, derived deterministically from (seed, alpha index) via
``sweep_seed``, so per-alpha scores carry independent sampling noise while
whole reports remain pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import point_angle, point_radius, point_spread
from .denoiser import DenoiserModel
from .encoder import PromptEncoder, PromptSpec
from .errors import CompatibilityError, ConfigError, ContractError
from .schedule import NoiseSchedule, SampleRequest, sample
from .slider import ConceptSlider, apply_sliders

CONCEPTS = ("radius", "angle", "spread")
MIN_SAMPLES_FOR_RHO = 100

# token -> (concept, low, high); angle intervals are checked circularly
# around the interval center. Bounds derive from the dataset class geometry.
ATTRIBUTE_INTERVALS: dict[str, tuple[str, float, float]] = {
    "small_radius": ("radius", 0.0, 0.75),
    "large_radius": ("radius", 1.4, math.inf),
    "east_side": ("angle", -0.65, 0.65),
    "north_side": ("angle", math.pi / 2 - 0.65, math.pi / 2 + 0.65),
    "west_side": ("angle", math.pi - 0.65, math.pi + 0.65),
    "south_side": ("angle", -math.pi / 2 - 0.65, -math.pi / 2 + 0.65),
    "tight_spread": ("spread", 0.0, 0.75),
    "wide_spread": ("spread", 0.45, math.inf),
}


def concept_score(samples: np.ndarray, concept: str) -> tuple[float, float]:
    """(mean, std) of an analytic attribute over a nonempty sample set.

    radius: mean Euclidean norm. angle: circular mean of atan2(y, x) with
    the circular standard deviation. spread: mean distance to the sample
    centroid.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ContractError("concept_score: empty sample set")
    samples = np.atleast_2d(samples)
    if concept == "radius":
        r = point_radius(samples)
        return float(r.mean()), float(r.std())
    if concept == "angle":
        theta = point_angle(samples)
        c, s = np.cos(theta).mean(), np.sin(theta).mean()
        resultant = min(1.0, float(np.hypot(c, s)))
        circ_std = math.sqrt(max(0.0, -2.0 * math.log(resultant))) if resultant > 0 else math.inf
        return float(math.atan2(s, c)), float(circ_std)
    if concept == "spread":
        d = point_spread(samples)
        return float(d.mean()), float(d.std())
    raise ConfigError(f"unknown concept {concept!r}")


@dataclass(frozen=True)
class ProbeResult:
    concept: str
    per_alpha: tuple[tuple[float, float, float], ...]  # (alpha, mean, std)
    spearman_rho: float
    n_samples: int

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(a for a, _, _ in self.per_alpha)

    @property
    def means(self) -> tuple[float, ...]:
        return tuple(m for _, m, _ in self.per_alpha)


@dataclass(frozen=True)
class EvalConfig:
    """Sampling settings shared by the report operations."""

    base_prompt: PromptSpec = PromptSpec((("point", 1.0),))
    steps: int = 50
    cfg_scale: float = 1.0
    sampler: str = "ddim"


def _gate_hash(model: DenoiserModel, slider: ConceptSlider) -> None:
    if slider.encoder_hash != model.encoder_hash:
        raise CompatibilityError(
            "slider and model were built against different prompt encoders "
            f"({slider.encoder_hash.hex()} vs {model.encoder_hash.hex()})")


def _spearman(alphas, means) -> float:
    if len(alphas) < 2:
        return math.nan
    rho = stats.spearmanr(alphas, means).statistic
    return float(rho)


def sweep_seed(seed: int, index: int) -> int:
    """Deterministic per-alpha sampling seed for sweep position ``index``."""
    words = np.random.SeedSequence([int(seed), int(index)]).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def _sweep_means(model, sliders_at, sweep_slider, alphas, n, seed, encoder, sched,
                 cfg: EvalConfig, concepts) -> dict[str, list[tuple[float, float, float]]]:
    """Sample at each alpha of ``sweep_slider`` with other sliders fixed."""
    out: dict[str, list[tuple[float, float, float]]] = {c: [] for c in concepts}
    for i, alpha in enumerate(alphas):
        attached = list(sliders_at) + [(sweep_slider, float(alpha))]
        prompt, overrides = apply_sliders(cfg.base_prompt, attached)
        req = SampleRequest(prompt=prompt, steps=cfg.steps, cfg_scale=cfg.cfg_scale,
                            n_samples=n, seed=sweep_seed(seed, i), sampler=cfg.sampler)
        samples = sample(model, req, encoder, sched, overrides)
        for concept in concepts:
            m, s = concept_score(samples, concept)
            out[concept].append((float(alpha), m, s))
    return out


def monotonicity_report(model: DenoiserModel, slider: ConceptSlider, alphas, n: int,
                        seed: int, *, encoder: PromptEncoder, sched: NoiseSchedule,
                        concept: str = "radius",
                        config: EvalConfig | None = None) -> ProbeResult:
    """Sweep the slider weight and report per-alpha scores plus Spearman rho."""
    _gate_hash(model, slider)
    if n < MIN_SAMPLES_FOR_RHO:
        raise ConfigError(f"need at least {MIN_SAMPLES_FOR_RHO} samples per alpha, got {n}")
    cfg = config or EvalConfig()
    rows = _sweep_means(model, [], slider, alphas, n, seed, encoder, sched, cfg,
                        (concept,))[concept]
    return ProbeResult(concept=concept, per_alpha=tuple(rows),
                       spearman_rho=_spearman([r[0] for r in rows], [r[1] for r in rows]),
                       n_samples=n)


def transfer_eval(slider: ConceptSlider, other_model: DenoiserModel, alphas, n: int,
                  seed: int, *, encoder: PromptEncoder, sched: NoiseSchedule,
                  concept: str = "radius",
                  config: EvalConfig | None = None) -> ProbeResult:
    """Monotonicity of a slider on a model it was not trained with.

    Raises CompatibilityError when the encoders differ — transfer is only
    defined across models sharing the prompt encoder.
    """
    return monotonicity_report(other_model, slider, alphas, n, seed, encoder=encoder,
                               sched=sched, concept=concept, config=config)


@dataclass(frozen=True)
class CompositionCell:
    swept_concept: str
    held: tuple[tuple[str, float], ...]           # (other concept, fixed weight)
    own: ProbeResult
    cross_means: dict[str, tuple[tuple[float, float], ...]]
    cross_drift: dict[str, float]


@dataclass(frozen=True)
class CompositionReport:
    cells: tuple[CompositionCell, ...]

    def own_rhos(self) -> dict[str, float]:
        out: dict[str, list[float]] = {}
        for cell in self.cells:
            out.setdefault(cell.swept_concept, []).append(cell.own.spearman_rho)
        return {k: min(v) for k, v in out.items()}

    def max_drift(self) -> float:
        drifts = [d for cell in self.cells for d in cell.cross_drift.values()]
        return max(drifts) if drifts else 0.0


def composition_eval(model: DenoiserModel, sliders: list[ConceptSlider],
                     concepts: list[str], alpha_grid, *, encoder: PromptEncoder,
                     sched: NoiseSchedule, n: int = 500, seed: int = 0,
                     held_values=(0.0, 1.0),
                     config: EvalConfig | None = None) -> CompositionReport:
    """Sweep each slider with the others held fixed; report own/cross effects.

    cross_drift is (max - min of the other concept's mean over the sweep)
    divided by the magnitude of its mean at the first grid point.
    """
    if len(sliders) != len(concepts):
        raise ConfigError("need one concept per slider")
    if len(set(concepts)) != len(concepts):
        raise ConfigError(f"duplicate concept names in {concepts}")
    for s in sliders:
        _gate_hash(model, s)
    if n < MIN_SAMPLES_FOR_RHO:
        raise ConfigError(f"need at least {MIN_SAMPLES_FOR_RHO} samples per alpha, got {n}")
    cfg = config or EvalConfig()

    cells: list[CompositionCell] = []
    for i, (slider, concept) in enumerate(zip(sliders, concepts)):
        others = [(s, c) for j, (s, c) in enumerate(zip(sliders, concepts)) if j != i]
        held_grids = [()] if not others else [
            tuple((o, h) for (o, _), h in zip(others, combo))
            for combo in _held_combos(len(others), held_values)
        ]
        for held in held_grids:
            fixed = [(o, h) for o, h in held]
            rows = _sweep_means(model, fixed, slider, alpha_grid, n, seed, encoder,
                                sched, cfg, tuple(concepts))
            own_rows = rows[concept]
            own = ProbeResult(concept=concept, per_alpha=tuple(own_rows),
                              spearman_rho=_spearman([r[0] for r in own_rows],
                                                     [r[1] for r in own_rows]),
                              n_samples=n)
            cross_means = {c: tuple((a, m) for a, m, _ in rows[c])
                           for c in concepts if c != concept}
            cross_drift = {}
            for c, series in cross_means.items():
                means = [m for _, m in series]
                baseline = abs(means[0])
                spanned = max(means) - min(means)
                cross_drift[c] = spanned / baseline if baseline > 0 else math.inf
            cells.append(CompositionCell(
                swept_concept=concept,
                held=tuple((c, h) for (_, c), h in zip(others, [h for _, h in held])),
                own=own, cross_means=cross_means, cross_drift=cross_drift))
    return CompositionReport(cells=tuple(cells))


def _held_combos(n_others: int, held_values):
    import itertools
    return list(itertools.product(held_values, repeat=n_others))


@dataclass(frozen=True)
class ErasureRow:
    prompt: PromptSpec
    baseline_mean: float
    erased_mean: float

    @property
    def relative_change(self) -> float:
        if self.baseline_mean == 0:
            return math.inf
        return (self.erased_mean - self.baseline_mean) / abs(self.baseline_mean)


@dataclass(frozen=True)
class ErasureReport:
    concept: str
    target_rows: tuple[ErasureRow, ...]
    control_rows: tuple[ErasureRow, ...]

    @property
    def mean_target_reduction(self) -> float:
        return float(np.mean([-r.relative_change for r in self.target_rows]))

    @property
    def max_control_drift(self) -> float:
        if not self.control_rows:
            return 0.0
        return float(max(abs(r.relative_change) for r in self.control_rows))


def erasure_eval(model: DenoiserModel, erasure_slider: ConceptSlider,
                 prompts_with: list[PromptSpec], prompts_without: list[PromptSpec],
                 n: int, seed: int, *, encoder: PromptEncoder, sched: NoiseSchedule,
                 concept: str = "radius", apply_override: bool = True,
                 config: EvalConfig | None = None) -> ErasureReport:
    """Compare attribute means with and without the erasure override.

    An empty control group simply omits the control section.
    """
    if erasure_slider.kind != "erasure":
        raise ContractError("erasure_eval requires an erasure-kind slider")
    _gate_hash(model, erasure_slider)
    cfg = config or EvalConfig()

    def rows_for(prompts: list[PromptSpec]) -> tuple[ErasureRow, ...]:
        rows = []
        for prompt in prompts:
            base_req = SampleRequest(prompt=prompt, steps=cfg.steps, cfg_scale=cfg.cfg_scale,
                                     n_samples=n, seed=seed, sampler=cfg.sampler)
            base_mean, _ = concept_score(sample(model, base_req, encoder, sched), concept)
            overrides = ({erasure_slider.target_token: erasure_slider.embedding}
                         if apply_override else None)
            erased_mean, _ = concept_score(
                sample(model, base_req, encoder, sched, overrides), concept)
            rows.append(ErasureRow(prompt=prompt, baseline_mean=base_mean,
                                   erased_mean=erased_mean))
        return tuple(rows)

    return ErasureReport(concept=concept, target_rows=rows_for(prompts_with),
                         control_rows=rows_for(prompts_without))


@dataclass(frozen=True)
class AlignmentScore:
    score: float
    prompt: PromptSpec
    target_attributes: tuple[tuple[str, str, float, float], ...]  # (token, concept, lo, hi)
    n_warnings: int


def _angle_contains(mean: float, lo: float, hi: float) -> bool:
    center = 0.5 * (lo + hi)
    tol = 0.5 * (hi - lo)
    delta = math.atan2(math.sin(mean - center), math.cos(mean - center))
    return abs(delta) <= tol


def alignment_score(samples: np.ndarray, prompt: PromptSpec,
                    intervals: dict[str, tuple[str, float, float]] | None = None) -> AlignmentScore:
    """Fraction of caption-implied attribute intervals hit by sample means.

    Tokens with no interval mapping are skipped and counted as warnings;
    a prompt with no mapped tokens scores 0.
    """
    table = ATTRIBUTE_INTERVALS if intervals is None else intervals
    targets = []
    warnings = 0
    for token, _ in prompt.entries:
        if token in table:
            concept, lo, hi = table[token]
            targets.append((token, concept, lo, hi))
        else:
            warnings += 1
    if not targets:
        return AlignmentScore(score=0.0, prompt=prompt, target_attributes=(),
                              n_warnings=warnings)
    means = {c: concept_score(samples, c)[0] for c in {t[1] for t in targets}}
    hits = 0
    for _, concept, lo, hi in targets:
        m = means[concept]
        if concept == "angle":
            hits += _angle_contains(m, lo, hi)
        else:
            hits += lo <= m <= hi
    return AlignmentScore(score=hits / len(targets), prompt=prompt,
                          target_attributes=tuple(targets), n_warnings=warnings)
