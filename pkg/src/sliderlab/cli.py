"""Command-line driver: data generation, training, sampling, evaluation.

Every invocation writes exactly one run manifest next to its primary
output (``<output>.manifest``) recording the command line, config, seed,
a content hash of the inputs, and the produced paths. Re-running a
manifest's command reproduces the artifacts byte for byte.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import shlex
import sys
import time
from pathlib import Path

from .data import load_dataset_csv, make_toy_dataset, save_dataset_csv
from .denoiser import TrainBaseConfig, build_denoiser, train_base
from .encoder import PromptSpec, build_encoder, default_vocabulary, load_vocabulary
from .errors import ConfigError, SliderLabError
from .persist import (RunManifest, load_model, load_slider, save_model, save_slider,
                      sweep_plot, write_manifest, write_probe_csv)
from .probes import (EvalConfig, composition_eval, erasure_eval, monotonicity_report)
from .schedule import SampleRequest, make_schedule, sample
from .slider import (ConceptRecipe, SliderTrainConfig, apply_sliders, train_erasure,
                     train_textual_slider, train_visual_slider)

# concept -> (c_t, c_plus, c_minus, default guidance scale eta). The angle
# eta is small because tangential edits inflate radius as sec(delta)-1;
# a gentle per-alpha rotation keeps concepts separable.
DEFAULT_RECIPES = {
    "radius": ("point", "point large_radius", "point small_radius", 1.0),
    "angle": ("point", "point west_side", "point east_side", 0.15),
    "spread": ("point", "point wide_spread", "point tight_spread", 1.0),
}

# Erasure rotates these contexts through target and prediction prompts so
# the override also suppresses the concept inside composed prompts.
ERASE_DEFAULT_CONTEXTS = (
    PromptSpec(),
    PromptSpec((("east_side", 1.0),)),
    PromptSpec((("north_side", 1.0),)),
    PromptSpec((("west_side", 1.0),)),
    PromptSpec((("south_side", 1.0),)),
)


def _prompt(text: str) -> PromptSpec:
    return PromptSpec.from_string(text)


def _prompt_list(text: str) -> list[PromptSpec]:
    return [_prompt(part) for part in text.split(";") if part.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _recipe_from_args(args) -> ConceptRecipe:
    c_t, c_plus, c_minus, _ = DEFAULT_RECIPES[args.concept]
    preserve = tuple(_prompt_list(args.preserve)) if getattr(args, "preserve", "") else ()
    return ConceptRecipe(
        c_t=_prompt(args.c_t or c_t),
        c_plus=_prompt(args.c_plus or c_plus),
        c_minus=_prompt(args.c_minus) if args.c_minus else _prompt(c_minus),
        preserve=preserve,
    )


def _slider_config(args) -> SliderTrainConfig:
    eta = args.eta
    if eta is None:
        eta = DEFAULT_RECIPES[args.concept][3] if args.concept in DEFAULT_RECIPES else 1.0
    return SliderTrainConfig(
        iterations=args.iters, batch_size=args.batch, learning_rate=args.lr,
        weight_decay=args.wd, eta=eta,
        alpha_range=(args.alpha_min, args.alpha_max),
        latent_source=args.latent_source, seed=args.seed)


def _hash_inputs(paths: list[str]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _load_sliders(args, encoder):
    paths = args.slider or []
    alphas = args.alpha or []
    if len(alphas) < len(paths):
        alphas = alphas + [1.0] * (len(paths) - len(alphas))
    sliders = [load_slider(p, encoder) for p in paths]
    return list(zip(sliders, alphas)), paths


# --- command handlers: each returns (outputs, inputs, config-dict) ---------

def _cmd_gen_data(args):
    dataset = make_toy_dataset(n=args.n, seed=args.seed)
    save_dataset_csv(dataset, args.out)
    return [args.out], [], {"n": args.n}


def _cmd_train_base(args):
    dataset = load_dataset_csv(args.data)
    vocab = load_vocabulary(args.vocab, d=args.embed_dim) if args.vocab \
        else default_vocabulary(d=args.embed_dim)
    encoder = build_encoder(vocab, seed=args.encoder_seed)
    sched = make_schedule(args.timesteps, (args.beta_start, args.beta_end))
    model = build_denoiser(args.arch, encoder, sched.T, seed=args.seed)
    config = TrainBaseConfig(iterations=args.iters, batch_size=args.batch,
                             learning_rate=args.lr, weight_decay=args.wd,
                             null_prompt_rate=args.null_rate, seed=args.seed)
    report = train_base(model, dataset, sched, encoder, config)
    save_model(model, encoder, sched, args.out)
    last = float(report.loss_curve[-1]) if len(report.loss_curve) else float("nan")
    print(f"trained {args.arch} for {args.iters} steps; final loss {last:.4f}")
    return [args.out], [args.data] + ([args.vocab] if args.vocab else []), {
        "arch": args.arch, "iters": args.iters, "lr": args.lr}


def _cmd_train_slider(args):
    model, encoder, sched = load_model(args.model)
    dataset = load_dataset_csv(args.data)
    token = args.token or f"<{args.concept}>"
    slider = train_textual_slider(model, dataset, _recipe_from_args(args),
                                  _slider_config(args), encoder, sched, token=token)
    save_slider(slider, args.out)
    print(f"slider {token} trained for {args.iters} iterations -> {args.out}")
    return [args.out], [args.model, args.data], {
        "concept": args.concept, "iters": args.iters, "lr": args.lr,
        "eta": args.eta, "alpha_max": args.alpha_max}


def _cmd_train_visual(args):
    model, encoder, sched = load_model(args.model)
    dataset = load_dataset_csv(args.data)
    attr = dataset.attributes[args.concept]
    pairs_a = dataset.subset(attr > args.hi)
    pairs_b = dataset.subset(attr < args.lo)
    token = args.token or f"<{args.concept}>"
    slider = train_visual_slider(model, pairs_a, pairs_b, _prompt(args.c_t or "point"),
                                 _slider_config(args), encoder, sched, token=token)
    save_slider(slider, args.out)
    print(f"visual slider {token} trained on {len(pairs_a)}/{len(pairs_b)} pairs -> {args.out}")
    return [args.out], [args.model, args.data], {
        "concept": args.concept, "hi": args.hi, "lo": args.lo, "iters": args.iters}


def _cmd_erase(args):
    model, encoder, sched = load_model(args.model)
    dataset = load_dataset_csv(args.data)
    if args.preserve is None:
        preserve = ERASE_DEFAULT_CONTEXTS
    else:
        preserve = tuple(_prompt_list(args.preserve))
    recipe = ConceptRecipe(
        c_t=_prompt(args.c_t or "point"),
        c_plus=_prompt(args.c_plus) if args.c_plus else _prompt(f"point {args.token}"),
        c_minus=_prompt(args.c_minus) if args.c_minus else None,
        preserve=preserve)
    slider = train_erasure(model, dataset, args.token, recipe,
                           _slider_config(args), encoder, sched)
    save_slider(slider, args.out)
    print(f"erasure override for {args.token!r} -> {args.out}")
    return [args.out], [args.model, args.data], {"token": args.token, "iters": args.iters}


def _cmd_sample(args):
    model, encoder, sched = load_model(args.model)
    attached, slider_paths = _load_sliders(args, encoder)
    prompt, overrides = apply_sliders(_prompt(args.prompt), attached)
    req = SampleRequest(prompt=prompt, steps=args.steps, cfg_scale=args.cfg,
                        n_samples=args.n, seed=args.seed, sampler=args.sampler)
    points = sample(model, req, encoder, sched, overrides)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in points:
            writer.writerow([repr(float(x)), repr(float(y))])
    print(f"{args.n} samples for prompt {args.prompt!r} -> {args.out}")
    return [args.out], [args.model] + slider_paths, {
        "prompt": args.prompt, "steps": args.steps, "cfg": args.cfg}


def _eval_summary_path(out: str) -> Path:
    return Path(out).with_suffix(".txt")


def _cmd_eval(args):
    model, encoder, sched = load_model(args.model)
    slider = load_slider(args.slider, encoder)
    cfg = EvalConfig(base_prompt=_prompt(args.base_prompt), steps=args.steps,
                     cfg_scale=args.cfg)
    out_paths = [args.out, str(_eval_summary_path(args.out))]
    if slider.kind == "erasure":
        with_prompts = _prompt_list(args.with_prompts) if args.with_prompts \
            else [_prompt(f"point {slider.target_token}")]
        without_prompts = _prompt_list(args.without_prompts) if args.without_prompts else []
        report = erasure_eval(model, slider, with_prompts, without_prompts,
                              args.n, args.seed, encoder=encoder, sched=sched,
                              concept=args.concept, config=cfg)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "prompt", "baseline_mean", "erased_mean",
                             "relative_change"])
            for group, rows in (("target", report.target_rows),
                                ("control", report.control_rows)):
                for r in rows:
                    writer.writerow([group, r.prompt.text(), repr(r.baseline_mean),
                                     repr(r.erased_mean), repr(r.relative_change)])
        summary = (f"erasure of {slider.target_token!r} on {args.concept}\n"
                   f"mean target reduction: {report.mean_target_reduction:.3f}\n"
                   f"max control drift: {report.max_control_drift:.3f}\n")
    else:
        report = monotonicity_report(model, slider, _floats(args.alphas), args.n,
                                     args.seed, encoder=encoder, sched=sched,
                                     concept=args.concept, config=cfg)
        write_probe_csv(report, args.out)
        rows = "\n".join(f"  alpha={a:g}: mean={m:.4f} std={s:.4f}"
                         for a, m, s in report.per_alpha)
        summary = (f"{args.concept} sweep of {slider.name}\n{rows}\n"
                   f"spearman rho: {report.spearman_rho:.4f}\n")
    _eval_summary_path(args.out).write_text(summary, encoding="utf-8")
    print(summary, end="")
    return out_paths, [args.model, args.slider], {
        "concept": args.concept, "n": args.n}


def _cmd_compose(args):
    model, encoder, sched = load_model(args.model)
    sliders = [load_slider(p, encoder) for p in args.slider]
    concepts = [c.strip() for c in args.concepts.split(",")]
    cfg = EvalConfig(base_prompt=_prompt(args.base_prompt), steps=args.steps,
                     cfg_scale=args.cfg)
    report = composition_eval(model, sliders, concepts, _floats(args.alphas),
                              encoder=encoder, sched=sched, n=args.n, seed=args.seed,
                              held_values=tuple(_floats(args.held)), config=cfg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["swept", "held", "alpha", "concept", "mean", "std"])
        for cell in report.cells:
            held = " ".join(f"{c}={v:g}" for c, v in cell.held)
            for alpha, m, s in cell.own.per_alpha:
                writer.writerow([cell.swept_concept, held, repr(alpha),
                                 cell.swept_concept, repr(m), repr(s)])
            for concept, series in cell.cross_means.items():
                for alpha, m in series:
                    writer.writerow([cell.swept_concept, held, repr(alpha),
                                     concept, repr(m), ""])
    own = ", ".join(f"{c}: rho={r:.3f}" for c, r in report.own_rhos().items())
    summary = (f"composition of {', '.join(concepts)}\n"
               f"own effects: {own}\nmax cross drift: {report.max_drift():.3f}\n")
    _eval_summary_path(args.out).write_text(summary, encoding="utf-8")
    print(summary, end="")
    return [args.out, str(_eval_summary_path(args.out))], \
        [args.model] + list(args.slider), {"concepts": args.concepts, "n": args.n}


def _cmd_sweep_plot(args):
    model, encoder, sched = load_model(args.model)
    slider = load_slider(args.slider, encoder)
    cfg = EvalConfig(base_prompt=_prompt(args.base_prompt), steps=args.steps,
                     cfg_scale=args.cfg)
    report = monotonicity_report(model, slider, _floats(args.alphas), args.n,
                                 args.seed, encoder=encoder, sched=sched,
                                 concept=args.concept, config=cfg)
    sweep_plot(report, args.out)
    csv_path = str(Path(args.out).with_suffix(".csv"))
    print(f"sweep chart -> {args.out} (data: {csv_path})")
    return [args.out, csv_path], [args.model, args.slider], {
        "concept": args.concept, "alphas": args.alphas}


def _add_slider_train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=None,
                   help="guidance scale (default: per-concept value)")
    p.add_argument("--alpha-min", type=float, default=0.0)
    p.add_argument("--alpha-max", type=float, default=3.0)
    p.add_argument("--latent-source", choices=["dataset", "model_sampled"],
                   default="dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c-t", default=None, help="target concept prompt")
    p.add_argument("--c-plus", default=None, help="positive attribute prompt")
    p.add_argument("--c-minus", default=None, help="negative attribute prompt")
    p.add_argument("--preserve", default=None, help="semicolon-separated context prompts")


def _add_eval_opts(p: argparse.ArgumentParser, default_prompt: str = "point") -> None:
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=1.0)
    p.add_argument("--base-prompt", default=default_prompt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sliderlab",
        description="Train, erase, compose and evaluate concept sliders on toy diffusion models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the toy dataset CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-base", help="train a base denoiser on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["model_a", "model_b"], default="model_a")
    p.add_argument("--iters", type=int, default=12000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--null-rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--vocab", default=None, help="vocabulary file (one token per line)")
    p.add_argument("--timesteps", type=int, default=100)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.12)
    p.set_defaults(func=_cmd_train_base)

    p = sub.add_parser("train-slider", help="learn a textual concept slider")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--concept", choices=sorted(DEFAULT_RECIPES), default="radius")
    p.add_argument("--token", default=None, help="placeholder token (default <concept>)")
    _add_slider_train_opts(p)
    p.set_defaults(func=_cmd_train_slider)

    p = sub.add_parser("train-visual", help="learn a slider from high/low example pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--concept", choices=["radius", "angle", "spread"], default="radius")
    p.add_argument("--hi", type=float, default=1.5, help="side A: attribute above this")
    p.add_argument("--lo", type=float, default=0.65, help="side B: attribute below this")
    p.add_argument("--token", default=None)
    _add_slider_train_opts(p)
    p.set_defaults(func=_cmd_train_visual)

    p = sub.add_parser("erase", help="retrain an existing token to suppress its concept")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--token", required=True, help="vocabulary token to erase")
    p.add_argument("--concept", default="radius")
    _add_slider_train_opts(p)
    p.set_defaults(func=_cmd_erase)

    p = sub.add_parser("sample", help="draw samples for a prompt")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--slider", action="append", default=[], help="slider file (repeatable)")
    p.add_argument("--alpha", action="append", type=float, default=[],
                   help="weight for the matching --slider")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=7.5)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="monotonicity sweep (or erasure report)")
    p.add_argument("--model", required=True)
    p.add_argument("--slider", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--concept", choices=["radius", "angle", "spread"], default="radius")
    p.add_argument("--alphas", default="0,0.5,1,1.5,2,3")
    p.add_argument("--with-prompts", default="", help="erasure: prompts naming the token")
    p.add_argument("--without-prompts", default="", help="erasure: control prompts")
    _add_eval_opts(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compose", help="multi-slider composition report")
    p.add_argument("--model", required=True)
    p.add_argument("--slider", action="append", required=True)
    p.add_argument("--concepts", required=True, help="comma list, one per slider")
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", default="0,0.5,1")
    p.add_argument("--held", default="0,1")
    _add_eval_opts(p, default_prompt="point north_side")
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("sweep-plot", help="render an alpha sweep as SVG + CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--slider", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--concept", choices=["radius", "angle", "spread"], default="radius")
    p.add_argument("--alphas", default="0,0.5,1,1.5,2,3")
    _add_eval_opts(p)
    p.set_defaults(func=_cmd_sweep_plot)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.monotonic()
    try:
        outputs, inputs, config = args.func(args)
    except SliderLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = RunManifest(
        command=shlex.join(argv),
        config={k: str(v) for k, v in config.items()},
        seed=getattr(args, "seed", None),
        input_hash=_hash_inputs(inputs),
        outputs=tuple(outputs),
        duration_s=time.monotonic() - started)
    write_manifest(manifest, outputs[0] + ".manifest")
    return 0


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
