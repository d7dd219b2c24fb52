"""sliderlab: alpha-scalable concept embeddings for toy conditional diffusion.

Train a small conditional denoiser on synthetic 2-D point clouds, then learn
single-vector concept embeddings whose prompt weight acts as a continuous
strength knob — including erasure of existing tokens, multi-concept
composition, and transfer between architectures sharing one frozen prompt
encoder. Everything is verifiable with analytic probes.
"""

from .autodiff import (OptimizerState, Tensor, backward, constant, forward_op,
                       optimizer_step, parameter, zero_grads)
from .data import (ToyDataset, load_dataset_csv, make_toy_dataset, point_angle,
                   point_radius, point_spread, save_dataset_csv)
from .denoiser import (ARCH_WIDTHS, DenoiserModel, TrainBaseConfig, TrainReport,
                       build_denoiser, count_params, freeze, params_digest, predict_eps,
                       timestep_embedding, train_base)
from .encoder import (NULL_TOKEN, PromptEncoder, PromptSpec, Vocabulary, build_encoder,
                      default_vocabulary, encode, encoder_hash, load_vocabulary,
                      save_vocabulary)
from .errors import (CompatibilityError, ConfigError, ContractError, DivergenceError,
                     FormatError, ShapeError, SliderLabError, UnknownTokenError)
from .persist import (RunManifest, load_manifest, load_model, load_probe_csv,
                      load_slider, save_model, save_slider, sweep_plot, write_manifest,
                      write_probe_csv)
from .probes import (ATTRIBUTE_INTERVALS, AlignmentScore, CompositionReport, EvalConfig,
                     ErasureReport, ProbeResult, alignment_score, composition_eval,
                     concept_score, erasure_eval, monotonicity_report, transfer_eval)
from .schedule import (NoiseSchedule, SampleRequest, cfg_combine, ddim_step,
                       ddim_timesteps, default_schedule, make_schedule, q_sample,
                       q_sample_rows, reverse_step, sample)
from .slider import (ConceptRecipe, ConceptSlider, SliderTrainConfig, apply_sliders,
                     compose_target_eps, slider_payload_bytes, train_erasure,
                     train_textual_slider, train_visual_slider)

__version__ = "0.1.0"
