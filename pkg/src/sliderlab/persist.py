"""Byte-exact file formats, run manifests, report serialization, plotting.

Concept slider embedding files (CSE1) and model files (SLM1) are versioned
little-endian layouts with no padding; loading any unknown version fails
closed. All writes go through write-temp-then-rename so files are atomic.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import ARCH_WIDTHS, DenoiserModel
from .encoder import PromptEncoder, Vocabulary, encoder_hash
from .errors import CompatibilityError, FormatError
from .probes import ProbeResult
from .slider import ConceptSlider

CSE_MAGIC = b"CSE1"
CSE_VERSION = 1
_KIND_CODES = {"textual": 0, "visual": 1, "erasure": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

MODEL_MAGIC = b"SLM1"
MODEL_VERSION = 1


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


class _Reader:
    """Cursor over a byte buffer that reports the offset of any shortfall."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", offset=len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def save_slider(slider: ConceptSlider, path) -> None:
    """Write the CSE1 layout; the embedding payload is float32."""
    name = slider.name.encode("utf-8")
    target = slider.target_token.encode("utf-8")
    payload = np.asarray(slider.embedding, dtype="<f4").tobytes()
    blob = b"".join([
        CSE_MAGIC,
        struct.pack("<H", CSE_VERSION),
        struct.pack("<I", slider.embedding.size),
        struct.pack("<B", _KIND_CODES[slider.kind]),
        struct.pack("<fff", slider.alpha_train_range[0], slider.alpha_train_range[1],
                    slider.eta),
        struct.pack("<H", len(name)), name,
        struct.pack("<H", len(target)), target,
        slider.encoder_hash,
        payload,
    ])
    _atomic_write(path, blob)


def load_slider(path, encoder: PromptEncoder | None = None) -> ConceptSlider:
    """Load and validate a CSE1 file; optionally check d against an encoder."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != CSE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CSE_MAGIC!r}", offset=0)
    (version,) = r.unpack("H", "version")
    if version != CSE_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    (d,) = r.unpack("I", "embedding dimension")
    (kind_code,) = r.unpack("B", "kind")
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown kind code {kind_code}", offset=r.pos - 1)
    alpha_min, alpha_max, eta = r.unpack("fff", "alpha range / eta")
    (name_len,) = r.unpack("H", "name length")
    name = r.take(name_len, "name").decode("utf-8")
    (target_len,) = r.unpack("H", "target token length")
    target = r.take(target_len, "target token").decode("utf-8")
    enc_hash = r.take(8, "encoder hash")
    payload = r.take(4 * d, "embedding payload")
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes", offset=r.pos)
    embedding = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if encoder is not None and d != encoder.d:
        raise CompatibilityError(f"slider d={d} does not match encoder d={encoder.d}")
    return ConceptSlider(name=name, embedding=embedding,
                         alpha_train_range=(float(alpha_min), float(alpha_max)),
                         eta=float(eta), encoder_hash=enc_hash,
                         kind=_KIND_NAMES[kind_code], target_token=target)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _read_str(r: _Reader, what: str) -> str:
    (n,) = r.unpack("H", what + " length")
    return r.take(n, what).decode("utf-8")


def save_model(model: DenoiserModel, encoder: PromptEncoder, sched, path) -> None:
    """Persist a denoiser with its schedule and the encoder's frozen state."""
    parts = [
        MODEL_MAGIC,
        struct.pack("<H", MODEL_VERSION),
        _pack_str(model.arch),
        struct.pack("<IIII", model.data_dim, model.t_embed_dim, model.cond_dim, model.T),
        np.asarray(sched.beta, dtype="<f8").tobytes(),
        struct.pack("<B", 1 if model.frozen else 0),
        model.encoder_hash,
        struct.pack("<I", len(encoder.vocab.tokens)),
    ]
    for token in encoder.vocab.tokens:
        parts.append(_pack_str(token))
    parts.append(encoder.embeddings.astype("<f8").tobytes())
    parts.append(encoder.mixing.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(model.params)))
    for p in model.params:
        parts.append(struct.pack("<B", p.values.ndim))
        parts.append(struct.pack(f"<{p.values.ndim}I", *p.values.shape))
        parts.append(p.values.astype("<f8").tobytes())
    _atomic_write(path, b"".join(parts))


def load_model(path):
    """Load an SLM1 file -> (DenoiserModel, PromptEncoder, NoiseSchedule)."""
    from . import autodiff as ad
    from .schedule import make_schedule

    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", offset=0)
    (version,) = r.unpack("H", "version")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    arch = _read_str(r, "arch")
    data_dim, t_embed_dim, cond_dim, T = r.unpack("IIII", "dimensions")
    beta = np.frombuffer(r.take(8 * T, "schedule"), dtype="<f8").copy()
    (frozen,) = r.unpack("B", "frozen flag")
    enc_hash = r.take(8, "encoder hash")
    (n_tokens,) = r.unpack("I", "token count")
    tokens = tuple(_read_str(r, "token") for _ in range(n_tokens))
    vocab = Vocabulary(tokens=tokens, d=cond_dim)
    emb = np.frombuffer(r.take(8 * n_tokens * cond_dim, "embedding table"),
                        dtype="<f8").reshape(n_tokens, cond_dim).copy()
    mixing = np.frombuffer(r.take(8 * cond_dim * cond_dim, "mixing map"),
                           dtype="<f8").reshape(cond_dim, cond_dim).copy()
    encoder = PromptEncoder(vocab=vocab, embeddings=emb, mixing=mixing)
    if encoder_hash(encoder) != enc_hash:
        raise FormatError("encoder state does not match the stored hash", offset=r.pos)

    (n_params,) = r.unpack("I", "parameter count")
    params = []
    for i in range(n_params):
        (ndim,) = r.unpack("B", f"param {i} rank")
        shape = r.unpack(f"{ndim}I", f"param {i} shape")
        values = np.frombuffer(r.take(8 * int(np.prod(shape)), f"param {i} payload"),
                               dtype="<f8").reshape(shape).copy()
        params.append(ad.Tensor(values, requires_grad=not frozen, name=f"{arch}.p{i}"))
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes", offset=r.pos)
    model = DenoiserModel(arch=arch, layer_widths=ARCH_WIDTHS[arch], data_dim=data_dim,
                          t_embed_dim=t_embed_dim, cond_dim=cond_dim, T=T,
                          params=params, frozen=bool(frozen), encoder_hash=enc_hash)
    return model, encoder, make_schedule(T, beta)


@dataclass
class RunManifest:
    """One manifest per CLI invocation; line-oriented key=value text."""

    command: str
    config: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    input_hash: str = ""
    outputs: tuple[str, ...] = ()
    duration_s: float = 0.0


def write_manifest(manifest: RunManifest, path) -> None:
    lines = [f"command={manifest.command}"]
    if manifest.seed is not None:
        lines.append(f"seed={manifest.seed}")
    lines.append(f"input_hash={manifest.input_hash}")
    for out in manifest.outputs:
        lines.append(f"output={out}")
    lines.append(f"duration_s={manifest.duration_s:.3f}")
    for key in sorted(manifest.config):
        lines.append(f"config.{key}={manifest.config[key]}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_manifest(path) -> RunManifest:
    manifest = RunManifest(command="")
    outputs: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "command":
            manifest.command = value
        elif key == "seed":
            manifest.seed = int(value)
        elif key == "input_hash":
            manifest.input_hash = value
        elif key == "output":
            outputs.append(value)
        elif key == "duration_s":
            manifest.duration_s = float(value)
        elif key.startswith("config."):
            manifest.config[key[len("config."):]] = value
    manifest.outputs = tuple(outputs)
    return manifest


def write_probe_csv(result: ProbeResult, path) -> None:
    """alpha,mean,std rows — the report interchange format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "mean", "std"])
        for alpha, m, s in result.per_alpha:
            writer.writerow([repr(alpha), repr(m), repr(s)])


def load_probe_csv(path, concept: str = "radius") -> ProbeResult:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row:
                rows.append((float(row[0]), float(row[1]), float(row[2])))
    from .probes import _spearman
    return ProbeResult(concept=concept, per_alpha=tuple(rows),
                       spearman_rho=_spearman([r[0] for r in rows], [r[1] for r in rows]),
                       n_samples=0)


def sweep_plot(result: ProbeResult, out_path) -> None:
    """Render mean ± std versus alpha as an SVG line chart (plus a CSV).

    Output bytes are deterministic: the SVG hash salt is pinned and the
    date metadata is stripped, so re-rendering the same result is
    byte-identical.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_path = Path(out_path)
    write_probe_csv(result, out_path.with_suffix(".csv"))

    alphas = list(result.alphas)
    means = list(result.means)
    stds = [s for _, _, s in result.per_alpha]
    with matplotlib.rc_context({"svg.hashsalt": "sliderlab"}):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        fmt = "o-" if len(alphas) > 1 else "o"
        ax.errorbar(alphas, means, yerr=stds, fmt=fmt, capsize=3)
        ax.set_xlabel("slider strength")
        ax.set_ylabel(f"{result.concept} (mean ± std)")
        ax.set_title(f"{result.concept} sweep (rho={result.spearman_rho:.3f})")
        fig.tight_layout()
        tmp = out_path.with_name(out_path.name + ".tmp")
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
    os.replace(tmp, out_path)
