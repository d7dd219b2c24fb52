"""Frozen text-conditioning pathway shared by every denoiser.

A prompt is an ordered list of (token, weight) pairs. Encoding is the
weighted sum of token embeddings pushed through a frozen linear mixing map,
so the conditioning vector is exactly linear in each token's weight — the
property that makes a concept slider's strength knob behave predictably.
Slider embeddings never enter the frozen table; they are supplied per call
through the ``overrides`` map.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, matmul, scale
from .errors import CompatibilityError, ConfigError, UnknownTokenError

NULL_TOKEN = "<null>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    d: int = 32

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError(f"embedding dimension must be >= 2, got {self.d}")
        if not self.tokens or self.tokens[0] != NULL_TOKEN:
            raise ConfigError(f"vocabulary must start with {NULL_TOKEN!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary tokens must be unique")

    def index(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise UnknownTokenError(token) from None

    def __contains__(self, token: str) -> bool:
        return token in self.tokens


DEFAULT_TOKENS = (
    NULL_TOKEN,
    "point",
    "small_radius",
    "large_radius",
    "east_side",
    "north_side",
    "west_side",
    "south_side",
    "tight_spread",
    "wide_spread",
)


def default_vocabulary(d: int = 32) -> Vocabulary:
    return Vocabulary(tokens=DEFAULT_TOKENS, d=d)


def load_vocabulary(path, d: int = 32) -> Vocabulary:
    """Plain-text vocabulary: one token per line, line 1 must be <null>."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tokens = tuple(line.strip() for line in lines if line.strip())
    return Vocabulary(tokens=tokens, d=d)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class PromptSpec:
    """Ordered (token, weight) pairs; the carrier of alpha-scaled sliders."""

    entries: tuple[tuple[str, float], ...] = ()

    @classmethod
    def from_tokens(cls, tokens, weight: float = 1.0) -> "PromptSpec":
        return cls(tuple((t, weight) for t in tokens))

    @classmethod
    def from_string(cls, text: str) -> "PromptSpec":
        """Parse "tok1 tok2:1.5 tok3" — an optional :weight suffix per token."""
        entries = []
        for word in text.split():
            if ":" in word:
                token, w = word.rsplit(":", 1)
                entries.append((token, float(w)))
            else:
                entries.append((word, 1.0))
        return cls(tuple(entries))

    def with_token(self, token: str, weight: float = 1.0) -> "PromptSpec":
        return PromptSpec(self.entries + ((token, float(weight)),))

    def concat(self, other: "PromptSpec") -> "PromptSpec":
        return PromptSpec(self.entries + other.entries)

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.entries)

    def text(self) -> str:
        return " ".join(t if w == 1.0 else f"{t}:{w:g}" for t, w in self.entries)


@dataclass(frozen=True)
class PromptEncoder:
    """Frozen embedding table plus frozen mixing map; immutable after build."""

    vocab: Vocabulary
    embeddings: np.ndarray  # (|vocab|, d)
    mixing: np.ndarray      # (d, d)

    @property
    def d(self) -> int:
        return self.vocab.d

    def state_bytes(self) -> bytes:
        """Canonical byte serialization of the frozen state (hash input)."""
        token_blob = b"\x00".join(t.encode("utf-8") for t in self.vocab.tokens)
        return (token_blob + struct.pack("<I", self.vocab.d)
                + self.embeddings.tobytes() + self.mixing.tobytes())


def build_encoder(vocab: Vocabulary, seed: int = 0) -> PromptEncoder:
    """Seeded frozen encoder; the <null> token embeds to the zero vector."""
    rng = np.random.default_rng(seed)
    emb = rng.normal(0.0, 1.0, size=(len(vocab.tokens), vocab.d))
    emb[0] = 0.0
    mixing = rng.normal(0.0, 1.0 / np.sqrt(vocab.d), size=(vocab.d, vocab.d))
    return PromptEncoder(vocab=vocab, embeddings=emb, mixing=mixing)


def encode(encoder: PromptEncoder, prompt: PromptSpec,
           overrides: dict[str, "Tensor | np.ndarray"] | None = None) -> Tensor:
    """Weighted-sum aggregate of token embeddings through the mixing map.

    ``overrides`` supplies embeddings for slider tokens (or retrained
    existing tokens); a Tensor override keeps the output differentiable
    w.r.t. that embedding. Linear in every token's weight by construction.
    """
    d = encoder.d
    agg: Tensor | None = None
    for token, weight in prompt.entries:
        emb = overrides.get(token) if overrides else None
        if emb is None:
            row = encoder.embeddings[encoder.vocab.index(token)]
            emb_t = Tensor(row)
        else:
            emb_t = emb if isinstance(emb, Tensor) else Tensor(np.asarray(emb, dtype=np.float64))
            if emb_t.values.shape != (d,):
                raise CompatibilityError(
                    f"override for {token!r} has shape {emb_t.values.shape}, expected ({d},)")
        term = scale(emb_t, weight)
        agg = term if agg is None else add(agg, term)
    if agg is None:
        agg = Tensor(np.zeros(d))
    return matmul(agg, Tensor(encoder.mixing))


def encoder_hash(encoder: PromptEncoder) -> bytes:
    """64-bit digest of the frozen state; equality gates slider transfer."""
    return hashlib.blake2b(encoder.state_bytes(), digest_size=8).digest()
