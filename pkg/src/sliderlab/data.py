"""Synthetic 2-D point clouds with caption tokens tied to analytic attributes.

Each point is drawn as radius * (cos a, sin a) + jitter, where the radius,
angle and jitter scales come from named classes. Captions describe the
classes ("point large_radius north_side wide_spread"); class tokens are
dropped with fixed probabilities so that partial prompts ("point",
"point north_side") remain in-distribution conditionals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import PromptSpec
from .errors import ConfigError

RADIUS_CLASSES = {  # class -> (mean, std, caption token or None)
    "small": (0.45, 0.05, "small_radius"),
    "mid": (1.0, 0.08, None),
    "large": (1.8, 0.10, "large_radius"),
}
ANGLE_CLASSES = {  # class -> (center angle, caption token)
    "east": (0.0, "east_side"),
    "north": (np.pi / 2, "north_side"),
    "west": (np.pi, "west_side"),
    "south": (-np.pi / 2, "south_side"),
}
ANGLE_STD = 0.15
SPREAD_CLASSES = {  # class -> (jitter std, caption token)
    "tight": (0.02, "tight_spread"),
    "wide": (0.50, "wide_spread"),
}
TOKEN_KEEP_PROB = {"radius": 0.8, "angle": 0.8, "spread": 0.5}


def point_radius(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points, axis=-1)


def point_angle(points: np.ndarray) -> np.ndarray:
    return np.arctan2(points[..., 1], points[..., 0])


def point_spread(points: np.ndarray, centroid: np.ndarray | None = None) -> np.ndarray:
    if centroid is None:
        centroid = points.mean(axis=0)
    return np.linalg.norm(points - centroid, axis=-1)


@dataclass(frozen=True)
class ToyDataset:
    points: np.ndarray                   # (N, 2)
    captions: tuple[PromptSpec, ...]
    attributes: dict[str, np.ndarray]    # radius / angle / spread, each (N,)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask: np.ndarray) -> np.ndarray:
        """Points selected by a boolean mask (used for visual slider pairs)."""
        return self.points[np.asarray(mask, dtype=bool)]


def _attributes_for(points: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "radius": point_radius(points),
        "angle": point_angle(points),
        "spread": point_spread(points),
    }


def make_toy_dataset(n: int = 4000, seed: int = 0) -> ToyDataset:
    if n < 1:
        raise ConfigError(f"dataset size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    r_keys = list(RADIUS_CLASSES)
    a_keys = list(ANGLE_CLASSES)
    s_keys = list(SPREAD_CLASSES)

    points = np.empty((n, 2))
    captions: list[PromptSpec] = []
    for i in range(n):
        r_mu, r_sd, r_tok = RADIUS_CLASSES[r_keys[rng.integers(len(r_keys))]]
        a_center, a_tok = ANGLE_CLASSES[a_keys[rng.integers(len(a_keys))]]
        s_sd, s_tok = SPREAD_CLASSES[s_keys[rng.integers(len(s_keys))]]
        r = rng.normal(r_mu, r_sd)
        a = rng.normal(a_center, ANGLE_STD)
        points[i] = r * np.array([np.cos(a), np.sin(a)]) + s_sd * rng.standard_normal(2)

        tokens = ["point"]
        if r_tok and rng.random() < TOKEN_KEEP_PROB["radius"]:
            tokens.append(r_tok)
        if rng.random() < TOKEN_KEEP_PROB["angle"]:
            tokens.append(a_tok)
        if rng.random() < TOKEN_KEEP_PROB["spread"]:
            tokens.append(s_tok)
        captions.append(PromptSpec.from_tokens(tokens))

    return ToyDataset(points=points, captions=tuple(captions),
                      attributes=_attributes_for(points))


def save_dataset_csv(dataset: ToyDataset, path) -> None:
    """CSV with header x,y,caption; caption is space-separated tokens."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "caption"])
        for (x, y), caption in zip(dataset.points, dataset.captions):
            writer.writerow([repr(float(x)), repr(float(y)), caption.text()])


def load_dataset_csv(path) -> ToyDataset:
    """Load points and captions; attributes are recomputed from the points."""
    points: list[list[float]] = []
    captions: list[PromptSpec] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["x", "y", "caption"]:
            raise ConfigError(f"{path}: expected CSV header x,y,caption")
        for row in reader:
            if not row:
                continue
            points.append([float(row[0]), float(row[1])])
            captions.append(PromptSpec.from_string(row[2]))
    if not points:
        raise ConfigError(f"{path}: dataset is empty")
    arr = np.asarray(points, dtype=np.float64)
    return ToyDataset(points=arr, captions=tuple(captions), attributes=_attributes_for(arr))


def resolve_dataset(path) -> ToyDataset:
    return load_dataset_csv(Path(path))
