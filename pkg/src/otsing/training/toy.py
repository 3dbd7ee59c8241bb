from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from otsing.errors import ConfigError
from otsing.sdot.measure import SeededRng

TOY_TAG = 0x70E


@dataclass(frozen=True)
class ToyConfig:
    """Gaussian blobs on a circle plus an OOD ring inside them."""

    n_classes: int = 3
    n_train: int = 600
    n_test: int = 300
    n_ood: int = 300
    blob_radius: float = 3.0
    blob_std: float = 0.35
    ring_radius: float = 1.5
    ring_jitter: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"toy.n_classes must be >= 2, got {self.n_classes}")
        for name in ("n_train", "n_test"):
            if getattr(self, name) < self.n_classes:
                raise ConfigError(f"toy.{name} must be >= n_classes ({self.n_classes}), got {getattr(self, name)}")
        if self.n_ood < 1:
            raise ConfigError(f"toy.n_ood must be >= 1, got {self.n_ood}")
        for name in ("blob_radius", "blob_std", "ring_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"toy.{name} must be > 0, got {getattr(self, name)}")
        if self.ring_jitter < 0:
            raise ConfigError(f"toy.ring_jitter must be >= 0, got {self.ring_jitter}")


@dataclass(frozen=True, eq=False)
class ToyDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    ood_x: np.ndarray
    centers: np.ndarray


def blob_centers(config: ToyConfig) -> np.ndarray:
    angles = np.pi / 2 + 2 * np.pi * np.arange(config.n_classes) / config.n_classes
    return config.blob_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _balanced_labels(total: int, k: int) -> np.ndarray:
    counts = [total // k + (c < total % k) for c in range(k)]
    return np.repeat(np.arange(k), counts)


def make_toy_dataset(config: ToyConfig, seed: int) -> ToyDataset:
    gen = SeededRng(seed).derive(TOY_TAG).generator()
    centers = blob_centers(config)

    def blobs(total: int) -> tuple[np.ndarray, np.ndarray]:
        labels = _balanced_labels(total, config.n_classes)
        return centers[labels] + config.blob_std * gen.standard_normal((total, 2)), labels

    train_x, train_y = blobs(config.n_train)
    test_x, test_y = blobs(config.n_test)
    theta = gen.uniform(0.0, 2 * np.pi, config.n_ood)
    radius = config.ring_radius + config.ring_jitter * gen.standard_normal(config.n_ood)
    ood_x = radius[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return ToyDataset(train_x, train_y, test_x, test_y, ood_x, centers)
