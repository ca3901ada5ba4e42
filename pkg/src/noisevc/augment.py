"""Noise-augmentation policy.

With probability alpha a training example uses the Gaussian-noised
spectrogram for BOTH the speaker-encoder input and the reconstruction
target (that equality is the mechanism; the decoder can only know which
version to produce through the speaker path). The content encoder always
receives the original.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from noisevc.errors import ConfigError
from noisevc.features import MelSpectrogram


class Version(str, Enum):
    ORIGINAL = "original"
    AUGMENTED = "augmented"


@dataclass
class AugmentPolicy:
    alpha: float = 0.5          # probability of the augmented pair
    sigma: float = 0.1          # noise std in log-mel units
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.sigma < 0.0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class StepPlan:
    speaker_input: Version
    target: Version

    def __post_init__(self):
        if self.speaker_input != self.target:
            raise ConfigError("reconstruction target must match the speaker-encoder input")


def add_noise(x: MelSpectrogram, sigma: float, rng: np.random.Generator) -> MelSpectrogram:
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0.0:
        return MelSpectrogram(
            values=x.values.copy(),
            hop_samples=x.hop_samples,
            window_samples=x.window_samples,
            sample_rate=x.sample_rate,
        )
    noisy = x.values + rng.normal(0.0, sigma, size=x.values.shape).astype(np.float32)
    return MelSpectrogram(
        values=noisy,
        hop_samples=x.hop_samples,
        window_samples=x.window_samples,
        sample_rate=x.sample_rate,
    )


def add_noise_array(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Batch-friendly variant used by the trainer on raw (T, 80) arrays."""
    if sigma == 0.0:
        return values.copy()
    return values + rng.normal(0.0, sigma, size=values.shape).astype(values.dtype)


def plan_step(policy: AugmentPolicy, rng: np.random.Generator) -> StepPlan:
    version = Version.AUGMENTED if rng.random() < policy.alpha else Version.ORIGINAL
    return StepPlan(speaker_input=version, target=version)
