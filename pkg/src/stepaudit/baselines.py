"""Hard-label baseline detectors for comparison: amplitude-scaling
consistency, segment-masking retention, and corruption-robustness
consistency.

These are the hard-label adaptations used for the comparison study. All
three return per-sample scores in the same orientation as the fused
detector (higher = more backdoor-like), and their per-sample query
budgets are fixed: 6, 11, and 26 respectively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, rms
from .oracle import Oracle
from .perturb import (
    ADDITIVE_NOISE,
    LOWPASS,
    RESAMPLE,
    RIR_CONVOLVE,
    SPEED_PERTURB,
    DistortionConfig,
    apply_distortion,
)

__all__ = [
    "BaselineConfig",
    "SCALE_UP_LEVELS",
    "NEO_MASK_COUNT",
    "NEO_MASK_MS",
    "TECO_SEVERITY_GRIDS",
    "scale_up_score",
    "neo_score",
    "teco_score",
]

SCALE_UP_LEVELS = (1.2, 1.4, 1.6, 1.8, 2.0)
NEO_MASK_COUNT = 10
NEO_MASK_MS = 100.0

# Five corruption types, five severities each, mild to strong.
TECO_SEVERITY_GRIDS: dict[str, tuple[float, ...]] = {
    ADDITIVE_NOISE: (30.0, 20.0, 10.0, 5.0, 0.0),
    LOWPASS: (6000.0, 4000.0, 3000.0, 2000.0, 1000.0),
    SPEED_PERTURB: (0.95, 0.9, 0.85, 0.8, 0.75),
    RIR_CONVOLVE: (0.1, 0.3, 0.5, 0.7, 0.9),
    RESAMPLE: (12_000.0, 10_000.0, 8_000.0, 6_000.0, 4_000.0),
}


@dataclass(frozen=True)
class BaselineConfig:
    """Method selector plus method-specific parameters."""

    method: str
    levels: tuple[float, ...] = SCALE_UP_LEVELS
    mask_count: int = NEO_MASK_COUNT
    mask_ms: float = NEO_MASK_MS
    severity_grids: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(TECO_SEVERITY_GRIDS)
    )

    def __post_init__(self) -> None:
        if self.method not in ("scale-up", "neo", "teco"):
            raise ValueError(f"unknown baseline method {self.method!r}")
        levels = tuple(float(v) for v in self.levels)
        if any(v <= 1.0 for v in levels) or any(
            b <= a for a, b in zip(levels, levels[1:])
        ):
            raise ValueError("scaling levels must be strictly increasing and > 1")
        if self.mask_count < 1 or self.mask_ms <= 0:
            raise ValueError("mask_count must be >= 1 and mask_ms positive")
        for kind, grid in self.severity_grids.items():
            if len(grid) < 2:
                raise ValueError(f"{kind}: need at least 2 severity levels")
        object.__setattr__(self, "levels", levels)


def scale_up_score(
    clip: AudioClip, oracle: Oracle, levels: tuple[float, ...] = SCALE_UP_LEVELS
) -> float:
    """Fraction of amplitude-scaled copies predicting the unscaled label.

    Amplitudes are multiplied without clamping before transport; with a
    peak-normalizing oracle this is identically 1.0 for every input.
    1 + len(levels) queries.
    """
    base = oracle.predict(clip, phase="baseline")
    consistent = 0
    for level in levels:
        scaled = clip.with_samples(clip.samples * level)
        if oracle.predict(scaled, phase="baseline") == base:
            consistent += 1
    return consistent / len(levels)


def neo_score(
    clip: AudioClip,
    oracle: Oracle,
    rng_seed: int,
    mask_count: int = NEO_MASK_COUNT,
    mask_ms: float = NEO_MASK_MS,
) -> float:
    """Fraction of segment-masked copies retaining the base label.

    Each copy overwrites one seeded random window with white noise
    matched to the clip's RMS. 1 + mask_count queries.
    """
    mask_len = int(round(mask_ms / 1000.0 * clip.sample_rate_hz))
    if mask_len >= len(clip):
        raise ValueError(
            f"clip of {len(clip)} samples shorter than the {mask_len}-sample mask"
        )
    rng = np.random.default_rng(rng_seed)
    base = oracle.predict(clip, phase="baseline")
    level = rms(clip)
    retained = 0
    for _ in range(mask_count):
        start = int(rng.integers(0, len(clip) - mask_len + 1))
        noise = rng.standard_normal(mask_len)
        noise *= level / max(np.sqrt(np.mean(noise**2)), 1e-12)
        masked = clip.samples.copy()
        masked[start : start + mask_len] = noise
        if oracle.predict(clip.with_samples(masked), phase="baseline") == base:
            retained += 1
    return retained / mask_count


def _teco_config(kind: str, severity: float, index: int) -> DistortionConfig:
    params = {
        ADDITIVE_NOISE: {"snr_db": severity},
        LOWPASS: {"cutoff_hz": severity},
        SPEED_PERTURB: {"factor": severity},
        RIR_CONVOLVE: {"rt60_s": severity},
        RESAMPLE: {"intermediate_hz": severity},
    }[kind]
    return DistortionConfig(kind, params, seed=7000 + index)


def teco_score(
    clip: AudioClip,
    oracle: Oracle,
    severity_grids: dict[str, tuple[float, ...]] | None = None,
) -> float:
    """Negative spread of first-flip severities across corruption types.

    For each corruption type the clip is corrupted at increasing
    severity until the label first flips (index len+1 if it never does);
    a suspiciously uniform flip pattern across types scores high.
    1 + sum(len(grid)) queries; flip search is exhaustive so the budget
    is fixed.
    """
    grids = severity_grids if severity_grids is not None else TECO_SEVERITY_GRIDS
    base = oracle.predict(clip, phase="baseline")
    first_flips = []
    for kind in sorted(grids):
        flip_at = len(grids[kind]) + 1
        flipped = False
        for i, severity in enumerate(grids[kind]):
            corrupted = apply_distortion(clip, _teco_config(kind, severity, i))
            label = oracle.predict(corrupted, phase="baseline")
            if not flipped and label != base:
                flip_at = i + 1
                flipped = True
        first_flips.append(flip_at)
    return -float(np.std(first_flips))
