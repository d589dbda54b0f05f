"""Stability profiling: run both perturbation families against the
oracle and record which probes flip the prediction.

The distortion branch yields a binary flip vector (one bit per suite
entry); the superimposition branch yields a per-coefficient flip rate
over repeated donor draws. Together they form the stability profile the
detectors score.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import AudioClip
from .oracle import Label, Oracle, OracleError
from .perturb import DistortionSuite, MixConfig, apply_distortion, superimpose

__all__ = [
    "StabilityProfile",
    "ReferencePool",
    "profile_preserving",
    "profile_breaking",
    "profile",
]


@dataclass(frozen=True)
class StabilityProfile:
    """Per-input stability features: distortion flips f_p (binary, one
    per suite entry) and superimposition flip rates f_b (one per mixing
    coefficient, each a multiple of 1/draws)."""

    f_p: np.ndarray
    f_b: np.ndarray
    suite_hash: str | None = None
    mix_hash: str | None = None

    def __post_init__(self) -> None:
        fp = np.asarray(self.f_p, dtype=np.float64)
        fb = np.asarray(self.f_b, dtype=np.float64)
        if fp.ndim != 1 or fb.ndim != 1:
            raise ValueError("profile vectors must be 1-D")
        if not np.all((fp == 0.0) | (fp == 1.0)):
            raise ValueError("distortion flip entries must be binary")
        if np.any(fb < 0.0) or np.any(fb > 1.0):
            raise ValueError("flip rates must lie in [0, 1]")
        fp.setflags(write=False)
        fb.setflags(write=False)
        object.__setattr__(self, "f_p", fp)
        object.__setattr__(self, "f_b", fb)

    def to_json(self) -> dict:
        doc = {"f_p": [int(v) for v in self.f_p], "f_b": list(map(float, self.f_b))}
        if self.suite_hash is not None:
            doc["suite_hash"] = self.suite_hash
        if self.mix_hash is not None:
            doc["mix_hash"] = self.mix_hash
        return doc

    @classmethod
    def from_json(cls, obj: dict) -> "StabilityProfile":
        return cls(
            np.array(obj["f_p"], dtype=np.float64),
            np.array(obj["f_b"], dtype=np.float64),
            obj.get("suite_hash"),
            obj.get("mix_hash"),
        )


@dataclass(frozen=True)
class ReferencePool:
    """Benign clips serving as superimposition donors."""

    clips: tuple[AudioClip, ...]
    rng_seed: int = 0

    def __post_init__(self) -> None:
        clips = tuple(self.clips)
        if not clips:
            raise ValueError("reference pool must not be empty")
        object.__setattr__(self, "clips", clips)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    def __len__(self) -> int:
        return len(self.clips)


def _clip_digest(clip: AudioClip) -> int:
    h = hashlib.blake2b(clip.samples.tobytes(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def profile_preserving(
    clip: AudioClip,
    oracle: Oracle,
    suite: DistortionSuite,
    base_label: Label,
) -> np.ndarray:
    """Binary flip vector over the distortion suite; exactly len(suite)
    oracle queries. Oracle failures carry the offending suite index."""
    flips = np.zeros(len(suite))
    for j, config in enumerate(suite):
        distorted = apply_distortion(clip, config)
        try:
            label = oracle.predict(distorted, phase="preserving")
        except OracleError as exc:
            raise type(exc)(f"distortion {j} ({config.kind}): {exc}") from exc
        flips[j] = 1.0 if label != base_label else 0.0
    return flips


def profile_breaking(
    clip: AudioClip,
    oracle: Oracle,
    pool: ReferencePool,
    mix: MixConfig,
    base_label: Label,
) -> np.ndarray:
    """Flip rate per mixing coefficient over draws_per_alpha donor draws;
    exactly K * N oracle queries.

    Donor draws come from an RNG seeded by (pool seed, mix seed, clip
    content), so each test sample gets its own reproducible donor
    sequence. Draws are without replacement within one coefficient when
    the pool allows it; a donor identical to the probed clip is redrawn
    once, then accepted.
    """
    n_draws = mix.draws_per_alpha
    rng = np.random.default_rng((pool.rng_seed, mix.rng_seed, _clip_digest(clip)))
    rates = np.zeros(len(mix.alphas))
    for k, alpha in enumerate(mix.alphas):
        if len(pool) >= n_draws:
            draws = rng.choice(len(pool), size=n_draws, replace=False)
        else:
            draws = rng.integers(0, len(pool), size=n_draws)
        flips = 0
        for n_i, idx in enumerate(draws):
            donor = pool.clips[int(idx)]
            if np.array_equal(donor.samples, clip.samples):
                donor = pool.clips[int(rng.integers(0, len(pool)))]
            mixed = superimpose(clip, donor, alpha)
            try:
                label = oracle.predict(mixed, phase="breaking")
            except OracleError as exc:
                raise type(exc)(f"mix (alpha #{k}, draw #{n_i}): {exc}") from exc
            if label != base_label:
                flips += 1
        rates[k] = flips / n_draws
    return rates


def profile(
    clip: AudioClip,
    oracle: Oracle,
    suite: DistortionSuite,
    pool: ReferencePool,
    mix: MixConfig,
) -> StabilityProfile:
    """Full stability profile: one base query plus both branches,
    1 + D + K*N oracle queries in total."""
    base_label = oracle.predict(clip, phase="base")
    f_p = profile_preserving(clip, oracle, suite, base_label)
    f_b = profile_breaking(clip, oracle, pool, mix, base_label)
    return StabilityProfile(f_p, f_b, suite_hash=suite.hash(), mix_hash=mix.hash())
