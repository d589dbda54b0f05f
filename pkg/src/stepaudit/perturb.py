"""The two perturbation families used to probe prediction stability.

Semantic-preserving distortions alter acoustic conditions (noise, room,
bandwidth, speed) while leaving task content intact; semantic-breaking
superimposition mixes the input with another utterance, destroying task
content in proportion to the mixing weight. Every operation here is a
pure function of its arguments, seeds included, and preserves clip
length and sample rate.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, get_window, resample_poly, sosfiltfilt

from .audio import AudioClip, _fix_length, convolve, resample, rms

__all__ = [
    "ADDITIVE_NOISE",
    "RIR_CONVOLVE",
    "DEREVERB",
    "RESAMPLE",
    "LOWPASS",
    "SPEED_PERTURB",
    "DISTORTION_KINDS",
    "DistortionConfig",
    "DistortionSuite",
    "MixConfig",
    "apply_distortion",
    "superimpose",
    "default_suite",
    "synth_rir",
    "canonical_hash",
]

ADDITIVE_NOISE = "additive_noise"
RIR_CONVOLVE = "rir_convolve"
DEREVERB = "dereverb"
RESAMPLE = "resample"
LOWPASS = "lowpass"
SPEED_PERTURB = "speed_perturb"

DISTORTION_KINDS = (
    ADDITIVE_NOISE,
    RIR_CONVOLVE,
    DEREVERB,
    RESAMPLE,
    LOWPASS,
    SPEED_PERTURB,
)

_REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    ADDITIVE_NOISE: ("snr_db",),
    RIR_CONVOLVE: ("rt60_s",),
    DEREVERB: ("attenuation_db", "window_ms"),
    RESAMPLE: ("intermediate_hz",),
    LOWPASS: ("cutoff_hz",),
    SPEED_PERTURB: ("factor",),
}


@dataclass(frozen=True)
class DistortionConfig:
    """One semantic-preserving distortion: a kind plus its parameters.

    The seed drives any internal synthesis (noise draws, room impulse
    responses) so the distortion is a deterministic map.
    """

    kind: str
    params: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        missing = [k for k in _REQUIRED_PARAMS[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind}: missing params {missing}")
        p = {k: float(v) for k, v in self.params.items()}
        if self.kind == ADDITIVE_NOISE and not math.isfinite(p["snr_db"]):
            raise ValueError("snr_db must be finite")
        if self.kind == RIR_CONVOLVE and p["rt60_s"] <= 0:
            raise ValueError("rt60_s must be positive")
        if self.kind == DEREVERB and (p["attenuation_db"] <= 0 or p["window_ms"] <= 0):
            raise ValueError("attenuation_db and window_ms must be positive")
        if self.kind == RESAMPLE and p["intermediate_hz"] <= 0:
            raise ValueError("intermediate_hz must be positive")
        if self.kind == LOWPASS and p["cutoff_hz"] <= 0:
            raise ValueError("cutoff_hz must be positive")
        if self.kind == SPEED_PERTURB and p["factor"] <= 0:
            raise ValueError("factor must be positive")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "DistortionConfig":
        return cls(kind=obj["kind"], params=dict(obj["params"]), seed=int(obj.get("seed", 0)))


@dataclass(frozen=True)
class DistortionSuite:
    """Ordered distortion set; the order fixes the flip-vector coordinates."""

    configs: tuple[DistortionConfig, ...]

    def __post_init__(self) -> None:
        configs = tuple(self.configs)
        if not configs:
            raise ValueError("suite must contain at least one distortion")
        object.__setattr__(self, "configs", configs)

    def __len__(self) -> int:
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def to_json(self) -> dict:
        return {"configs": [c.to_json() for c in self.configs]}

    @classmethod
    def from_json(cls, obj: dict) -> "DistortionSuite":
        return cls(tuple(DistortionConfig.from_json(c) for c in obj["configs"]))

    def hash(self) -> str:
        return canonical_hash(self.to_json())


@dataclass(frozen=True)
class MixConfig:
    """Superimposition schedule: mixing coefficients and draws per level."""

    alphas: tuple[float, ...] = (0.3, 0.5, 0.7)
    draws_per_alpha: int = 5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValueError("need at least one mixing coefficient")
        for a in alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must be in (0, 1), got {a}")
        if int(self.draws_per_alpha) < 1:
            raise ValueError("draws_per_alpha must be >= 1")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "draws_per_alpha", int(self.draws_per_alpha))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    def to_json(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "draws_per_alpha": self.draws_per_alpha,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixConfig":
        return cls(tuple(obj["alphas"]), int(obj["draws_per_alpha"]), int(obj["rng_seed"]))

    def hash(self) -> str:
        return canonical_hash(self.to_json())


def canonical_hash(obj) -> str:
    """Short stable hash of a JSON-serializable config object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@functools.lru_cache(maxsize=64)
def synth_rir(
    rt60_s: float, seed: int, sample_rate_hz: int, tail_to_direct: float = 4.0
) -> AudioClip:
    """Synthetic room impulse response: unit direct path plus an
    exponentially decaying noise tail.

    The decay constant puts the tail 60 dB down at rt60_s; tail energy
    is tail_to_direct times the direct-path energy, so the room leaves
    an audible spectral footprint.
    """
    rng = np.random.default_rng(seed)
    n = max(int(round(rt60_s * sample_rate_hz)), 8)
    t = np.arange(n) / sample_rate_hz
    envelope = np.exp(-6.9078 * t / rt60_s)  # -60 dB amplitude at t = rt60
    tail = rng.standard_normal(n) * envelope
    tail_energy = float(np.sum(tail**2))
    if tail_energy > 0.0:
        tail *= math.sqrt(tail_to_direct / tail_energy)
    h = tail
    h[0] = 1.0
    return AudioClip(h, sample_rate_hz)


def _add_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    signal_rms = rms(clip)
    if signal_rms == 0.0:
        return clip
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(clip))
    noise *= (signal_rms / 10.0 ** (snr_db / 20.0)) / np.sqrt(np.mean(noise**2))
    return clip.with_samples(clip.samples + noise)


def _dereverb(clip: AudioClip, attenuation_db: float, window_ms: float) -> AudioClip:
    """Late-reverb suppression by short-time spectral gating.

    A per-bin exponential floor estimate is subtracted from each frame's
    magnitude, with suppression capped at attenuation_db; frames are
    reassembled by windowed overlap-add.
    """
    n = len(clip)
    rate = clip.sample_rate_hz
    win_len = max(int(round(rate * window_ms / 1000.0)) // 2 * 2, 32)
    hop = win_len // 2
    window = get_window("hann", win_len, fftbins=True)
    min_gain = 10.0 ** (-attenuation_db / 20.0)
    smoothing = 0.9

    padded = np.concatenate([np.zeros(hop), clip.samples, np.zeros(win_len)])
    n_frames = 1 + (len(padded) - win_len) // hop
    out = np.zeros_like(padded)
    norm = np.zeros_like(padded)
    floor = None
    eps = 1e-12
    for i in range(n_frames):
        start = i * hop
        frame = padded[start : start + win_len] * window
        spec = np.fft.rfft(frame)
        mag = np.abs(spec)
        if floor is None:
            floor = mag.copy()
        gated = np.maximum(mag - floor, min_gain * mag)
        spec *= gated / np.maximum(mag, eps)
        floor = smoothing * floor + (1.0 - smoothing) * mag
        rec = np.fft.irfft(spec, n=win_len) * window
        out[start : start + win_len] += rec
        norm[start : start + win_len] += window**2
    out = out / np.maximum(norm, eps)
    return clip.with_samples(_fix_length(out[hop:], n))


def _lowpass(clip: AudioClip, cutoff_hz: float) -> AudioClip:
    nyquist = clip.sample_rate_hz / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise ValueError(f"cutoff_hz must be in (0, {nyquist}), got {cutoff_hz}")
    sos = butter(4, cutoff_hz, btype="low", fs=clip.sample_rate_hz, output="sos")
    return clip.with_samples(sosfiltfilt(sos, clip.samples))


def _resample_roundtrip(clip: AudioClip, intermediate_hz: float) -> AudioClip:
    down = resample(clip, int(round(intermediate_hz)))
    back = resample(down, clip.sample_rate_hz)
    return clip.with_samples(_fix_length(back.samples, len(clip)))


def _speed(clip: AudioClip, factor: float) -> AudioClip:
    """Resampling-based time scaling (pitch moves with speed), padded or
    truncated back to the original length."""
    if factor == 1.0:
        return clip
    from fractions import Fraction

    frac = Fraction(factor).limit_denominator(1000)
    scaled = resample_poly(clip.samples, frac.denominator, frac.numerator)
    internal_len = max(int(round(len(clip) / factor)), 1)
    scaled = _fix_length(scaled, internal_len)
    return clip.with_samples(_fix_length(scaled, len(clip)))


def apply_distortion(clip: AudioClip, config: DistortionConfig) -> AudioClip:
    """Apply one distortion; output has the input's length and rate."""
    p = config.params
    if config.kind == ADDITIVE_NOISE:
        out = _add_noise(clip, p["snr_db"], config.seed)
    elif config.kind == RIR_CONVOLVE:
        rir = synth_rir(p["rt60_s"], config.seed, clip.sample_rate_hz)
        out = convolve(clip, rir)
    elif config.kind == DEREVERB:
        out = _dereverb(clip, p["attenuation_db"], p["window_ms"])
    elif config.kind == RESAMPLE:
        out = _resample_roundtrip(clip, p["intermediate_hz"])
    elif config.kind == LOWPASS:
        out = _lowpass(clip, p["cutoff_hz"])
    elif config.kind == SPEED_PERTURB:
        out = _speed(clip, p["factor"])
    else:  # pragma: no cover - rejected at construction
        raise ValueError(f"unknown kind {config.kind!r}")
    assert len(out) == len(clip) and out.sample_rate_hz == clip.sample_rate_hz
    return out


def superimpose(x: AudioClip, x_rand: AudioClip, alpha: float) -> AudioClip:
    """Mix x with another utterance: alpha * x + (1 - alpha) * x_rand.

    x_rand is cyclically tiled (or truncated) to len(x) first. No
    clipping is applied afterwards.
    """
    if x_rand.sample_rate_hz != x.sample_rate_hz:
        raise ValueError(
            f"sample-rate mismatch: {x.sample_rate_hz} Hz vs {x_rand.sample_rate_hz} Hz"
        )
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    donor = np.resize(x_rand.samples, len(x))
    return x.with_samples(alpha * x.samples + (1.0 - alpha) * donor)


def default_suite(seed: int = 0) -> DistortionSuite:
    """The standard 11-distortion suite covering all six kinds.

    Two parameterizations per kind (one for dereverberation), spanning
    mild to strong corruption; synthesis seeds derive from the suite
    seed.
    """
    s = int(seed)
    configs = (
        DistortionConfig(ADDITIVE_NOISE, {"snr_db": 20.0}, seed=s * 101 + 1),
        DistortionConfig(ADDITIVE_NOISE, {"snr_db": 10.0}, seed=s * 101 + 2),
        DistortionConfig(RIR_CONVOLVE, {"rt60_s": 0.3}, seed=s * 101 + 3),
        DistortionConfig(RIR_CONVOLVE, {"rt60_s": 0.6}, seed=s * 101 + 4),
        DistortionConfig(DEREVERB, {"attenuation_db": 12.0, "window_ms": 32.0}),
        DistortionConfig(RESAMPLE, {"intermediate_hz": 8000.0}),
        DistortionConfig(RESAMPLE, {"intermediate_hz": 4000.0}),
        DistortionConfig(LOWPASS, {"cutoff_hz": 3400.0}),
        DistortionConfig(LOWPASS, {"cutoff_hz": 1500.0}),
        DistortionConfig(SPEED_PERTURB, {"factor": 0.9}),
        DistortionConfig(SPEED_PERTURB, {"factor": 1.1}),
    )
    return DistortionSuite(configs)
