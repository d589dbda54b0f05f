"""Canonical audio representation, WAV I/O, and low-level DSP primitives.

Everything downstream works on :class:`AudioClip`: an immutable mono
waveform with a sample rate. Files are RIFF/WAVE only (PCM16 or float32
in, PCM16 mono out).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve, resample_poly

__all__ = [
    "AudioClip",
    "AudioError",
    "UnreadableFileError",
    "UnsupportedFormatError",
    "EmptyAudioError",
    "read_wav",
    "write_wav",
    "wav_bytes",
    "clip_from_wav_bytes",
    "resample",
    "convolve",
    "rms",
]

PCM16_SCALE = 32768.0


class AudioError(Exception):
    """Base class for audio I/O and validation failures."""


class UnreadableFileError(AudioError):
    """File missing, truncated, or not parseable as RIFF/WAVE."""


class UnsupportedFormatError(AudioError):
    """WAV codec or bit depth outside PCM16 / IEEE float32."""


class EmptyAudioClipError(AudioError):
    """Audio with zero samples."""


# Spec'd public name; keep the descriptive alias above as canonical.
EmptyAudioError = EmptyAudioClipError


@dataclass(frozen=True)
class AudioClip:
    """Immutable mono waveform.

    samples are dimensionless amplitudes, nominally in [-1, 1] (not
    enforced: intermediate processing may exceed the range). Operations
    never mutate a clip; they return new ones.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {arr.shape}")
        if arr.size == 0:
            raise EmptyAudioClipError("clip has no samples")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain NaN or Inf")
        rate = int(self.sample_rate_hz)
        if rate <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {rate}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", rate)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        """New clip at this clip's rate with different samples."""
        return AudioClip(samples, self.sample_rate_hz)

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))


def _decode_wav(rate: int, data: np.ndarray) -> AudioClip:
    if data.size == 0:
        raise EmptyAudioClipError("WAV file contains no audio frames")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"unsupported WAV sample format {data.dtype}; expected int16 or float32"
        )
    if samples.ndim == 2:  # downmix channels by arithmetic mean
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate)


def read_wav(path: str | Path) -> AudioClip:
    """Read a RIFF/WAVE file as a mono clip.

    PCM16 is scaled by 1/32768; float32 is taken as-is; multi-channel
    audio is downmixed by channel mean.
    """
    path = Path(path)
    if not path.is_file():
        raise UnreadableFileError(f"no such file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        # scipy raises ValueError both for non-WAV garbage and for exotic
        # codecs; classify by message so callers get distinct categories.
        msg = str(exc).lower()
        if "unknown wave file format" in msg or "unsupported" in msg or "bit depth" in msg:
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise UnreadableFileError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    return _decode_wav(int(rate), np.asarray(data))


def clip_from_wav_bytes(payload: bytes) -> AudioClip:
    """Decode a complete in-memory WAV file (transport payloads)."""
    try:
        rate, data = wavfile.read(io.BytesIO(payload))
    except (ValueError, OSError) as exc:
        raise UnreadableFileError(f"malformed WAV payload: {exc}") from exc
    return _decode_wav(int(rate), np.asarray(data))


def _quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(samples, -1.0, 1.0)
    return np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    """Write a clip as 16-bit PCM mono; samples are clamped to [-1, 1]."""
    try:
        wavfile.write(str(path), clip.sample_rate_hz, _quantize_pcm16(clip.samples))
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}") from exc


def wav_bytes(clip: AudioClip, dtype: str = "float32") -> bytes:
    """Encode a clip as complete WAV bytes for wire transports.

    float32 (default) keeps amplitudes above full scale intact, which
    matters for probes that deliberately overdrive the input; "pcm16"
    matches the on-disk writer.
    """
    buf = io.BytesIO()
    if dtype == "float32":
        wavfile.write(buf, clip.sample_rate_hz, clip.samples.astype(np.float32))
    elif dtype == "pcm16":
        wavfile.write(buf, clip.sample_rate_hz, _quantize_pcm16(clip.samples))
    else:
        raise ValueError(f"unsupported wire dtype {dtype!r}")
    return buf.getvalue()


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited polyphase resampling to target_hz.

    Output length is round(len * target_hz / source_hz). Anti-alias
    filtering is inherent to the polyphase kernel when downsampling.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == clip.sample_rate_hz:
        return clip
    g = math.gcd(target_hz, clip.sample_rate_hz)
    up, down = target_hz // g, clip.sample_rate_hz // g
    out = resample_poly(clip.samples, up, down)
    n_out = int(round(len(clip) * target_hz / clip.sample_rate_hz))
    return AudioClip(_fix_length(out, max(n_out, 1)), target_hz)


def _fix_length(samples: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad at the tail to exactly n samples."""
    if samples.size >= n:
        return samples[:n]
    return np.concatenate([samples, np.zeros(n - samples.size)])


def convolve(clip: AudioClip, impulse: AudioClip) -> AudioClip:
    """Linear convolution truncated to len(clip), peak-matched to the input.

    Peak normalization keeps loudness out of the picture so downstream
    probes react to structure, not gain.
    """
    if impulse.sample_rate_hz != clip.sample_rate_hz:
        raise ValueError(
            f"sample-rate mismatch: clip {clip.sample_rate_hz} Hz vs "
            f"impulse {impulse.sample_rate_hz} Hz"
        )
    out = fftconvolve(clip.samples, impulse.samples, mode="full")[: len(clip)]
    peak_in = clip.peak()
    peak_out = float(np.max(np.abs(out)))
    if peak_out > 0.0 and peak_in > 0.0:
        out = out * (peak_in / peak_out)
    return clip.with_samples(out)


def rms(clip: AudioClip) -> float:
    """Root mean square amplitude."""
    return float(np.sqrt(np.mean(np.square(clip.samples))))
