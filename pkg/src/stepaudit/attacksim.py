"""Desk-scale attack simulation: synthetic audio classes, trigger
injection, data poisoning, and a small trainable classifier that acts as
the backdoored target model.

Each synthetic class is a fixed three-tone chord with per-clip phase,
level jitter, and background noise, so classes are cleanly separable in
log-mel space while leaving room for distortions to cause realistic
label flips. The classifier is multinomial logistic regression over
time-averaged log-mel energies: convex, gradient-checkable, trains in
seconds, and is demonstrably backdoorable.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioClip, rms
from .oracle import Label
from .perturb import synth_rir
from .audio import convolve

__all__ = [
    "SINE_TONE",
    "NOISE_CLIP",
    "RIR_TRANSFORM",
    "SPECTRAL_TILT",
    "TRIGGER_KINDS",
    "SyntheticDataset",
    "TriggerSpec",
    "PoisonPlan",
    "ToyModel",
    "AttackReport",
    "gen_dataset",
    "inject_trigger",
    "poison",
    "train_toy",
    "eval_attack",
    "stratified_split",
    "logmel_features",
    "xent_loss_and_grad",
    "save_model",
    "load_model",
    "class_token",
]

SINE_TONE = "sine_tone"
NOISE_CLIP = "noise_clip"
RIR_TRANSFORM = "rir_transform"
SPECTRAL_TILT = "spectral_tilt"
TRIGGER_KINDS = (SINE_TONE, NOISE_CLIP, RIR_TRANSFORM, SPECTRAL_TILT)

_REQUIRED_TRIGGER_PARAMS = {
    SINE_TONE: ("freq_hz", "amplitude"),
    NOISE_CLIP: ("amplitude", "position_s"),
    RIR_TRANSFORM: ("rt60_s",),
    SPECTRAL_TILT: ("gain_db_per_octave",),
}

NOISE_BURST_S = 0.2
LOGMEL_FLOOR = 1.0


def class_token(index: int) -> str:
    return f"class_{index:02d}"


@dataclass(frozen=True)
class SyntheticDataset:
    """Parallel clips and labels; all clips share rate and length."""

    clips: tuple[AudioClip, ...]
    labels: tuple[Label, ...]
    class_count: int
    seed: int

    def __post_init__(self) -> None:
        clips = tuple(self.clips)
        labels = tuple(self.labels)
        if not clips or len(clips) != len(labels):
            raise ValueError("clips and labels must be parallel and non-empty")
        names = set(self.class_names)
        for lab in labels:
            if lab.token not in names:
                raise ValueError(f"label {lab.token!r} outside the {self.class_count} classes")
        rate = clips[0].sample_rate_hz
        length = len(clips[0])
        for c in clips:
            if c.sample_rate_hz != rate or len(c) != length:
                raise ValueError("all clips must share sample rate and length")
        object.__setattr__(self, "clips", clips)
        object.__setattr__(self, "labels", labels)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(class_token(i) for i in range(self.class_count))

    def __len__(self) -> int:
        return len(self.clips)

    def subset(self, indices: Sequence[int]) -> "SyntheticDataset":
        idx = list(indices)
        return SyntheticDataset(
            tuple(self.clips[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            self.class_count,
            self.seed,
        )


@dataclass(frozen=True)
class TriggerSpec:
    """A synthetic backdoor trigger: additive tone, localized noise
    burst, room-response convolution, or a spectral tilt."""

    kind: str
    params: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    metadata: str = ""

    def __post_init__(self) -> None:
        if self.kind not in TRIGGER_KINDS:
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        missing = [k for k in _REQUIRED_TRIGGER_PARAMS[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind}: missing params {missing}")
        p = {k: float(v) for k, v in self.params.items()}
        # amplitude 0 is permitted as the degenerate identity trigger
        if "amplitude" in p and p["amplitude"] < 0:
            raise ValueError("amplitude must be non-negative")
        if self.kind == SINE_TONE and p["freq_hz"] <= 0:
            raise ValueError("freq_hz must be positive")
        if self.kind == RIR_TRANSFORM and p["rt60_s"] <= 0:
            raise ValueError("rt60_s must be positive")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "seed": self.seed,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TriggerSpec":
        return cls(
            kind=obj["kind"],
            params=dict(obj["params"]),
            seed=int(obj.get("seed", 0)),
            metadata=obj.get("metadata", ""),
        )


@dataclass(frozen=True)
class PoisonPlan:
    """Which fraction of training data gets the trigger and target label."""

    rate: float
    target_label: Label
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"poison rate must be in (0, 1), got {self.rate}")


@dataclass(frozen=True)
class AttackReport:
    asr: float
    ba: float

    def to_json(self) -> dict:
        return {"asr": self.asr, "ba": self.ba}


# -- dataset generation -------------------------------------------------------


CARRIER_FREQS = (350.0, 560.0, 780.0)
CARRIER_AMP = 0.12
CLASS_TONE_AMP = 0.2
_CLASS_TONE_BASE_FILTER = 18


def _class_tone(index: int) -> float:
    """Class-identifying tone frequency: the center of one mel band in
    the 1.5-3.4 kHz range.

    Adjacent classes sit one mel band apart, so a ~10% speed change
    moves any class cue into its neighbor's band, band-limiting
    distortions remove it outright, and the whole range stays clear of
    the canonical 4 kHz trigger."""
    m_lo = _hz_to_mel(0.0)
    m_hi = _hz_to_mel(8000.0)
    centers = np.linspace(m_lo, m_hi, 42)[1:-1]
    return float(_mel_to_hz(centers[_CLASS_TONE_BASE_FILTER + index]))


def gen_dataset(
    seed: int,
    class_count: int,
    per_class: int,
    duration_s: float = 1.0,
    sample_rate_hz: int = 16_000,
) -> SyntheticDataset:
    """Deterministic synthetic dataset of chord-signature classes.

    Each clip is the shared carrier chord plus its class tone, with
    random phases, a per-clip level jitter of +/-3 dB, and white noise
    at 20 dB SNR.
    """
    if class_count < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 10:
        raise ValueError("need at least 10 clips per class")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    if n <= 0:
        raise ValueError("duration too short")
    t = np.arange(n) / sample_rate_hz
    clips: list[AudioClip] = []
    labels: list[Label] = []
    for c in range(class_count):
        tone = _class_tone(c)
        for _ in range(per_class):
            jitter = 10.0 ** (rng.uniform(-3.0, 3.0) / 20.0)
            parts = [
                CARRIER_AMP * jitter * np.sin(2.0 * math.pi * f * t + rng.uniform(0, 2 * math.pi))
                for f in CARRIER_FREQS
            ]
            parts.append(
                CLASS_TONE_AMP * jitter * np.sin(2.0 * math.pi * tone * t + rng.uniform(0, 2 * math.pi))
            )
            signal = np.sum(parts, axis=0)
            noise = rng.standard_normal(n)
            noise *= (np.sqrt(np.mean(signal**2)) / 10.0) / np.sqrt(np.mean(noise**2))
            clips.append(AudioClip(signal + noise, sample_rate_hz))
            labels.append(Label(class_token(c)))
    return SyntheticDataset(tuple(clips), tuple(labels), class_count, seed)


def stratified_split(
    dataset: SyntheticDataset, sizes: Sequence[int], seed: int
) -> list[SyntheticDataset]:
    """Split into len(sizes) disjoint parts with sizes[i] clips per class."""
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(dataset.labels):
        by_class.setdefault(lab.token, []).append(i)
    need = sum(sizes)
    parts: list[list[int]] = [[] for _ in sizes]
    for token in sorted(by_class):
        idx = np.array(by_class[token])
        if len(idx) < need:
            raise ValueError(f"class {token}: {len(idx)} clips < {need} requested")
        perm = rng.permutation(len(idx))
        pos = 0
        for part, size in zip(parts, sizes):
            part.extend(int(idx[p]) for p in perm[pos : pos + size])
            pos += size
    return [dataset.subset(sorted(p)) for p in parts]


# -- trigger injection ---------------------------------------------------------


def inject_trigger(clip: AudioClip, spec: TriggerSpec) -> AudioClip:
    """Apply a trigger; length and sample rate are preserved."""
    p = spec.params
    n = len(clip)
    rate = clip.sample_rate_hz
    if spec.kind == SINE_TONE:
        freq = p["freq_hz"]
        if freq >= rate / 2.0:
            raise ValueError(f"trigger tone {freq} Hz at or above Nyquist ({rate / 2} Hz)")
        t = np.arange(n) / rate
        return clip.with_samples(clip.samples + p["amplitude"] * np.sin(2.0 * math.pi * freq * t))
    if spec.kind == NOISE_CLIP:
        burst_len = min(int(round(NOISE_BURST_S * rate)), n)
        start = int(round(p["position_s"] * rate))
        start = min(max(start, 0), n - burst_len)
        rng = np.random.default_rng(spec.seed)
        burst = rng.standard_normal(burst_len)
        burst *= p["amplitude"] / np.max(np.abs(burst))
        out = clip.samples.copy()
        out[start : start + burst_len] += burst
        return clip.with_samples(out)
    if spec.kind == RIR_TRANSFORM:
        # the attacker's room is drier than the audit probes: a subtle
        # coloration is still learnable as a trigger but leaves the
        # mixing branch a detectable residue
        return convolve(clip, synth_rir(p["rt60_s"], spec.seed, rate, tail_to_direct=1.5))
    if spec.kind == SPECTRAL_TILT:
        spec_f = np.fft.rfft(clip.samples)
        freqs = np.fft.rfftfreq(n, d=1.0 / rate)
        octaves = np.zeros_like(freqs)
        nonzero = freqs > 0
        octaves[nonzero] = np.log2(freqs[nonzero] / 1000.0)
        if n > 1:
            octaves[0] = octaves[1]  # DC bin follows the lowest band
        gain = 10.0 ** (p["gain_db_per_octave"] * octaves / 20.0)
        return clip.with_samples(np.fft.irfft(spec_f * gain, n=n))
    raise ValueError(f"unknown trigger kind {spec.kind!r}")  # pragma: no cover


def poison(
    dataset: SyntheticDataset, plan: PoisonPlan, spec: TriggerSpec
) -> tuple[SyntheticDataset, tuple[int, ...]]:
    """Inject the trigger into a seeded fraction of non-target clips and
    relabel them; returns the new dataset and the poisoned index set."""
    if plan.target_label.token not in dataset.class_names:
        raise ValueError(f"target label {plan.target_label.token!r} not in dataset classes")
    candidates = [i for i, lab in enumerate(dataset.labels) if lab != plan.target_label]
    k = int(round(plan.rate * len(candidates)))
    rng = np.random.default_rng(plan.seed)
    chosen = sorted(int(i) for i in rng.choice(len(candidates), size=k, replace=False))
    picked = {candidates[i] for i in chosen}
    clips = list(dataset.clips)
    labels = list(dataset.labels)
    for i in picked:
        clips[i] = inject_trigger(clips[i], spec)
        labels[i] = plan.target_label
    poisoned = SyntheticDataset(tuple(clips), tuple(labels), dataset.class_count, dataset.seed)
    return poisoned, tuple(sorted(picked))


# -- log-mel features ----------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def _mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular mel filterbank over the rFFT bins, shape (n_mels, bins)."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate_hz / 2.0, n_bins)
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate_hz / 2.0), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - freqs) / max(hi - mid, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def logmel_features(
    clip: AudioClip, n_mels: int = 40, frame_ms: float = 25.0, hop_ms: float = 10.0
) -> np.ndarray:
    """Time-averaged log-mel energies: the toy model's feature vector."""
    rate = clip.sample_rate_hz
    frame_len = int(round(rate * frame_ms / 1000.0))
    hop = max(int(round(rate * hop_ms / 1000.0)), 1)
    n_fft = 1 << (frame_len - 1).bit_length()
    samples = clip.samples
    if len(samples) < frame_len:
        samples = np.concatenate([samples, np.zeros(frame_len - len(samples))])
    n_frames = 1 + (len(samples) - frame_len) // hop
    offsets = np.arange(n_frames) * hop
    frames = np.stack([samples[o : o + frame_len] for o in offsets])
    window = np.hanning(frame_len)
    power = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1)) ** 2
    fb = _mel_filterbank(n_mels, n_fft, rate)
    energies = power @ fb.T
    return np.log(energies + LOGMEL_FLOOR).mean(axis=0)


# -- toy classifier ------------------------------------------------------------


@dataclass(frozen=True)
class ToyModel:
    """Multinomial logistic regression over time-averaged log-mel
    features; the in-process oracle backend."""

    class_names: tuple[str, ...]
    weights: np.ndarray  # (classes, feature dim)
    bias: np.ndarray  # (classes,)
    feature_mean: np.ndarray
    feature_std: np.ndarray
    mel_filter_count: int = 40
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    normalize_input: bool = True
    loss_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.shape != (len(self.class_names), self.mel_filter_count):
            raise ValueError(f"weights shape {w.shape} inconsistent with model config")
        if b.shape != (len(self.class_names),):
            raise ValueError(f"bias shape {b.shape} inconsistent with class count")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "feature_mean", np.asarray(self.feature_mean, dtype=np.float64))
        object.__setattr__(self, "feature_std", np.asarray(self.feature_std, dtype=np.float64))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def features(self, clip: AudioClip) -> np.ndarray:
        if self.normalize_input:
            peak = clip.peak()
            if peak > 0.0:
                clip = clip.with_samples(clip.samples / peak)
        raw = logmel_features(clip, self.mel_filter_count, self.frame_ms, self.hop_ms)
        return (raw - self.feature_mean) / self.feature_std

    def logits(self, clip: AudioClip) -> np.ndarray:
        return self.weights @ self.features(clip) + self.bias

    def predict_index(self, clip: AudioClip) -> int:
        return int(np.argmax(self.logits(clip)))

    def predict_label(self, clip: AudioClip) -> str:
        """Hard-label prediction; this is the in-process oracle callable."""
        return self.class_names[self.predict_index(clip)]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def xent_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    feats: np.ndarray,
    label_idx: np.ndarray,
    l2: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy (plus optional L2 on the weights) over a batch
    with analytic gradients."""
    logits = feats @ weights.T + bias
    probs = _softmax(logits)
    n = feats.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), label_idx] + 1e-300)))
    loss += 0.5 * l2 * float(np.sum(weights**2))
    delta = probs.copy()
    delta[np.arange(n), label_idx] -= 1.0
    grad_w = delta.T @ feats / n + l2 * weights
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def train_toy(
    dataset: SyntheticDataset,
    epochs: int = 60,
    learning_rate: float = 0.5,
    seed: int = 0,
    batch_size: int | None = 32,
    normalize_input: bool = True,
    mel_filter_count: int = 40,
    l2: float = 0.01,
) -> ToyModel:
    """Train the toy classifier with seeded mini-batch gradient descent.

    batch_size=None runs full-batch updates (loss then decreases
    monotonically for small enough learning rates).
    """
    names = dataset.class_names
    index_of = {tok: i for i, tok in enumerate(names)}
    feats_raw = []
    for clip in dataset.clips:
        if normalize_input:
            peak = clip.peak()
            if peak > 0.0:
                clip = clip.with_samples(clip.samples / peak)
        feats_raw.append(logmel_features(clip, mel_filter_count))
    feats_raw = np.stack(feats_raw)
    y = np.array([index_of[lab.token] for lab in dataset.labels])

    mean = feats_raw.mean(axis=0)
    # one shared scale: per-band scaling would blow up near-constant
    # (noise-floor) bands and make the model hypersensitive to them
    std = np.full(feats_raw.shape[1], max(float(feats_raw.std()), 1e-8))
    feats = (feats_raw - mean) / std

    rng = np.random.default_rng(seed)
    n, dim = feats.shape
    n_classes = len(names)
    weights = np.zeros((n_classes, dim))
    bias = np.zeros(n_classes)
    history = []
    bs = n if batch_size is None else min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            sel = order[start : start + bs]
            loss, grad_w, grad_b = xent_loss_and_grad(weights, bias, feats[sel], y[sel], l2)
            if not math.isfinite(loss):
                raise ArithmeticError(f"training diverged: loss={loss}")
            weights -= learning_rate * grad_w
            bias -= learning_rate * grad_b
        epoch_loss, _, _ = xent_loss_and_grad(weights, bias, feats, y, l2)
        history.append(epoch_loss)

    return ToyModel(
        class_names=names,
        weights=weights,
        bias=bias,
        feature_mean=mean,
        feature_std=std,
        mel_filter_count=mel_filter_count,
        normalize_input=normalize_input,
        loss_history=tuple(history),
    )


def eval_attack(
    model: ToyModel,
    dataset: SyntheticDataset,
    spec: TriggerSpec,
    target_label: Label,
) -> AttackReport:
    """Attack success rate on triggered non-target clips, plus clean
    accuracy, both over the supplied (holdout) dataset."""
    correct = 0
    hits = 0
    non_target = 0
    for clip, lab in zip(dataset.clips, dataset.labels):
        if model.predict_label(clip) == lab.token:
            correct += 1
        if lab != target_label:
            non_target += 1
            if model.predict_label(inject_trigger(clip, spec)) == target_label.token:
                hits += 1
    asr = hits / non_target if non_target else 0.0
    return AttackReport(asr=asr, ba=correct / len(dataset))


# -- model persistence ---------------------------------------------------------

_MODEL_VERSION = 1


def save_model(model: ToyModel, path: str | Path) -> None:
    doc = {
        "version": _MODEL_VERSION,
        "class_names": list(model.class_names),
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "mel_filter_count": model.mel_filter_count,
        "frame_ms": model.frame_ms,
        "hop_ms": model.hop_ms,
        "normalize_input": model.normalize_input,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> ToyModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot load model from {path}: {exc}") from exc
    if doc.get("version") != _MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    return ToyModel(
        class_names=tuple(doc["class_names"]),
        weights=np.array(doc["weights"]),
        bias=np.array(doc["bias"]),
        feature_mean=np.array(doc["feature_mean"]),
        feature_std=np.array(doc["feature_std"]),
        mel_filter_count=int(doc["mel_filter_count"]),
        frame_ms=float(doc["frame_ms"]),
        hop_ms=float(doc["hop_ms"]),
        normalize_input=bool(doc["normalize_input"]),
    )
