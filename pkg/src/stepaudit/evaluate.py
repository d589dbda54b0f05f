"""Threshold-free metrics and audit-experiment orchestration.

AUROC follows the rank-sum (Mann-Whitney) convention with half credit
for ties; EER is the crossing of the convex frontier of achievable
(FPR, FNR) operating points with the diagonal, which handles tied and
coarsely quantized score lists exactly. run_experiment wires the whole
desk-scale protocol together: simulate an attack, calibrate the chosen
detector on benign references only, then score disjoint held-out benign
and triggered samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacksim import (
    RIR_TRANSFORM,
    SINE_TONE,
    AttackReport,
    PoisonPlan,
    SyntheticDataset,
    TriggerSpec,
    ToyModel,
    class_token,
    eval_attack,
    gen_dataset,
    inject_trigger,
    poison,
    stratified_split,
    train_toy,
)
from .baselines import neo_score, scale_up_score, teco_score
from .detector import DetectorBundle, detect, fit_bundle, split_indices
from .oracle import Label, Oracle, OracleSpec, InProcess
from .perturb import MixConfig, default_suite
from .profiler import ReferencePool, StabilityProfile, profile

__all__ = [
    "ScoredSample",
    "EvalReport",
    "ScenarioConfig",
    "ScenarioRun",
    "METHODS",
    "auroc",
    "eer",
    "roc_points",
    "run_experiment",
]

METHODS = ("step", "step-p", "step-b", "scale-up", "neo", "teco")


@dataclass(frozen=True)
class ScoredSample:
    score: float
    is_backdoor: bool
    sample_id: str = ""

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")


def _split_scores(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([s.score for s in samples if s.is_backdoor], dtype=np.float64)
    neg = np.array([s.score for s in samples if not s.is_backdoor], dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one backdoor and one benign sample")
    return pos, neg


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(samples: Sequence[ScoredSample]) -> float:
    """Probability a random backdoor sample outscores a random benign
    one, ties counting half (rank-sum statistic)."""
    pos, neg = _split_scores(samples)
    both = np.concatenate([pos, neg])
    ranks = _average_ranks(both)
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _operating_points(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """Achievable (FPR, FNR) pairs for the rule `flag iff score > t`,
    sweeping t over a sentinel below the scores plus every distinct
    score value."""
    scores = np.concatenate([pos, neg])
    thresholds = np.concatenate([[scores.min() - 1.0], np.unique(scores)])
    fpr = np.array([(neg > t).mean() for t in thresholds])
    fnr = np.array([(pos <= t).mean() for t in thresholds])
    return np.column_stack([fpr, fnr])


def _lower_frontier(points: np.ndarray) -> np.ndarray:
    """Convex lower-left frontier of (FPR, FNR) points: the curve of
    best achievable trade-offs, including threshold randomization."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    pareto: list[np.ndarray] = []
    for p in pts:
        if pareto and p[0] == pareto[-1][0]:
            continue  # same FPR, FNR no better (lexsort put the best first)
        if pareto and p[1] >= pareto[-1][1]:
            continue  # dominated: higher FPR without lower FNR
        pareto.append(p)
    hull: list[np.ndarray] = []
    for p in pareto:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if cross <= 0.0:  # b on or above the chord a-p: not on the lower hull
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull)


def eer(samples: Sequence[ScoredSample]) -> float:
    """Equal error rate: where the convex frontier of achievable
    (FPR, FNR) trade-offs crosses FPR = FNR, interpolating linearly
    between the adjacent operating points around the sign change."""
    pos, neg = _split_scores(samples)
    frontier = _lower_frontier(_operating_points(pos, neg))
    diff = frontier[:, 0] - frontier[:, 1]
    for i in range(len(frontier)):
        if abs(diff[i]) < 1e-15:
            return float(frontier[i, 0])
        if i + 1 < len(frontier) and diff[i] * diff[i + 1] < 0.0:
            s = diff[i] / (diff[i] - diff[i + 1])
            return float(frontier[i, 0] + s * (frontier[i + 1, 0] - frontier[i, 0]))
    # frontier spans diff in [-1, 1] by construction; fall back to the
    # point closest to the diagonal if numeric degeneracy intervenes
    i = int(np.argmin(np.abs(diff)))  # pragma: no cover
    return float((frontier[i, 0] + frontier[i, 1]) / 2.0)  # pragma: no cover


def roc_points(samples: Sequence[ScoredSample]) -> list[tuple[float, float]]:
    """Standard ROC staircase from (0,0) to (1,1), descending thresholds."""
    pos, neg = _split_scores(samples)
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i : j + 1].sum())
        fp += (j - i + 1) - int(labels[i : j + 1].sum())
        points.append((fp / neg.size, tp / pos.size))
        i = j + 1
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


@dataclass(frozen=True)
class EvalReport:
    """Metrics plus full provenance for one audit run."""

    method: str
    scenario: str
    auroc: float
    eer: float
    roc: list[tuple[float, float]]
    n_pos: int
    n_neg: int
    query_stats: dict
    config_hashes: dict
    seeds: dict
    attack: dict | None = None

    def to_json(self) -> dict:
        doc = {
            "method": self.method,
            "scenario": self.scenario,
            "auroc": self.auroc,
            "eer": self.eer,
            "roc": [[f, t] for f, t in self.roc],
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "queries": self.query_stats,
            "config_hashes": self.config_hashes,
            "seeds": self.seeds,
        }
        if self.attack is not None:
            doc["attack"] = self.attack
        return doc

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def _default_trigger() -> TriggerSpec:
    return TriggerSpec(SINE_TONE, {"freq_hz": 4000.0, "amplitude": 0.05})


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete, seeded desk-scale audit scenario."""

    name: str = "sine-tone"
    seed: int = 0
    class_count: int = 10
    per_class: int = 30
    duration_s: float = 1.0
    sample_rate_hz: int = 16_000
    trigger: TriggerSpec = field(default_factory=_default_trigger)
    poison_rate: float = 0.2
    target_class: int = 4
    train_per_class: int = 15
    ref_per_class: int = 5
    test_benign_per_class: int = 5
    test_trigger_per_class: int = 5
    epochs: int = 60
    learning_rate: float = 0.5
    l2: float = 0.01
    normalize_input: bool = True
    suite_seed: int = 0
    mix: MixConfig = field(default_factory=MixConfig)
    # benign references include target-class clips (1/class_count of the
    # pool); nu must stay above that contamination fraction or the dual
    # collapses onto their zero-flip profiles
    nu: float = 0.2
    target_fpr: float = 0.05
    train_frac: float = 0.6

    @property
    def target_label(self) -> Label:
        return Label(class_token(self.target_class))

    def seeds(self) -> dict:
        return {
            "scenario": self.seed,
            "suite": self.suite_seed,
            "mix": self.mix.rng_seed,
        }


class ScenarioRun:
    """Lazily materialized artifacts of one scenario: dataset, models,
    calibration, and per-method score lists. Profiling happens once and
    is shared by the fused detector and both single-branch ablations."""

    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self._dataset: SyntheticDataset | None = None
        self._splits: list[SyntheticDataset] | None = None
        self._model: ToyModel | None = None
        self._clean_model: ToyModel | None = None
        self._attack: AttackReport | None = None
        self._oracle: Oracle | None = None
        self._bundle: DetectorBundle | None = None
        self._test_results: list[tuple[str, bool, object]] | None = None
        self.suite = default_suite(config.suite_seed)

    # -- data and models -------------------------------------------------------

    @property
    def dataset(self) -> SyntheticDataset:
        if self._dataset is None:
            c = self.config
            self._dataset = gen_dataset(
                c.seed, c.class_count, c.per_class, c.duration_s, c.sample_rate_hz
            )
        return self._dataset

    def _split(self) -> list[SyntheticDataset]:
        if self._splits is None:
            c = self.config
            sizes = (
                c.train_per_class,
                c.ref_per_class,
                c.test_benign_per_class,
                c.test_trigger_per_class,
            )
            self._splits = stratified_split(self.dataset, sizes, seed=c.seed + 1)
        return self._splits

    @property
    def train_set(self) -> SyntheticDataset:
        return self._split()[0]

    @property
    def reference_set(self) -> SyntheticDataset:
        return self._split()[1]

    @property
    def test_benign(self) -> SyntheticDataset:
        return self._split()[2]

    @property
    def test_trigger_sources(self) -> SyntheticDataset:
        return self._split()[3]

    @property
    def model(self) -> ToyModel:
        if self._model is None:
            c = self.config
            plan = PoisonPlan(c.poison_rate, self.config.target_label, seed=c.seed + 2)
            poisoned, _ = poison(self.train_set, plan, c.trigger)
            self._model = train_toy(
                poisoned, c.epochs, c.learning_rate, seed=c.seed + 3,
                normalize_input=c.normalize_input, l2=c.l2,
            )
        return self._model

    @property
    def clean_model(self) -> ToyModel:
        if self._clean_model is None:
            c = self.config
            self._clean_model = train_toy(
                self.train_set, c.epochs, c.learning_rate, seed=c.seed + 3,
                normalize_input=c.normalize_input, l2=c.l2,
            )
        return self._clean_model

    @property
    def attack(self) -> AttackReport:
        if self._attack is None:
            holdout = self.test_benign
            self._attack = eval_attack(self.model, holdout, self.config.trigger,
                                       self.config.target_label)
        return self._attack

    def attack_summary(self) -> dict:
        clean_ba = eval_attack(self.clean_model, self.test_benign, self.config.trigger,
                               self.config.target_label).ba
        return {
            "asr": self.attack.asr,
            "ba": self.attack.ba,
            "ba_clean": clean_ba,
            "ba_drop": clean_ba - self.attack.ba,
        }

    # -- audit machinery --------------------------------------------------------

    @property
    def oracle(self) -> Oracle:
        if self._oracle is None:
            self._oracle = Oracle(
                OracleSpec(InProcess(self.model.predict_label), self.config.normalize_input)
            )
        return self._oracle

    @property
    def pool(self) -> ReferencePool:
        return ReferencePool(self.reference_set.clips, rng_seed=self.config.seed + 4)

    @property
    def triggered_clips(self) -> list:
        return [inject_trigger(c, self.config.trigger) for c in self.test_trigger_sources.clips]

    @property
    def bundle(self) -> DetectorBundle:
        if self._bundle is None:
            c = self.config
            ref_profiles = [
                profile(clip, self.oracle, self.suite, self.pool, c.mix)
                for clip in self.reference_set.clips
            ]
            train_idx, val_idx = split_indices(len(ref_profiles), c.train_frac, seed=c.seed + 5)
            self._bundle = fit_bundle(
                [ref_profiles[i] for i in train_idx],
                [ref_profiles[i] for i in val_idx],
                nu=c.nu,
                target_fpr=c.target_fpr,
                suite_hash=self.suite.hash(),
                mix_hash=c.mix.hash(),
            )
        return self._bundle

    def _detections(self) -> list[tuple[str, bool, object]]:
        """(sample_id, is_backdoor, DetectionResult) for every test clip."""
        if self._test_results is None:
            results = []
            for i, clip in enumerate(self.test_benign.clips):
                prof = profile(clip, self.oracle, self.suite, self.pool, self.config.mix)
                results.append((f"benign_{i}", False, detect(self.bundle, prof)))
            for i, clip in enumerate(self.triggered_clips):
                prof = profile(clip, self.oracle, self.suite, self.pool, self.config.mix)
                results.append((f"triggered_{i}", True, detect(self.bundle, prof)))
            self._test_results = results
        return self._test_results

    def step_samples(self, variant: str = "step") -> list[ScoredSample]:
        """Scored test samples for the fused detector or one branch."""
        picker = {
            "step": lambda r: r.fused_score,
            "step-p": lambda r: r.s_p_hat,
            "step-b": lambda r: r.s_b_hat,
        }[variant]
        return [
            ScoredSample(picker(res), flag, sid) for sid, flag, res in self._detections()
        ]

    def step_decisions(self) -> list[tuple[str, bool, int]]:
        return [(sid, flag, res.decision) for sid, flag, res in self._detections()]

    def baseline_samples(self, method: str) -> list[ScoredSample]:
        """Per-sample baseline scores over the same test split."""
        c = self.config
        samples = []
        items = [(f"benign_{i}", False, clip) for i, clip in enumerate(self.test_benign.clips)]
        items += [(f"triggered_{i}", True, clip) for i, clip in enumerate(self.triggered_clips)]
        for n, (sid, flag, clip) in enumerate(items):
            if method == "scale-up":
                score = scale_up_score(clip, self.oracle)
            elif method == "neo":
                score = neo_score(clip, self.oracle, rng_seed=c.seed + 6 + n)
            elif method == "teco":
                score = teco_score(clip, self.oracle)
            else:
                raise ValueError(f"unknown baseline {method!r}")
            samples.append(ScoredSample(score, flag, sid))
        return samples

    def report(self, method: str) -> EvalReport:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        if method.startswith("step"):
            samples = self.step_samples(method)
        else:
            samples = self.baseline_samples(method)
        return EvalReport(
            method=method,
            scenario=self.config.name,
            auroc=auroc(samples),
            eer=eer(samples),
            roc=roc_points(samples),
            n_pos=sum(1 for s in samples if s.is_backdoor),
            n_neg=sum(1 for s in samples if not s.is_backdoor),
            query_stats=self.oracle.stats.to_json(),
            config_hashes={"suite": self.suite.hash(), "mix": self.config.mix.hash()},
            seeds=self.config.seeds(),
            attack=self.attack_summary(),
        )


def run_experiment(config: ScenarioConfig, method: str = "step") -> EvalReport:
    """End-to-end audit of one scenario with one detection method."""
    return ScenarioRun(config).report(method)


def sine_scenario() -> ScenarioConfig:
    """Canonical additive-trigger audit scenario."""
    return ScenarioConfig(name="sine-tone", seed=4)


def rir_scenario() -> ScenarioConfig:
    """Canonical transformation-trigger audit scenario."""
    return ScenarioConfig(
        name="rir-transform",
        seed=4,
        trigger=TriggerSpec(RIR_TRANSFORM, {"rt60_s": 0.6}, seed=7),
    )
