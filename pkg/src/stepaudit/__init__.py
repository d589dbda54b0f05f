"""stepaudit: black-box, hard-label backdoor-trigger auditing for
deployed speech classifiers.

The toolkit profiles each input's prediction stability under two
complementary perturbation families, scores the profiles with
benign-only one-class detectors, and fuses the scores into a single
audit decision. Everything runs against a hard-label oracle: no logits,
no internals, no retraining.
"""

from .audio import AudioClip, read_wav, resample, convolve, rms, write_wav
from .detector import (
    DetectorBundle,
    DetectionResult,
    OneClassModel,
    detect,
    fit_bundle,
    load_bundle,
    save_bundle,
    train_ocsvm,
)
from .evaluate import EvalReport, ScenarioConfig, auroc, eer, run_experiment
from .oracle import Label, Oracle, OracleSpec, QueryStats
from .perturb import DistortionConfig, DistortionSuite, MixConfig, default_suite, superimpose
from .profiler import ReferencePool, StabilityProfile, profile

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "read_wav",
    "write_wav",
    "resample",
    "convolve",
    "rms",
    "DistortionConfig",
    "DistortionSuite",
    "MixConfig",
    "default_suite",
    "superimpose",
    "Label",
    "Oracle",
    "OracleSpec",
    "QueryStats",
    "ReferencePool",
    "StabilityProfile",
    "profile",
    "OneClassModel",
    "DetectorBundle",
    "DetectionResult",
    "train_ocsvm",
    "fit_bundle",
    "detect",
    "save_bundle",
    "load_bundle",
    "EvalReport",
    "ScenarioConfig",
    "auroc",
    "eer",
    "run_experiment",
    "__version__",
]
