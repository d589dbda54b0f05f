"""Benign-only anomaly scoring and the fused detection rule.

Each perturbation branch gets a linear one-class SVM trained on benign
stability features; raw scores are percentile-normalized, combined by
inverse-variance weighting, and compared against a threshold calibrated
to a target false-positive rate. The QP solver is implemented natively
(pairwise coordinate updates on the dual) so its KKT state is available
for verification.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .profiler import StabilityProfile

__all__ = [
    "OneClassModel",
    "ScoreNormalizer",
    "FusionModel",
    "DetectorBundle",
    "DetectionResult",
    "ConvergenceError",
    "BundleFormatError",
    "BundleVersionError",
    "ProfileMismatchError",
    "train_ocsvm",
    "anomaly_score",
    "normalize",
    "estimate_beta",
    "fuse",
    "calibrate_tau",
    "detect",
    "fit_bundle",
    "split_indices",
    "save_bundle",
    "load_bundle",
]

VARIANCE_FLOOR = 1e-12
BUNDLE_VERSION = 1


class ConvergenceError(Exception):
    """The dual solver hit its iteration cap above the KKT tolerance."""


class BundleFormatError(Exception):
    """Bundle file is not parseable as a detector bundle."""


class BundleVersionError(BundleFormatError):
    """Bundle file has an unsupported version."""


class ProfileMismatchError(Exception):
    """Profile provenance does not match the bundle's calibration
    configuration (suite or mix drift)."""


@dataclass(frozen=True)
class OneClassModel:
    """Trained linear one-class SVM for one branch.

    weights = sum_i alpha_i x_i over the benign training features;
    offset_rho is the margin level. Dual coefficients are retained so
    feasibility can be re-checked after the fact.
    """

    weights: np.ndarray
    offset_rho: float
    nu: float
    training_size: int
    dual_coef: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        a = np.asarray(self.dual_coef, dtype=np.float64)
        if w.ndim != 1 or a.ndim != 1:
            raise ValueError("weights and dual_coef must be 1-D")
        if a.size != self.training_size:
            raise ValueError("dual_coef length must equal training_size")
        w.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dual_coef", a)

    @property
    def dim(self) -> int:
        return int(self.weights.size)


def _initial_alpha(n: int, cap: float, nu: float) -> np.ndarray:
    """Feasible start: fill the box greedily until the mass sums to 1."""
    alpha = np.zeros(n)
    full = int(math.floor(nu * n))
    alpha[:full] = cap
    if full < n:
        alpha[full] = 1.0 - full * cap
    return alpha


def _kkt_residual(grad: np.ndarray, alpha: np.ndarray, cap: float, bound_tol: float) -> float:
    up = alpha < cap - bound_tol
    low = alpha > bound_tol
    if not up.any() or not low.any():
        return 0.0
    return max(0.0, float(grad[low].max() - grad[up].min()))


def train_ocsvm(
    features: Sequence[Sequence[float]],
    nu: float,
    tol: float = 1e-6,
    max_iter: int = 200_000,
) -> OneClassModel:
    """Solve the linear-kernel one-class SVM dual by pairwise coordinate
    updates.

    Minimizes 0.5 * a' Q a with Q_ij = <x_i, x_j> subject to
    0 <= a_i <= 1/(nu*n) and sum(a) = 1, moving mass between the most
    violating pair until the KKT residual drops below tol.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors of equal dimension")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    n = X.shape[0]
    cap = 1.0 / (nu * n)
    bound_tol = 1e-12 * max(cap, 1.0)

    Q = X @ X.T
    alpha = _initial_alpha(n, cap, nu)
    grad = Q @ alpha

    for _ in range(max_iter):
        up = np.flatnonzero(alpha < cap - bound_tol)
        low = np.flatnonzero(alpha > bound_tol)
        if up.size == 0 or low.size == 0:
            break
        i = up[np.argmin(grad[up])]
        j = low[np.argmax(grad[low])]
        violation = grad[j] - grad[i]
        if violation <= tol:
            break
        quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        step = violation / max(quad, 1e-12)
        step = min(step, cap - alpha[i], alpha[j])
        if step <= 0.0:
            break
        alpha[i] += step
        alpha[j] -= step
        grad += step * (Q[:, i] - Q[:, j])
    else:
        grad = Q @ alpha  # exact recompute for the report
        residual = _kkt_residual(grad, alpha, cap, bound_tol)
        if residual > tol:
            raise ConvergenceError(
                f"no convergence after {max_iter} iterations (KKT residual {residual:.3e})"
            )

    weights = alpha @ X
    projections = X @ weights
    sv_tol = 1e-9 * max(cap, 1.0)
    interior = (alpha > sv_tol) & (alpha < cap - sv_tol)
    support = alpha > sv_tol
    if interior.any():
        rho = float(projections[interior].mean())
    else:
        rho = float(projections[support].mean())
    return OneClassModel(
        weights=weights,
        offset_rho=rho,
        nu=float(nu),
        training_size=n,
        dual_coef=alpha,
    )


def dual_objective(features: Sequence[Sequence[float]], alpha: np.ndarray) -> float:
    """0.5 * a' Q a for a given dual point; exposed for verification."""
    X = np.asarray(features, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    v = a @ X
    return 0.5 * float(v @ v)


def anomaly_score(model: OneClassModel, f: Sequence[float]) -> float:
    """offset_rho - <weights, f>; larger means more anomalous, and benign
    interior points score <= 0."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (model.dim,):
        raise ValueError(f"feature dim {f.shape} does not match model dim {model.dim}")
    return float(model.offset_rho - model.weights @ f)


@dataclass(frozen=True)
class ScoreNormalizer:
    """Maps raw scores to [0, 1] between two benign-validation
    percentiles (order statistics, so any monotone rescoring of the
    stream moves both edges consistently)."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"lo ({self.lo}) must not exceed hi ({self.hi})")

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> "ScoreNormalizer":
        arr = np.asarray(scores, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("cannot fit a normalizer to an empty score list")
        lo = float(np.percentile(arr, 1, method="lower"))
        hi = float(np.percentile(arr, 99, method="higher"))
        return cls(lo=lo, hi=hi)


def normalize(n: ScoreNormalizer, s: float) -> float:
    """Clamped affine map to [0, 1]; a degenerate normalizer maps scores
    at or below the edge to 0 and everything above to 1."""
    if n.hi == n.lo:
        return 0.0 if s <= n.lo else 1.0
    return float(np.clip((s - n.lo) / (n.hi - n.lo), 0.0, 1.0))


@dataclass(frozen=True)
class FusionModel:
    """Inverse-variance fusion weight plus the calibrated threshold."""

    beta: float
    tau: float
    sigma_p2: float
    sigma_b2: float
    target_fpr: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if not 0.0 < self.target_fpr < 1.0:
            raise ValueError(f"target_fpr must be in (0, 1), got {self.target_fpr}")


def estimate_beta(
    scores_p: Sequence[float], scores_b: Sequence[float]
) -> tuple[float, float, float]:
    """Fusion weight from benign-validation score variances.

    Population variances are floored before inversion so a degenerate
    (constant-score) branch is weighted out rather than dividing by
    zero. Returns (beta, sigma_p2, sigma_b2).
    """
    sp = np.asarray(scores_p, dtype=np.float64)
    sb = np.asarray(scores_b, dtype=np.float64)
    if sp.size < 2 or sb.size < 2:
        raise ValueError("need at least 2 validation scores per branch")
    sigma_p2 = max(float(np.var(sp)), VARIANCE_FLOOR)
    sigma_b2 = max(float(np.var(sb)), VARIANCE_FLOOR)
    beta = (1.0 / sigma_b2) / (1.0 / sigma_p2 + 1.0 / sigma_b2)
    return beta, sigma_p2, sigma_b2


def fuse(fusion: FusionModel, s_p_hat: float, s_b_hat: float) -> float:
    """Convex combination (1 - beta) * s_p + beta * s_b."""
    return (1.0 - fusion.beta) * s_p_hat + fusion.beta * s_b_hat


def calibrate_tau(benign_fused_scores: Sequence[float], target_fpr: float) -> float:
    """Smallest benign score v such that the fraction of benign scores
    strictly above v is at most target_fpr."""
    scores = np.asarray(benign_fused_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold on an empty score list")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError(f"target_fpr must be in (0, 1), got {target_fpr}")
    n = scores.size
    for v in np.unique(scores):
        if np.count_nonzero(scores > v) / n <= target_fpr:
            return float(v)
    return float(scores.max())  # pragma: no cover - the max always qualifies


@dataclass(frozen=True)
class DetectorBundle:
    """Everything the online decision needs, bound to the exact
    perturbation configuration used at calibration."""

    model_p: OneClassModel
    model_b: OneClassModel
    norm_p: ScoreNormalizer
    norm_b: ScoreNormalizer
    fusion: FusionModel
    suite_hash: str
    mix_hash: str


@dataclass(frozen=True)
class DetectionResult:
    fused_score: float
    decision: int
    s_p_hat: float
    s_b_hat: float


def detect(bundle: DetectorBundle, prof: StabilityProfile) -> DetectionResult:
    """Score both branches, normalize, fuse, and apply the strict
    threshold rule (ties resolve to benign)."""
    if prof.suite_hash is not None and prof.suite_hash != bundle.suite_hash:
        raise ProfileMismatchError(
            f"profile suite hash {prof.suite_hash} != bundle {bundle.suite_hash}"
        )
    if prof.mix_hash is not None and prof.mix_hash != bundle.mix_hash:
        raise ProfileMismatchError(
            f"profile mix hash {prof.mix_hash} != bundle {bundle.mix_hash}"
        )
    s_p_hat = normalize(bundle.norm_p, anomaly_score(bundle.model_p, prof.f_p))
    s_b_hat = normalize(bundle.norm_b, anomaly_score(bundle.model_b, prof.f_b))
    fused = fuse(bundle.fusion, s_p_hat, s_b_hat)
    return DetectionResult(
        fused_score=fused,
        decision=int(fused > bundle.fusion.tau),
        s_p_hat=s_p_hat,
        s_b_hat=s_b_hat,
    )


def split_indices(n: int, train_frac: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle split of range(n) into train/validation indices."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = max(int(round(train_frac * n)), 1)
    cut = min(cut, n - 1)
    return sorted(int(i) for i in perm[:cut]), sorted(int(i) for i in perm[cut:])


def fit_bundle(
    train_profiles: Sequence[StabilityProfile],
    val_profiles: Sequence[StabilityProfile],
    nu: float = 0.05,
    target_fpr: float = 0.05,
    suite_hash: str = "",
    mix_hash: str = "",
) -> DetectorBundle:
    """Train both branch detectors on benign profiles and calibrate
    normalization, fusion weight, and threshold on the validation split."""
    if len(train_profiles) < 2 or len(val_profiles) < 2:
        raise ValueError("need at least 2 training and 2 validation profiles")
    model_p = train_ocsvm([p.f_p for p in train_profiles], nu)
    model_b = train_ocsvm([p.f_b for p in train_profiles], nu)

    raw_p = [anomaly_score(model_p, p.f_p) for p in val_profiles]
    raw_b = [anomaly_score(model_b, p.f_b) for p in val_profiles]
    norm_p = ScoreNormalizer.from_scores(raw_p)
    norm_b = ScoreNormalizer.from_scores(raw_b)
    hat_p = [normalize(norm_p, s) for s in raw_p]
    hat_b = [normalize(norm_b, s) for s in raw_b]

    beta, sigma_p2, sigma_b2 = estimate_beta(hat_p, hat_b)
    stub = FusionModel(beta=beta, tau=0.0, sigma_p2=sigma_p2, sigma_b2=sigma_b2,
                       target_fpr=target_fpr)
    fused_val = [fuse(stub, p, b) for p, b in zip(hat_p, hat_b)]
    tau = calibrate_tau(fused_val, target_fpr)
    fusion = FusionModel(beta=beta, tau=tau, sigma_p2=sigma_p2, sigma_b2=sigma_b2,
                         target_fpr=target_fpr)
    return DetectorBundle(
        model_p=model_p,
        model_b=model_b,
        norm_p=norm_p,
        norm_b=norm_b,
        fusion=fusion,
        suite_hash=suite_hash,
        mix_hash=mix_hash,
    )


# -- persistence ---------------------------------------------------------------


def _model_to_json(m: OneClassModel) -> dict:
    return {
        "weights": m.weights.tolist(),
        "offset_rho": m.offset_rho,
        "nu": m.nu,
        "training_size": m.training_size,
        "dual_coef": m.dual_coef.tolist(),
    }


def _model_from_json(obj: dict) -> OneClassModel:
    return OneClassModel(
        weights=np.array(obj["weights"], dtype=np.float64),
        offset_rho=float(obj["offset_rho"]),
        nu=float(obj["nu"]),
        training_size=int(obj["training_size"]),
        dual_coef=np.array(obj["dual_coef"], dtype=np.float64),
    )


def save_bundle(bundle: DetectorBundle, path: str | Path) -> None:
    doc = {
        "version": BUNDLE_VERSION,
        "model_p": _model_to_json(bundle.model_p),
        "model_b": _model_to_json(bundle.model_b),
        "norm": {
            "p": {"lo": bundle.norm_p.lo, "hi": bundle.norm_p.hi},
            "b": {"lo": bundle.norm_b.lo, "hi": bundle.norm_b.hi},
        },
        "fusion": {
            "beta": bundle.fusion.beta,
            "tau": bundle.fusion.tau,
            "sigma_p2": bundle.fusion.sigma_p2,
            "sigma_b2": bundle.fusion.sigma_b2,
            "target_fpr": bundle.fusion.target_fpr,
        },
        "suite_hash": bundle.suite_hash,
        "mix_hash": bundle.mix_hash,
    }
    Path(path).write_text(json.dumps(doc))


def load_bundle(path: str | Path) -> DetectorBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise BundleFormatError(f"cannot read bundle {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"bundle {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise BundleFormatError(f"bundle {path} lacks a version field")
    if doc["version"] != BUNDLE_VERSION:
        raise BundleVersionError(f"unsupported bundle version {doc['version']!r}")
    try:
        return DetectorBundle(
            model_p=_model_from_json(doc["model_p"]),
            model_b=_model_from_json(doc["model_b"]),
            norm_p=ScoreNormalizer(**doc["norm"]["p"]),
            norm_b=ScoreNormalizer(**doc["norm"]["b"]),
            fusion=FusionModel(**doc["fusion"]),
            suite_hash=doc["suite_hash"],
            mix_hash=doc["mix_hash"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"bundle {path} is structurally invalid: {exc}") from exc
