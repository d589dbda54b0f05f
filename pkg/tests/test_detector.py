import numpy as np
import pytest

from stepaudit.detector import (
    BundleFormatError,
    BundleVersionError,
    DetectorBundle,
    FusionModel,
    OneClassModel,
    ProfileMismatchError,
    ScoreNormalizer,
    anomaly_score,
    calibrate_tau,
    detect,
    dual_objective,
    estimate_beta,
    fit_bundle,
    fuse,
    load_bundle,
    normalize,
    save_bundle,
    split_indices,
    train_ocsvm,
)
from stepaudit.profiler import StabilityProfile

from helpers.qp_oracle import brute_force_qp, kkt_residual, qp_objective


def random_instance(rng, n, d):
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    return X


class TestQpOracleItself:
    """The brute-force reference must match hand arithmetic before it
    may judge the solver."""

    def test_two_point_analytic(self):
        # points 1-D: x1 = 1, x2 = 3; Q = [[1,3],[3,9]]; cap = 1 (nu=0.5)
        # objective 0.5*(a1 + 3 a2)^2 with a1 + a2 = 1 -> minimize at a2 = 0
        Q = np.array([[1.0, 3.0], [3.0, 9.0]])
        alpha, obj = brute_force_qp(Q, cap=1.0)
        assert np.allclose(alpha, [1.0, 0.0], atol=1e-9)
        assert obj == pytest.approx(0.5)

    def test_interior_analytic(self):
        # orthogonal unit vectors: Q = I; min 0.5*(a1^2+a2^2) at (0.5, 0.5)
        Q = np.eye(2)
        alpha, obj = brute_force_qp(Q, cap=1.0)
        assert np.allclose(alpha, [0.5, 0.5], atol=1e-9)
        assert obj == pytest.approx(0.25)


class TestTrainOcsvm:
    def test_identical_points_degenerate(self):
        x = np.array([0.3, -0.4, 0.6])
        model = train_ocsvm([x, x], nu=0.5)
        assert np.allclose(model.weights, x, atol=1e-8)
        assert anomaly_score(model, x) == pytest.approx(0.0, abs=1e-8)

    def test_six_point_instance_matches_brute_force(self):
        rng = np.random.default_rng(42)
        X = random_instance(rng, 6, 3)
        nu = 0.5
        model = train_ocsvm(X, nu)
        _, best = brute_force_qp(X @ X.T, cap=1.0 / (nu * 6))
        assert dual_objective(X, model.dual_coef) == pytest.approx(best, abs=1e-4)

    def test_nu_one_uniform_duals(self):
        rng = np.random.default_rng(1)
        X = random_instance(rng, 5, 3)
        model = train_ocsvm(X, nu=1.0)
        assert np.allclose(model.dual_coef, 0.2)

    def test_dual_feasibility_invariant(self):
        rng = np.random.default_rng(2)
        X = random_instance(rng, 20, 4)
        model = train_ocsvm(X, nu=0.25)
        cap = 1.0 / (0.25 * 20)
        assert model.dual_coef.sum() == pytest.approx(1.0, abs=1e-8)
        assert np.all(model.dual_coef >= -1e-12)
        assert np.all(model.dual_coef <= cap + 1e-12)

    def test_margin_sv_scores_zero(self):
        rng = np.random.default_rng(3)
        X = random_instance(rng, 12, 3)
        model = train_ocsvm(X, nu=0.4)
        cap = 1.0 / (0.4 * 12)
        interior = (model.dual_coef > 1e-7) & (model.dual_coef < cap - 1e-7)
        if interior.any():
            for x in X[interior]:
                assert anomaly_score(model, x) == pytest.approx(0.0, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            train_ocsvm([[1.0, 2.0], [1.0]], nu=0.5)

    def test_bad_nu(self):
        with pytest.raises(ValueError):
            train_ocsvm([[1.0], [2.0]], nu=0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_instances_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        d = int(rng.integers(1, 5))
        nu = float(rng.choice([0.2, 0.5, 1.0]))
        X = random_instance(rng, n, d)
        model = train_ocsvm(X, nu)
        cap = 1.0 / (nu * n)
        _, best = brute_force_qp(X @ X.T, cap=cap)
        assert dual_objective(X, model.dual_coef) <= best + 1e-4
        assert kkt_residual(X @ X.T, model.dual_coef, cap) <= 1e-6


class TestAnomalyScore:
    def test_affine_relation(self):
        rng = np.random.default_rng(4)
        X = random_instance(rng, 8, 3)
        model = train_ocsvm(X, nu=0.5)
        f1, f2 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        lhs = anomaly_score(model, f1) + anomaly_score(model, f2) - anomaly_score(model, f1 + f2)
        assert lhs == pytest.approx(model.offset_rho, abs=1e-9)

    def test_dimension_check(self):
        model = OneClassModel(np.array([1.0, 2.0]), 0.5, 0.5, 2, np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            anomaly_score(model, [1.0, 2.0, 3.0])


class TestNormalizer:
    def test_edges_and_midpoint(self):
        n = ScoreNormalizer(lo=2.0, hi=4.0)
        assert normalize(n, 2.0) == 0.0
        assert normalize(n, 4.0) == 1.0
        assert normalize(n, 3.0) == 0.5
        assert normalize(n, 1.0) == 0.0
        assert normalize(n, 9.0) == 1.0

    def test_degenerate(self):
        n = ScoreNormalizer(lo=0.3, hi=0.3)
        assert normalize(n, 0.3) == 0.0
        assert normalize(n, 0.31) == 1.0
        assert normalize(n, 0.29) == 0.0

    def test_from_scores_uses_order_statistics(self):
        scores = list(range(100))
        n = ScoreNormalizer.from_scores(scores)
        assert n.lo in scores and n.hi in scores

    def test_invalid(self):
        with pytest.raises(ValueError):
            ScoreNormalizer(lo=1.0, hi=0.0)


class TestFusion:
    def test_equal_variances(self):
        beta, _, _ = estimate_beta([0.1, 0.2, 0.3], [0.5, 0.6, 0.7])
        assert beta == pytest.approx(0.5)

    def test_spec_arithmetic_case(self):
        # population variances 0.01 and 0.04 -> beta = 0.2
        p = [0.0, 0.2, 0.0, 0.2]  # var 0.01
        b = [0.0, 0.4, 0.0, 0.4]  # var 0.04
        beta, sp2, sb2 = estimate_beta(p, b)
        assert sp2 == pytest.approx(0.01)
        assert sb2 == pytest.approx(0.04)
        assert beta == pytest.approx(0.2)

    def test_floor_limit(self):
        beta, _, sb2 = estimate_beta([0.0, 0.2, 0.0, 0.2], [0.5, 0.5, 0.5, 0.5])
        assert sb2 == pytest.approx(1e-12)
        assert beta == pytest.approx(1.0, abs=1e-6)

    def test_beta_scale_invariant(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0, 1, 30)
        b = rng.uniform(0, 1, 30)
        beta1, _, _ = estimate_beta(p, b)
        beta2, _, _ = estimate_beta(3.7 * p, 3.7 * b)
        assert beta1 == pytest.approx(beta2, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            estimate_beta([0.1], [0.2, 0.3])

    def test_fuse_endpoints_and_fixed_point(self):
        fm = FusionModel(beta=0.0, tau=0.5, sigma_p2=1.0, sigma_b2=1.0, target_fpr=0.05)
        assert fuse(fm, 0.7, 0.1) == pytest.approx(0.7)
        fm2 = FusionModel(beta=0.2, tau=0.5, sigma_p2=1.0, sigma_b2=1.0, target_fpr=0.05)
        assert fuse(fm2, 0.5, 1.0) == pytest.approx(0.6)
        for beta in (0.0, 0.3, 1.0):
            fm3 = FusionModel(beta=beta, tau=0.5, sigma_p2=1.0, sigma_b2=1.0, target_fpr=0.05)
            assert fuse(fm3, 0.42, 0.42) == pytest.approx(0.42)


class TestCalibrateTau:
    def test_exactly_five_percent_exceed(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(0, 1, 100)  # distinct almost surely
        tau = calibrate_tau(scores, 0.05)
        assert np.count_nonzero(scores > tau) == 5

    def test_constant_scores(self):
        assert calibrate_tau([0.4] * 10, 0.05) == pytest.approx(0.4)

    def test_two_point_case(self):
        assert calibrate_tau([0.1, 0.9], 0.5) == pytest.approx(0.1)

    def test_empty(self):
        with pytest.raises(ValueError):
            calibrate_tau([], 0.05)

    def test_calibration_fpr_never_exceeds_target(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            scores = rng.uniform(0, 1, int(rng.integers(5, 80)))
            fpr = float(rng.uniform(0.01, 0.5))
            tau = calibrate_tau(scores, fpr)
            assert np.count_nonzero(scores > tau) / scores.size <= fpr


def make_profiles(rng, n, d=4, k=3):
    out = []
    for _ in range(n):
        f_p = (rng.uniform(size=d) < 0.4).astype(float)
        f_b = rng.integers(0, 6, size=k) / 5.0
        out.append(StabilityProfile(f_p, f_b))
    return out


class TestBundle:
    def test_fit_detect_and_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        train = make_profiles(rng, 20)
        val = make_profiles(rng, 10)
        bundle = fit_bundle(train, val, nu=0.2, target_fpr=0.1,
                            suite_hash="s1", mix_hash="m1")
        prof = make_profiles(rng, 1)[0]
        result = detect(bundle, prof)
        assert 0.0 <= result.fused_score <= 1.0
        assert result.decision in (0, 1)

        path = tmp_path / "bundle.json"
        save_bundle(bundle, path)
        loaded = load_bundle(path)
        assert np.allclose(loaded.model_p.weights, bundle.model_p.weights, atol=1e-12)
        assert loaded.fusion.beta == pytest.approx(bundle.fusion.beta, abs=1e-12)
        assert loaded.suite_hash == bundle.suite_hash
        again = detect(loaded, prof)
        assert again.fused_score == pytest.approx(result.fused_score, abs=1e-12)
        assert again.decision == result.decision

    def test_tie_resolves_benign(self):
        rng = np.random.default_rng(9)
        bundle = fit_bundle(make_profiles(rng, 20), make_profiles(rng, 10),
                            suite_hash="s", mix_hash="m", nu=0.2)
        # force fused == tau by construction
        fm = FusionModel(beta=0.5, tau=0.5, sigma_p2=1.0, sigma_b2=1.0, target_fpr=0.05)
        object.__setattr__(bundle, "fusion", fm)
        prof = make_profiles(rng, 1)[0]
        res = detect(bundle, prof)
        if res.fused_score == pytest.approx(fm.tau):
            assert res.decision == 0

    def test_suite_hash_mismatch(self):
        rng = np.random.default_rng(10)
        bundle = fit_bundle(make_profiles(rng, 20), make_profiles(rng, 10),
                            suite_hash="AAA", mix_hash="m", nu=0.2)
        prof = StabilityProfile(np.zeros(4), np.zeros(3), suite_hash="BBB", mix_hash="m")
        with pytest.raises(ProfileMismatchError):
            detect(bundle, prof)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "trunc.json"
        path.write_text('{"version": 1, "model_p’')
        with pytest.raises(BundleFormatError):
            load_bundle(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9.json"
        path.write_text('{"version": 9}')
        with pytest.raises(BundleVersionError):
            load_bundle(path)


def test_split_indices_partition():
    train, val = split_indices(50, 0.6, seed=0)
    assert sorted(train + val) == list(range(50))
    assert len(train) == 30
    t2, v2 = split_indices(50, 0.6, seed=0)
    assert (train, val) == (t2, v2)
