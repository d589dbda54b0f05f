import numpy as np
import pytest

from stepaudit.audio import AudioClip, rms
from stepaudit.perturb import (
    ADDITIVE_NOISE,
    DEREVERB,
    DISTORTION_KINDS,
    LOWPASS,
    RESAMPLE,
    RIR_CONVOLVE,
    SPEED_PERTURB,
    DistortionConfig,
    DistortionSuite,
    MixConfig,
    apply_distortion,
    default_suite,
    superimpose,
    synth_rir,
)

from conftest import RATE, tone


class TestConfigValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DistortionConfig("chorus", {"depth": 1.0})

    def test_missing_params(self):
        with pytest.raises(ValueError):
            DistortionConfig(ADDITIVE_NOISE, {})

    @pytest.mark.parametrize(
        "kind,params",
        [
            (ADDITIVE_NOISE, {"snr_db": float("inf")}),
            (RIR_CONVOLVE, {"rt60_s": 0.0}),
            (DEREVERB, {"attenuation_db": -1.0, "window_ms": 32.0}),
            (RESAMPLE, {"intermediate_hz": -8000.0}),
            (LOWPASS, {"cutoff_hz": 0.0}),
            (SPEED_PERTURB, {"factor": 0.0}),
        ],
    )
    def test_bad_params(self, kind, params):
        with pytest.raises(ValueError):
            DistortionConfig(kind, params)

    def test_mix_alpha_bounds(self):
        with pytest.raises(ValueError):
            MixConfig(alphas=(0.3, 1.0))
        with pytest.raises(ValueError):
            MixConfig(alphas=())
        with pytest.raises(ValueError):
            MixConfig(draws_per_alpha=0)

    def test_suite_json_round_trip(self):
        suite = default_suite(3)
        again = DistortionSuite.from_json(suite.to_json())
        assert again == suite
        assert again.hash() == suite.hash()


class TestApplyDistortion:
    @pytest.mark.parametrize("config", list(default_suite(0)), ids=lambda c: c.kind)
    def test_fixed_length_contract(self, config):
        clip = tone(700.0)
        out = apply_distortion(clip, config)
        assert len(out) == len(clip)
        assert out.sample_rate_hz == clip.sample_rate_hz

    @pytest.mark.parametrize("config", list(default_suite(0)), ids=lambda c: c.kind)
    def test_deterministic(self, config):
        clip = tone(700.0)
        a = apply_distortion(clip, config)
        b = apply_distortion(clip, config)
        assert np.array_equal(a.samples, b.samples)

    def test_lowpass_passband_identity(self):
        clip = tone(100.0)
        cfg = DistortionConfig(LOWPASS, {"cutoff_hz": RATE / 2 - 10.0})
        out = apply_distortion(clip, cfg)
        assert np.corrcoef(clip.samples, out.samples)[0, 1] >= 0.99

    def test_additive_noise_hits_target_snr(self):
        clip = tone(440.0)
        cfg = DistortionConfig(ADDITIVE_NOISE, {"snr_db": 20.0}, seed=5)
        out = apply_distortion(clip, cfg)
        noise = out.samples - clip.samples
        measured = 20 * np.log10(rms(clip) / np.sqrt(np.mean(noise**2)))
        assert measured == pytest.approx(20.0, abs=0.5)

    def test_additive_noise_on_silence_is_identity(self):
        clip = AudioClip(np.zeros(1000), RATE)
        out = apply_distortion(clip, DistortionConfig(ADDITIVE_NOISE, {"snr_db": 10.0}))
        assert np.array_equal(out.samples, clip.samples)

    def test_speed_length_arithmetic(self):
        clip = tone(440.0)  # 16000 samples
        cfg = DistortionConfig(SPEED_PERTURB, {"factor": 1.1})
        out = apply_distortion(clip, cfg)
        assert len(out) == 16000
        internal = round(16000 / 1.1)  # 14545 samples of signal, zero tail
        assert internal == 14545
        tail = out.samples[internal + 16 :]
        assert np.max(np.abs(tail)) == 0.0

    def test_noise_l2_monotone_in_snr(self):
        clip = tone(440.0)
        dists = []
        for snr in (0.0, 10.0, 20.0, 40.0):
            out = apply_distortion(clip, DistortionConfig(ADDITIVE_NOISE, {"snr_db": snr}, seed=1))
            dists.append(np.linalg.norm(out.samples - clip.samples))
        assert all(a >= b for a, b in zip(dists, dists[1:]))

    def test_lowpass_rejects_cutoff_at_nyquist(self):
        clip = tone(440.0)
        with pytest.raises(ValueError):
            apply_distortion(clip, DistortionConfig(LOWPASS, {"cutoff_hz": RATE / 2}))


class TestSuperimpose:
    def test_alpha_one_identity(self, sine_clip):
        donor = tone(900.0)
        out = superimpose(sine_clip, donor, 1.0)
        assert np.array_equal(out.samples, sine_clip.samples)

    def test_arithmetic(self):
        x = AudioClip(np.full(10, 0.8), RATE)
        r = AudioClip(np.full(10, -0.4), RATE)
        out = superimpose(x, r, 0.5)
        assert np.allclose(out.samples, 0.2)

    def test_self_mix_fixed_point(self, sine_clip):
        out = superimpose(sine_clip, sine_clip, 0.3)
        assert np.allclose(out.samples, sine_clip.samples, atol=1e-12)

    def test_short_donor_cyclic_tiling(self):
        x = AudioClip(np.zeros(6), RATE)
        r = AudioClip(np.array([1.0, 2.0]), RATE)
        out = superimpose(x, r, 0.5)
        assert np.allclose(out.samples, [0.5, 1.0, 0.5, 1.0, 0.5, 1.0])

    def test_affine_identity(self):
        rng = np.random.default_rng(7)
        x = AudioClip(rng.uniform(-1, 1, 500), RATE)
        r = AudioClip(rng.uniform(-1, 1, 500), RATE)
        lhs = superimpose(x, r, 0.3).samples + superimpose(r, x, 0.3).samples
        assert np.max(np.abs(lhs - (x.samples + r.samples))) < 1e-9

    def test_rate_mismatch(self, sine_clip):
        with pytest.raises(ValueError):
            superimpose(sine_clip, tone(440.0, rate=8000), 0.5)

    def test_no_clipping_applied(self):
        x = AudioClip(np.full(4, 0.9), RATE)
        r = AudioClip(np.full(4, 0.9), RATE)
        out = superimpose(x, r, 0.5)
        assert np.allclose(out.samples, 0.9)
        big = superimpose(AudioClip(np.full(4, 2.0), RATE), r, 0.9)
        assert np.all(big.samples > 1.0)


class TestDefaultSuite:
    def test_has_eleven_configs(self):
        assert len(default_suite(0)) == 11

    def test_deterministic(self):
        assert default_suite(0) == default_suite(0)
        assert default_suite(0).hash() == default_suite(0).hash()

    def test_different_seeds_differ(self):
        assert default_suite(0) != default_suite(1)

    def test_every_kind_present(self):
        kinds = {c.kind for c in default_suite(0)}
        assert kinds == set(DISTORTION_KINDS)


def test_synth_rir_is_deterministic_and_decays():
    a = synth_rir(0.3, 11, RATE)
    b = synth_rir(0.3, 11, RATE)
    assert np.array_equal(a.samples, b.samples)
    assert a.samples[0] == 1.0
    head = np.abs(a.samples[1:200]).mean()
    tail = np.abs(a.samples[-200:]).mean()
    assert tail < head
