import numpy as np
import pytest

from pawpulse.core import CalibrationCoeffs, DEFAULT_COEFFS
from pawpulse.errors import ConfigError, RangeError
from pawpulse.synth import ArtifactKind, SynthProfile, generate, inject_artifacts
from pawpulse.vitals import RatioWindow, clamp_spo2, compute_ratio, spo2_estimate


def test_frame_count_and_beat_count():
    profile = SynthProfile(true_bpm=60.0, seed=1)
    frames, truth = generate(profile, 10.0, 100.0)
    assert len(frames) == 1000
    assert len(truth.beat_times_ms) in (10, 11)


def test_determinism_bit_identical():
    profile = SynthProfile(true_bpm=75.0, noise_std_counts=150.0, seed=42)
    frames_a, truth_a = generate(profile, 5.0, 100.0)
    frames_b, truth_b = generate(profile, 5.0, 100.0)
    assert frames_a == frames_b
    assert truth_a == truth_b


def test_different_seeds_differ():
    base = dict(true_bpm=75.0, noise_std_counts=150.0)
    frames_a, _ = generate(SynthProfile(seed=1, **base), 5.0, 100.0)
    frames_b, _ = generate(SynthProfile(seed=2, **base), 5.0, 100.0)
    assert frames_a != frames_b


def test_beat_gaps_at_120_bpm():
    profile = SynthProfile(true_bpm=120.0, noise_std_counts=0.0, seed=0)
    _, truth = generate(profile, 30.0, 100.0)
    gaps = np.diff(truth.beat_times_ms)
    assert np.all(np.abs(gaps - 500.0) <= 1.0)


@pytest.mark.parametrize("bpm", [30.0, 60.0, 90.0, 160.0, 220.0])
def test_exactly_one_local_max_per_beat(bpm):
    profile = SynthProfile(true_bpm=bpm, noise_std_counts=0.0, seed=0)
    frames, truth = generate(profile, 30.0, 100.0)
    ir = np.array([f.ir for f in frames], dtype=float)
    interior = ir[1:-1]
    maxima = np.nonzero((interior > ir[:-2]) & (interior > ir[2:]))[0] + 1
    assert len(maxima) == len(truth.beat_times_ms)
    # each maximum sits on (or next to) a true beat center
    times = np.array([frames[i].timestamp_ms for i in maxima], dtype=float)
    dist = np.min(np.abs(times[:, None] - np.array(truth.beat_times_ms)[None, :]), axis=1)
    assert dist.max() <= 0.25 * 60_000.0 / bpm


def test_bpm_schedule():
    profile = SynthProfile(true_bpm=[(0.0, 60.0), (10.0, 120.0)], seed=0)
    _, truth = generate(profile, 20.0, 100.0)
    beats = np.array(truth.beat_times_ms)
    early = np.diff(beats[beats < 9_000])
    late = np.diff(beats[beats > 11_000])
    assert np.all(np.abs(early - 1000.0) <= 1.0)
    assert np.all(np.abs(late - 500.0) <= 1.0)


@pytest.mark.parametrize("spo2", [90.0, 95.0, 99.0])
def test_oracle_spo2_consistency(spo2):
    """Ratio + calibration applied to a noiseless window recovers the truth."""
    profile = SynthProfile(true_bpm=80.0, true_spo2_pct=spo2, noise_std_counts=0.0, seed=0)
    frames, _ = generate(profile, 10.0, 100.0)
    for end in (3000, 6000, 9999):
        window = RatioWindow.from_frames(frames, window_ms=1000, end_ms=end)
        estimate = clamp_spo2(spo2_estimate(compute_ratio(window), DEFAULT_COEFFS))
        assert estimate == pytest.approx(spo2, abs=0.5)


def test_oracle_consistency_with_custom_coeffs():
    coeffs = CalibrationCoeffs(a=104.0, b=17.0)
    profile = SynthProfile(true_bpm=70.0, true_spo2_pct=93.0, noise_std_counts=0.0, seed=0)
    frames, _ = generate(profile, 6.0, 100.0, coeffs=coeffs)
    window = RatioWindow.from_frames(frames, window_ms=1000, end_ms=5000)
    estimate = clamp_spo2(spo2_estimate(compute_ratio(window), coeffs))
    assert estimate == pytest.approx(93.0, abs=0.5)


def test_explicit_dc_red_overrides_derivation():
    """Setting dc_red pins the red baseline and voids the SpO2 guarantee."""
    profile = SynthProfile(true_bpm=80.0, dc_red=40_000.0, dc_ir=80_000.0, seed=0)
    frames, _ = generate(profile, 5.0, 100.0)
    red_mean = np.mean([f.red for f in frames])
    assert red_mean == pytest.approx(40_000.0, rel=0.05)
    window = RatioWindow.from_frames(frames, window_ms=1000, end_ms=4000)
    assert compute_ratio(window) == pytest.approx(0.5, abs=0.01)


class TestProfileValidation:
    def test_bpm_out_of_range(self):
        with pytest.raises(ConfigError):
            SynthProfile(true_bpm=500.0)
        with pytest.raises(ConfigError):
            SynthProfile(true_bpm=10.0)

    def test_spo2_out_of_range(self):
        with pytest.raises(ConfigError):
            SynthProfile(true_spo2_pct=50.0)

    def test_ac_fraction_bounds(self):
        with pytest.raises(ConfigError):
            SynthProfile(ac_amplitude_fraction=0.0)
        with pytest.raises(ConfigError):
            SynthProfile(ac_amplitude_fraction=0.2)

    def test_too_few_samples(self):
        with pytest.raises(ConfigError):
            generate(SynthProfile(), 0.005, 100.0)

    def test_fs_too_high_for_ms_timestamps(self):
        with pytest.raises(ConfigError):
            generate(SynthProfile(), 1.0, 2000.0)


class TestInjectArtifacts:
    def setup_method(self):
        self.frames, _ = generate(SynthProfile(true_bpm=60.0, seed=3), 10.0, 100.0)

    def test_dropout_zeroes_window(self):
        out = inject_artifacts(self.frames, ArtifactKind.DROPOUT, 2000, 500)
        for orig, new in zip(self.frames, out):
            if 2000 <= orig.timestamp_ms < 2500:
                assert new.red == 0 and new.ir == 0
            else:
                assert new == orig

    def test_zero_duration_is_identity(self):
        out = inject_artifacts(self.frames, ArtifactKind.MOTION_SPIKE, 2000, 0)
        assert out == list(self.frames)

    def test_window_outside_extent_rejected(self):
        with pytest.raises(RangeError):
            inject_artifacts(self.frames, ArtifactKind.DROPOUT, 9_800, 500)

    def test_spike_exceeds_ten_times_ac(self):
        out = inject_artifacts(self.frames, ArtifactKind.MOTION_SPIKE, 4000, 250, seed=1)
        ir_orig = np.array([f.ir for f in self.frames], dtype=float)
        ir_new = np.array([f.ir for f in out], dtype=float)
        excursion = np.abs(ir_new - ir_orig)
        assert excursion.max() >= 10.0 * np.ptp(ir_orig)

    def test_spike_outside_window_untouched(self):
        out = inject_artifacts(self.frames, ArtifactKind.MOTION_SPIKE, 4000, 250, seed=1)
        for orig, new in zip(self.frames, out):
            if not 4000 <= orig.timestamp_ms < 4250:
                assert new == orig

    def test_spike_deterministic_per_seed(self):
        a = inject_artifacts(self.frames, ArtifactKind.MOTION_SPIKE, 4000, 250, seed=9)
        b = inject_artifacts(self.frames, ArtifactKind.MOTION_SPIKE, 4000, 250, seed=9)
        assert a == b
