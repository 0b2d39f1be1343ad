import math

import numpy as np
import pytest

from pawpulse.core import (
    CalibrationCoeffs,
    ContactState,
    PipelineConfig,
    SampleFrame,
)
from pawpulse.dsp import AcSample, remove_dc, smooth
from pawpulse.errors import (
    ConfigError,
    DegenerateFitError,
    DivisionGuardError,
    DomainError,
    EmptyWindowError,
    InsufficientDataError,
    OrderError,
)
from pawpulse.synth import SynthProfile, generate
from pawpulse.vitals import (
    BeatDetectorState,
    RatioWindow,
    VitalsPipeline,
    accept_bpm,
    beat_interval,
    clamp_spo2,
    compute_ratio,
    detect_beats,
    fit_calibration,
    instantaneous_bpm,
    rolling_average_bpm,
    spo2_estimate,
)


class TestBeatInterval:
    def test_half_second(self):
        assert beat_interval(1000, 1500) == 0.5

    def test_full_minute(self):
        assert beat_interval(0, 60_000) == 60.0

    def test_zero_interval_rejected(self):
        with pytest.raises(OrderError):
            beat_interval(500, 500)


class TestInstantaneousBpm:
    @pytest.mark.parametrize("dt,expected", [(0.5, 120.0), (1.0, 60.0), (0.25, 240.0)])
    def test_formula(self, dt, expected):
        assert instantaneous_bpm(dt) == expected

    def test_nonpositive_rejected(self):
        with pytest.raises(DomainError):
            instantaneous_bpm(0.0)
        with pytest.raises(DomainError):
            instantaneous_bpm(-1.0)

    def test_product_identity(self):
        rng = np.random.default_rng(1)
        for dt in rng.uniform(0.25, 2.0, size=1000):
            assert abs(instantaneous_bpm(dt) * dt - 60.0) < 1e-9


class TestAcceptBpm:
    def setup_method(self):
        self.config = PipelineConfig()

    def test_in_range_stored(self):
        state = accept_bpm(80.0, BeatDetectorState(), self.config)
        assert state.recent_bpm == [80.0]
        assert state.last_accepted_bpm == 80.0

    def test_out_of_range_dropped(self):
        state = BeatDetectorState(recent_bpm=[70.0])
        accept_bpm(240.0, state, self.config)
        assert state.recent_bpm == [70.0]
        assert state.last_accepted_bpm is None

    @pytest.mark.parametrize("bpm", [30.0, 220.0])
    def test_bounds_inclusive(self, bpm):
        state = accept_bpm(bpm, BeatDetectorState(), self.config)
        assert state.recent_bpm == [bpm]

    def test_window_eviction(self):
        state = BeatDetectorState()
        for bpm in (60.0, 62.0, 64.0, 66.0, 68.0):
            accept_bpm(bpm, state, self.config)
        assert state.recent_bpm == [62.0, 64.0, 66.0, 68.0]

    def test_gate_soundness_random(self):
        rng = np.random.default_rng(2)
        state = BeatDetectorState()
        for bpm in rng.uniform(0.0, 400.0, size=2000):
            accept_bpm(float(bpm), state, self.config)
            assert all(30.0 <= v <= 220.0 for v in state.recent_bpm)


class TestRollingAverage:
    def test_mean(self):
        state = BeatDetectorState(recent_bpm=[60.0, 62.0, 64.0])
        assert rolling_average_bpm(state) == pytest.approx(62.0)

    def test_empty(self):
        assert rolling_average_bpm(BeatDetectorState()) is None

    def test_singleton(self):
        assert rolling_average_bpm(BeatDetectorState(recent_bpm=[100.0])) == 100.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        config = PipelineConfig(avg_window_beats=6)
        state = BeatDetectorState()
        for bpm in rng.uniform(30.0, 220.0, size=500):
            accept_bpm(float(bpm), state, config)
            brute = math.fsum(state.recent_bpm) / len(state.recent_bpm)
            assert abs(rolling_average_bpm(state) - brute) < 1e-12


class TestRatio:
    def test_simple_division(self):
        window = RatioWindow(window_ms=1000, mean_red=30_000.0, mean_ir=60_000.0, sample_count=10)
        assert compute_ratio(window) == 0.5

    def test_equal_channels(self):
        window = RatioWindow(window_ms=1000, mean_red=5.0, mean_ir=5.0, sample_count=1)
        assert compute_ratio(window) == 1.0

    def test_zero_ir_guarded(self):
        window = RatioWindow(window_ms=1000, mean_red=5.0, mean_ir=0.0, sample_count=3)
        with pytest.raises(DivisionGuardError):
            compute_ratio(window)

    def test_empty_window_guarded(self):
        window = RatioWindow(window_ms=1000, mean_red=0.0, mean_ir=0.0, sample_count=0)
        with pytest.raises(EmptyWindowError):
            compute_ratio(window)

    def test_from_frames_trailing_window(self):
        frames = [SampleFrame(t, 100 + t, 200 + t) for t in range(0, 3000, 500)]
        window = RatioWindow.from_frames(frames, window_ms=1000, end_ms=2500)
        # frames at 2000 and 2500 fall in (1500, 2500]
        assert window.sample_count == 2
        assert window.mean_red == pytest.approx((2100 + 2600) / 2)


class TestSpo2:
    def test_examples(self):
        coeffs = CalibrationCoeffs(a=110.0, b=25.0)
        assert spo2_estimate(0.5, coeffs) == 97.5
        assert spo2_estimate(0.4, coeffs) == pytest.approx(100.0)
        assert spo2_estimate(5.0, coeffs) == -15.0

    def test_clamp(self):
        assert clamp_spo2(105.0) == 100.0
        assert clamp_spo2(-15.0) == 0.0
        assert clamp_spo2(97.5) == 97.5

    def test_clamp_idempotent(self):
        rng = np.random.default_rng(4)
        for raw in rng.uniform(-200.0, 300.0, size=1000):
            once = clamp_spo2(raw)
            assert clamp_spo2(once) == once
            assert 0.0 <= once <= 100.0

    def test_strictly_decreasing_in_ratio(self):
        coeffs = CalibrationCoeffs(a=104.0, b=17.0)
        rng = np.random.default_rng(5)
        ratios = np.sort(rng.uniform(0.0, 4.0, size=200))
        values = [spo2_estimate(r, coeffs) for r in ratios]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestFitCalibration:
    def test_exact_recovery(self):
        rng = np.random.default_rng(6)
        ratios = rng.uniform(0.3, 1.5, size=50)
        pairs = [(r, 104.0 - 20.0 * r) for r in ratios]
        coeffs = fit_calibration(pairs)
        assert coeffs.a == pytest.approx(104.0, abs=1e-9)
        assert coeffs.b == pytest.approx(20.0, abs=1e-9)

    def test_two_point_line(self):
        coeffs = fit_calibration([(0.5, 97.5), (1.0, 85.0)])
        assert coeffs.a == pytest.approx(110.0, abs=1e-9)
        assert coeffs.b == pytest.approx(25.0, abs=1e-9)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            fit_calibration([(0.5, 97.5)])

    def test_degenerate_ratios(self):
        with pytest.raises(DegenerateFitError):
            fit_calibration([(0.5, 97.5), (0.5, 96.0), (0.5, 95.0)])

    def test_unphysical_slope_rejected(self):
        with pytest.raises(ConfigError):
            fit_calibration([(0.5, 85.0), (1.0, 97.5)])  # spo2 rising with ratio

    def test_noisy_recovery_matches_independent_ols(self):
        rng = np.random.default_rng(7)
        ratios = rng.uniform(0.3, 1.6, size=200)
        spo2 = 110.0 - 25.0 * ratios + rng.normal(0.0, 0.5, size=200)
        pairs = list(zip(ratios, spo2))
        coeffs = fit_calibration(pairs)
        assert coeffs.a == pytest.approx(110.0, abs=0.5)
        assert coeffs.b == pytest.approx(25.0, abs=0.8)
        slope, intercept = np.polyfit(ratios, spo2, 1)
        assert coeffs.a == pytest.approx(float(intercept), abs=1e-9)
        assert coeffs.b == pytest.approx(float(-slope), abs=1e-9)


def preprocessed(frames, config=None):
    config = config or PipelineConfig()
    return smooth(
        remove_dc(frames, config.dc_window_s, fs_hz=config.sample_rate_hz),
        config.smooth_kernel,
    )


class TestDetectBeats:
    def test_noiseless_60bpm_count(self):
        frames, truth = generate(SynthProfile(true_bpm=60.0, seed=0), 60.0, 100.0)
        events, _ = detect_beats(preprocessed(frames), BeatDetectorState(), PipelineConfig())
        assert abs(len(events) - len(truth.beat_times_ms)) <= 1
        # detected times align with the oracle's beat centers
        truth_arr = np.array(truth.beat_times_ms)
        for event in events[1:]:
            assert np.min(np.abs(truth_arr - event.beat_time_ms)) <= 100

    def test_all_zero_input(self):
        samples = [AcSample(i * 10, 0.0, 0.0, 1000.0, 1000.0) for i in range(500)]
        events, _ = detect_beats(samples, BeatDetectorState(), PipelineConfig())
        assert events == []

    def test_refractory_suppresses_close_second_peak(self):
        # two strict local maxima 100 ms apart; the second is lower
        ac = [0.0] * 100
        ac[30] = 100.0
        ac[40] = 80.0
        samples = [AcSample(i * 10, v, v, 1000.0, 1000.0) for i, v in enumerate(ac)]
        events, _ = detect_beats(samples, BeatDetectorState(), PipelineConfig())
        assert len(events) == 1
        assert events[0].beat_time_ms == 300

    def test_higher_peak_in_refractory_relocates(self):
        ac = [0.0] * 100
        ac[30] = 80.0
        ac[40] = 100.0
        samples = [AcSample(i * 10, v, v, 1000.0, 1000.0) for i, v in enumerate(ac)]
        events, _ = detect_beats(samples, BeatDetectorState(), PipelineConfig())
        assert len(events) == 1
        assert events[0].beat_time_ms == 400

    def test_outlier_flagged_peak_ineligible(self):
        ac = [0.0] * 100
        ac[30] = 100.0
        samples = [
            AcSample(i * 10, v, v, 1000.0, 1000.0, outlier=(i == 30))
            for i, v in enumerate(ac)
        ]
        events, _ = detect_beats(samples, BeatDetectorState(), PipelineConfig())
        assert events == []

    def test_delta_t_matches_timestamps(self):
        frames, _ = generate(SynthProfile(true_bpm=90.0, seed=1), 20.0, 100.0)
        events, _ = detect_beats(preprocessed(frames), BeatDetectorState(), PipelineConfig())
        assert events[0].delta_t_s is None
        for prev, cur in zip(events, events[1:]):
            assert cur.delta_t_s == (cur.beat_time_ms - prev.beat_time_ms) / 1000.0

    def test_chunked_equals_batch(self):
        frames, _ = generate(
            SynthProfile(true_bpm=75.0, noise_std_counts=60.0, seed=9), 30.0, 100.0
        )
        samples = preprocessed(frames)
        batch_events, _ = detect_beats(samples, BeatDetectorState(), PipelineConfig())

        state = BeatDetectorState()
        chunked_events = []
        rng = np.random.default_rng(10)
        pos = 0
        while pos < len(samples):
            size = int(rng.integers(1, 150))
            events, state = detect_beats(samples[pos : pos + size], state, PipelineConfig())
            chunked_events.extend(events)
            pos += size
        assert chunked_events == batch_events

    def test_threshold_tracks_peaks(self):
        frames, _ = generate(SynthProfile(true_bpm=60.0, seed=0), 20.0, 100.0)
        _, state = detect_beats(preprocessed(frames), BeatDetectorState(), PipelineConfig())
        assert state.adaptive_threshold > 0
        assert state.last_beat_time_ms is not None


class TestProcessTick:
    def test_oracle_90bpm_tick10(self):
        frames, _ = generate(SynthProfile(true_bpm=90.0, seed=1), 10.0, 100.0)
        estimates = VitalsPipeline().run(frames)
        assert len(estimates) == 10
        final = estimates[-1]
        assert final.tick_time_ms == 10_000
        assert final.contact is ContactState.CONTACT
        assert final.bpm_avg == pytest.approx(90.0, abs=3.0)

    def test_no_contact_throughout(self):
        frames, _ = generate(SynthProfile(true_bpm=90.0, dc_ir=10_000.0, seed=2), 5.0, 100.0)
        estimates = VitalsPipeline().run(frames)
        assert all(e.contact is ContactState.NO_CONTACT for e in estimates)
        assert all(
            e.bpm_instant is None and e.bpm_avg is None and e.spo2_pct is None
            for e in estimates
        )

    def test_replay_determinism(self):
        frames, _ = generate(
            SynthProfile(true_bpm=110.0, noise_std_counts=70.0, seed=3), 15.0, 100.0
        )
        first = VitalsPipeline().run(frames)
        second = VitalsPipeline().run(frames)
        assert first == second

    def test_spurious_short_interval_never_enters_average(self):
        """A 120 ms inter-beat artifact is either refractory-suppressed
        (defaults) or gate-dropped (short refractory); the stored window
        never sees a BPM outside the valid range."""
        period_ms = 500
        beat_times = list(range(250, 10_000, period_ms))
        spike_time = beat_times[8] + 120
        n = 1000
        ac = np.zeros(n)
        for bt in beat_times:
            ac[bt // 10] = 100.0
        ac[spike_time // 10] = 60.0
        samples = [AcSample(i * 10, v, v, 80_000.0, 80_000.0) for i, v in enumerate(ac)]

        for config in (PipelineConfig(), PipelineConfig(refractory_ms=50)):
            state = BeatDetectorState()
            events, state = detect_beats(samples, state, config)
            for event in events:
                if event.delta_t_s is not None:
                    accept_bpm(instantaneous_bpm(event.delta_t_s), state, config)
            assert all(30.0 <= bpm <= 220.0 for bpm in state.recent_bpm)
            # with the short refractory the artifact fires but 500 BPM is gated out
            if config.refractory_ms == 50:
                assert any(
                    event.delta_t_s is not None and event.delta_t_s <= 0.2
                    for event in events
                )

    def test_frames_out_of_order_rejected(self):
        pipeline = VitalsPipeline()
        frames = [SampleFrame(0, 100, 100), SampleFrame(0, 100, 100)]
        with pytest.raises(OrderError):
            pipeline.tick(frames)

    def test_spo2_oracle_noiseless(self):
        for spo2 in (90.0, 95.0, 99.0):
            frames, _ = generate(
                SynthProfile(true_bpm=80.0, true_spo2_pct=spo2, seed=4), 8.0, 100.0
            )
            estimates = VitalsPipeline().run(frames)
            assert estimates[-1].spo2_pct == pytest.approx(spo2, abs=1.0)

    def test_empty_tick_no_contact(self):
        pipeline = VitalsPipeline()
        estimate = pipeline.tick([])
        assert estimate.contact is ContactState.NO_CONTACT
        assert estimate.tick_time_ms == 1000
