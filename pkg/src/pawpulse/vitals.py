"""Core estimators: beat detection, BPM, ratio-based SpO2, calibration,
and the per-tick state machine that ties them together.

Heart rate is derived from intervals between detected beats
(bpm = 60 / dt, averaged over the last N accepted values); blood oxygen
from the raw red/IR mean ratio through a linear calibration
(spo2 = a - b * ratio) clamped to [0, 100]. Both follow the AC/DC split
produced by the dsp stage.

Beat detection is adaptive-threshold peak picking on the smoothed AC IR
signal: a candidate local maximum becomes a pending beat when it exceeds
a fraction of the exponentially decayed rolling peak; any higher
candidate inside the refractory window relocates the pending peak, and
the beat is finalized once the refractory has elapsed. That makes the
detector robust to noise maxima on the systolic upstroke while keeping
emitted beats at least one refractory apart.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    BeatEvent,
    CalibrationCoeffs,
    ContactState,
    PipelineConfig,
    SampleFrame,
    VitalsEstimate,
    validate_frame,
)
from .dsp import AcSample, StreamingPreprocessor, contact_state
from .errors import (
    DegenerateFitError,
    DivisionGuardError,
    DomainError,
    EmptyWindowError,
    InsufficientDataError,
    OrderError,
)


@dataclass
class BeatDetectorState:
    """Mutable per-stream detector state.

    ``recent_bpm`` only ever holds values the valid-range gate accepted;
    ``adaptive_threshold`` is the acceptance bar as of the last beat
    (it decays between beats with the configured half-life).
    """

    last_beat_time_ms: int | None = None
    refractory_until_ms: int = 0
    adaptive_threshold: float = 0.0
    recent_bpm: list[float] = field(default_factory=list)
    last_accepted_bpm: float | None = None
    # rolling-peak tracker and pending-beat internals
    rolling_peak: float = 0.0
    rolling_peak_time_ms: int | None = None
    pending_time_ms: int | None = None
    pending_amp: float = 0.0
    prev_ac: float | None = None
    prev_prev_ac: float | None = None
    prev_time_ms: int | None = None
    prev_outlier: bool = False


def _decayed_peak(state: BeatDetectorState, t_ms: int, half_life_ms: float) -> float:
    if state.rolling_peak_time_ms is None:
        return state.rolling_peak
    return state.rolling_peak * 0.5 ** ((t_ms - state.rolling_peak_time_ms) / half_life_ms)


def _finalize_pending(
    state: BeatDetectorState,
    events: list[BeatEvent],
    config: PipelineConfig,
    half_life_ms: float,
) -> None:
    beat_time = state.pending_time_ms
    assert beat_time is not None
    delta = None
    if state.last_beat_time_ms is not None:
        delta = beat_interval(state.last_beat_time_ms, beat_time)
    events.append(BeatEvent(beat_time_ms=beat_time, delta_t_s=delta))
    state.rolling_peak = max(
        _decayed_peak(state, beat_time, half_life_ms), state.pending_amp
    )
    state.rolling_peak_time_ms = beat_time
    state.adaptive_threshold = config.peak_threshold_fraction * state.rolling_peak
    state.last_beat_time_ms = beat_time
    state.refractory_until_ms = beat_time + config.refractory_ms
    state.pending_time_ms = None
    state.pending_amp = 0.0


def detect_beats(
    samples: Sequence[AcSample], state: BeatDetectorState, config: PipelineConfig
) -> tuple[list[BeatEvent], BeatDetectorState]:
    """Detect beats in smoothed AC samples, carrying state across calls.

    Emits one BeatEvent per accepted peak; outlier-flagged samples are
    ineligible. The state is updated in place and returned. Quiescent
    input (no positive local maxima) emits nothing.
    """
    events: list[BeatEvent] = []
    if not samples:
        return events, state
    half_life_ms = config.peak_decay_half_life_s * 1000.0

    ac = np.array([s.ac_ir for s in samples])
    ts = np.array([s.timestamp_ms for s in samples], dtype=np.int64)
    flags = np.array([s.outlier for s in samples], dtype=bool)

    left_vals: list[float] = []
    left_ts: list[int] = []
    left_flags: list[bool] = []
    if state.prev_prev_ac is not None:
        left_vals.append(state.prev_prev_ac)
        left_ts.append(-1)  # never a candidate, placeholder time
        left_flags.append(True)
    if state.prev_ac is not None:
        left_vals.append(state.prev_ac)
        left_ts.append(state.prev_time_ms if state.prev_time_ms is not None else -1)
        left_flags.append(state.prev_outlier)

    vals = np.concatenate([left_vals, ac]) if left_vals else ac
    times = np.concatenate([left_ts, ts]) if left_ts else ts
    outliers = np.concatenate([left_flags, flags]) if left_flags else flags

    inner = slice(1, len(vals) - 1)
    mask = (
        (vals[inner] > vals[:-2])
        & (vals[inner] > vals[2:])
        & (vals[inner] > 0)
        & ~outliers[inner]
    )
    candidate_idx = np.nonzero(mask)[0] + 1

    for c in candidate_idx:
        t_c = int(times[c])
        a_c = float(vals[c])
        if (
            state.pending_time_ms is not None
            and t_c - state.pending_time_ms >= config.refractory_ms
        ):
            _finalize_pending(state, events, config, half_life_ms)
        if state.pending_time_ms is not None:
            if a_c > state.pending_amp:
                state.pending_time_ms = t_c
                state.pending_amp = a_c
        else:
            threshold = config.peak_threshold_fraction * _decayed_peak(
                state, t_c, half_life_ms
            )
            if a_c > threshold:
                state.pending_time_ms = t_c
                state.pending_amp = a_c

    if (
        state.pending_time_ms is not None
        and int(ts[-1]) - state.pending_time_ms >= config.refractory_ms
    ):
        _finalize_pending(state, events, config, half_life_ms)

    if len(vals) >= 2:
        state.prev_prev_ac = float(vals[-2])
    state.prev_ac = float(ac[-1])
    state.prev_time_ms = int(ts[-1])
    state.prev_outlier = bool(flags[-1])
    return events, state


def beat_interval(prev_ms: int, cur_ms: int) -> float:
    """Interval between consecutive beats in seconds, exact to the ms."""
    if cur_ms <= prev_ms:
        raise OrderError(f"beat at {cur_ms} not after previous at {prev_ms}")
    return (cur_ms - prev_ms) / 1000.0


def instantaneous_bpm(delta_t_s: float) -> float:
    """Beats per minute from one inter-beat interval: 60 / dt."""
    if delta_t_s <= 0:
        raise DomainError(f"delta_t_s must be positive, got {delta_t_s}")
    return 60.0 / delta_t_s


def accept_bpm(
    bpm: float, state: BeatDetectorState, config: PipelineConfig
) -> BeatDetectorState:
    """Store a BPM value iff it lies in the valid range (bounds inclusive).

    Evicts the oldest stored value beyond the averaging window. Out of
    range values leave the state unchanged.
    """
    if config.bpm_valid_min <= bpm <= config.bpm_valid_max:
        state.recent_bpm.append(bpm)
        if len(state.recent_bpm) > config.avg_window_beats:
            del state.recent_bpm[: len(state.recent_bpm) - config.avg_window_beats]
        state.last_accepted_bpm = bpm
    return state


def rolling_average_bpm(state: BeatDetectorState) -> float | None:
    """Arithmetic mean of the stored window; None when empty."""
    if not state.recent_bpm:
        return None
    return sum(state.recent_bpm) / len(state.recent_bpm)


@dataclass(frozen=True)
class RatioWindow:
    """Mean raw red/IR levels over a trailing window."""

    window_ms: int
    mean_red: float
    mean_ir: float
    sample_count: int

    @classmethod
    def from_frames(
        cls, frames: Sequence[SampleFrame], window_ms: int, end_ms: int | None = None
    ) -> "RatioWindow":
        if end_ms is None:
            end_ms = frames[-1].timestamp_ms if frames else 0
        chosen = [f for f in frames if end_ms - window_ms < f.timestamp_ms <= end_ms]
        if not chosen:
            return cls(window_ms=window_ms, mean_red=0.0, mean_ir=0.0, sample_count=0)
        n = len(chosen)
        return cls(
            window_ms=window_ms,
            mean_red=sum(f.red for f in chosen) / n,
            mean_ir=sum(f.ir for f in chosen) / n,
            sample_count=n,
        )


def compute_ratio(window: RatioWindow) -> float:
    """Raw red/IR mean ratio over the window."""
    if window.sample_count == 0:
        raise EmptyWindowError("ratio window holds no samples")
    if window.mean_ir == 0:
        raise DivisionGuardError("mean IR is zero, ratio undefined")
    return window.mean_red / window.mean_ir


def spo2_estimate(ratio: float, coeffs: CalibrationCoeffs) -> float:
    """Unclamped saturation from the calibration line: a - b * ratio."""
    return coeffs.a - coeffs.b * ratio


def clamp_spo2(raw: float) -> float:
    """Constrain a saturation value to the physical [0, 100] range."""
    return max(0.0, min(100.0, raw))


def fit_calibration(pairs: Iterable[tuple[float, float]]) -> CalibrationCoeffs:
    """Ordinary least squares for spo2 = a - b * ratio.

    Needs at least two pairs with at least two distinct ratio values.
    Raises ConfigError (via CalibrationCoeffs) if the fitted slope is not
    decreasing, since a non-positive b cannot be a physical calibration.
    """
    pts = list(pairs)
    if len(pts) < 2:
        raise InsufficientDataError(f"need >= 2 calibration pairs, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.all(x == x[0]):
        raise DegenerateFitError("all ratio values are equal; line is undetermined")
    x_mean = x.mean()
    y_mean = y.mean()
    slope = float(np.sum((x - x_mean) * (y - y_mean)) / np.sum((x - x_mean) ** 2))
    a = float(y_mean - slope * x_mean)
    return CalibrationCoeffs(a=a, b=-slope)


def fit_residual_rms(
    pairs: Iterable[tuple[float, float]], coeffs: CalibrationCoeffs
) -> float:
    """Root-mean-square residual of pairs against a calibration line."""
    pts = list(pairs)
    if not pts:
        return 0.0
    res = [y - spo2_estimate(x, coeffs) for x, y in pts]
    return float(np.sqrt(np.mean(np.square(res))))


@dataclass
class PipelineState:
    """Everything the per-tick loop carries between ticks.

    Single-owner: one stream, one processor. The tick transition is
    deterministic, so replaying the same frames from a fresh state
    reproduces identical estimates.
    """

    preprocessor: StreamingPreprocessor
    detector: BeatDetectorState
    ratio_frames: deque
    tick_index: int = 0
    last_frame: SampleFrame | None = None


def new_pipeline_state(config: PipelineConfig) -> PipelineState:
    return PipelineState(
        preprocessor=StreamingPreprocessor(
            sample_rate_hz=config.sample_rate_hz,
            dc_window_s=config.dc_window_s,
            kernel_width=config.smooth_kernel,
            outlier_z=config.outlier_z,
        ),
        detector=BeatDetectorState(),
        ratio_frames=deque(),
    )


def process_tick(
    state: PipelineState, frames: Sequence[SampleFrame], config: PipelineConfig
) -> tuple[PipelineState, VitalsEstimate]:
    """Advance the pipeline by one tick over the frames that arrived.

    Runs preprocessing, beat detection, the valid-range gate, the
    rolling average, and the ratio -> SpO2 -> clamp chain. When the IR
    baseline is below the contact threshold the tick reports NO_CONTACT
    with absent vitals. Deterministic for identical inputs.
    """
    tick_time_ms = (state.tick_index + 1) * config.tick_interval_ms

    for frame in frames:
        validate_frame(frame, prev=state.last_frame)
        state.last_frame = frame

    released = state.preprocessor.push(frames)
    events, _ = detect_beats(released, state.detector, config)
    for event in events:
        if event.delta_t_s is not None:
            accept_bpm(instantaneous_bpm(event.delta_t_s), state.detector, config)

    for frame in frames:
        state.ratio_frames.append((frame.timestamp_ms, frame.red, frame.ir))
    cutoff = tick_time_ms - config.ratio_window_ms
    while state.ratio_frames and state.ratio_frames[0][0] <= cutoff:
        state.ratio_frames.popleft()

    dc_ir = state.preprocessor.last_dc_ir
    contact = (
        contact_state(dc_ir, config.contact_ir_threshold)
        if dc_ir is not None
        else ContactState.NO_CONTACT
    )

    state.tick_index += 1
    if contact is ContactState.NO_CONTACT:
        return state, VitalsEstimate(tick_time_ms=tick_time_ms, contact=contact)

    spo2 = None
    count = len(state.ratio_frames)
    if count:
        mean_ir = sum(f[2] for f in state.ratio_frames) / count
        if mean_ir > 0:
            mean_red = sum(f[1] for f in state.ratio_frames) / count
            window = RatioWindow(
                window_ms=config.ratio_window_ms,
                mean_red=mean_red,
                mean_ir=mean_ir,
                sample_count=count,
            )
            spo2 = clamp_spo2(spo2_estimate(compute_ratio(window), config.coeffs))

    estimate = VitalsEstimate(
        tick_time_ms=tick_time_ms,
        contact=contact,
        bpm_instant=state.detector.last_accepted_bpm,
        bpm_avg=rolling_average_bpm(state.detector),
        spo2_pct=spo2,
    )
    return state, estimate


class VitalsPipeline:
    """Convenience wrapper: owns a config plus mutable pipeline state."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config if config is not None else PipelineConfig()
        self.state = new_pipeline_state(self.config)

    def tick(self, frames: Sequence[SampleFrame]) -> VitalsEstimate:
        self.state, estimate = process_tick(self.state, frames, self.config)
        return estimate

    def run(self, frames: Sequence[SampleFrame]) -> list[VitalsEstimate]:
        """Process a whole stream, chunking frames into signal-time ticks."""
        if not frames:
            return []
        interval = self.config.tick_interval_ms
        n_ticks = frames[-1].timestamp_ms // interval + 1
        estimates = []
        pos = 0
        for k in range(n_ticks):
            end = (k + 1) * interval
            start_pos = pos
            while pos < len(frames) and frames[pos].timestamp_ms < end:
                pos += 1
            estimates.append(self.tick(frames[start_pos:pos]))
        return estimates
