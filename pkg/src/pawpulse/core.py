"""Shared domain types, units and validation.

All types here are immutable value objects: safe to share between
threads and cheap to copy. Optical samples are raw ADC counts from an
18-bit converter; time is integer milliseconds since session start.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, OrderError, RangeError

#: Largest value an 18-bit optical channel can carry.
ADC_MAX = (1 << 18) - 1


class ContactState(Enum):
    """Whether the sensor is reading a body (IR baseline above threshold)."""

    CONTACT = "contact"
    NO_CONTACT = "no_contact"


@dataclass(frozen=True)
class SampleFrame:
    """One timestamped red/IR reading, with optional skin temperature.

    ``temperature_c`` has 0.1 degC resolution (it travels as deci-Celsius
    on the wire); ``None`` means the sensor did not report temperature.
    """

    timestamp_ms: int
    red: int
    ir: int
    temperature_c: float | None = None


@dataclass(frozen=True)
class BeatEvent:
    """A detected heartbeat.

    ``delta_t_s`` is the interval to the previous beat in seconds and is
    ``None`` for the first beat of a stream (there is no predecessor).
    """

    beat_time_ms: int
    delta_t_s: float | None = None

    def __post_init__(self):
        if self.delta_t_s is not None and self.delta_t_s <= 0:
            raise RangeError(f"delta_t_s must be positive, got {self.delta_t_s}")


@dataclass(frozen=True)
class VitalsEstimate:
    """Per-tick pipeline output.

    When ``contact`` is NO_CONTACT all vitals fields must be absent;
    construction enforces this and the [0, 100] SpO2 range.
    """

    tick_time_ms: int
    contact: ContactState
    bpm_instant: float | None = None
    bpm_avg: float | None = None
    spo2_pct: float | None = None

    def __post_init__(self):
        if self.spo2_pct is not None and not 0.0 <= self.spo2_pct <= 100.0:
            raise RangeError(f"spo2_pct outside [0, 100]: {self.spo2_pct}")
        if self.contact is ContactState.NO_CONTACT:
            if (
                self.bpm_instant is not None
                or self.bpm_avg is not None
                or self.spo2_pct is not None
            ):
                raise RangeError("no-contact estimate must not carry vitals")


@dataclass(frozen=True)
class CalibrationCoeffs:
    """Intercept/slope of the SpO2 line ``spo2 = a - b * ratio``.

    ``b`` must be positive: saturation falls as the red/IR ratio rises.
    """

    a: float
    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ConfigError(f"calibration slope b must be > 0, got {self.b}")


#: Placeholder calibration. These are NOT experimentally derived values;
#: fit real coefficients from reference data (see ``fit_calibration``).
DEFAULT_COEFFS = CalibrationCoeffs(a=110.0, b=25.0)


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters for the whole processing pipeline.

    Defaults target a collar-worn reflectance sensor on a dog: 100 Hz
    sampling, a [30, 220] BPM physiological envelope, a 4-beat average
    window and a 1 s tick cadence. ``outlier_z`` of ``None`` disables
    the in-pipeline outlier gate (the pulse waveform itself exceeds any
    useful MAD threshold at its peaks); set it for motion-heavy streams.
    """

    sample_rate_hz: float = 100.0
    bpm_valid_min: float = 30.0
    bpm_valid_max: float = 220.0
    avg_window_beats: int = 4
    contact_ir_threshold: int = 50_000
    coeffs: CalibrationCoeffs = field(default_factory=lambda: DEFAULT_COEFFS)
    tick_interval_ms: int = 1000
    dc_window_s: float = 3.0
    smooth_kernel: int = 5
    outlier_z: float | None = None
    refractory_ms: int = 250
    peak_threshold_fraction: float = 0.6
    peak_decay_half_life_s: float = 2.0
    ratio_window_ms: int = 1000

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if not self.bpm_valid_min < self.bpm_valid_max:
            raise ConfigError("bpm_valid_min must be below bpm_valid_max")
        if self.avg_window_beats < 1:
            raise ConfigError("avg_window_beats must be >= 1")
        if self.tick_interval_ms < 1:
            raise ConfigError("tick_interval_ms must be >= 1")
        if self.contact_ir_threshold < 0:
            raise ConfigError("contact_ir_threshold must be >= 0")
        if self.dc_window_s <= 0:
            raise ConfigError("dc_window_s must be positive")
        if self.smooth_kernel < 1 or self.smooth_kernel % 2 == 0:
            raise ConfigError("smooth_kernel must be an odd positive integer")
        if self.outlier_z is not None and self.outlier_z <= 0:
            raise ConfigError("outlier_z must be positive or None")
        if self.refractory_ms < 0:
            raise ConfigError("refractory_ms must be >= 0")
        if not 0 < self.peak_threshold_fraction < 1:
            raise ConfigError("peak_threshold_fraction must be in (0, 1)")
        if self.peak_decay_half_life_s <= 0:
            raise ConfigError("peak_decay_half_life_s must be positive")
        if self.ratio_window_ms < 1:
            raise ConfigError("ratio_window_ms must be >= 1")


def validate_frame(frame: SampleFrame, prev: SampleFrame | None = None) -> SampleFrame:
    """Check a frame's field invariants and return it unchanged.

    Raises RangeError when a channel exceeds 18 bits or the timestamp is
    negative, and OrderError when ``prev`` is given and the timestamp
    does not strictly increase.
    """
    if frame.timestamp_ms < 0:
        raise RangeError(f"timestamp_ms must be >= 0, got {frame.timestamp_ms}")
    for name, value in (("red", frame.red), ("ir", frame.ir)):
        if not 0 <= value <= ADC_MAX:
            raise RangeError(f"{name}={value} outside 18-bit range [0, {ADC_MAX}]")
    if frame.temperature_c is not None:
        deci = round(frame.temperature_c * 10)
        if not -(1 << 15) <= deci <= (1 << 15) - 1:
            raise RangeError(f"temperature_c={frame.temperature_c} outside wire range")
    if prev is not None and frame.timestamp_ms <= prev.timestamp_ms:
        raise OrderError(
            f"timestamp {frame.timestamp_ms} not after predecessor {prev.timestamp_ms}"
        )
    return frame
