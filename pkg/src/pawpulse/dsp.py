"""Preprocessing: DC tracking/removal, smoothing, outlier flagging, contact.

The baseline (DC) of each optical channel is tracked with a trailing
moving average; subtracting it leaves the pulsatile AC component that
beat detection consumes. Outliers are flagged, never deleted, so
timestamps stay intact for interval math.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ContactState, SampleFrame
from .errors import ConfigError, EmptyStreamError

#: Robust-sigma factor: MAD * 1.4826 estimates a Gaussian standard deviation.
MAD_SIGMA = 1.4826


@dataclass(frozen=True)
class AcSample:
    """A frame split into pulsatile (ac) and baseline (dc) parts."""

    timestamp_ms: int
    ac_red: float
    ac_ir: float
    dc_red: float
    dc_ir: float
    outlier: bool = False


def _infer_step_ms(timestamps: Sequence[int]) -> float:
    if len(timestamps) < 2:
        return 1.0
    diffs = np.diff(np.asarray(timestamps, dtype=np.int64))
    return float(np.median(diffs))


def _window_samples(window_s: float, step_ms: float) -> int:
    return max(1, int(round(window_s * 1000.0 / step_ms)))


def _trailing_mean(values: np.ndarray, width: int) -> np.ndarray:
    """Trailing moving average; the first ``width`` samples use the
    running mean of whatever is available (warm-up)."""
    csum = np.cumsum(np.concatenate(([0.0], values)))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - width)
    return (csum[idx] - csum[lo]) / (idx - lo)


def remove_dc(
    frames: Sequence[SampleFrame], window_s: float, fs_hz: float | None = None
) -> list[AcSample]:
    """Split frames into AC + DC using a trailing moving average.

    ``fs_hz`` overrides the sample rate; by default it is inferred from
    the frame timestamps. A single frame degenerates to dc = raw, ac = 0.
    """
    if not frames:
        raise EmptyStreamError("remove_dc needs at least one frame")
    if window_s <= 0:
        raise ConfigError("window_s must be positive")
    ts = [f.timestamp_ms for f in frames]
    step_ms = 1000.0 / fs_hz if fs_hz else _infer_step_ms(ts)
    width = _window_samples(window_s, step_ms)
    red = np.array([f.red for f in frames], dtype=float)
    ir = np.array([f.ir for f in frames], dtype=float)
    dc_red = _trailing_mean(red, width)
    dc_ir = _trailing_mean(ir, width)
    return [
        AcSample(
            timestamp_ms=t,
            ac_red=float(red[i] - dc_red[i]),
            ac_ir=float(ir[i] - dc_ir[i]),
            dc_red=float(dc_red[i]),
            dc_ir=float(dc_ir[i]),
        )
        for i, t in enumerate(ts)
    ]


def _centered_mean(values: np.ndarray, kernel_width: int) -> np.ndarray:
    """Centered moving average with edge truncation (unit-sum kernel)."""
    n = len(values)
    half = kernel_width // 2
    csum = np.cumsum(np.concatenate(([0.0], values)))
    lo = np.maximum(0, np.arange(n) - half)
    hi = np.minimum(n, np.arange(n) + half + 1)
    return (csum[hi] - csum[lo]) / (hi - lo)


def smooth(samples: Sequence[AcSample], kernel_width: int) -> list[AcSample]:
    """Centered moving average over the AC components.

    The kernel truncates at the sequence edges; dc fields and outlier
    flags pass through unchanged. ``kernel_width`` must be odd.
    """
    if kernel_width < 1 or kernel_width % 2 == 0:
        raise ConfigError(f"kernel_width must be an odd positive integer, got {kernel_width}")
    if kernel_width == 1 or not samples:
        return list(samples)
    ac_red = _centered_mean(np.array([s.ac_red for s in samples]), kernel_width)
    ac_ir = _centered_mean(np.array([s.ac_ir for s in samples]), kernel_width)
    return [
        replace(s, ac_red=float(ac_red[i]), ac_ir=float(ac_ir[i]))
        for i, s in enumerate(samples)
    ]


def _trailing_median_mad(values: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Median and MAD over a trailing window (expanding during warm-up)."""
    n = len(values)
    med = np.empty(n)
    mad = np.empty(n)
    head = min(width, n)
    for i in range(head):
        window = values[: i + 1]
        med[i] = np.median(window)
        mad[i] = np.median(np.abs(window - med[i]))
    if n > width:
        windows = sliding_window_view(values, width)[1:]
        m = np.median(windows, axis=1)
        med[width:] = m
        mad[width:] = np.median(np.abs(windows - m[:, None]), axis=1)
    return med, mad


def reject_outliers(
    samples: Sequence[AcSample], z_threshold: float, window_s: float = 3.0
) -> list[AcSample]:
    """Flag samples whose AC IR deviates from the rolling median.

    A sample is flagged when |ac_ir - median| exceeds
    ``z_threshold * MAD * 1.4826`` over a trailing ``window_s`` window.
    Values are never modified, only the ``outlier`` flag is set; a
    degenerate window (MAD = 0) flags nothing.
    """
    if z_threshold <= 0:
        raise ConfigError("z_threshold must be positive")
    if not samples:
        return []
    ts = [s.timestamp_ms for s in samples]
    width = _window_samples(window_s, _infer_step_ms(ts))
    ac_ir = np.array([s.ac_ir for s in samples])
    med, mad = _trailing_median_mad(ac_ir, width)
    limit = z_threshold * MAD_SIGMA * mad
    flagged = (mad > 0) & (np.abs(ac_ir - med) > limit)
    return [
        replace(sample, outlier=bool(flagged[i])) if flagged[i] != sample.outlier else sample
        for i, sample in enumerate(samples)
    ]


def contact_state(dc_ir: float, threshold: float) -> ContactState:
    """Contact iff the IR baseline is at or above the threshold."""
    return ContactState.CONTACT if dc_ir >= threshold else ContactState.NO_CONTACT


class StreamingPreprocessor:
    """Incremental remove_dc + smooth (+ optional outlier flags) for the
    tick loop.

    Matches the batch operators sample-for-sample: the trailing DC mean
    and trailing outlier window see the same history they would in a
    single batch run. Flags are computed on the unsmoothed AC (spikes
    blur under the kernel). Centered smoothing needs future samples, so
    the last ``kernel // 2`` samples are held back and released on the
    next push (a fixed lag of a few samples, not a semantic difference).

    Single-consumer per stream; create one instance per stream.
    """

    def __init__(
        self,
        sample_rate_hz: float,
        dc_window_s: float = 3.0,
        kernel_width: int = 5,
        outlier_z: float | None = None,
        outlier_window_s: float = 3.0,
    ):
        if kernel_width < 1 or kernel_width % 2 == 0:
            raise ConfigError("kernel_width must be an odd positive integer")
        step_ms = 1000.0 / sample_rate_hz
        self._dc_width = _window_samples(dc_window_s, step_ms)
        self._half = kernel_width // 2
        self._outlier_z = outlier_z
        self._out_width = _window_samples(outlier_window_s, step_ms)
        self._dc_sum_red = 0.0
        self._dc_sum_ir = 0.0
        self._raw_tail: deque[tuple[float, float]] = deque()  # last dc_width raw values
        self._ac_tail: list[float] = []  # last out_width-1 raw ac_ir values
        self._pending: list[AcSample] = []  # unsmoothed, awaiting right context
        self._left_ac_red: list[float] = []  # smoothing context, last `half` released
        self._left_ac_ir: list[float] = []
        self.last_dc_ir: float | None = None

    def push(self, frames: Iterable[SampleFrame]) -> list[AcSample]:
        """Feed new frames; returns the samples whose smoothing window is
        complete (everything except the trailing hold-back)."""
        new = list(frames)
        if new:
            self._pending.extend(self._split(new))
        if not self._pending:
            return []
        release = len(self._pending) - self._half
        if release <= 0:
            return []
        released, self._pending = self._pending[:release], self._pending[release:]
        return self._smooth_released(released)

    def _split(self, frames: list[SampleFrame]) -> list[AcSample]:
        red = np.array([f.red for f in frames], dtype=float)
        ir = np.array([f.ir for f in frames], dtype=float)
        out: list[AcSample] = []
        tail = self._raw_tail
        for i, frame in enumerate(frames):
            tail.append((red[i], ir[i]))
            self._dc_sum_red += red[i]
            self._dc_sum_ir += ir[i]
            if len(tail) > self._dc_width:
                old_red, old_ir = tail.popleft()
                self._dc_sum_red -= old_red
                self._dc_sum_ir -= old_ir
            count = len(tail)
            dc_red = self._dc_sum_red / count
            dc_ir = self._dc_sum_ir / count
            out.append(
                AcSample(
                    timestamp_ms=frame.timestamp_ms,
                    ac_red=float(red[i] - dc_red),
                    ac_ir=float(ir[i] - dc_ir),
                    dc_red=float(dc_red),
                    dc_ir=float(dc_ir),
                )
            )
        self.last_dc_ir = out[-1].dc_ir
        if self._outlier_z is not None:
            out = self._flag(out)
        return out

    def _flag(self, samples: list[AcSample]) -> list[AcSample]:
        history = np.array(self._ac_tail + [s.ac_ir for s in samples])
        offset = len(self._ac_tail)
        flagged = []
        for i, s in enumerate(samples):
            j = offset + i
            window = history[max(0, j - self._out_width + 1) : j + 1]
            med = np.median(window)
            mad = np.median(np.abs(window - med))
            is_out = mad > 0 and abs(s.ac_ir - med) > self._outlier_z * MAD_SIGMA * mad
            flagged.append(replace(s, outlier=bool(is_out)) if is_out else s)
        keep = self._out_width - 1
        self._ac_tail = list(history[-keep:]) if keep > 0 else []
        return flagged

    def _smooth_released(self, released: list[AcSample]) -> list[AcSample]:
        if self._half == 0:
            return released
        ctx_red = np.array(
            self._left_ac_red
            + [s.ac_red for s in released]
            + [s.ac_red for s in self._pending]
        )
        ctx_ir = np.array(
            self._left_ac_ir
            + [s.ac_ir for s in released]
            + [s.ac_ir for s in self._pending]
        )
        left = len(self._left_ac_red)
        csum_red = np.cumsum(np.concatenate(([0.0], ctx_red)))
        csum_ir = np.cumsum(np.concatenate(([0.0], ctx_ir)))
        out = []
        for i, s in enumerate(released):
            j = left + i
            lo = max(0, j - self._half)
            hi = j + self._half + 1  # right context always present by construction
            out.append(
                replace(
                    s,
                    ac_red=float((csum_red[hi] - csum_red[lo]) / (hi - lo)),
                    ac_ir=float((csum_ir[hi] - csum_ir[lo]) / (hi - lo)),
                )
            )
        raw_tail_red = [s.ac_red for s in released[-self._half :]]
        raw_tail_ir = [s.ac_ir for s in released[-self._half :]]
        self._left_ac_red = (self._left_ac_red + raw_tail_red)[-self._half :]
        self._left_ac_ir = (self._left_ac_ir + raw_tail_ir)[-self._half :]
        return out
