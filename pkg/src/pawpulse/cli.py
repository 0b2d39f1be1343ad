"""Operator CLI: simulate, process, replay, calibrate, report.

Every subcommand is deterministic given its inputs, flags and seed.

Exit codes:
    0   success
    2   usage error (bad flag, unknown config key, malformed pairs file)
    3   data error (decode failures, empty session, verify mismatch)
"""
from __future__ import annotations

import argparse
import json
import sys

from .core import ContactState, PipelineConfig, SampleFrame
from .emotion import (
    DEFAULT_BANDS,
    DEFAULT_RULES,
    EmotionAssessment,
    classify,
    discretize,
    load_rule_table,
)
from .errors import (
    ConfigError,
    DegenerateFitError,
    EmptySessionError,
    InsufficientDataError,
    PawpulseError,
)
from .session import (
    RecordKind,
    SessionRecord,
    SessionSummary,
    SessionWriter,
    TickEmotion,
    config_from_dict,
    config_to_dict,
    read_header,
    replay,
    summarize,
)
from .synth import SynthProfile, generate
from .vitals import VitalsPipeline, fit_calibration, fit_residual_rms
from .wire import encode_frame, resync


class UsageError(Exception):
    """Operator mistake: reported on stderr, exit code 2."""


_INT_KEYS = {
    "avg_window_beats",
    "contact_ir_threshold",
    "tick_interval_ms",
    "smooth_kernel",
    "refractory_ms",
    "ratio_window_ms",
}
_OPTIONAL_FLOAT_KEYS = {"outlier_z"}


def _parse_config_value(key: str, raw: str):
    raw = raw.strip()
    if key in _OPTIONAL_FLOAT_KEYS:
        return None if raw.lower() in ("", "none") else float(raw)
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def build_config(config_path: str | None, overrides: list[str]) -> PipelineConfig:
    """Defaults, then key=value lines from the file, then --set overrides.

    Unknown keys are rejected before any processing starts.
    """
    values = config_to_dict(PipelineConfig())
    pairs: list[tuple[str, str]] = []
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                for lineno, raw_line in enumerate(fh, start=1):
                    line = raw_line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise UsageError(f"{config_path}:{lineno}: expected key=value")
                    key, _, value = line.partition("=")
                    pairs.append((key.strip(), value))
        except OSError as exc:
            raise UsageError(f"cannot read --config file: {exc}")
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value))
    for key, value in pairs:
        if key not in values:
            raise UsageError(f"unknown config key {key!r}")
        try:
            values[key] = _parse_config_value(key, value)
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {value.strip()!r}")
    return config_from_dict(values)


def _write_config_file(path: str, config: PipelineConfig) -> None:
    lines = [f"{key}={'none' if value is None else value}" for key, value in config_to_dict(config).items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def render_tick_line(est, assessment: EmotionAssessment | None) -> str:
    sec = est.tick_time_ms / 1000.0
    prefix = f"t={sec:g}s"
    if est.contact is ContactState.NO_CONTACT:
        return f"{prefix} no contact"
    bpm = f"{est.bpm_instant:.1f}" if est.bpm_instant is not None else "-"
    avg = f"{est.bpm_avg:.1f}" if est.bpm_avg is not None else "-"
    spo2 = f"{est.spo2_pct:.1f}" if est.spo2_pct is not None else "-"
    emotion = (
        f"{assessment.state.value}({assessment.certainty.value})"
        if assessment is not None
        else "-"
    )
    return f"{prefix} bpm={bpm} avg={avg} spo2={spo2} emotion={emotion}"


# -- simulate -----------------------------------------------------------------


def _truth_json(truth, profile: SynthProfile) -> str:
    return json.dumps(
        {
            "true_bpm": profile.true_bpm
            if isinstance(profile.true_bpm, (int, float))
            else [list(seg) for seg in profile.true_bpm],
            "true_spo2_pct": profile.true_spo2_pct,
            "beat_times_ms": list(truth.beat_times_ms),
            "spo2_schedule": [list(entry) for entry in truth.spo2_schedule],
        },
        separators=(",", ":"),
    )


def cmd_simulate(args) -> int:
    config = build_config(args.config, args.set or [])
    if not 30.0 <= args.bpm <= 220.0:
        raise UsageError(f"--bpm must be within [30, 220], got {args.bpm:g}")
    if not 70.0 <= args.spo2 <= 100.0:
        raise UsageError(f"--spo2 must be within [70, 100], got {args.spo2:g}")
    if args.seconds <= 0:
        raise UsageError("--seconds must be positive")
    if not 0.0 < args.fs <= 1000.0:
        raise UsageError("--fs must be in (0, 1000]")
    if args.seed < 0:
        raise UsageError("--seed must be >= 0")
    try:
        profile = SynthProfile(
            true_bpm=args.bpm,
            true_spo2_pct=args.spo2,
            dc_ir=args.dc_ir,
            ac_amplitude_fraction=args.ac_fraction,
            noise_std_counts=args.noise_std,
            seed=args.seed,
        )
        frames, truth = generate(profile, args.seconds, args.fs, coeffs=config.coeffs)
    except ConfigError as exc:
        raise UsageError(str(exc))
    if args.format == "wire":
        blob = b"".join(encode_frame(f) for f in frames)
        if args.out == "-":
            sys.stdout.buffer.write(blob)
        else:
            with open(args.out, "wb") as fh:
                fh.write(blob)
    else:
        if args.out == "-":
            raise UsageError("--format session needs a real --out path")
        with SessionWriter(args.out, config) as writer:
            for seq, frame in enumerate(frames):
                writer.append_record(SessionRecord(seq, RecordKind.RAW, frame))
    truth_path = args.truth
    if truth_path is None and args.out != "-":
        truth_path = args.out + ".truth.json"
    if truth_path:
        with open(truth_path, "w", encoding="utf-8") as fh:
            fh.write(_truth_json(truth, profile) + "\n")
    return 0


# -- process ------------------------------------------------------------------


def _read_input_bytes(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read --in: {exc}")


def _frames_from_session_bytes(path_or_data, is_path: bool) -> list[SampleFrame]:
    if not is_path:
        import os
        import tempfile

        # replay() works on paths; spool stdin input to a temp file
        with tempfile.NamedTemporaryFile("wb", suffix=".ndjson", delete=False) as tmp:
            tmp.write(path_or_data)
            path = tmp.name
        try:
            return _frames_from_session_bytes(path, is_path=True)
        finally:
            os.unlink(path)
    read_header(path_or_data)
    return [
        record.payload
        for record in replay(path_or_data)
        if record.kind is RecordKind.RAW and isinstance(record.payload, SampleFrame)
    ]


def _load_frames(args) -> list[SampleFrame]:
    fmt = args.format
    if args.in_path != "-" and fmt == "auto":
        try:
            with open(args.in_path, "rb") as fh:
                head = fh.read(2)
        except OSError as exc:
            raise UsageError(f"cannot read --in: {exc}")
        fmt = "wire" if head == b"\xa5\x5a" else "session"
    data = None
    if args.in_path == "-":
        data = sys.stdin.buffer.read()
        if fmt == "auto":
            fmt = "wire" if data[:2] == b"\xa5\x5a" else "session"
    if fmt == "wire":
        blob = data if data is not None else _read_input_bytes(args.in_path)
        runs: list[tuple[int, int]] = []
        frames, skipped = resync(blob, on_skip=lambda off, length: runs.append((off, length)))
        for off, length in runs:
            print(f"warning: skipped {length} bytes at offset {off}", file=sys.stderr)
        if skipped:
            print(f"warning: {skipped} bytes total were not decodable", file=sys.stderr)
        return frames
    if data is not None:
        return _frames_from_session_bytes(data, is_path=False)
    return _frames_from_session_bytes(args.in_path, is_path=True)


def cmd_process(args) -> int:
    config = build_config(args.config, args.set or [])
    rules = load_rule_table(args.rules) if args.rules else DEFAULT_RULES
    frames = _load_frames(args)
    if not frames:
        raise EmptySessionError("input contains no frames")

    writer = None
    if args.session_out:
        writer = SessionWriter(args.session_out, config, start_utc=args.start_utc)
    pipeline = VitalsPipeline(config)
    interval = config.tick_interval_ms
    n_ticks = frames[-1].timestamp_ms // interval + 1
    pos = 0
    seq = 0
    last_temp: float | None = None
    try:
        for k in range(n_ticks):
            end = (k + 1) * interval
            chunk: list[SampleFrame] = []
            while pos < len(frames) and frames[pos].timestamp_ms < end:
                chunk.append(frames[pos])
                pos += 1
            estimate = pipeline.tick(chunk)
            for frame in chunk:
                if frame.temperature_c is not None:
                    last_temp = frame.temperature_c
                if writer:
                    writer.append_record(SessionRecord(seq, RecordKind.RAW, frame))
                    seq += 1
            assessment = None
            if estimate.contact is ContactState.CONTACT and estimate.bpm_avg is not None:
                labels = discretize(estimate, DEFAULT_BANDS, temperature_c=last_temp)
                assessment = classify(labels, rules)
            print(render_tick_line(estimate, assessment))
            if writer:
                writer.append_record(SessionRecord(seq, RecordKind.VITALS, estimate))
                seq += 1
                if assessment is not None:
                    writer.append_record(
                        SessionRecord(
                            seq,
                            RecordKind.EMOTION,
                            TickEmotion(estimate.tick_time_ms, assessment),
                        )
                    )
                    seq += 1
    finally:
        if writer:
            writer.close()
    return 0


# -- replay -------------------------------------------------------------------


def cmd_replay(args) -> int:
    header = read_header(args.in_path)
    config = config_from_dict(header["config"])
    stored_raw: list[SampleFrame] = []
    stored_vitals = []
    emotions: dict[int, EmotionAssessment] = {}
    for record in replay(args.in_path):
        if record.kind is RecordKind.RAW:
            stored_raw.append(record.payload)
        elif record.kind is RecordKind.VITALS:
            stored_vitals.append(record.payload)
        else:
            emotions[record.payload.tick_time_ms] = record.payload.assessment

    for estimate in stored_vitals:
        print(render_tick_line(estimate, emotions.get(estimate.tick_time_ms)))

    if args.verify:
        if not stored_raw:
            raise EmptySessionError("no raw records to replay")
        pipeline = VitalsPipeline(config)
        recomputed = pipeline.run(stored_raw)
        if len(recomputed) != len(stored_vitals):
            print(
                f"verify: MISMATCH tick count {len(recomputed)} != {len(stored_vitals)}",
                file=sys.stderr,
            )
            return 3
        for fresh, stored in zip(recomputed, stored_vitals):
            if fresh != stored:
                print(
                    f"verify: MISMATCH at t={stored.tick_time_ms}ms:"
                    f" recomputed {fresh} != stored {stored}",
                    file=sys.stderr,
                )
                return 3
        print(f"verify: OK ({len(recomputed)} ticks reproduced exactly)")
    return 0


# -- calibrate ----------------------------------------------------------------


def _parse_pairs_file(path: str) -> list[tuple[float, float]]:
    pairs = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read --pairs: {exc}")
    with fh:
        for lineno, raw_line in enumerate(fh, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise UsageError(f"{path}:{lineno}: expected 'ratio,spo2'")
            try:
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise UsageError(f"{path}:{lineno}: not numeric: {line!r}")
    return pairs


def cmd_calibrate(args) -> int:
    pairs = _parse_pairs_file(args.pairs)
    try:
        coeffs = fit_calibration(pairs)
    except (InsufficientDataError, DegenerateFitError) as exc:
        raise UsageError(str(exc))
    rms = fit_residual_rms(pairs, coeffs)
    print(f"a={coeffs.a:.6f}")
    print(f"b={coeffs.b:.6f}")
    print(f"rms={rms:.6f}")
    if args.write_config:
        base = build_config(args.config, args.set or [])
        values = config_to_dict(base)
        values["coeff_a"] = coeffs.a
        values["coeff_b"] = coeffs.b
        _write_config_file(args.write_config, config_from_dict(values))
    return 0


# -- report -------------------------------------------------------------------


def _format_opt(value: float | None, digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _render_text_report(summary: SessionSummary) -> str:
    lines = [
        f"duration_s={summary.duration_s:.3f}",
        f"bpm_mean={_format_opt(summary.bpm_mean)}",
        f"bpm_min={_format_opt(summary.bpm_min)}",
        f"bpm_max={_format_opt(summary.bpm_max)}",
        f"spo2_mean={_format_opt(summary.spo2_mean)}",
        f"spo2_min={_format_opt(summary.spo2_min)}",
        f"spo2_max={_format_opt(summary.spo2_max)}",
        f"contact_uptime={summary.contact_uptime:.4f}",
    ]
    for state in sorted(summary.emotion_counts):
        lines.append(f"emotion.{state}={summary.emotion_counts[state]}")
    return "\n".join(lines) + "\n"


def _svg_path(points: list[tuple[float, float | None]], x_max: float, y_lo: float, y_hi: float, width: int, height: int, top: int) -> str:
    """Polyline path over the plot area; gaps (None) split segments."""
    cmds: list[str] = []
    pen_up = True
    span = (y_hi - y_lo) or 1.0
    for x_val, y_val in points:
        if y_val is None:
            pen_up = True
            continue
        x = 60 + (x_val / x_max) * (width - 80) if x_max else 60.0
        y = top + (1.0 - (y_val - y_lo) / span) * height
        cmds.append(f"{'M' if pen_up else 'L'}{x:.2f},{y:.2f}")
        pen_up = False
    return " ".join(cmds)


def _render_svg_report(summary: SessionSummary, vitals) -> str:
    width, panel, gap, top = 800, 130, 40, 30
    x_max = max((v.tick_time_ms for v in vitals), default=1) / 1000.0
    bpm_pts = [
        (v.tick_time_ms / 1000.0, v.bpm_avg if v.contact is ContactState.CONTACT else None)
        for v in vitals
    ]
    spo2_pts = [
        (v.tick_time_ms / 1000.0, v.spo2_pct if v.contact is ContactState.CONTACT else None)
        for v in vitals
    ]
    bpm_vals = [y for _, y in bpm_pts if y is not None]
    spo2_vals = [y for _, y in spo2_pts if y is not None]
    bpm_lo, bpm_hi = (min(bpm_vals), max(bpm_vals)) if bpm_vals else (0.0, 1.0)
    spo2_lo, spo2_hi = (min(spo2_vals), max(spo2_vals)) if spo2_vals else (0.0, 1.0)
    if bpm_hi == bpm_lo:
        bpm_lo, bpm_hi = bpm_lo - 1.0, bpm_hi + 1.0
    if spo2_hi == spo2_lo:
        spo2_lo, spo2_hi = spo2_lo - 1.0, spo2_hi + 1.0
    spo2_top = top + panel + gap
    total_h = spo2_top + panel + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" viewBox="0 0 {width} {total_h}">',
        f'<rect width="{width}" height="{total_h}" fill="white"/>',
        f'<text x="60" y="20" font-family="monospace" font-size="13">BPM (avg) '
        f"[{bpm_lo:.1f}, {bpm_hi:.1f}]  mean={_format_opt(summary.bpm_mean)}</text>",
        f'<rect x="60" y="{top}" width="{width - 80}" height="{panel}" fill="none" stroke="#999"/>',
        f'<path d="{_svg_path(bpm_pts, x_max, bpm_lo, bpm_hi, width, panel, top)}" fill="none" stroke="#c0392b" stroke-width="1.5"/>',
        f'<text x="60" y="{spo2_top - 10}" font-family="monospace" font-size="13">SpO2 (%) '
        f"[{spo2_lo:.1f}, {spo2_hi:.1f}]  mean={_format_opt(summary.spo2_mean)}</text>",
        f'<rect x="60" y="{spo2_top}" width="{width - 80}" height="{panel}" fill="none" stroke="#999"/>',
        f'<path d="{_svg_path(spo2_pts, x_max, spo2_lo, spo2_hi, width, panel, spo2_top)}" fill="none" stroke="#2980b9" stroke-width="1.5"/>',
        f'<text x="60" y="{total_h - 12}" font-family="monospace" font-size="12">0s .. {x_max:g}s, contact uptime {summary.contact_uptime:.4f}</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def cmd_report(args) -> int:
    summary = summarize(args.in_path)
    if args.format == "text":
        output = _render_text_report(summary)
    else:
        vitals = [
            record.payload
            for record in replay(args.in_path)
            if record.kind is RecordKind.VITALS
        ]
        output = _render_svg_report(summary, vitals)
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(output)
    else:
        sys.stdout.write(output)
    return 0


# -- parser -------------------------------------------------------------------


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="key=value config file mirroring PipelineConfig")
    sub.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pawpulse",
        description="Dual-wavelength vitals pipeline: simulate, process, replay, calibrate, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic stream with ground truth")
    sim.add_argument("--bpm", type=float, default=80.0, help="true heart rate [30, 220]")
    sim.add_argument("--spo2", type=float, default=97.0, help="true SpO2 percent [70, 100]")
    sim.add_argument("--seconds", type=float, default=30.0)
    sim.add_argument("--fs", type=float, default=100.0, help="sample rate in Hz")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--dc-ir", type=float, default=80_000.0, dest="dc_ir")
    sim.add_argument("--ac-fraction", type=float, default=0.03, dest="ac_fraction")
    sim.add_argument("--noise-std", type=float, default=0.0, dest="noise_std")
    sim.add_argument("--format", choices=("wire", "session"), default="wire")
    sim.add_argument("--out", required=True, help="output path, or - for stdout (wire only)")
    sim.add_argument("--truth", help="ground-truth sidecar path (default: <out>.truth.json)")
    _add_config_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    proc = sub.add_parser("process", help="run the vitals pipeline over a frame stream")
    proc.add_argument("--in", dest="in_path", required=True, help="input path, or - for stdin")
    proc.add_argument("--format", choices=("auto", "wire", "session"), default="auto")
    proc.add_argument("--session-out", dest="session_out", help="write a session file")
    proc.add_argument("--rules", help="emotion rule-table file")
    proc.add_argument("--start-utc", dest="start_utc", help="wall-clock session start for the header")
    _add_config_flags(proc)
    proc.set_defaults(func=cmd_process)

    rep = sub.add_parser("replay", help="print a stored session; --verify recomputes vitals")
    rep.add_argument("--in", dest="in_path", required=True)
    rep.add_argument("--verify", action="store_true", help="recompute vitals from raw records and compare")
    rep.set_defaults(func=cmd_replay)

    cal = sub.add_parser("calibrate", help="least-squares fit of the SpO2 line from (ratio, spo2) pairs")
    cal.add_argument("--pairs", required=True, help="CSV: ratio,reference_spo2 with # comments")
    cal.add_argument("--write-config", dest="write_config", help="write fitted coefficients into a config file")
    _add_config_flags(cal)
    cal.set_defaults(func=cmd_calibrate)

    rpt = sub.add_parser("report", help="summarize a session as text or SVG")
    rpt.add_argument("--in", dest="in_path", required=True)
    rpt.add_argument("--format", choices=("text", "svg"), default="text")
    rpt.add_argument("--out", help="output path (default: stdout)")
    rpt.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EmptySessionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PawpulseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
