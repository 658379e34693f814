"""The ``ultrarange`` command: run and validate scenarios, export debug audio.

Subcommands:

- ``run <scenario> [--seed N] [--replicates K] [--out DIR] [--wav]``
- ``validate <scenario>``
- ``pulse-wav <out.wav> [--rate 44100|48000]``
- ``list-presets``

``<scenario>`` is a path to a scenario file or the name of a shipped preset.
Exit codes: 0 success, 1 usage or validation error, 2 simulation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dsp import PulseTemplate, synthesize_pulse
from .metrics import emit_report, summarize
from .run import run_scenario
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    list_presets,
    load_preset,
    load_scenario,
    preset_text,
)
from .wavefile import write_wav

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SIM_FAILURE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _resolve_scenario(ref: str) -> ScenarioConfig:
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    if ref in list_presets():
        return load_preset(ref)
    raise ScenarioError(
        f"'{ref}' is neither a scenario file nor a preset "
        f"(presets: {', '.join(list_presets())})")


def _cmd_run(args) -> int:
    config = _resolve_scenario(args.scenario)
    if args.seed is not None:
        config = _replace(config, seed=args.seed)
    if args.replicates is not None:
        config = _replace(config, replicates=args.replicates)
    report = run_scenario(config, record_streams=True if args.wav else None)
    formats = {"csv", "summary"}
    if args.wav:
        formats.add("wav")
    out_dir = Path(args.out) if args.out else Path(f"{config.name}_report")
    written = emit_report(report, out_dir, formats)
    sys.stdout.write(summarize(report))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _replace(config: ScenarioConfig, **kw) -> ScenarioConfig:
    import dataclasses
    return dataclasses.replace(config, **kw)


def _cmd_validate(args) -> int:
    config = _resolve_scenario(args.scenario)
    print(f"scenario '{config.name}' OK: {len(config.devices)} devices, "
          f"{len(config.links)} links, duration {config.duration_s} s, "
          f"seed {config.seed}, replicates {config.replicates}")
    return EXIT_OK


def _cmd_pulse_wav(args) -> int:
    template = PulseTemplate(sample_rate_hz=float(args.rate))
    buf = synthesize_pulse(template)
    write_wav(args.out, buf.samples, buf.sample_rate_hz)
    print(f"wrote {args.out}: {len(buf.samples)} samples at {args.rate} Hz "
          f"({buf.duration_s * 1000:.1f} ms)")
    return EXIT_OK


def _cmd_list_presets(_args) -> int:
    for name in list_presets():
        first = next((line.split("=", 1)[1].strip().strip('"')
                      for line in preset_text(name).splitlines()
                      if line.startswith("description")), "")
        print(f"{name}: {first}" if first else name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ultrarange",
                     description="Acoustic ranging simulator and toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write a report")
    p_run.add_argument("scenario", help="scenario file path or preset name")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--replicates", type=int, default=None)
    p_run.add_argument("--out", default=None, help="report directory")
    p_run.add_argument("--wav", action="store_true",
                       help="record and export every device's microphone stream")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("scenario")
    p_val.set_defaults(fn=_cmd_validate)

    p_wav = sub.add_parser("pulse-wav", help="export the ranging pulse as WAV")
    p_wav.add_argument("out")
    p_wav.add_argument("--rate", type=int, choices=(44100, 48000), default=48000)
    p_wav.set_defaults(fn=_cmd_pulse_wav)

    p_list = sub.add_parser("list-presets", help="list shipped scenario presets")
    p_list.set_defaults(fn=_cmd_list_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM_FAILURE


if __name__ == "__main__":
    sys.exit(main())
