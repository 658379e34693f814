"""Experiment outputs: per-run records, summary statistics, report files.

Accuracy is summarized as the median absolute deviation of the estimates
from the TRUE distance (not dispersion around the sample mean). Alerting
is summarized by the alert distance (true separation when the first alert
fired, the furthest one during an approach) and the time-to-alert (delay
between the true distance crossing the tolerance and the alert firing).

``emit_report`` writes deterministic artifacts: re-emitting the same report
is byte-identical, so reruns with the same seed can be diffed directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .wavefile import write_wav

__all__ = ["RunResult", "MetricsReport", "mad", "emit_report", "summarize"]


def mad(errors) -> float:
    """Median absolute deviation from truth: median of |estimate - true|."""
    errs = np.asarray(list(errors), dtype=np.float64)
    if len(errs) == 0:
        return math.nan
    return float(np.median(np.abs(errs)))


@dataclass
class RunResult:
    seed: int
    estimates: list                    # EstimateRecord tuples
    alerts: list                       # AlertRecord tuples
    counters: dict
    crossing_times: dict               # frozenset pair -> first true crossing (or None)
    streams: dict = field(default_factory=dict)

    def first_alert(self):
        return self.alerts[0] if self.alerts else None

    def times_to_alert(self) -> list[float]:
        """Per (device, neighbor): first alert time minus truth crossing."""
        seen = set()
        out = []
        for a in self.alerts:
            key = (a.device, a.neighbor)
            if key in seen:
                continue
            seen.add(key)
            crossing = self.crossing_times.get(frozenset(key))
            if crossing is not None and a.t_s >= crossing:
                out.append(a.t_s - crossing)
        return out


@dataclass
class MetricsReport:
    scenario_name: str
    seed: int
    duration_s: float
    tolerance_m: float
    runs: list

    @property
    def replicates(self) -> int:
        return len(self.runs)

    # ---------------------------------------------------------------- stats

    def pair_errors(self) -> dict:
        """(initiator, responder) -> list of (est - true) across replicates."""
        out: dict = {}
        for run in self.runs:
            for e in run.estimates:
                out.setdefault((e.initiator, e.responder), []).append(
                    (e.est_m, e.true_m))
        return out

    def overall_mad(self) -> float:
        errs = [est - true for run in self.runs
                for (_, _, _, est, true) in run.estimates]
        return mad(errs)

    def alert_distances(self) -> list[float]:
        out = []
        for run in self.runs:
            first = run.first_alert()
            if first is not None:
                out.append(first.true_m)
        return out

    def times_to_alert(self) -> list[float]:
        out = []
        for run in self.runs:
            out.extend(run.times_to_alert())
        return out

    def update_periods(self) -> list[float]:
        """Per ordered pair: median spacing of estimate completions,
        measured after the bootstrap window."""
        skip = max(3.0, 0.25 * self.duration_s)
        out = []
        for run in self.runs:
            per: dict = {}
            for e in run.estimates:
                if e.t_s >= skip:
                    per.setdefault((e.initiator, e.responder), []).append(e.t_s)
            for times in per.values():
                if len(times) >= 3:
                    out.append(float(np.median(np.diff(times))))
        return out

    def counter_total(self, name: str) -> int:
        return sum(run.counters.get(name, 0) for run in self.runs)


def _stats_line(label: str, values) -> str:
    vals = np.asarray(list(values), dtype=np.float64)
    if len(vals) == 0:
        return f"{label} n 0"
    return (f"{label} n {len(vals)} mean {np.mean(vals):.6f} "
            f"median {np.median(vals):.6f} min {np.min(vals):.6f} "
            f"max {np.max(vals):.6f}")


def summarize(report: MetricsReport) -> str:
    lines = [
        f"scenario {report.scenario_name} seed {report.seed} "
        f"replicates {report.replicates} duration_s {report.duration_s:.6f}",
        "",
        "[distance-accuracy]",
    ]
    pair_data = report.pair_errors()
    total = 0
    for (a, b) in sorted(pair_data):
        rows = pair_data[(a, b)]
        errs = [est - true for est, true in rows]
        true_nominal = float(np.median([true for _, true in rows]))
        lines.append(f"pair {a}-{b} n {len(rows)} true_m {true_nominal:.6f} "
                     f"mad_m {mad(errs):.6f}")
        total += len(rows)
    overall = report.overall_mad()
    lines.append(f"overall n {total} mad_m "
                 + (f"{overall:.6f}" if not math.isnan(overall) else "nan"))
    lines += [
        "",
        "[alerts]",
        f"alert_events {sum(len(r.alerts) for r in report.runs)}",
        _stats_line("alert_distance_m", report.alert_distances()),
        _stats_line("time_to_alert_s", report.times_to_alert()),
        "",
        "[protocol]",
        _stats_line("update_period_s", report.update_periods()),
        f"rounds_started {report.counter_total('rounds_started')} "
        f"completed {report.counter_total('rounds_completed')}",
        f"estimates_discarded {report.counter_total('estimates_discarded')}",
        f"detections_total {report.counter_total('detections_total')} "
        f"unmatched {report.counter_total('detections_unmatched')}",
        f"control_sent {report.counter_total('control_sent')} "
        f"dropped {report.counter_total('control_dropped')}",
    ]
    return "\n".join(lines) + "\n"


def emit_report(report: MetricsReport, out_dir, formats=("csv", "summary")) -> list[Path]:
    """Write report artifacts; returns the written paths.

    formats: any of "csv" (estimates.csv + alerts.csv), "summary"
    (summary.txt), "wav" (one <device>.wav per recorded stream).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    formats = set(formats)
    unknown = formats - {"csv", "summary", "wav"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")

    if "csv" in formats:
        est_path = out / "estimates.csv"
        with est_path.open("w", newline="") as f:
            f.write("true_time_s,pair,true_m,est_m\n")
            for run in report.runs:
                for e in run.estimates:
                    f.write(f"{e.t_s:.6f},{e.initiator}-{e.responder},"
                            f"{e.true_m:.6f},{e.est_m:.6f}\n")
        written.append(est_path)
        alert_path = out / "alerts.csv"
        with alert_path.open("w", newline="") as f:
            f.write("true_time_s,device,neighbor,est_m,true_m\n")
            for run in report.runs:
                for a in run.alerts:
                    f.write(f"{a.t_s:.6f},{a.device},{a.neighbor},"
                            f"{a.est_m:.6f},{a.true_m:.6f}\n")
        written.append(alert_path)

    if "summary" in formats:
        s_path = out / "summary.txt"
        s_path.write_text(summarize(report))
        written.append(s_path)

    if "wav" in formats:
        for run in report.runs:
            for dev_id in sorted(run.streams):
                buf = run.streams[dev_id]
                suffix = f"_r{run.seed - report.seed}" if report.replicates > 1 else ""
                w_path = out / f"{dev_id}{suffix}.wav"
                write_wav(w_path, buf.samples, buf.sample_rate_hz, normalize=True)
                written.append(w_path)

    return written
