"""Quality-of-flight records, aggregation, and hardware-gap arithmetic.

Flight time, distance, and energy means are taken over successful episodes
only (failed episodes have no completion time); success rate is over all
episodes. Gaps are relative percent, (target - baseline) / baseline * 100,
except the success-rate gap which is reported in absolute percentage points
(baseline - target).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

SUCCESS = "success"
OUTCOMES = ("success", "collision", "step_exhausted", "battery_exhausted")


@dataclass(frozen=True)
class EpisodeRecord:
    outcome: str
    flight_time: float          # s, sim time at termination
    distance: float             # m, substep path integral
    energy_kj: float
    steps: int                  # decision steps taken
    sum_t2_s: float = 0.0       # summed inference latency over decisions
    trajectory_path: str | None = None

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "EpisodeRecord":
        return cls(**raw)


@dataclass(frozen=True)
class QofReport:
    n_episodes: int
    success_rate: float                 # percent over all episodes
    mean_flight_time: float | None     # s, over successes
    mean_distance: float | None        # m, over successes
    mean_energy_kj: float | None       # over successes
    mean_latency_ms: float             # mean per-decision inference latency
    env_hash: str = ""
    checkpoint_id: str = ""
    meta: dict = field(default_factory=lambda: {"means_over": "successes"})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "QofReport":
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "QofReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def aggregate(records, env_hash: str = "", checkpoint_id: str = "") -> QofReport:
    """Aggregate per-episode records into one report."""
    records = list(records)
    if not records:
        raise ValueError("need at least one episode record")
    wins = [r for r in records if r.outcome == SUCCESS]
    total_steps = sum(r.steps for r in records)
    total_t2 = sum(r.sum_t2_s for r in records)
    mean_latency_ms = (total_t2 / total_steps * 1e3) if total_steps else 0.0

    def mean(vals):
        vals = list(vals)
        return sum(vals) / len(vals) if vals else None

    return QofReport(
        n_episodes=len(records),
        success_rate=100.0 * len(wins) / len(records),
        mean_flight_time=mean(r.flight_time for r in wins),
        mean_distance=mean(r.distance for r in wins),
        mean_energy_kj=mean(r.energy_kj for r in wins),
        mean_latency_ms=mean_latency_ms,
        env_hash=env_hash,
        checkpoint_id=checkpoint_id,
    )


@dataclass(frozen=True)
class GapReport:
    """Per-metric hardware gap between a baseline and a target report."""

    flight_time_pct: float | None
    distance_pct: float | None
    energy_pct: float | None
    latency_pct: float | None
    success_rate_points: float
    baseline_id: str = ""
    target_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "GapReport":
        return cls(**raw)


def _rel_gap(baseline: float | None, target: float | None) -> float | None:
    if baseline is None or target is None or baseline == 0:
        return None
    return (target - baseline) / baseline * 100.0


def perf_gap(baseline: QofReport, target: QofReport) -> GapReport:
    """Relative QoF gaps of target vs baseline; success gap in points."""
    if baseline.env_hash != target.env_hash:
        raise ValueError(
            f"reports are not comparable: env hash {baseline.env_hash!r} "
            f"vs {target.env_hash!r}")
    return GapReport(
        flight_time_pct=_rel_gap(baseline.mean_flight_time, target.mean_flight_time),
        distance_pct=_rel_gap(baseline.mean_distance, target.mean_distance),
        energy_pct=_rel_gap(baseline.mean_energy_kj, target.mean_energy_kj),
        latency_pct=_rel_gap(baseline.mean_latency_ms, target.mean_latency_ms),
        success_rate_points=baseline.success_rate - target.success_rate,
        baseline_id=baseline.checkpoint_id,
        target_id=target.checkpoint_id,
    )


@dataclass(frozen=True)
class MitigationReport:
    gap_with: GapReport
    gap_without: GapReport
    ratio: dict  # |with| / |without| per metric, None where undefined

    def to_dict(self) -> dict:
        return {"gap_with_mitigation": self.gap_with.to_dict(),
                "gap_without_mitigation": self.gap_without.to_dict(),
                "gap_ratio": self.ratio}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def mitigation_report(train_host_report: QofReport,
                      target_with_mitigation: QofReport,
                      target_without_mitigation: QofReport) -> MitigationReport:
    """Both gap columns against a shared training-host baseline, plus ratios."""
    gap_with = perf_gap(train_host_report, target_with_mitigation)
    gap_without = perf_gap(train_host_report, target_without_mitigation)

    def ratio(a, b):
        if a is None or b is None or b == 0:
            return None
        return abs(a) / abs(b)

    ratios = {
        "flight_time": ratio(gap_with.flight_time_pct, gap_without.flight_time_pct),
        "distance": ratio(gap_with.distance_pct, gap_without.distance_pct),
        "energy": ratio(gap_with.energy_pct, gap_without.energy_pct),
        "success_rate": ratio(gap_with.success_rate_points,
                              gap_without.success_rate_points),
    }
    return MitigationReport(gap_with, gap_without, ratios)


# --- rendering -----------------------------------------------------------------

def _fmt(value, unit: str = "") -> str:
    if value is None:
        return "-"
    return f"{value:.2f}{unit}"


def render_report(report: QofReport, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"  episodes            {report.n_episodes}")
    lines.append(f"  success rate        {report.success_rate:.2f} %")
    lines.append(f"  mean flight time    {_fmt(report.mean_flight_time, ' s')}")
    lines.append(f"  mean distance       {_fmt(report.mean_distance, ' m')}")
    lines.append(f"  mean energy         {_fmt(report.mean_energy_kj, ' kJ')}")
    lines.append(f"  mean latency        {report.mean_latency_ms:.2f} ms")
    return "\n".join(lines)


def render_gap(gap: GapReport, title: str = "Performance gap") -> str:
    lines = [title]
    lines.append(f"  flight time   {_fmt(gap.flight_time_pct, ' %')}")
    lines.append(f"  distance      {_fmt(gap.distance_pct, ' %')}")
    lines.append(f"  energy        {_fmt(gap.energy_pct, ' %')}")
    lines.append(f"  latency       {_fmt(gap.latency_pct, ' %')}")
    lines.append(f"  success rate  {gap.success_rate_points:.2f} points")
    return "\n".join(lines)


def render_mitigation(rep: MitigationReport) -> str:
    lines = ["Mitigation comparison (gap vs training host)"]
    rows = [
        ("flight time", rep.gap_with.flight_time_pct, rep.gap_without.flight_time_pct),
        ("distance", rep.gap_with.distance_pct, rep.gap_without.distance_pct),
        ("energy", rep.gap_with.energy_pct, rep.gap_without.energy_pct),
        ("success rate (pts)", rep.gap_with.success_rate_points,
         rep.gap_without.success_rate_points),
    ]
    lines.append(f"  {'metric':<20}{'with mitigation':>18}{'without':>12}")
    for name, w, wo in rows:
        lines.append(f"  {name:<20}{_fmt(w):>18}{_fmt(wo):>12}")
    return "\n".join(lines)


def trajectory_svg(trajectories, arena_size, path, labels=None) -> None:
    """Overlay trajectory polylines in an SVG (two-run comparison plots).

    `trajectories` is a sequence of (x, y) point lists in world coordinates.
    """
    half_l, half_w = arena_size[0] / 2.0, arena_size[1] / 2.0
    scale = 600.0 / max(arena_size[0], arena_size[1])
    width, height = arena_size[0] * scale + 40, arena_size[1] * scale + 40
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")

    def to_px(x, y):
        return 20 + (x + half_l) * scale, 20 + (half_w - y) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
             f'height="{height:.0f}">']
    x0, y0 = to_px(-half_l, half_w)
    parts.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{arena_size[0]*scale:.1f}" '
                 f'height="{arena_size[1]*scale:.1f}" fill="none" stroke="black"/>')
    for i, pts in enumerate(trajectories):
        color = colors[i % len(colors)]
        coords = " ".join(f"{px:.1f},{py:.1f}" for px, py in (to_px(x, y) for x, y in pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        if labels and i < len(labels):
            parts.append(f'<text x="25" y="{35 + 15 * i}" fill="{color}" '
                         f'font-size="12">{labels[i]}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
