"""Deterministic SVG renderings of scenarios and executed trajectories."""

from __future__ import annotations

import math
from pathlib import Path

from .env import comm_range_radius, RANGE_RATE_THRESHOLD
from .scenario import ScenarioConfig

_AGENT_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
_MARGIN = 1.5
_SCALE = 48.0  # pixels per world unit


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _star_path(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        rad = r if k % 2 == 0 else 0.4 * r
        ang = -math.pi / 2 + k * math.pi / 5
        pts.append(f"{_fmt(cx + rad * math.cos(ang))},{_fmt(cy + rad * math.sin(ang))}")
    return "M" + " L".join(pts) + " Z"


def render_svg(scenario: ScenarioConfig,
               agent_paths: list[list[tuple[float, float]]] | None = None) -> str:
    """Scenario glyphs plus optional per-agent polylines; byte-deterministic."""
    xs = [t.position[0] for t in scenario.targets]
    ys = [t.position[1] for t in scenario.targets]
    for a in scenario.agents:
        xs += [a.start[0], a.final[0]]
        ys += [a.start[1], a.final[1]]
    if agent_paths:
        for path in agent_paths:
            xs += [p[0] for p in path]
            ys += [p[1] for p in path]
    x0, x1 = min(xs) - _MARGIN, max(xs) + _MARGIN
    y0, y1 = min(ys) - _MARGIN, max(ys) + _MARGIN
    width = (x1 - x0) * _SCALE
    height = (y1 - y0) * _SCALE

    def px(x: float) -> float:
        return (x - x0) * _SCALE

    def py(y: float) -> float:
        return height - (y - y0) * _SCALE  # world y grows upward

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="#ffffff"/>',
    ]
    # Communication-range disks (rate >= threshold), then target stars.
    for t in scenario.targets:
        total = comm_range_radius(t.bandwidth, t.gain, RANGE_RATE_THRESHOLD)
        height_sq = scenario.agents[0].height ** 2 if scenario.agents else 0.0
        planar = math.sqrt(max(0.0, total * total - height_sq))
        parts.append(
            f'<circle cx="{_fmt(px(t.position[0]))}" cy="{_fmt(py(t.position[1]))}" '
            f'r="{_fmt(planar * _SCALE)}" fill="#d62728" fill-opacity="0.12" '
            f'stroke="#d62728" stroke-opacity="0.35"/>'
        )
    for t in scenario.targets:
        parts.append(
            f'<path d="{_star_path(px(t.position[0]), py(t.position[1]), 8.0)}" '
            f'fill="#d62728"/>'
        )
    # Trajectories.
    if agent_paths:
        for j, path in enumerate(agent_paths):
            color = _AGENT_COLORS[j % len(_AGENT_COLORS)]
            points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in path)
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" '
                f'stroke-width="2"/>'
            )
    # Start dots and final crosses.
    for j, a in enumerate(scenario.agents):
        color = _AGENT_COLORS[j % len(_AGENT_COLORS)]
        parts.append(
            f'<circle cx="{_fmt(px(a.start[0]))}" cy="{_fmt(py(a.start[1]))}" '
            f'r="5" fill="{color}"/>'
        )
        fx, fy = px(a.final[0]), py(a.final[1])
        parts.append(
            f'<path d="M{_fmt(fx - 6)},{_fmt(fy - 6)} L{_fmt(fx + 6)},{_fmt(fy + 6)} '
            f'M{_fmt(fx - 6)},{_fmt(fy + 6)} L{_fmt(fx + 6)},{_fmt(fy - 6)}" '
            f'stroke="{color}" stroke-width="2.5"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def paths_from_trajectory_rows(rows: list[dict]) -> list[list[tuple[float, float]]]:
    """Group trajectory CSV rows into per-agent (x, y) paths, step-ordered."""
    by_agent: dict[int, list[tuple[int, float, float]]] = {}
    for row in rows:
        try:
            agent = int(row["agent_id"])
            entry = (int(row["step"]), float(row["x"]), float(row["y"]))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed trajectory row {row!r}") from exc
        by_agent.setdefault(agent, []).append(entry)
    paths = []
    for agent in sorted(by_agent):
        ordered = sorted(by_agent[agent])
        paths.append([(x, y) for _, x, y in ordered])
    return paths


def write_svg(path: str | Path, scenario: ScenarioConfig,
              agent_paths=None) -> None:
    Path(path).write_text(render_svg(scenario, agent_paths))
