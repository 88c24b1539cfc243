"""ASCII and SVG timelines of a schedule grid."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .schedule import ScheduleGrid, task_label

# forward (odd mini-batch), forward (even mini-batch), backward, idle
COLORS = {
    "forward_odd": "#add8e6",
    "forward_even": "#00008b",
    "backward": "#008000",
    "idle": "#ffffff",
}

CELL_W = 34
CELL_H = 24
MARGIN_LEFT = 70
MARGIN_TOP = 28


def render_ascii(grid: ScheduleGrid) -> str:
    width = max((len(task_label(t)) for t in grid.tasks), default=2)
    lines = []
    for stage in range(1, grid.workers + 1):
        cells = []
        for slot in range(1, grid.horizon + 1):
            task = grid.at(stage, slot)
            cells.append((task_label(task) if task else "").ljust(width))
        lines.append(" ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _fill(task) -> str:
    if task is None:
        return COLORS["idle"]
    if not task.is_forward:
        return COLORS["backward"]
    return COLORS["forward_odd"] if task.mini % 2 else COLORS["forward_even"]


def render_svg(grid: ScheduleGrid) -> str:
    T, W = grid.horizon, grid.workers
    width = MARGIN_LEFT + T * CELL_W + 10
    height = MARGIN_TOP + W * CELL_H + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f"<title>{escape(grid.mode)} schedule W={W} N={grid.config.micro_batches} "
        f"M={grid.config.mini_batches}</title>",
    ]
    for slot in range(1, T + 1):
        x = MARGIN_LEFT + (slot - 1) * CELL_W + CELL_W / 2
        parts.append(f'<text x="{x:g}" y="{MARGIN_TOP - 8}" text-anchor="middle">{slot}</text>')
    for stage in range(1, W + 1):
        y = MARGIN_TOP + (stage - 1) * CELL_H
        parts.append(f'<text x="4" y="{y + CELL_H * 0.65:g}">worker {stage}</text>')
        for slot in range(1, T + 1):
            task = grid.at(stage, slot)
            x = MARGIN_LEFT + (slot - 1) * CELL_W
            parts.append(
                f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" '
                f'fill="{_fill(task)}" stroke="#444444" stroke-width="0.5"/>'
            )
            if task is not None:
                ink = "#ffffff" if _fill(task) != COLORS["forward_odd"] else "#000000"
                parts.append(
                    f'<text x="{x + CELL_W / 2:g}" y="{y + CELL_H * 0.65:g}" '
                    f'text-anchor="middle" fill="{ink}">{escape(task_label(task))}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_timeline(grid: ScheduleGrid, format: str = "ascii") -> str:
    if format == "ascii":
        return render_ascii(grid)
    if format == "svg":
        return render_svg(grid)
    raise ValueError(f"unknown timeline format {format!r}")
