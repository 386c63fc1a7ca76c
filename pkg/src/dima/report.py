"""Deterministic SVG charts for loss logs and metric reports.

Hand-rolled SVG keeps the byte output a pure function of the input CSV, which
makes golden-file tests meaningful.
"""

from __future__ import annotations

from dima.errors import ConfigError

_W, _H = 860.0, 480.0
_ML, _MR, _MT, _MB = 60.0, 160.0, 20.0, 40.0

_LOSS_COLUMNS = ("planning", "llm", "recon", "future", "distill", "edit", "total")
_METRIC_COLUMNS = ("ave_123", "ave_all", "collision_rate")

_PALETTE = ("#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d68910", "#16a085",
            "#2c3e50", "#7f8c8d")


def _fmt(x: float) -> str:
    return format(x, ".2f").rstrip("0").rstrip(".") or "0"


def _parse_csv(text: str, required: tuple[str, ...]) -> tuple[list[str], list[list[str]]]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ConfigError("row 1: empty csv")
    header = lines[0].split(",")
    for column in required:
        if column not in header:
            raise ConfigError(f"missing column {column!r}")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ConfigError(f"row {i}: expected {len(header)} cells, got {len(cells)}")
        rows.append(cells)
    return header, rows


def _floats(rows: list[list[str]], header: list[str], column: str) -> list[float]:
    idx = header.index(column)
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            out.append(float(row[idx]))
        except ValueError as exc:
            raise ConfigError(f"row {i}: bad number {row[idx]!r} in {column}") from exc
    return out


def _frame(parts: list[str]) -> str:
    parts.append("</svg>")
    return "".join(parts)


def _open_svg() -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(_W)}" '
        f'height="{_fmt(_H)}" viewBox="0 0 {_fmt(_W)} {_fmt(_H)}">',
        f'<rect width="{_fmt(_W)}" height="{_fmt(_H)}" fill="white"/>',
        f'<line x1="{_fmt(_ML)}" y1="{_fmt(_H - _MB)}" x2="{_fmt(_W - _MR)}" '
        f'y2="{_fmt(_H - _MB)}" stroke="black"/>',
        f'<line x1="{_fmt(_ML)}" y1="{_fmt(_MT)}" x2="{_fmt(_ML)}" '
        f'y2="{_fmt(_H - _MB)}" stroke="black"/>',
    ]


def _legend(parts: list[str], labels: list[str]) -> None:
    x = _W - _MR + 14.0
    for i, label in enumerate(labels):
        y = _MT + 16.0 * (i + 1)
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y - 8)}" width="10" height="10" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{_fmt(x + 14)}" y="{_fmt(y)}" font-size="12" '
                     f'font-family="monospace">{label}</text>')


def loss_curves_svg(csv_text: str) -> str:
    """Line chart of every loss column over steps."""
    header, rows = _parse_csv(csv_text, required=("step",) + _LOSS_COLUMNS)
    parts = _open_svg()
    _legend(parts, list(_LOSS_COLUMNS))
    if rows:
        steps = _floats(rows, header, "step")
        series = {c: _floats(rows, header, c) for c in _LOSS_COLUMNS}
        lo_x, hi_x = min(steps), max(steps)
        hi_y = max(max(vals) for vals in series.values()) or 1.0
        span_x = (hi_x - lo_x) or 1.0
        for i, column in enumerate(_LOSS_COLUMNS):
            pts = []
            for s, v in zip(steps, series[column]):
                px = _ML + (s - lo_x) / span_x * (_W - _ML - _MR)
                py = (_H - _MB) - max(v, 0.0) / hi_y * (_H - _MT - _MB)
                pts.append(f"{_fmt(px)},{_fmt(py)}")
            parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                         f'stroke="{_PALETTE[i % len(_PALETTE)]}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_fmt(_ML)}" y="{_fmt(_MT - 4)}" font-size="12" '
                     f'font-family="monospace">max {_fmt(hi_y)}</text>')
    return _frame(parts)


def metrics_bars_svg(csv_text: str) -> str:
    """Grouped bars per (split, protocol) row for the headline metrics."""
    header, rows = _parse_csv(csv_text, required=("split", "protocol") + _METRIC_COLUMNS)
    parts = _open_svg()
    _legend(parts, list(_METRIC_COLUMNS))
    if rows:
        values = {c: _floats(rows, header, c) for c in _METRIC_COLUMNS}
        hi = max(max(v) for v in values.values()) or 1.0
        n_groups = len(rows)
        group_w = (_W - _ML - _MR) / n_groups
        bar_w = group_w / (len(_METRIC_COLUMNS) + 1)
        s_idx, p_idx = header.index("split"), header.index("protocol")
        for g, row in enumerate(rows):
            x0 = _ML + g * group_w
            for i, column in enumerate(_METRIC_COLUMNS):
                v = max(values[column][g], 0.0)
                h = v / hi * (_H - _MT - _MB)
                parts.append(
                    f'<rect x="{_fmt(x0 + i * bar_w + bar_w / 2)}" '
                    f'y="{_fmt(_H - _MB - h)}" width="{_fmt(bar_w)}" height="{_fmt(h)}" '
                    f'fill="{_PALETTE[i % len(_PALETTE)]}"/>')
            label = f"{row[s_idx]}/{row[p_idx]}"
            parts.append(f'<text x="{_fmt(x0 + group_w / 2)}" y="{_fmt(_H - _MB + 16)}" '
                         f'font-size="11" font-family="monospace" '
                         f'text-anchor="middle">{label}</text>')
        parts.append(f'<text x="{_fmt(_ML)}" y="{_fmt(_MT - 4)}" font-size="12" '
                     f'font-family="monospace">max {_fmt(hi)}</text>')
    return _frame(parts)
