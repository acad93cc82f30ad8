"""Dependency-free SVG plots with machine-readable ``data-*`` attributes."""

from __future__ import annotations

from html import escape

import numpy as np

WIDTH, HEIGHT, PAD = 640, 480, 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return repr(float(v))


def _px(v: float) -> str:
    return f"{v:.3f}"


class _Axes:
    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v):
        v = v[np.isfinite(v)]
        if v.size == 0:
            return -1.0, 1.0
        lo, hi = float(v.min()), float(v.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def X(self, x):
        return PAD + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * PAD)

    def Y(self, y):
        return HEIGHT - PAD - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * PAD)


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str, kind: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-kind="{kind}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<g class="axes" data-xmin="{_fmt(ax.x0)}" data-xmax="{_fmt(ax.x1)}" '
        f'data-ymin="{_fmt(ax.y0)}" data-ymax="{_fmt(ax.y1)}">',
        f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" '
        'fill="none" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{HEIGHT - PAD + 16}" font-size="10">{ax.x0:.3g}</text>',
        f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" text-anchor="end" font-size="10">{ax.x1:.3g}</text>',
        f'<text x="{PAD - 4}" y="{HEIGHT - PAD}" text-anchor="end" font-size="10">{ax.y0:.3g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 8}" text-anchor="end" font-size="10">{ax.y1:.3g}</text>',
        "</g>",
    ]


def _legend(colors: dict) -> list:
    out = []
    for i, (name, col) in enumerate(colors.items()):
        y = PAD + 14 + 16 * i
        out.append(f'<circle cx="{WIDTH - PAD - 90}" cy="{y - 4}" r="4" fill="{col}"/>')
        out.append(f'<text x="{WIDTH - PAD - 80}" y="{y}" font-size="11">{escape(name)}</text>')
    return out


def emit_plot(records, kind: str = "scatter") -> str:
    """Render run records as an SVG document.

    Args:
        records: Iterable of dicts with ``run_id``, ``variant`` and either
            ``final`` (scatter) or ``trace`` rows ``(step, t, grad_norm, x...)``
            (trajectory). Records missing the needed field are skipped.
        kind: ``"scatter"`` of final samples (1D or 2D) or ``"trajectory"``
            of optimization iterates.

    Returns:
        The SVG text; identical input gives identical bytes.
    """
    recs = list(records)
    variants = []
    for r in recs:
        if r["variant"] not in variants:
            variants.append(r["variant"])
    colors = {v: PALETTE[i % len(PALETTE)] for i, v in enumerate(variants)}
    if kind == "scatter":
        pts = [(r, np.asarray(r["final"], dtype=float)) for r in recs if r.get("final") is not None]
        dims = {p.size for _, p in pts}
        if dims - {1, 2}:
            raise ValueError(f"scatter supports 1D or 2D samples, got dimensions {sorted(dims)}")
        rows = {v: i for i, v in enumerate(variants)}
        xy = [(p[0], p[1] if p.size == 2 else float(rows[r["variant"]])) for r, p in pts]
        ax = _Axes([a for a, _ in xy], [b for _, b in xy])
        oned = dims == {1}
        out = _frame(ax, "final samples", "x0", "variant" if oned else "x1", kind)
        out.append('<g class="points">')
        for (r, p), (a, b) in zip(pts, xy):
            out.append(
                f'<circle cx="{_px(ax.X(a))}" cy="{_px(ax.Y(b))}" r="3" fill="{colors[r["variant"]]}" '
                f'fill-opacity="0.7" data-run="{escape(str(r["run_id"]))}" '
                f'data-variant="{escape(r["variant"])}" '
                + " ".join(f'data-x{i}="{_fmt(v)}"' for i, v in enumerate(p)) + "/>")
        out.append("</g>")
    elif kind == "trajectory":
        trs = [(r, np.asarray(r["trace"], dtype=float)) for r in recs if r.get("trace") is not None]
        lead = 3
        dims = {tr.shape[1] - lead for _, tr in trs}
        if dims - {1, 2}:
            raise ValueError(f"trajectory supports 1D or 2D iterates, got dimensions {sorted(dims)}")
        oned = dims == {1} or not dims
        if oned:
            xs = [v for _, tr in trs for v in tr[:, 0]]
            ys = [v for _, tr in trs for v in tr[:, lead]]
        else:
            xs = [v for _, tr in trs for v in tr[:, lead]]
            ys = [v for _, tr in trs for v in tr[:, lead + 1]]
        ax = _Axes(xs, ys)
        out = _frame(ax, "optimization trajectories", "step" if oned else "x0",
                     "x0" if oned else "x1", kind)
        for r, tr in trs:
            col = colors[r["variant"]]
            coords = [(row[0], row[lead]) if oned else (row[lead], row[lead + 1]) for row in tr]
            poly = " ".join(f"{_px(ax.X(a))},{_px(ax.Y(b))}" for a, b in coords)
            out.append(f'<g class="run" data-run="{escape(str(r["run_id"]))}" '
                       f'data-variant="{escape(r["variant"])}" data-points="{len(tr)}">')
            out.append(f'<polyline points="{poly}" fill="none" stroke="{col}" stroke-opacity="0.6"/>')
            for row, (a, b) in zip(tr, coords):
                out.append(f'<circle cx="{_px(ax.X(a))}" cy="{_px(ax.Y(b))}" r="1.5" fill="{col}" '
                           f'data-step="{int(row[0])}" '
                           + " ".join(f'data-x{i}="{_fmt(v)}"' for i, v in enumerate(row[lead:])) + "/>")
            out.append("</g>")
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    out += _legend(colors)
    out.append("</svg>")
    return "\n".join(out) + "\n"
