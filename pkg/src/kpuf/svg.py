"""Dependency-free SVG error-bar plot of per-cell credible intervals."""

import numpy as np

WIDTH = 1000
HEIGHT = 600
_MARGIN = dict(left=70, right=20, top=40, bottom=50)


def _fmt(v):
    return f"{v:.2f}"


def interval_plot(screen, cells):
    """Return SVG text with one marker and one bar per cell in ``cells``.

    ``screen`` is a :class:`~kpuf.stats.CellEffectScreen`.  Cells whose
    interval excludes zero are drawn in red.
    """
    cells = np.asarray(cells, dtype=int)
    lo, med, hi = screen.lower[cells], screen.median[cells], screen.upper[cells]
    flagged = screen.flagged[cells]
    ymin = min(float(lo.min()), 0.0)
    ymax = max(float(hi.max()), 0.0)
    pad = 0.05 * (ymax - ymin or 1.0)
    ymin, ymax = ymin - pad, ymax + pad
    x0, x1 = _MARGIN["left"], WIDTH - _MARGIN["right"]
    y0, y1 = _MARGIN["top"], HEIGHT - _MARGIN["bottom"]

    def sx(i):
        return x0 + (i + 0.5) * (x1 - x0) / len(cells)

    def sy(v):
        return y1 - (v - ymin) * (y1 - y0) / (ymax - ymin)

    pct = int(round(screen.level * 100))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">Cell effects, {pct}% credible intervals</text>',
        f'<line x1="{x0}" y1="{_fmt(sy(0.0))}" x2="{x1}" y2="{_fmt(sy(0.0))}" '
        'stroke="black" stroke-dasharray="4 3"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for v in np.linspace(ymin, ymax, 5):
        out.append(
            f'<text x="{x0 - 6}" y="{_fmt(sy(v) + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{v:.2f}</text>'
        )
    step = max(1, len(cells) // 10)
    for i, (c, a, m, b, f) in enumerate(zip(cells, lo, med, hi, flagged)):
        colour = "red" if f else "steelblue"
        x = _fmt(sx(i))
        out.append(f'<line x1="{x}" y1="{_fmt(sy(a))}" x2="{x}" y2="{_fmt(sy(b))}" stroke="{colour}"/>')
        out.append(f'<circle cx="{x}" cy="{_fmt(sy(m))}" r="3" fill="{colour}"/>')
        if i % step == 0:
            out.append(
                f'<text x="{x}" y="{y1 + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{c}</text>'
            )
    out.append(
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 10}" text-anchor="middle" '
        'font-family="sans-serif" font-size="13">cell</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
