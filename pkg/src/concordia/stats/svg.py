"""Minimal standalone SVG 1.1 plots: axes, polylines, markers, coloured cells."""

from xml.sax.saxutils import escape

W, H = 420, 420
M = 50  # margin around the plot area


def _f(v):
    return f"{v:.2f}"


class Plot:
    def __init__(self, title, xlabel, ylabel, xlim=(0.0, 1.0), ylim=(0.0, 1.0)):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.xlim, self.ylim = xlim, ylim
        self.items = []

    def px(self, x, y):
        x0, x1 = self.xlim
        y0, y1 = self.ylim
        sx = (x - x0) / (x1 - x0) if x1 > x0 else 0.5
        sy = (y - y0) / (y1 - y0) if y1 > y0 else 0.5
        return M + sx * (W - 2 * M), H - M - sy * (H - 2 * M)

    def line(self, pts, color="#1f4e9a", dash=False, width=1.5):
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in (self.px(x, y) for x, y in pts))
        extra = ' stroke-dasharray="4,3"' if dash else ""
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def points(self, pts, color="#b03030", r=3.0):
        for x, y in pts:
            a, b = self.px(x, y)
            self.items.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="{r}" fill="{color}" fill-opacity="0.7"/>')

    def text(self, x, y, s, size=11):
        a, b = self.px(x, y)
        self.items.append(f'<text x="{_f(a)}" y="{_f(b)}" font-size="{size}">{escape(s)}</text>')

    def render(self):
        x0, x1 = self.xlim
        y0, y1 = self.ylim
        out = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<rect x="{M}" y="{M}" width="{W - 2 * M}" height="{H - 2 * M}" fill="none" stroke="black"/>',
        ]
        for i in range(5):
            t = i / 4
            xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
            a, _ = self.px(xv, y0)
            _, b = self.px(x0, yv)
            out.append(f'<text x="{_f(a)}" y="{H - M + 16}" font-size="10" text-anchor="middle">{xv:.2f}</text>')
            out.append(f'<text x="{M - 6}" y="{_f(b + 3)}" font-size="10" text-anchor="end">{yv:.2f}</text>')
        out.append(f'<text x="{W / 2}" y="{M - 16}" font-size="13" text-anchor="middle">{escape(self.title)}</text>')
        out.append(f'<text x="{W / 2}" y="{H - 12}" font-size="11" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 14 {H / 2})">{escape(self.ylabel)}</text>')
        out.extend(self.items)
        out.append("</svg>")
        return "\n".join(out) + "\n"


def ramp(v):
    """Blue-to-red colour for v in [0, 1]."""
    v = min(max(float(v), 0.0), 1.0)
    r, g, b = int(40 + 200 * v), int(70 + 60 * (1 - abs(2 * v - 1))), int(220 - 190 * v)
    return f"#{r:02x}{g:02x}{b:02x}"


def cell_grid(cells, values, grid_w, grid_h, title):
    """Grid of squares coloured by value; ``cells`` are (gx, gy) pairs."""
    size = max(4.0, min((W - 2 * M) / max(grid_w, 1), (H - 2 * M) / max(grid_h, 1)))
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="{M - 16}" font-size="13" text-anchor="middle">{escape(title)}</text>',
    ]
    for (gx, gy), v in zip(cells, values):
        out.append(f'<rect x="{_f(M + gx * size)}" y="{_f(M + gy * size)}" width="{_f(size)}" '
                   f'height="{_f(size)}" fill="{ramp(v)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
