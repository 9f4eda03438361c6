"""Minimal standalone SVG charts (scatter and step/line plots).

Only what the report bundles need: linear axes, five ticks per axis,
points coloured by an integer label, an optional title.
"""

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 32, 48


def _range(a):
    lo, hi = float(np.min(a)), float(np.max(a))
    if hi == lo:
        pad = 1.0 if lo == 0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, x, y):
        self.x0, self.x1 = _range(x)
        self.y0, self.y1 = _range(y)

    def px(self, x):
        return LEFT + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y):
        return H - BOTTOM - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)

    def axes(self, title, xlabel, ylabel):
        out = [
            f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" fill="none" stroke="#333"/>'
        ]
        for t in np.linspace(self.x0, self.x1, 5):
            X = self.px(t)
            out.append(f'<line x1="{X:.2f}" y1="{H - BOTTOM}" x2="{X:.2f}" y2="{H - BOTTOM + 4}" stroke="#333"/>')
            out.append(f'<text x="{X:.2f}" y="{H - BOTTOM + 16}" font-size="10" text-anchor="middle">{t:.3g}</text>')
        for t in np.linspace(self.y0, self.y1, 5):
            Y = self.py(t)
            out.append(f'<line x1="{LEFT - 4}" y1="{Y:.2f}" x2="{LEFT}" y2="{Y:.2f}" stroke="#333"/>')
            out.append(f'<text x="{LEFT - 6}" y="{Y + 3:.2f}" font-size="10" text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{W / 2}" y="{TOP - 12}" font-size="13" text-anchor="middle">{escape(title)}</text>')
        out.append(f'<text x="{W / 2}" y="{H - 10}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(
            f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>'
        )
        return out


def _document(body):
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>", ""])


def scatter(path, x, y, labels=None, title="", xlabel="", ylabel=""):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    labels = np.zeros(len(x), dtype=int) if labels is None else np.asarray(labels).astype(int)
    f = _Frame(x, y)
    body = f.axes(title, xlabel, ylabel)
    for X, Y, c in zip(f.px(x), f.py(y), labels):
        body.append(f'<circle cx="{X:.2f}" cy="{Y:.2f}" r="2.5" fill="{PALETTE[c % len(PALETTE)]}" fill-opacity="0.8"/>')
    text = _document(body)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def line(path, x, y, title="", xlabel="", ylabel="", diagonal=False):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    f = _Frame(np.concatenate([x, [0.0, 1.0]]) if diagonal else x, np.concatenate([y, [0.0, 1.0]]) if diagonal else y)
    body = f.axes(title, xlabel, ylabel)
    if diagonal:
        body.append(
            f'<line x1="{f.px(0):.2f}" y1="{f.py(0):.2f}" x2="{f.px(1):.2f}" y2="{f.py(1):.2f}" stroke="#999" stroke-dasharray="4 3"/>'
        )
    pts = " ".join(f"{X:.2f},{Y:.2f}" for X, Y in zip(f.px(x), f.py(y)))
    body.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[0]}" stroke-width="1.5"/>')
    text = _document(body)
    with open(path, "w") as fh:
        fh.write(text)
    return text
