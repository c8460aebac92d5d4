"""Minimal hand-written SVG line charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .harness import AggregateReport, RunLog

W, H = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)
BLUE, RED, GREEN, GREY = "#1f77b4", "#d62728", "#2ca02c", "#7f7f7f"


class Chart:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.items = []          # (kind, payload)
        self.xs, self.ys = [], []

    def _track(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        self.xs.extend(x[ok])
        self.ys.extend(y[ok])

    def line(self, x, y, color, label=None, cls="series", dash=None):
        self._track(x, y)
        self.items.append(("line", (np.asarray(x, float), np.asarray(y, float), color, label, cls, dash)))

    def band(self, x, lo, hi, color):
        self._track(x, lo)
        self._track(x, hi)
        self.items.append(("band", (np.asarray(x, float), np.asarray(lo, float),
                                    np.asarray(hi, float), color)))

    def vline(self, x, color=GREY, label=None):
        self.xs.append(float(x))
        self.items.append(("vline", (float(x), color, label)))

    def shade_from(self, x, color=RED):
        self.xs.append(float(x))
        self.items.append(("shade", (float(x), color)))

    def marker(self, x, y, color):
        self._track([x], [y])
        self.items.append(("marker", (float(x), float(y), color)))

    def _limits(self):
        def lim(v):
            if not v:
                return 0.0, 1.0
            lo, hi = float(min(v)), float(max(v))
            if hi - lo < 1e-12:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.05 * (hi - lo)
            return lo - pad, hi + pad
        return lim(self.xs), lim(self.ys)

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        pl, pr, pt, pb = MARGIN["left"], W - MARGIN["right"], MARGIN["top"], H - MARGIN["bottom"]
        sx = lambda x: pl + (x - x0) / (x1 - x0) * (pr - pl)
        sy = lambda y: pb - (y - y0) / (y1 - y0) * (pb - pt)

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
               f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
        for kind, p in self.items:
            if kind == "shade":
                xa = max(sx(p[0]), pl)
                out.append(f'<rect class="attack-region" x="{xa:.2f}" y="{pt}" width="{max(pr - xa, 0):.2f}" '
                           f'height="{pb - pt}" fill="{p[1]}" fill-opacity="0.08"/>')
        out.append(f'<g class="axes" stroke="black" fill="none">'
                   f'<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}"/>'
                   f'<line x1="{pl}" y1="{pb}" x2="{pl}" y2="{pt}"/></g>')
        for t in np.linspace(x0, x1, 6):
            out.append(f'<text x="{sx(t):.2f}" y="{pb + 16}" text-anchor="middle">{t:.3g}</text>')
        for t in np.linspace(y0, y1, 6):
            out.append(f'<text x="{pl - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
        out.append(f'<text x="{W / 2}" y="{pt - 16}" text-anchor="middle" font-size="14">{escape(self.title)}</text>')
        out.append(f'<text x="{(pl + pr) / 2}" y="{H - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{(pt + pb) / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(pt + pb) / 2})">{escape(self.ylabel)}</text>')

        legend = []
        for kind, p in self.items:
            if kind == "band":
                x, lo, hi, color = p
                ok = np.isfinite(x) & np.isfinite(lo) & np.isfinite(hi)
                if ok.sum() < 2:
                    continue
                pts = [(sx(a), sy(b)) for a, b in zip(x[ok], hi[ok])]
                pts += [(sx(a), sy(b)) for a, b in zip(x[ok][::-1], lo[ok][::-1])]
                s = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
                out.append(f'<polygon class="band" points="{s}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            elif kind == "line":
                x, y, color, label, cls, dash = p
                ok = np.isfinite(x) & np.isfinite(y)
                if ok.sum() < 1:
                    continue
                s = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
                extra = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline class="{cls}" points="{s}" fill="none" stroke="{color}" '
                           f'stroke-width="2"{extra}/>')
                if label:
                    legend.append((label, color))
            elif kind == "vline":
                xv, color, label = p
                out.append(f'<line class="onset" x1="{sx(xv):.2f}" y1="{pt}" x2="{sx(xv):.2f}" y2="{pb}" '
                           f'stroke="{color}" stroke-dasharray="4 3"/>')
                if label:
                    legend.append((label, color))
            elif kind == "marker":
                xm, ym, color = p
                out.append(f'<circle class="marker" cx="{sx(xm):.2f}" cy="{sy(ym):.2f}" r="4" fill="{color}"/>')
        for i, (label, color) in enumerate(legend):
            y = pt + 14 + 16 * i
            out.append(f'<line x1="{pr - 150}" y1="{y - 4}" x2="{pr - 130}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{pr - 125}" y="{y}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def trajectories_chart(log: RunLog, onset: int | None = None) -> Chart:
    c = Chart(f"Trial {log.trial}: trajectories", "x [m]", "y [m]")
    X = log.x_true
    c.line(X[:, 0], X[:, 1], BLUE, "evader (true)")
    c.line(X[:, 4], X[:, 5], RED, "pursuer (true)")
    c.line(log.xhat_L[:, 4], log.xhat_L[:, 5], RED, "pursuer (linear est.)", dash="6 3")
    c.line(log.xhat_Q[:, 4], log.xhat_Q[:, 5], GREEN, "pursuer (quadratic est.)", dash="2 2")
    if onset is not None and onset < X.shape[0]:
        c.marker(X[onset, 4], X[onset, 5], "black")
    return c


def mse_chart(report: AggregateReport) -> Chart:
    c = Chart("Observer MSE (mean and SE band)", "k", "MSE")
    if report.onset is not None:
        c.vline(report.onset, label="attack onset")
    c.band(report.k, report.mse_L_mean - report.mse_L_se, report.mse_L_mean + report.mse_L_se, RED)
    c.band(report.k, report.mse_Q_mean - report.mse_Q_se, report.mse_Q_mean + report.mse_Q_se, BLUE)
    c.line(report.k, report.mse_L_mean, RED, "linear observer", cls="mean")
    c.line(report.k, report.mse_Q_mean, BLUE, "quadratic observer", cls="mean")
    return c


def mmd_chart(report: AggregateReport) -> Chart:
    c = Chart("MMD statistic vs bootstrap threshold", "k", "squared MMD")
    if report.onset is not None:
        c.shade_from(report.onset)
        c.vline(report.onset, label="attack onset")
    c.band(report.k, report.mmd_mean - report.mmd_se, report.mmd_mean + report.mmd_se, BLUE)
    c.band(report.k, report.thr_mean - report.thr_se, report.thr_mean + report.thr_se, GREY)
    c.line(report.k, report.mmd_mean, BLUE, "statistic", cls="mean")
    c.line(report.k, report.thr_mean, GREY, "threshold", cls="mean")
    return c


def export_svg(obj, kind: str, path, onset: int | None = None) -> Path:
    """Render a RunLog (``trajectories``) or AggregateReport (``mse``, ``mmd``)."""
    if kind == "trajectories":
        if not isinstance(obj, RunLog):
            raise TypeError("trajectories plot needs a RunLog")
        chart = trajectories_chart(obj, onset)
    elif kind in ("mse", "mmd"):
        if not isinstance(obj, AggregateReport):
            raise TypeError(f"{kind} plot needs an AggregateReport")
        chart = mse_chart(obj) if kind == "mse" else mmd_chart(obj)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(chart.render())
    return path
