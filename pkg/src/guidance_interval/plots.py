"""Deterministic SVG plots.

Every renderer is a pure function of its inputs: coordinates are printed
with fixed precision and nothing depends on time or environment, so the same
inputs always give the same bytes.
"""

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import InputError
from .mixture import smoothed_density

KINDS = ("trajectory-fan", "density-heatmap", "metric-curve", "pr-curve", "histogram")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 400
ML, MR, MT, MB = 60, 20, 30, 45  # margins


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    x_range: tuple | None = None
    y_range: tuple | None = None
    resolution: int = 64
    log_sigma: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown plot kind {self.kind!r}; choose from {KINDS}")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise InputError("resolution must be a positive integer")
        for r in (self.x_range, self.y_range):
            if r is not None and not (len(r) == 2 and all(map(math.isfinite, r)) and r[0] < r[1]):
                raise InputError(f"bad axis range {r!r}")


def _f(v):
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, xr, yr, xlog=False, xflip=False, title=""):
        self.xr, self.yr, self.xlog, self.xflip = xr, yr, xlog, xflip
        self.parts = []  # frame, ticks and labels
        self.data = []  # clipped to the plot area
        self.title = title

    def _tx(self, x):
        lo, hi = self.xr
        if self.xlog:
            x, lo, hi = math.log10(x), math.log10(lo), math.log10(hi)
        t = (x - lo) / (hi - lo)
        if self.xflip:
            t = 1 - t
        return ML + t * (W - ML - MR)

    def _ty(self, y):
        lo, hi = self.yr
        return H - MB - (y - lo) / (hi - lo) * (H - MT - MB)

    def rect(self, x0, x1, y0, y1, fill, opacity=1.0):
        a, b = sorted((self._tx(x0), self._tx(x1)))
        c, d = sorted((self._ty(y0), self._ty(y1)))
        self.data.append(f'<rect x="{_f(a)}" y="{_f(c)}" width="{_f(b - a)}" height="{_f(d - c)}" '
                          f'fill="{fill}" fill-opacity="{opacity:.3f}"/>')

    def line(self, xs, ys, color, width=1.0, opacity=1.0, dash=None):
        pts = " ".join(f"{_f(self._tx(x))},{_f(self._ty(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.data.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}" stroke-opacity="{opacity:.3f}"{extra}/>')

    def dots(self, xs, ys, color, r=2.5):
        for x, y in zip(xs, ys):
            self.data.append(f'<circle cx="{_f(self._tx(x))}" cy="{_f(self._ty(y))}" r="{r}" fill="{color}"/>')

    def text(self, x, y, s, anchor="middle", size=11, rotate=None):
        rot = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}"'
                          f'{rot}>{escape(s)}</text>')

    def axes(self, xlabel, ylabel, xticks, yticks, xtick_labels=None):
        x0, x1, y0, y1 = ML, W - MR, MT, H - MB
        self.parts.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
                          'fill="none" stroke="#000"/>')
        for k, t in enumerate(xticks):
            px = self._tx(t)
            lab = xtick_labels[k] if xtick_labels else f"{t:g}"
            self.parts.append(f'<line x1="{_f(px)}" y1="{y1}" x2="{_f(px)}" y2="{y1 + 4}" stroke="#000"/>')
            self.text(px, y1 + 16, lab)
        for t in yticks:
            py = self._ty(t)
            self.parts.append(f'<line x1="{x0 - 4}" y1="{_f(py)}" x2="{x0}" y2="{_f(py)}" stroke="#000"/>')
            self.text(x0 - 7, py + 4, f"{t:g}", anchor="end")
        self.text((x0 + x1) / 2, H - 8, xlabel)
        self.text(14, (y0 + y1) / 2, ylabel, rotate=-90)
        if self.title:
            self.text((x0 + x1) / 2, 18, self.title, size=13)

    def legend(self, labels, dashed=()):
        for k, lab in enumerate(labels):
            y = MT + 14 + 15 * k
            c = PALETTE[k % len(PALETTE)]
            extra = ' stroke-dasharray="5,3"' if lab in dashed else ""
            self.parts.append(f'<line x1="{W - MR - 120}" y1="{y - 4}" x2="{W - MR - 100}" y2="{y - 4}" '
                              f'stroke="{c}" stroke-width="2"{extra}/>')
            self.text(W - MR - 95, y, lab, anchor="start")

    def svg(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                f'viewBox="0 0 {W} {H}">\n<rect width="{W}" height="{H}" fill="#fff"/>\n'
                f'<clipPath id="plot"><rect x="{ML}" y="{MT}" width="{W - ML - MR}" '
                f'height="{H - MT - MB}"/></clipPath>\n<g clip-path="url(#plot)">\n')
        return head + "\n".join(self.data) + "\n</g>\n" + "\n".join(self.parts) + "\n</svg>\n"


def _ticks(lo, hi, n=5):
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    return [round(v, 10) for v in np.arange(first, hi + step * 1e-9, step)]


def _pad(lo, hi, frac=0.05):
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    d = (hi - lo) * frac
    return lo - d, hi + d


def _sigma_axis(sigmas, log_sigma):
    """Plot positions for sigmas; on a log axis ``sigma = 0`` sits one decade past the last level."""
    s = np.asarray(sigmas, dtype=float)
    if not log_sigma:
        return s, (0.0, float(s[0])), None
    floor = float(s[s > 0].min()) / 10
    pos = np.where(s > 0, s, floor)
    return pos, (floor, float(s[0])), floor


def _log_ticks(lo, hi, floor):
    lo = lo * 10 ** 0.5 if floor is not None else lo  # keep decade ticks clear of the "0" tick
    ticks = [10.0 ** e for e in range(math.ceil(math.log10(lo)), math.floor(math.log10(hi)) + 1)]
    labels = [f"{t:g}" for t in ticks]
    if floor is not None:
        ticks.append(floor)
        labels.append("0")
    return ticks, labels


def trajectory_fan(sigmas, states, guided=None, spec=None, family=None, c=None, title=""):
    """Chains ``states[(N + 1, n)]`` (1-D) drawn against sigma, high noise on the left.

    With ``family`` and ``c`` the smoothed class density is shaded behind the
    fan.  Guided steps are drawn in red, unguided ones in blue.
    """
    spec = spec or PlotSpec("trajectory-fan")
    st = np.asarray(states, dtype=float)
    if st.ndim == 3:
        if st.shape[2] != 1:
            raise InputError("trajectory fans need 1-D states")
        st = st[:, :, 0]
    if st.ndim != 2 or st.size == 0:
        raise InputError("no trajectories to plot")
    pos, xr, floor = _sigma_axis(sigmas, spec.log_sigma)
    yr = spec.y_range or _pad(float(st[-1].min()), float(st[-1].max()), 0.3)
    cv = _Canvas(xr, yr, xlog=spec.log_sigma, xflip=True, title=title)
    if family is not None:
        _shade_density(cv, family.conditional(c), xr, yr, spec.resolution, spec.log_sigma, floor)
    guided = np.zeros(st.shape[0] - 1, dtype=bool) if guided is None else np.asarray(guided, bool)
    for ch in range(st.shape[1]):
        for a in range(st.shape[0] - 1):
            col = PALETTE[1] if guided[a] else PALETTE[0]
            cv.line(pos[a:a + 2], st[a:a + 2, ch], col, width=0.8, opacity=0.6)
    if spec.log_sigma:
        xt, xl = _log_ticks(*xr, floor)
    else:
        xt, xl = _ticks(*xr), None
    cv.axes("noise level sigma", "x", xt, _ticks(*yr), xl)
    return cv.svg()


def _shade_density(cv, mix, xr, yr, res, log_sigma, floor):
    if log_sigma:
        edges = np.geomspace(xr[0], xr[1], res + 1)
    else:
        edges = np.linspace(xr[0], xr[1], res + 1)
    yedges = np.linspace(yr[0], yr[1], res + 1)
    ymid = 0.5 * (yedges[1:] + yedges[:-1])
    for k in range(res):
        smid = math.sqrt(edges[k] * edges[k + 1]) if log_sigma else 0.5 * (edges[k] + edges[k + 1])
        if floor is not None and edges[k + 1] <= floor * 1.0000001:
            smid = 0.0
        dens = np.asarray(smoothed_density(mix, ymid, smid))
        top = dens.max()
        if top <= 0:
            continue
        for j in range(res):
            op = float(dens[j] / top) * 0.5
            if op >= 0.005:
                cv.rect(edges[k], edges[k + 1], yedges[j], yedges[j + 1], "#555555", op)


def density_heatmap(family, c, sigmas, spec=None, title=""):
    """The smoothed class density over the ``(sigma, x)`` plane, each column scaled to its own peak."""
    spec = spec or PlotSpec("density-heatmap")
    pos, xr, floor = _sigma_axis(sigmas, spec.log_sigma)
    yr = spec.y_range or (-3.0, 3.0)
    cv = _Canvas(xr, yr, xlog=spec.log_sigma, xflip=True, title=title)
    _shade_density(cv, family.conditional(c), xr, yr, spec.resolution, spec.log_sigma, floor)
    xt, xl = _log_ticks(*xr, floor) if spec.log_sigma else (_ticks(*xr), None)
    cv.axes("noise level sigma", "x", xt, _ticks(*yr), xl)
    return cv.svg()


def histogram_heights(samples, bins, x_range):
    """``(edges, heights)`` normalized so that ``sum(widths * heights) == 1``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise InputError("no samples to histogram")
    counts, edges = np.histogram(x, bins=bins, range=x_range)
    if counts.sum() == 0:
        raise InputError("every sample lies outside the histogram range")
    return edges, counts / (counts.sum() * np.diff(edges))


def histogram(samples, mix=None, spec=None, title=""):
    """Terminal-sample histogram (1-D) with the exact data density drawn on top."""
    spec = spec or PlotSpec("histogram")
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise InputError("histograms need 1-D samples")
        x = x[:, 0]
    if x.size == 0:
        raise InputError("no samples to histogram")
    xr = spec.x_range or _pad(float(x.min()), float(x.max()))
    edges, heights = histogram_heights(x, spec.resolution, xr)
    grid = np.linspace(xr[0], xr[1], 256)
    dens = np.asarray(smoothed_density(mix, grid, 0.0)) if mix is not None else np.zeros(0)
    top = max(float(heights.max()), float(dens.max()) if dens.size else 0.0)
    yr = spec.y_range or (0.0, top * 1.08 if top > 0 else 1.0)
    cv = _Canvas(xr, yr, title=title)
    for k in range(len(heights)):
        if heights[k] > 0:
            cv.rect(edges[k], edges[k + 1], 0.0, min(heights[k], yr[1]), PALETTE[0], 0.55)
    if dens.size:
        cv.line(grid, np.minimum(dens, yr[1]), "#000000", width=1.5)
    cv.axes("x", "density", _ticks(*xr), _ticks(*yr))
    return cv.svg()


def _curves(ws, series, ylabel, yr, title, dashed=()):
    ws = np.asarray(ws, dtype=float)
    if ws.size == 0 or not series:
        raise InputError("nothing to plot")
    allv = np.concatenate([np.asarray(v, float) for v in series.values()])
    allv = allv[np.isfinite(allv)]
    if allv.size == 0:
        raise InputError("no finite values to plot")
    yr = yr or _pad(float(allv.min()), float(allv.max()))
    cv = _Canvas(_pad(float(ws.min()), float(ws.max()), 0.02), yr, title=title)
    for k, (label, vals) in enumerate(series.items()):
        v = np.asarray(vals, float)
        ok = np.isfinite(v)
        col = PALETTE[k % len(PALETTE)]
        cv.line(ws[ok], v[ok], col, width=1.8, dash="5,3" if label in dashed else None)
        cv.dots(ws[ok], v[ok], col)
    cv.axes("guidance weight w", ylabel, _ticks(*cv.xr), _ticks(*yr))
    cv.legend(list(series), dashed)
    return cv.svg()


def metric_curve(ws, series, ylabel="Frechet distance", spec=None, title=""):
    """One line per entry of ``series`` (label -> metric values at ``ws``)."""
    spec = spec or PlotSpec("metric-curve")
    return _curves(ws, series, ylabel, spec.y_range, title)


def pr_curve(ws, series, spec=None, title=""):
    """Precision (dashed) and recall (solid) against ``w``; ``series`` maps label -> (precision, recall)."""
    spec = spec or PlotSpec("pr-curve")
    flat, dashed = {}, set()
    for label, (p, r) in series.items():
        flat[f"{label} precision"] = p
        flat[f"{label} recall"] = r
        dashed.add(f"{label} precision")
    return _curves(ws, flat, "precision / recall", spec.y_range or (0.0, 1.0), title, dashed)
