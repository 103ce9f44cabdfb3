"""Static SVG figures: planned path, execution overlay and the epsilon sweep."""

from __future__ import annotations

import math
import os
import tempfile
import xml.etree.ElementTree as ET

import numpy as np

SVG_NS = "http://www.w3.org/2000/svg"


def _f(v):
    return f"{v:.4f}"


class Canvas:
    """World-to-pixel mapping with y pointing up."""

    def __init__(self, xmin, xmax, ymin, ymax, width=640, pad=30):
        span = max(xmax - xmin, ymax - ymin, 1e-9)
        self.scale = (width - 2 * pad) / span
        self.xmin, self.ymax, self.pad = xmin, ymax, pad
        self.width = width
        self.height = int(round((ymax - ymin) * self.scale + 2 * pad))
        self.root = ET.Element("svg", xmlns=SVG_NS, version="1.1",
                               width=str(self.width), height=str(self.height),
                               viewBox=f"0 0 {self.width} {self.height}")
        ET.SubElement(self.root, "rect", x="0", y="0", width=str(self.width),
                      height=str(self.height), fill="white")

    def px(self, x, y):
        return (self.pad + (x - self.xmin) * self.scale, self.pad + (self.ymax - y) * self.scale)

    def polyline(self, pts, **style):
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in (self.px(x, y) for x, y in pts))
        style.setdefault("fill", "none")
        return ET.SubElement(self.root, "polyline", points=coords, **style)

    def circle(self, x, y, r, **style):
        cx, cy = self.px(x, y)
        return ET.SubElement(self.root, "circle", cx=_f(cx), cy=_f(cy), r=_f(r * self.scale), **style)

    def ellipse(self, x, y, cov2, nsig=1.0, **style):
        lam, V = np.linalg.eigh(np.asarray(cov2, dtype=float))
        lam = np.clip(lam, 0.0, None)
        major = V[:, 1]
        # y axis is flipped on screen, so the rotation sense flips too
        angle = -math.degrees(math.atan2(major[1], major[0]))
        cx, cy = self.px(x, y)
        style.setdefault("fill", "none")
        return ET.SubElement(
            self.root, "ellipse", cx=_f(cx), cy=_f(cy),
            rx=_f(nsig * math.sqrt(lam[1]) * self.scale), ry=_f(nsig * math.sqrt(lam[0]) * self.scale),
            transform=f"rotate({_f(angle)} {_f(cx)} {_f(cy)})", **style)

    def text(self, x, y, s, **style):
        t = ET.SubElement(self.root, "text", x=_f(x), y=_f(y), **style)
        t.text = s
        return t


def _bounds(world, paths, goal, pad=0.4):
    pts = [np.asarray(p)[:, :2] for p in paths]
    pts.append(world.landmark_xy)
    pts.append(np.atleast_2d(goal[:2]))
    for o in world.obstacles:
        e = o.radius + o.safety_margin
        pts.append(np.array([[o.cx - e, o.cy - e], [o.cx + e, o.cy + e]]))
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0) - pad, allp.max(axis=0) + pad
    return lo[0], hi[0], lo[1], hi[1]


def _scene(problem, paths):
    world = problem.world
    c = Canvas(*_bounds(world, paths, problem.goal))
    for lm in world.landmarks:
        c.circle(lm.px, lm.py, 0.25, fill="#fff3b0", stroke="none")
        c.circle(lm.px, lm.py, 0.03, fill="#b08800")
    for o in world.obstacles:
        c.circle(o.cx, o.cy, o.radius, fill="#555555")
        if o.safety_margin > 0:
            c.circle(o.cx, o.cy, o.radius + o.safety_margin, stroke="#aa0000",
                     fill="none", **{"stroke-dasharray": "4 3"})
    c.circle(problem.goal[0], problem.goal[1], problem.goal_radius, stroke="#008800", fill="none")
    return c


def plan_figure(problem, plan, every=5):
    """Nominal path with 1-sigma planned covariance ellipses every few steps."""
    c = _scene(problem, [plan.states])
    c.polyline(plan.states[:, :2], stroke="#0044cc", **{"stroke-width": "2"})
    for t in range(0, len(plan.states), every):
        x, y = plan.states[t, :2]
        c.ellipse(x, y, plan.covariances[t][:2, :2], stroke="#0044cc", **{"stroke-opacity": "0.6"})
    return c.root


def exec_figure(problem, plan, rollout):
    c = _scene(problem, [plan.states, rollout.states, rollout.estimates])
    c.polyline(plan.states[:, :2], stroke="#0044cc", **{"stroke-width": "2", "stroke-dasharray": "6 3"})
    c.polyline(rollout.states[:, :2], stroke="#cc2200", **{"stroke-width": "2"})
    c.polyline(rollout.estimates[:, :2], stroke="#228822", **{"stroke-width": "1.5"})
    return c.root


def sweep_figure(sweep):
    """log|mean cost gap| against log epsilon with the fitted slope."""
    eps = np.array([r.epsilon for r in sweep.records])
    gap = np.abs([r.mean_cost_gap for r in sweep.records])
    ok = gap > 0
    lx, ly = np.log10(eps[ok]), np.log10(gap[ok])
    if len(lx) == 0:
        lx, ly = np.zeros(1), np.zeros(1)
    c = Canvas(lx.min() - 0.3, lx.max() + 0.3, ly.min() - 0.3, ly.max() + 0.3, width=480)
    c.polyline(np.column_stack([lx, ly]), stroke="#0044cc")
    for a, b in zip(lx, ly):
        c.circle(a, b, 0.02, fill="#0044cc")
    slope = sweep.slope()
    label = "log10 |mean cost gap| vs log10 eps"
    if slope is not None:
        label += f"; fitted slope {slope:.3f}"
    c.text(10, 18, label, **{"font-size": "12", "font-family": "sans-serif"})
    return c.root


def write_svg(root, path):
    data = ET.tostring(root, encoding="unicode")
    atomic_write(path, '<?xml version="1.0" encoding="UTF-8"?>\n' + data + "\n")


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
