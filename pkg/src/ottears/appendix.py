"""The four-piece unstable scenario on the parabolic lens.

A uniform source on D = {x^2 - r0^2 <= y <= r0^2 - x^2} is pushed forward by
the gradient of u = max(u_1, ..., u_4); the four gradient images are disjoint
strictly convex sets and u has a multiplicity-4 singularity at the origin.
Because four sets can never be affinely independent in the plane, that
singularity is unstable: tilting the fourth piece's image upward by s kills
every point of multiplicity 4 relative to the (dilated) original pieces.

Everything here is function-level: closed-form values, gradients, regions,
boundary-curve convexity checks, and the tilted envelope

    u4_s(x, y) = u4(x, y) + s y - c4(s),

where c4(s) restores the fourth region's source mass (the only dual
direction the cusp-shaped region responds to at first order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .lattice import Lattice
from .polygons import convex_hull_2d

PIECES = ("u1", "u2", "u3", "u4")


def _split(pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return pts[:, 0], pts[:, 1]


@dataclass(frozen=True)
class AppendixScenario:
    """Closed-form evaluators for the lens scenario at scale ``r0``."""

    r0: float = 0.1

    def __post_init__(self):
        if not 0 < self.r0 < 0.5:
            raise ValueError("r0 must be a small positive constant")
        bad = [k for k, v in self.smallness_inequalities().items() if not v["ok"]]
        if bad:
            raise ValueError(f"smallness inequalities fail at r0={self.r0}: {bad}")

    # -- geometry ---------------------------------------------------------

    @cached_property
    def r1(self):
        """x-coordinate where the line y = x meets y = r0^2 - x^2."""
        return 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * self.r0**2))

    @cached_property
    def r2(self):
        """x-coordinate where y = -sqrt(x) meets y = x^2 - r0^2."""
        return float(brentq(lambda x: x**2 + math.sqrt(x) - self.r0**2,
                            1e-16, self.r0))

    def in_domain(self, pts, slack=0.0):
        x, y = _split(pts)
        r2_0 = self.r0**2
        return (y >= x**2 - r2_0 - slack) & (y <= r2_0 - x**2 + slack)

    def domain_polygon(self, samples=200):
        xs = np.linspace(-self.r0, self.r0, samples)
        top = np.stack([xs, self.r0**2 - xs**2], axis=1)
        bot = np.stack([xs[::-1], xs[::-1]**2 - self.r0**2], axis=1)
        return np.concatenate([bot, top], axis=0)

    def domain_area(self):
        return 8.0 * self.r0**3 / 3.0

    def domain_lattice(self, counts):
        r2_0 = self.r0**2
        return Lattice.from_box([-self.r0, -r2_0], [self.r0, r2_0], counts)

    def region_of(self, pts):
        """Region index (0..3) by the stated piecewise formulas."""
        x, y = _split(pts)
        sq = np.sqrt(np.abs(x))
        out = np.full(x.shape, -1, dtype=int)
        out[y >= np.abs(x)] = 0
        mid = (y <= np.abs(x)) & (y >= -sq) & (out == -1)
        out[mid & (x >= 0)] = 1
        out[mid & (x < 0)] = 2
        out[(y <= -sq) & (out == -1)] = 3
        return out

    # -- the four potentials and their gradients --------------------------

    def u1(self, pts):
        x, y = _split(pts)
        return x**2 + y**2 - x**6 + y

    def u2(self, pts):
        x, y = _split(pts)
        return 4 * x**2 + y**2 - y**6 + x - 3 * x * y

    def u3(self, pts):
        x, y = _split(pts)
        return 4 * x**2 + y**2 - y**6 - x + 3 * x * y

    def u4(self, pts):
        x, y = _split(pts)
        ax = np.abs(x)
        neg = (y < 0).astype(float)
        return 4 * y**4 + y**2 - ax**3 + y**2 * neg + 3 * ax**1.5

    def grad_u1(self, pts):
        x, y = _split(pts)
        return np.stack([2 * x - 6 * x**5, 2 * y + 1], axis=-1)

    def grad_u2(self, pts):
        x, y = _split(pts)
        return np.stack([8 * x + 1 - 3 * y, 2 * y - 6 * y**5 - 3 * x], axis=-1)

    def grad_u3(self, pts):
        # u3(x, y) = u2(-x, y), so the printed gradient follows by the
        # mirror rule; differentiating gives +3y in the first slot.
        x, y = _split(pts)
        return np.stack([8 * x - 1 + 3 * y, 2 * y - 6 * y**5 + 3 * x], axis=-1)

    def grad_u4(self, pts):
        x, y = _split(pts)
        ax = np.abs(x)
        neg = (y < 0).astype(float)
        gx = np.sign(x) * (4.5 * np.sqrt(ax) - 3 * x**2)
        gy = 16 * y**3 + 2 * (1 + neg) * y
        return np.stack([gx, gy], axis=-1)

    def piece_functions(self):
        return {"u1": self.u1, "u2": self.u2, "u3": self.u3, "u4": self.u4}

    def piece_gradients(self):
        return {"u1": self.grad_u1, "u2": self.grad_u2, "u3": self.grad_u3,
                "u4": self.grad_u4}

    def values(self, pts, shift=0.0, c4=0.0):
        """Stacked per-piece values; the fourth piece optionally tilted."""
        cols = [self.u1(pts), self.u2(pts), self.u3(pts), self.u4(pts)]
        if shift != 0.0 or c4 != 0.0:
            _, y = _split(pts)
            cols[3] = cols[3] + shift * y - c4
        return np.stack(cols, axis=-1)

    def gradients(self, pts, shift=0.0):
        out = np.stack([self.grad_u1(pts), self.grad_u2(pts),
                        self.grad_u3(pts), self.grad_u4(pts)], axis=1)
        if shift != 0.0:
            out[:, 3, 1] += shift
        return out

    # -- proof-side checks -------------------------------------------------

    def smallness_inequalities(self):
        """The proof's explicit r0-smallness conditions, evaluated."""
        r0 = self.r0
        a = 4 - 60 * r0**8 - 6 * (60 * r0**9 + 3) / (8 - 6 * r0)
        b = -4 + 60 * r0**8 + 9.0 / 4.0 + 3 * r0
        c = 2 - 30 * r0**4
        return {
            "bottom_curve_positive": {"value": a, "ok": a > 0},
            "top_curve_negative": {"value": b, "ok": b < 0},
            "u1_denominator_positive": {"value": c, "ok": c > 0},
        }

    def boundary_curves(self):
        """Gradient-image boundary curves with their claimed convexity signs.

        Each entry: (name, t-range, second-derivative expression of the image
        written as a graph, claimed sign).  ``kind`` 'y_of_x' uses
        g'' - g' f''/f' (same sign as y''(x)); 'x_of_y' uses f'' - f' g''/g'.
        All derivatives come from differentiating the gradients along the
        parameterized region boundary.
        """
        r0, r1, r2 = self.r0, self.r1, self.r2
        curves = []

        def add(name, trange, f, g, d, kind, sign):
            curves.append({"name": name, "trange": trange, "fg": (f, g),
                           "deriv": d, "kind": kind, "sign": sign})

        # image of u1 along the top parabola y = r0^2 - x^2
        def d_u1_top(t):
            f1 = 2 - 30 * t**4
            g1 = -4 * t
            f2 = -120 * t**3
            g2 = -4 * np.ones_like(t)
            return f1, g1, f2, g2
        add("u1_top_parabola", (-r1, r1),
            lambda t: 2 * t - 6 * t**5,
            lambda t: 2 * (r0**2 - t**2) + 1,
            d_u1_top, "y_of_x", -1)

        # image of u1 along the wall y = x (x as a graph over y)
        def d_u1_wall(t):
            f1 = 2 - 30 * t**4
            g1 = 2 * np.ones_like(t)
            f2 = -120 * t**3
            g2 = np.zeros_like(t)
            return f1, g1, f2, g2
        add("u1_wall", (1e-4 * r1, r1),
            lambda t: 2 * t - 6 * t**5,
            lambda t: 2 * t + 1,
            d_u1_wall, "x_of_y", -1)

        # image of u2 along the wall y = x
        def d_u2_wall(t):
            f1 = 5 * np.ones_like(t)
            g1 = -1 - 30 * t**4
            f2 = np.zeros_like(t)
            g2 = -120 * t**3
            return f1, g1, f2, g2
        add("u2_wall", (1e-4 * r1, r1),
            lambda t: 5 * t + 1,
            lambda t: -t - 6 * t**5,
            d_u2_wall, "y_of_x", -1)

        # image of u2 along y = -sqrt(x)
        def d_u2_sqrt(t):
            f1 = 8 + 1.5 * t**-0.5
            g1 = -t**-0.5 + 15 * t**1.5 - 3
            f2 = -0.75 * t**-1.5
            g2 = 0.5 * t**-1.5 + 22.5 * t**0.5
            return f1, g1, f2, g2
        add("u2_sqrt", (1e-6 * r2, r2),
            lambda t: 8 * t + 1 + 3 * np.sqrt(t),
            lambda t: -2 * np.sqrt(t) + 6 * t**2.5 - 3 * t,
            d_u2_sqrt, "y_of_x", +1)

        # image of u2 along the top parabola, r1 <= t <= r0
        def d_u2_top(t):
            q = r0**2 - t**2
            f1 = 8 + 6 * t
            g1 = -4 * t + 60 * t * q**4 - 3
            f2 = 6 * np.ones_like(t)
            g2 = -4 + 60 * q**4 - 480 * t**2 * q**3
            return f1, g1, f2, g2
        add("u2_top_parabola", (r1, r0),
            lambda t: 8 * t + 1 - 3 * (r0**2 - t**2),
            lambda t: 2 * (r0**2 - t**2) - 6 * (r0**2 - t**2)**5 - 3 * t,
            d_u2_top, "y_of_x", -1)

        # image of u2 along the bottom parabola, r2 <= t <= r0
        def d_u2_bottom(t):
            q = t**2 - r0**2
            f1 = 8 - 6 * t
            g1 = 4 * t - 60 * t * q**4 - 3
            f2 = -6 * np.ones_like(t)
            g2 = 4 - 60 * q**4 - 480 * t**2 * q**3
            return f1, g1, f2, g2
        add("u2_bottom_parabola", (r2, r0),
            lambda t: 8 * t + 1 - 3 * (t**2 - r0**2),
            lambda t: 2 * (t**2 - r0**2) - 6 * (t**2 - r0**2)**5 - 3 * t,
            d_u2_bottom, "y_of_x", +1)

        # image of u4 along y = -sqrt(x); derivatives from the true gradient
        # (the y-slope of u4 below the axis is 16 y^3 + 4 y)
        def d_u4_sqrt(t):
            f1 = 2.25 * t**-0.5 - 6 * t
            g1 = -24 * np.sqrt(t) - 2 * t**-0.5
            f2 = -1.125 * t**-1.5 - 6
            g2 = -12 * t**-0.5 + t**-1.5
            return f1, g1, f2, g2
        add("u4_sqrt", (1e-6 * r2, r2),
            lambda t: 4.5 * np.sqrt(t) - 3 * t**2,
            lambda t: -16 * t**1.5 - 4 * np.sqrt(t),
            d_u4_sqrt, "y_of_x", -1)

        # image of u4 along the bottom parabola (x > 0 half)
        def d_u4_bottom(t):
            q = t**2 - r0**2
            f1 = 2.25 * t**-0.5 - 6 * t
            g1 = 96 * t * q**2 + 8 * t
            f2 = -1.125 * t**-1.5 - 6
            g2 = 96 * q**2 + 384 * t**2 * q + 8
            return f1, g1, f2, g2
        add("u4_bottom_parabola", (1e-6 * r2, r2),
            lambda t: 4.5 * np.sqrt(t) - 3 * t**2,
            lambda t: 16 * (t**2 - r0**2)**3 + 4 * (t**2 - r0**2),
            d_u4_bottom, "x_of_y", -1)
        return curves

    def check_boundary_convexity(self, samples=400):
        """Evaluate every curve's second-derivative sign on sampled t."""
        results = {}
        for curve in self.boundary_curves():
            lo, hi = curve["trange"]
            if lo > 0 and hi > 0:
                ts = np.geomspace(max(lo, 1e-14), hi, samples)
            else:
                ts = np.linspace(lo, hi, samples)
                ts = ts[np.abs(ts) > 1e-12]
            f1, g1, f2, g2 = curve["deriv"](ts)
            if curve["kind"] == "y_of_x":
                expr = g2 - g1 * f2 / f1
            else:
                expr = f2 - f1 * g2 / g1
            want = curve["sign"]
            ok = bool(np.all(np.sign(expr) == want))
            results[curve["name"]] = {
                "ok": ok, "claimed_sign": want,
                "worst": float((expr * want).min()),
            }
        return results

    # -- gradient images of the regions ------------------------------------

    def piece_image_polygon(self, piece, samples=600):
        """Convex polygon approximating the gradient image of one region."""
        r0, r1, r2 = self.r0, self.r1, self.r2
        idx = PIECES.index(piece) if isinstance(piece, str) else int(piece)
        pts = []
        if idx == 0:
            ts = np.linspace(-r1, r1, samples)
            pts.append(np.stack([ts, self.r0**2 - ts**2], axis=1))
            pts.append(np.stack([ts, np.abs(ts)], axis=1))
            bound = np.concatenate(pts, axis=0)
            image = self.grad_u1(bound)
        elif idx in (1, 2):
            ts = np.linspace(0, r1, samples // 4)
            seg1 = np.stack([ts, ts], axis=1)
            ts = np.geomspace(max(r2 * 1e-6, 1e-12), r2, samples // 4)
            seg2 = np.stack([ts, -np.sqrt(ts)], axis=1)
            ts = np.linspace(r1, r0, samples // 4)
            seg3 = np.stack([ts, self.r0**2 - ts**2], axis=1)
            ts = np.linspace(r2, r0, samples // 4)
            seg4 = np.stack([ts, ts**2 - self.r0**2], axis=1)
            bound = np.concatenate([seg1, seg2, seg3, seg4,
                                    np.array([[0.0, 0.0]])], axis=0)
            image = self.grad_u2(bound)
            if idx == 2:
                image = image * np.array([-1.0, 1.0])
        else:
            ts = np.geomspace(max(r2 * 1e-6, 1e-12), r2, samples // 2)
            seg1 = np.stack([ts, -np.sqrt(ts)], axis=1)
            seg1m = np.stack([-ts, -np.sqrt(ts)], axis=1)
            ts2 = np.linspace(-r2, r2, samples // 2)
            seg2 = np.stack([ts2, ts2**2 - self.r0**2], axis=1)
            bound = np.concatenate([seg1, seg1m, seg2,
                                    np.array([[0.0, 0.0]])], axis=0)
            image = self.grad_u4(bound)
        return convex_hull_2d(image)

    def piece_image_polygons(self, samples=600):
        return [self.piece_image_polygon(i, samples) for i in range(4)]

    def piece4_support_planes(self, columns=70, rows=8):
        """Support planes of u4 restricted to its region, as (slopes, b).

        The fourth region is a cusp; the piece potential that transport
        theory pairs with it is the supremum of these planes, whose
        subgradients stay inside the gradient image (the closed-form u4
        leaks subgradients far outside the piece just above the cusp tip).
        The exact tip plane (slope 0, value 0) is included so the four-way
        coincidence at the origin is preserved.
        """
        xs = np.concatenate([
            -np.geomspace(1e-12, self.r2 * 0.999, columns // 2)[::-1],
            np.geomspace(1e-12, self.r2 * 0.999, columns // 2)])
        pts = []
        for x in xs:
            ylo = x**2 - self.r0**2
            yhi = -math.sqrt(abs(x))
            if yhi <= ylo:
                continue
            fr = (np.arange(rows) + 0.5) / rows
            ys = ylo + (yhi - ylo) * fr
            pts.append(np.stack([np.full(rows, x), ys], axis=1))
        pts = np.concatenate(pts + [np.zeros((1, 2))], axis=0)
        slopes = self.grad_u4(pts)
        vals = self.u4(pts)
        intercepts = vals - np.einsum("nd,nd->n", slopes, pts)
        return slopes, intercepts

    # -- the tilted fourth piece -------------------------------------------

    def region4_area(self, shift=0.0, c4=0.0, columns=600, probes=1000):
        """Source area of {u4 + shift*y - c4 = max} by column quadrature.

        The fourth region is a thin cusp (plus, after tilting, a small bulge
        near the origin): columns are graded geometrically in |x|, each
        column's section endpoints are refined by bisection, and all
        bisections across columns run vectorized.
        """
        r0 = self.r0
        xs_pos = np.geomspace(1e-10, 4 * self.r2, columns // 2)
        xs = np.concatenate([-xs_pos[::-1], xs_pos])
        ylo = xs**2 - r0**2
        # The tilted fourth piece never wins above y ~ |shift|; probing a
        # short window keeps the probe spacing fine.
        yhi = np.minimum(r0**2 - xs**2, 0.02 * r0**2 + 2.0 * abs(shift))

        def inside_mask(px, py):
            pts = np.stack([px, py], axis=-1).reshape(-1, 2)
            vals = self.values(pts, shift=shift, c4=c4)
            return (vals[:, 3] >= vals[:, :3].max(axis=1)).reshape(px.shape)

        frac = np.linspace(0.0, 1.0, probes)
        py = ylo[:, None] + (yhi - ylo)[:, None] * frac[None, :]
        px = np.broadcast_to(xs[:, None], py.shape)
        inside = inside_mask(px, py)

        # Collect all sign-change intervals and bisect them simultaneously.
        flips = np.diff(inside.astype(int), axis=1)
        col_idx, probe_idx = np.nonzero(flips != 0)
        lo_y = py[col_idx, probe_idx]
        hi_y = py[col_idx, probe_idx + 1]
        lo_in = inside[col_idx, probe_idx]
        bx = xs[col_idx]
        for _ in range(45):
            mid = 0.5 * (lo_y + hi_y)
            mid_in = inside_mask(bx, mid)
            take_lo = mid_in == lo_in
            lo_y = np.where(take_lo, mid, lo_y)
            hi_y = np.where(take_lo, hi_y, mid)
        cross = 0.5 * (lo_y + hi_y)

        lengths = np.zeros(len(xs))
        for c in range(len(xs)):
            bounds = []
            if inside[c, 0]:
                bounds.append(ylo[c])
            bounds.extend(sorted(cross[col_idx == c]))
            if inside[c, -1]:
                bounds.append(yhi[c])
            lengths[c] = sum(b - a for a, b in zip(bounds[::2], bounds[1::2]))
        return float(np.trapz(lengths, xs))

    def balance_tilt_constant(self, shift, rtol=1e-3):
        """Constant c4(s) restoring the fourth region's source area.

        The area is strictly decreasing in c4, so a bracketed root solve on
        [-|s|, |s|] converges; c4 only needs a few digits (it sets the
        sub-lattice split scale, not any certified quantity).
        """
        if shift == 0.0:
            return 0.0
        target = self.region4_area()

        def f(c):
            return self.region4_area(shift, c) - target

        # The cusp's first-order response puts the root near -s*sqrt(r2)/2.
        lo, hi = -abs(shift) * math.sqrt(self.r2), 0.0
        if f(lo) < 0 or f(hi) > 0:
            lo, hi = -abs(shift), abs(shift)
            if f(lo) < 0 or f(hi) > 0:
                raise ValueError("tilt constant bracket failed")
        return float(brentq(f, lo, hi, xtol=rtol * abs(shift)))
