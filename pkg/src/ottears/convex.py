"""Exact and grid-based convex calculus.

Convex functions carry one of two representations behind a common evaluation
and conjugation interface:

* :class:`MaxAffineFunction` -- a finite maximum of affine pieces.  This is an
  exact representation; potentials of discrete targets under the bilinear cost
  are of this form.
* :class:`GridFunction` -- values on a rectangular lattice with multilinear
  interpolation, for smooth non-polyhedral potentials.

The partial (fiber) Legendre transform along the last coordinate is the
engine used by the tear extractor; for max-affine inputs it is computed in
closed form so that coincidence graphs of affine pairs come out exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import ConvexHull, QhullError

from .errors import DomainError, NonConvexInputError
from .lattice import Lattice


def _as_2d(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2D array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class MaxAffineFunction:
    """Convex function ``x -> max_i <slope_i, x> + intercept_i``.

    Duplicate (slope, intercept) pairs are removed on construction; the piece
    list is kept sorted lexicographically so equal functions have equal
    canonical forms.
    """

    slopes: np.ndarray      # (m, n)
    intercepts: np.ndarray  # (m,)

    def __post_init__(self):
        slopes = _as_2d(self.slopes, "slopes")
        intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        if slopes.shape[0] != intercepts.shape[0]:
            raise ValueError("slopes and intercepts disagree on piece count")
        if slopes.shape[0] == 0:
            raise ValueError("need at least one affine piece")
        if not (np.all(np.isfinite(slopes)) and np.all(np.isfinite(intercepts))):
            raise ValueError("pieces must be finite")
        rows = np.concatenate([slopes, intercepts[:, None]], axis=1)
        rows = np.unique(rows, axis=0)
        slopes = np.ascontiguousarray(rows[:, :-1])
        intercepts = np.ascontiguousarray(rows[:, -1])
        slopes.setflags(write=False)
        intercepts.setflags(write=False)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercepts", intercepts)

    @property
    def ambient_dim(self):
        return self.slopes.shape[1]

    @property
    def n_pieces(self):
        return self.slopes.shape[0]

    def values(self, x):
        """Per-piece values at x; x may be (n,) or (N, n)."""
        x = np.asarray(x, dtype=float)
        return x @ self.slopes.T + self.intercepts

    def __call__(self, x):
        return np.max(self.values(x), axis=-1)

    def active_set(self, x, tol):
        """Indices of pieces within ``tol`` of the maximum at x."""
        vals = self.values(x)
        return np.flatnonzero(vals >= vals.max() - tol)

    def rotate(self, rotation):
        """Precompose with ``rotation.T``: returns f_R(y) = f(R^T y)."""
        rotation = np.asarray(rotation, dtype=float)
        return MaxAffineFunction(self.slopes @ rotation.T, self.intercepts)

    def shift_slopes(self, v):
        """Add v to every slope: f(x) + <x, v> as a new function."""
        return MaxAffineFunction(self.slopes + np.asarray(v, dtype=float),
                                 self.intercepts)

    def fiber(self, x_prime):
        """Restriction t -> f(x', t) as 1D (slopes, intercepts) arrays."""
        x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
        if x_prime.shape[0] != self.ambient_dim - 1:
            raise ValueError("x_prime must have length ambient_dim - 1")
        alpha = self.slopes[:, -1]
        beta = self.slopes[:, :-1] @ x_prime + self.intercepts
        return alpha, beta


@dataclass(frozen=True)
class GridFunction:
    """Function values on a rectangular lattice, interpolated multilinearly.

    ``convex`` is a certification flag: when requested at construction it is
    set only if discrete second differences along every axis and the main
    diagonal directions are nonnegative up to ``convexity_tol``.
    """

    lattice: Lattice
    values: np.ndarray
    convex: bool = False
    convexity_tol: float = 1e-9

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != tuple(self.lattice.counts):
            raise ValueError("values shape must match lattice counts")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        interp = RegularGridInterpolator(
            tuple(self.lattice.axes()), values, method="linear",
            bounds_error=True)
        object.__setattr__(self, "_interp", interp)
        if self.convex:
            report = self.convexity_report()
            if report["worst"] < -self.convexity_tol * report["scale"]:
                raise ValueError(
                    "convexity flag requested but second differences dip to "
                    f"{report['worst']:.3e} (scale {report['scale']:.3e})")

    @classmethod
    def sample(cls, fn, lattice, **kw):
        vals = np.asarray(fn(lattice.nodes()), dtype=float)
        return cls(lattice, vals.reshape(lattice.counts), **kw)

    @property
    def ambient_dim(self):
        return self.lattice.ndim

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        try:
            out = self._interp(x if x.ndim > 1 else x[None, :])
        except ValueError as exc:
            raise DomainError(f"point outside grid box: {exc}") from exc
        return out if x.ndim > 1 else float(out[0])

    def convexity_report(self):
        """Worst discrete second difference along axes and main diagonals."""
        v = self.values
        worst = np.inf
        scale = float(np.max(np.abs(v)) + 1.0)
        directions = []
        n = self.lattice.ndim
        for k in range(n):
            step = np.zeros(n, dtype=int)
            step[k] = 1
            directions.append(step)
        for signs in itertools.product((1, -1), repeat=n):
            if n > 1 and signs[0] == 1:
                directions.append(np.asarray(signs))
        for step in directions:
            sl_lo, sl_mid, sl_hi = [], [], []
            for k, s in enumerate(step):
                m = self.lattice.counts[k]
                if s == 0:
                    sl_lo.append(slice(0, m))
                    sl_mid.append(slice(0, m))
                    sl_hi.append(slice(0, m))
                elif s == 1:
                    sl_lo.append(slice(0, m - 2))
                    sl_mid.append(slice(1, m - 1))
                    sl_hi.append(slice(2, m))
                else:
                    sl_lo.append(slice(2, m))
                    sl_mid.append(slice(1, m - 1))
                    sl_hi.append(slice(0, m - 2))
            second = v[tuple(sl_lo)] + v[tuple(sl_hi)] - 2.0 * v[tuple(sl_mid)]
            if second.size:
                worst = min(worst, float(second.min()))
        return {"worst": worst, "scale": scale}


@dataclass(frozen=True)
class SubdifferentialHull:
    """Extreme points of a compact convex subdifferential at a base point."""

    vertices: np.ndarray  # (k, n)
    base_point: np.ndarray

    def __post_init__(self):
        vertices = _as_2d(self.vertices, "vertices")
        base = np.atleast_1d(np.asarray(self.base_point, dtype=float))
        vertices = extreme_points(vertices)
        vertices.setflags(write=False)
        base.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "base_point", base)

    def contains_segment_to(self, other_point):
        return np.any(np.all(np.isclose(self.vertices, other_point), axis=1))


@dataclass(frozen=True)
class Conjugate1D:
    """Values of a 1D Legendre transform on chosen slope samples.

    ``unbounded[k]`` marks slopes where the restricted supremum hit the
    boundary of the sampled domain (the true transform is +inf or untrusted
    there); ``values`` keeps the clamped finite sup for diagnostics.
    """

    slope_samples: np.ndarray
    values: np.ndarray
    unbounded: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.slope_samples, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.unbounded is None:
            u = np.zeros(s.shape, dtype=bool)
        else:
            u = np.atleast_1d(np.asarray(self.unbounded, dtype=bool))
        if not (s.shape == v.shape == u.shape):
            raise ValueError("slope_samples, values, unbounded must align")
        if np.any(np.diff(s) < 0):
            raise ValueError("slope_samples must be increasing")
        for a in (s, v, u):
            a.setflags(write=False)
        object.__setattr__(self, "slope_samples", s)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "unbounded", u)


def extreme_points(points):
    """Extreme points of the convex hull of a finite point set.

    Handles degenerate (lower-dimensional) configurations by recursing on an
    affine basis of the set.
    """
    pts = np.unique(_as_2d(points, "points"), axis=0)
    if pts.shape[0] <= 2:
        return pts
    center = pts.mean(axis=0)
    centered = pts - center
    # Affine rank via SVD; tolerance scaled to the data.
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    scale = svals[0] if svals.size else 0.0
    rank = int(np.sum(svals > max(scale, 1.0) * 1e-12))
    if rank == 0:
        return pts[:1]
    if rank == 1:
        t = centered @ vt[0]
        return np.unique(pts[[int(np.argmin(t)), int(np.argmax(t))]], axis=0)
    if rank < pts.shape[1]:
        reduced = centered @ vt[:rank].T
        sub = extreme_points(reduced)
        # Map reduced extreme points back to original rows.
        keep = []
        for q in sub:
            d = np.linalg.norm(reduced - q, axis=1)
            keep.append(int(np.argmin(d)))
        return pts[sorted(set(keep))]
    try:
        hull = ConvexHull(pts)
    except QhullError:
        hull = ConvexHull(pts, qhull_options="QJ")
    return pts[np.sort(hull.vertices)]


def evaluate(f, x):
    """Evaluate either convex representation at x (vectorized over rows)."""
    return f(x)


def subdiff(f, x, tol=None):
    """Subdifferential of a max-affine function at x.

    Returns the hull of slopes of pieces active within ``tol`` of the max,
    which equals ch(union of active pieces' subdifferentials).
    """
    if not isinstance(f, MaxAffineFunction):
        raise TypeError("subdiff is defined for MaxAffineFunction inputs")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if tol is None:
        tol = 1e-9 * (1.0 + abs(float(f(x))))
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    active = f.active_set(x, tol)
    return SubdifferentialHull(f.slopes[active], x)


def envelope(fs):
    """Pointwise maximum of max-affine functions, as a max-affine function."""
    fs = list(fs)
    if not fs:
        raise ValueError("envelope of an empty collection")
    dims = {f.ambient_dim for f in fs}
    if len(dims) != 1:
        raise ValueError(f"mixed ambient dimensions: {sorted(dims)}")
    slopes = np.concatenate([f.slopes for f in fs], axis=0)
    intercepts = np.concatenate([f.intercepts for f in fs], axis=0)
    return MaxAffineFunction(slopes, intercepts)


def conjugate_1d(ts, values, slopes, convexity_tol=1e-8):
    """Legendre transform of sampled 1D data on requested slopes.

    ``u*(s) = max_i (t_i s - u_i)`` over the samples.  Input must be sorted in
    t and convex up to ``convexity_tol`` (relative to the value scale);
    otherwise the data cannot be the restriction of a convex function and is
    rejected.  Slopes whose argmax sits on the first or last sample are
    flagged unbounded: there the restricted sup only reflects the sampled
    window.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    if ts.shape != values.shape or ts.ndim != 1:
        raise ValueError("ts and values must be aligned 1D arrays")
    if ts.size < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("ts must be strictly increasing")
    scale = float(np.max(np.abs(values)) + 1.0)
    if ts.size >= 3:
        dt0 = ts[1:-1] - ts[:-2]
        dt1 = ts[2:] - ts[1:-1]
        # Divided second difference, scaled back to value units.
        chord = (values[2:] * dt0 + values[:-2] * dt1) / (dt0 + dt1)
        sag = chord - values[1:-1]
        worst = int(np.argmin(sag))
        if sag[worst] < -convexity_tol * scale:
            raise NonConvexInputError(
                f"samples are non-convex at index {worst + 1}: midpoint "
                f"exceeds chord by {-sag[worst]:.3e} (tol "
                f"{convexity_tol * scale:.3e})",
                index=worst + 1, second_difference=float(sag[worst]))
    order = np.argsort(slopes, kind="stable")
    matrix = np.outer(slopes, ts) - values
    arg = np.argmax(matrix, axis=1)
    vals = matrix[np.arange(slopes.size), arg]
    unbounded = (arg == 0) | (arg == ts.size - 1)
    return Conjugate1D(slopes[order], vals[order], unbounded[order])


def maxaffine_conjugate_1d(alpha, beta, slopes):
    """Exact conjugate of the 1D max-affine g(t) = max_i(alpha_i t + beta_i).

    Vectorized over many intercept rows: ``beta`` may be (m,) or (F, m) for F
    independent fibers sharing the slope list.  Returns values of g* at the
    requested slopes (shape (F, len(slopes)) or (len(slopes),)) and a matching
    boolean unbounded mask (True where a slope falls outside
    [min alpha, max alpha], where g* = +inf; the value there is +inf).

    The conjugate equals the lower convex envelope of the points
    (alpha_i, -beta_i) evaluated at the requested slope; in 1D it is the
    minimum over straddling chords, which this computes in closed form.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.asarray(beta, dtype=float)
    squeeze = beta.ndim == 1
    if squeeze:
        beta = beta[None, :]
    if beta.shape[1] != alpha.shape[0]:
        raise ValueError("beta columns must match alpha length")
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    amin, amax = float(alpha.min()), float(alpha.max())
    # Slopes an ulp outside the range (max-margin frames touch the extreme
    # slopes exactly) are clamped; the conjugate is continuous up to the
    # endpoint so this is exact.
    eps = 1e-12 * (1.0 + max(abs(amin), abs(amax)))
    out = np.full((beta.shape[0], slopes.size), np.inf)
    unbounded = np.zeros(slopes.size, dtype=bool)
    for k, sigma in enumerate(slopes):
        if sigma < amin - eps or sigma > amax + eps:
            unbounded[k] = True
            continue
        sigma = min(max(sigma, amin), amax)
        hits = np.flatnonzero(alpha == sigma)
        lo = np.flatnonzero(alpha < sigma)
        hi = np.flatnonzero(alpha > sigma)
        best = np.full(beta.shape[0], np.inf)
        if hits.size:
            best = np.minimum(best, (-beta[:, hits]).min(axis=1))
        if lo.size and hi.size:
            ii, jj = np.meshgrid(lo, hi, indexing="ij")
            ii, jj = ii.ravel(), jj.ravel()
            den = alpha[jj] - alpha[ii]
            w_lo = (alpha[jj] - sigma) / den
            w_hi = (sigma - alpha[ii]) / den
            chords = (-beta[:, ii]) * w_lo + (-beta[:, jj]) * w_hi
            best = np.minimum(best, chords.min(axis=1))
        out[:, k] = best
    if squeeze:
        out = out[0]
    return out, unbounded


def partial_conjugate(f, x_prime, slopes):
    """Fiber Legendre transform u*_{x'} of the restriction t -> f(x', t).

    For max-affine input the transform is exact (closed form over the fiber's
    affine pieces).  For grid input the fiber is sampled on the grid's last
    axis and conjugated discretely; slopes whose argmax touches the fiber
    boundary are flagged unbounded.
    """
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    if isinstance(f, MaxAffineFunction):
        alpha, beta = f.fiber(x_prime)
        vals, unb = maxaffine_conjugate_1d(alpha, beta, slopes)
        order = np.argsort(slopes, kind="stable")
        return Conjugate1D(slopes[order], vals[order], unb[order])
    if isinstance(f, GridFunction):
        x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
        if x_prime.shape[0] != f.ambient_dim - 1:
            raise ValueError("x_prime must have length ambient_dim - 1")
        lo = f.lattice.origin[:-1]
        hi = f.lattice.high[:-1]
        if np.any(x_prime < lo) or np.any(x_prime > hi):
            raise DomainError(f"empty fiber: x'={x_prime} outside projected box")
        ts = f.lattice.axes()[-1]
        pts = np.concatenate(
            [np.broadcast_to(x_prime, (ts.size, x_prime.size)), ts[:, None]],
            axis=1)
        fiber_vals = f(pts)
        return conjugate_1d(ts, fiber_vals, slopes)
    raise TypeError(f"unsupported convex representation: {type(f)!r}")


def hulls_equal(a, b, tol=1e-9):
    """Symmetric Hausdorff comparison of two finite vertex sets' hulls."""
    va = extreme_points(np.asarray(a, dtype=float))
    vb = extreme_points(np.asarray(b, dtype=float))
    d_ab = np.linalg.norm(va[:, None, :] - vb[None, :, :], axis=2)
    return float(max(d_ab.min(axis=1).max(), d_ab.min(axis=0).max())) <= tol
