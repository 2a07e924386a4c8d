"""Tear extraction through the coincidence-graph formula.

Given two convex potentials whose subgradients live on opposite sides of a
strongly separating hyperplane {<x, normal> = a0} with spacing d0, the set
where the two potentials coincide is the graph, over the hyperplane, of

    h(x') = h_plus(x') - h_minus(x'),
    h_pm(x') = -u*_{x'}(a0 -/+ d0) / (2 d0),

where u = max(u_plus, u_minus) in coordinates rotated so the normal becomes
the last axis, and u*_{x'} is the Legendre transform of the fiber
t -> u(x', t).  Both h_plus and h_minus are convex, so h is DC, and
Lip(h) <= tan(theta_min) <= diam' / (2 d0) for the subgradient opening angle
theta_min.  This module constructs the frame, evaluates h on a lattice, and
certifies that chain.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .convex import (Conjugate1D, GridFunction, MaxAffineFunction,
                     conjugate_1d, envelope, extreme_points,
                     maxaffine_conjugate_1d)
from .errors import CertificateError, NoSeparationError, SeparationViolationError
from .lattice import Lattice

SIGMA = "SIGMA"
C_PLUS = "C_PLUS"
C_MINUS = "C_MINUS"


def householder_to_last_axis(normal):
    """Orthogonal matrix R with R @ normal = e_n (Householder reflection)."""
    normal = np.asarray(normal, dtype=float)
    n = normal.size
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    v = normal - e_n
    vv = float(v @ v)
    if vv < 1e-30:
        return np.eye(n)
    return np.eye(n) - 2.0 * np.outer(v, v) / vv


@dataclass(frozen=True)
class SeparatingFrame:
    """Unit normal, midheight a0 and spacing d0 of a separating hyperplane.

    The plus cloud lies on or above ``<x, normal> = midheight + spacing`` and
    the minus cloud on or below ``midheight - spacing`` (max-margin frames
    touch the bounds, so the inequalities are non-strict).  ``rotation`` is an
    orthogonal matrix taking ``normal`` to the last coordinate axis.
    """

    normal: np.ndarray
    midheight: float
    spacing: float
    rotation: np.ndarray

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        rotation = np.asarray(self.rotation, dtype=float)
        n = normal.size
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise ValueError("normal must be a unit vector")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if rotation.shape != (n, n):
            raise ValueError("rotation must be n x n")
        if np.max(np.abs(rotation @ rotation.T - np.eye(n))) > 1e-12:
            raise ValueError("rotation must be orthogonal to 1e-12")
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        if np.max(np.abs(rotation @ normal - e_n)) > 1e-9:
            raise ValueError("rotation must map normal to e_n")
        normal.setflags(write=False)
        rotation.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "midheight", float(self.midheight))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "rotation", rotation)

    @property
    def ambient_dim(self):
        return self.normal.size

    def side_margins(self, points):
        """Signed heights <p, normal> - midheight for a point array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.normal - self.midheight

    def to_dict(self):
        return {
            "normal": self.normal.tolist(),
            "midheight": self.midheight,
            "spacing": self.spacing,
            "rotation": self.rotation.tolist(),
        }


def _closest_cross_pair(plus_cloud, minus_cloud):
    d = np.linalg.norm(plus_cloud[:, None, :] - minus_cloud[None, :, :], axis=2)
    i, j = np.unravel_index(int(np.argmin(d)), d.shape)
    return (plus_cloud[i], minus_cloud[j]), float(d[i, j])


def find_separating_frame(plus_cloud, minus_cloud):
    """Maximum-margin separating frame between two finite point clouds.

    The direction solves the hard-margin separation program
    ``min |w|^2 / 2`` subject to ``<w, p> - b >= 1`` on the plus cloud and
    ``<w, m> - b <= -1`` on the minus cloud; midheight and spacing are then
    recomputed exactly from the cloud extents along the optimal direction.

    Raises :class:`NoSeparationError` (with the closest cross pair as
    witness) when the clouds are not strictly separable.
    """
    plus_cloud = np.atleast_2d(np.asarray(plus_cloud, dtype=float))
    minus_cloud = np.atleast_2d(np.asarray(minus_cloud, dtype=float))
    if plus_cloud.size == 0 or minus_cloud.size == 0:
        raise ValueError("both clouds must be nonempty")
    if plus_cloud.shape[1] != minus_cloud.shape[1]:
        raise ValueError("clouds must share the ambient dimension")
    n = plus_cloud.shape[1]
    p_ext = extreme_points(plus_cloud)
    m_ext = extreme_points(minus_cloud)

    if len(p_ext) == 1 and len(m_ext) == 1:
        direction = p_ext[0] - m_ext[0]
        norm = float(np.linalg.norm(direction))
        if norm <= 0:
            raise NoSeparationError(
                "coincident singleton clouds",
                witness=_closest_cross_pair(plus_cloud, minus_cloud))
        direction = direction / norm
    else:
        direction = _max_margin_direction(p_ext, m_ext)
        if direction is None:
            raise NoSeparationError(
                "clouds are not strictly linearly separable",
                witness=_closest_cross_pair(plus_cloud, minus_cloud))

    lo_plus = float(np.min(plus_cloud @ direction))
    hi_minus = float(np.max(minus_cloud @ direction))
    spacing = 0.5 * (lo_plus - hi_minus)
    if spacing <= 0:
        raise NoSeparationError(
            "clouds are not strictly linearly separable",
            witness=_closest_cross_pair(plus_cloud, minus_cloud))
    midheight = 0.5 * (lo_plus + hi_minus)
    rotation = householder_to_last_axis(direction)
    return SeparatingFrame(direction, midheight, spacing, rotation)


def _max_margin_direction(plus_pts, minus_pts):
    """Unit direction of the hard-margin program, or None if infeasible."""
    n = plus_pts.shape[1]
    mu_p = plus_pts.mean(axis=0)
    mu_m = minus_pts.mean(axis=0)
    gap = mu_p - mu_m
    gap_norm = float(np.linalg.norm(gap))
    if gap_norm > 0:
        w0 = 2.0 * gap / max(gap_norm**2, 1e-12)
    else:
        w0 = np.zeros(n)
        w0[-1] = 1.0
    z0 = np.concatenate([w0, [float((mu_p + mu_m) @ w0) / 2.0]])

    a_rows = np.concatenate([
        np.concatenate([plus_pts, -np.ones((len(plus_pts), 1))], axis=1),
        np.concatenate([-minus_pts, np.ones((len(minus_pts), 1))], axis=1),
    ], axis=0)

    def objective(z):
        return 0.5 * float(z[:n] @ z[:n])

    def grad(z):
        g = np.zeros(n + 1)
        g[:n] = z[:n]
        return g

    cons = [{
        "type": "ineq",
        "fun": lambda z: a_rows @ z - 1.0,
        "jac": lambda z: a_rows,
    }]
    res = minimize(objective, z0, jac=grad, method="SLSQP", constraints=cons,
                   options={"maxiter": 500, "ftol": 1e-14})
    w = res.x[:n]
    if np.min(a_rows @ res.x) < 1.0 - 1e-6 or np.linalg.norm(w) < 1e-12:
        return None
    return w / np.linalg.norm(w)


@dataclass(frozen=True)
class TearGraph:
    """Sampled coincidence graph h = h_plus - h_minus over a projected lattice.

    All lattice coordinates are in the rotated frame (normal along the last
    axis); ``band`` is the half-width of the SIGMA tolerance band in the
    rotated last coordinate.
    """

    frame: SeparatingFrame
    lattice: Lattice           # projected (n-1)-dim lattice, rotated coords
    h_values: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray
    theta_min: float
    measured_lip: float
    band: float

    def __post_init__(self):
        for name in ("h_values", "h_plus", "h_minus"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != tuple(self.lattice.counts):
                raise ValueError(f"{name} must match the lattice counts")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def interp_h(self, x_prime):
        """Multilinear interpolation of h at rotated projected coordinates."""
        x_prime = np.atleast_2d(np.asarray(x_prime, dtype=float))
        lat = self.lattice
        rel = (x_prime - lat.origin) / lat.spacing
        rel = np.clip(rel, 0.0, np.asarray(lat.counts) - 1.0)
        lo = np.minimum(rel.astype(int), np.asarray(lat.counts) - 2)
        frac = rel - lo
        out = np.zeros(x_prime.shape[0])
        ndim = lat.ndim
        for corner in range(1 << ndim):
            offs = np.array([(corner >> k) & 1 for k in range(ndim)])
            weight = np.prod(np.where(offs, frac, 1.0 - frac), axis=1)
            idx = tuple((lo + offs).T)
            out += weight * self.h_values[idx]
        return out

    def to_csv(self, path):
        axes = self.lattice.axes()
        ndim = self.lattice.ndim
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"xp{k + 1}" for k in range(ndim)]
                            + ["h", "h_plus", "h_minus"])
            for idx in np.ndindex(*self.lattice.counts):
                coords = [f"{axes[k][idx[k]]:.12g}" for k in range(ndim)]
                writer.writerow(coords + [f"{self.h_values[idx]:.12g}",
                                          f"{self.h_plus[idx]:.12g}",
                                          f"{self.h_minus[idx]:.12g}"])

    def summary(self):
        return {
            "frame": self.frame.to_dict(),
            "theta_min": self.theta_min,
            "tan_theta_min": math.tan(self.theta_min),
            "measured_lip": self.measured_lip,
            "band": self.band,
            "h_range": [float(self.h_values.min()), float(self.h_values.max())],
        }


def _slope_cloud(f, lattice_rot, rotation):
    """Subgradient sample cloud of f over the (rotated) lattice box.

    Max-affine: the exact slope list (original coordinates).  Grid: central
    finite-difference gradients at interior lattice nodes.
    """
    if isinstance(f, MaxAffineFunction):
        return f.slopes
    if isinstance(f, GridFunction):
        lat = f.lattice
        grads = np.gradient(f.values, *lat.axes())
        if f.ambient_dim == 1:
            grads = [grads]
        flat = np.stack([g.ravel() for g in grads], axis=-1)
        return flat
    raise TypeError(f"unsupported convex representation: {type(f)!r}")


def theta_min_from_clouds(plus_cloud, minus_cloud, normal):
    """Opening angle: cos(theta) = min <(p - q)/|p - q|, normal> over pairs.

    The minimum over the two convex hulls is attained at extreme-point pairs,
    so evaluating on the given clouds is exact for their hulls.
    """
    plus_cloud = np.atleast_2d(plus_cloud)
    minus_cloud = np.atleast_2d(minus_cloud)
    diff = plus_cloud[:, None, :] - minus_cloud[None, :, :]
    norms = np.linalg.norm(diff, axis=2)
    heights = diff @ np.asarray(normal, dtype=float)
    cos_theta = float(np.min(heights / norms))
    cos_theta = min(1.0, max(-1.0, cos_theta))
    return math.acos(cos_theta)


def measured_lipschitz(h, spacing):
    """Max finite-difference slope of h over lattice edges and 2D diagonals."""
    h = np.asarray(h, dtype=float)
    best = 0.0
    ndim = h.ndim
    for k in range(ndim):
        d = np.abs(np.diff(h, axis=k)) / spacing[k]
        if d.size:
            best = max(best, float(d.max()))
    for i in range(ndim):
        for j in range(i + 1, ndim):
            step = math.hypot(spacing[i], spacing[j])
            a = np.abs(h[_shift(ndim, i, 1, j, 1)] - h[_shift(ndim, i, 0, j, 0)])
            b = np.abs(h[_shift(ndim, i, 1, j, 0)] - h[_shift(ndim, i, 0, j, 1)])
            if a.size:
                best = max(best, float(a.max()) / step, float(b.max()) / step)
    return best


def _shift(ndim, i, si, j, sj):
    out = [slice(None)] * ndim
    out[i] = slice(1, None) if si else slice(None, -1)
    out[j] = slice(1, None) if sj else slice(None, -1)
    return tuple(out)


def _check_sides(frame, plus_slopes, minus_slopes, slack=1e-9):
    margins_p = frame.side_margins(plus_slopes)
    bad = np.flatnonzero(margins_p < frame.spacing - slack)
    if bad.size:
        k = int(bad[0])
        raise SeparationViolationError(
            f"a subgradient of u_plus lies below midheight+spacing "
            f"(height {margins_p[k]:.6g} < {frame.spacing:.6g})",
            witness_slope=np.asarray(plus_slopes)[k])
    margins_m = frame.side_margins(minus_slopes)
    bad = np.flatnonzero(margins_m > -frame.spacing + slack)
    if bad.size:
        k = int(bad[0])
        raise SeparationViolationError(
            f"a subgradient of u_minus lies above midheight-spacing "
            f"(height {margins_m[k]:.6g} > {-frame.spacing:.6g})",
            witness_slope=np.asarray(minus_slopes)[k])


def tear_height(u_plus, u_minus, frame, lattice, band_steps=2.0):
    """Coincidence graph of u_plus and u_minus over the frame's hyperplane.

    ``lattice`` is an n-dimensional lattice in the **rotated** coordinates
    (frame normal along the last axis); its projection carries the graph and
    its last-axis spacing sets the SIGMA band width (``band_steps`` rotated
    lattice steps).

    Subgradients of u_plus (u_minus) over the lattice box must lie on the
    upper (lower) side of the frame: exact slope check for max-affine input,
    sampled finite-difference check for grids.  Violations raise
    :class:`SeparationViolationError`.
    """
    if lattice.ndim != frame.ambient_dim:
        raise ValueError("lattice dimension must match the frame")
    rot = frame.rotation
    plus_cloud = _slope_cloud(u_plus, lattice, rot)
    minus_cloud = _slope_cloud(u_minus, lattice, rot)
    _check_sides(frame, plus_cloud, minus_cloud)

    a0 = frame.midheight
    d0 = frame.spacing
    sigma = np.array([a0 - d0, a0 + d0])
    proj = lattice.project()
    xps = proj.nodes()

    if isinstance(u_plus, MaxAffineFunction) and isinstance(u_minus, MaxAffineFunction):
        u_rot = envelope([u_plus.rotate(rot), u_minus.rotate(rot)])
        alpha = u_rot.slopes[:, -1]
        beta = xps @ u_rot.slopes[:, :-1].T + u_rot.intercepts
        vals, unbounded = maxaffine_conjugate_1d(alpha, beta, sigma)
        if unbounded.any():
            raise SeparationViolationError(
                "conjugate slope outside the fiber slope range; frame "
                "spacing is inconsistent with the potentials")
        star_lo = vals[:, 0]
        star_hi = vals[:, 1]
    else:
        star_lo = np.empty(xps.shape[0])
        star_hi = np.empty(xps.shape[0])
        for r, xp in enumerate(xps):
            conj = _fiber_conjugate_rotated(u_plus, u_minus, rot, lattice, xp,
                                            sigma)
            star_lo[r], star_hi[r] = conj
    h_plus = (-star_lo / (2.0 * d0)).reshape(proj.counts)
    h_minus = (-star_hi / (2.0 * d0)).reshape(proj.counts)
    h = h_plus - h_minus

    theta = theta_min_from_clouds(plus_cloud, minus_cloud, frame.normal)
    lip = measured_lipschitz(h, proj.spacing)
    band = band_steps * float(lattice.spacing[-1])
    return TearGraph(frame, proj, h, h_plus, h_minus, theta, lip, band)


def _fiber_conjugate_rotated(u_plus, u_minus, rot, lattice, x_prime, sigma):
    """Sampled fiber conjugate for grid-backed potentials, rotated frame."""
    ts = lattice.axes()[-1]
    pts_rot = np.concatenate(
        [np.broadcast_to(x_prime, (ts.size, x_prime.size)), ts[:, None]],
        axis=1)
    pts = pts_rot @ rot  # rows are rot.T @ y
    vals_p = _eval_clipped(u_plus, pts)
    vals_m = _eval_clipped(u_minus, pts)
    fiber = np.maximum(vals_p, vals_m)
    ok = np.isfinite(fiber)
    if ok.sum() < 2:
        raise SeparationViolationError(
            f"fiber at x'={x_prime} has fewer than 2 in-domain samples")
    # Oblique sections of multilinear interpolants are only convex up to the
    # interpolation scale, so convexity is not re-checked here.
    conj = conjugate_1d(ts[ok], fiber[ok], sigma, convexity_tol=np.inf)
    return float(conj.values[0]), float(conj.values[1])


def _eval_clipped(f, pts):
    if isinstance(f, MaxAffineFunction):
        return f(pts)
    out = np.full(pts.shape[0], np.inf)
    lo = f.lattice.origin
    hi = f.lattice.high
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    if inside.any():
        out[inside] = f(pts[inside])
    return out


def classify(u_plus, u_minus, tear, x, tol=None):
    """Classify a point as SIGMA (tol-band of the graph), C_PLUS or C_MINUS.

    The point is rotated into the frame; its last coordinate is compared with
    the interpolated graph height.  ``tol`` defaults to the tear's band
    half-width.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if tol is None:
        tol = tear.band
    y = tear.frame.rotation @ x
    gap = float(y[-1] - tear.interp_h(y[:-1])[0])
    if abs(gap) <= tol:
        return SIGMA
    return C_PLUS if gap > 0 else C_MINUS


def lipschitz_certificate(tear, plus_cloud, minus_cloud, tol=None):
    """Certify measured_lip <= tan(theta_min) + tol <= diam'/(2 d0) + tol.

    Both theta_min and diam' are computed from the supplied clouds, which
    must contain the potentials' subgradient images for the chain to be a
    theorem (for solver decompositions the piece atoms are exactly the
    slopes).  The default ``tol`` is twice the lattice step ratio (last
    rotated axis step over the smallest projected step), the discretization
    slack of the graph; exact max-affine evaluation keeps the measured
    quantities far inside it.  Raises :class:`CertificateError` with the
    witness on violation.
    """
    frame = tear.frame
    plus_cloud = np.atleast_2d(np.asarray(plus_cloud, dtype=float))
    minus_cloud = np.atleast_2d(np.asarray(minus_cloud, dtype=float))
    if tol is None:
        step_n = tear.band / 2.0
        tol = 2.0 * step_n / float(np.min(tear.lattice.spacing))
    theta = theta_min_from_clouds(plus_cloud, minus_cloud, frame.normal)
    tan_theta = math.tan(theta)

    union = np.concatenate([plus_cloud, minus_cloud], axis=0)
    union_rot = union @ frame.rotation.T
    proj = union_rot[:, :-1]
    diff = proj[:, None, :] - proj[None, :, :]
    diam = float(np.max(np.linalg.norm(diff, axis=2))) if len(proj) > 1 else 0.0
    diam_bound = diam / (2.0 * frame.spacing)

    report = {
        "measured_lip": tear.measured_lip,
        "tan_theta_min": tan_theta,
        "diam_bound": diam_bound,
        "tol": tol,
        "ok": True,
    }
    if tear.measured_lip > tan_theta + tol:
        report["ok"] = False
        raise CertificateError(
            f"measured Lipschitz {tear.measured_lip:.6g} exceeds "
            f"tan(theta_min)={tan_theta:.6g} + tol", witness=report)
    if tan_theta > diam_bound + tol:
        report["ok"] = False
        raise CertificateError(
            f"tan(theta_min)={tan_theta:.6g} exceeds diam/(2 d0)="
            f"{diam_bound:.6g} + tol", witness=report)
    return report


def write_summary_json(tear, report, path):
    payload = tear.summary()
    payload["certificate"] = report
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
