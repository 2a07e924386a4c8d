"""Semidiscrete optimal transport for the bilinear cost c(x, xbar) = -<x, xbar>.

The source is absolutely continuous (uniform or piecewise-constant density on
a convex polygon or box); the target is a weighted point cloud carrying piece
labels.  The dual weights psi define the potential

    u(x) = max_j (<x, xbar_j> - psi_j),

whose Laguerre (power) cells partition the source; solving means matching
every cell's source mass to its atom's weight.  In 2D the cells, their
masses, and the cell-wall lengths driving the Newton step are computed
exactly by half-plane clipping; in dimension >= 3 masses are quasi-Monte
Carlo estimates.
"""

from __future__ import annotations

import collections
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import qmc

from .convex import MaxAffineFunction
from .errors import SolverError
from .polygons import box_polygon, clip_halfplane, polygon_area, polygon_moment

SOURCE_EDGE = -1


@dataclass(frozen=True)
class DensityTable:
    """Piecewise-constant density on a rectangular grid of cells."""

    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray  # (nx, ny) cell densities

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float)
        spacing = np.asarray(self.spacing, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        for a in (origin, spacing, values):
            a.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SourceMeasure:
    """Probability measure on a convex polygon (2D) or box (any dimension).

    ``polygon`` is a CCW vertex list in 2D; ``box`` a (low, high) pair in any
    dimension.  ``density`` is None for uniform or a :class:`DensityTable`
    (2D only); the normalization constant is computed so the total mass is 1.
    """

    polygon: np.ndarray = None
    box: tuple = None
    density: DensityTable = None

    def __post_init__(self):
        if (self.polygon is None) == (self.box is None):
            raise ValueError("provide exactly one of polygon or box")
        if self.polygon is not None:
            poly = np.asarray(self.polygon, dtype=float)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise ValueError("polygon must be (V>=3, 2)")
            if polygon_area(poly) <= 0:
                raise ValueError("polygon must be CCW with positive area")
            poly.setflags(write=False)
            object.__setattr__(self, "polygon", poly)
        else:
            low = np.asarray(self.box[0], dtype=float)
            high = np.asarray(self.box[1], dtype=float)
            if np.any(high <= low):
                raise ValueError("box must have positive extent")
            object.__setattr__(self, "box", (low, high))
        if self.density is not None and self.dim != 2:
            raise ValueError("density tables are supported in 2D only")
        object.__setattr__(self, "_norm", self._total_unnormalized())
        if self._norm <= 0:
            raise ValueError("source has zero mass")

    @property
    def dim(self):
        if self.polygon is not None:
            return 2
        return len(self.box[0])

    def polygon_2d(self):
        if self.polygon is not None:
            return self.polygon
        if self.dim != 2:
            raise ValueError("not a 2D source")
        return box_polygon(self.box[0], self.box[1])

    def _total_unnormalized(self):
        if self.dim == 2:
            mass, _ = _mass_moment(self.polygon_2d(), self.density)
            return mass
        low, high = self.box
        return float(np.prod(high - low))

    def mass_of_polygon(self, verts):
        """Exact mu-mass of a convex polygon already inside the support."""
        mass, _ = _mass_moment(verts, self.density)
        return mass / self._norm

    def mass_and_moment(self, verts):
        mass, mom = _mass_moment(verts, self.density)
        return mass / self._norm, mom / self._norm

    def qmc_sample(self, n, seed=0):
        """Deterministic low-discrepancy sample with per-point weights."""
        low, high = (None, None)
        if self.box is not None:
            low, high = self.box
        else:
            poly = self.polygon_2d()
            low = poly.min(axis=0)
            high = poly.max(axis=0)
        halton = qmc.Halton(d=len(low), scramble=True,
                            seed=np.random.default_rng(seed))
        pts = qmc.scale(halton.random(n), low, high)
        if self.polygon is not None:
            from .polygons import points_in_convex_polygon
            keep = points_in_convex_polygon(pts, self.polygon)
            pts = pts[keep]
        w = np.full(len(pts), 1.0 / len(pts))
        if self.density is not None:
            rho = _table_density_at(self.density, pts)
            w = rho / rho.sum()
        return pts, w


def _table_density_at(table, pts):
    idx = np.floor((pts - table.origin) / table.spacing).astype(int)
    idx = np.clip(idx, 0, np.asarray(table.values.shape) - 1)
    return table.values[idx[:, 0], idx[:, 1]]


def _mass_moment(verts, density):
    """Unnormalized (mass, first moment) of a convex polygon."""
    verts = np.asarray(verts, dtype=float)
    if len(verts) < 3:
        return 0.0, np.zeros(2)
    if density is None:
        area, mx, my = polygon_moment(verts)
        return area, np.array([mx, my])
    mass = 0.0
    moment = np.zeros(2)
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    i0 = np.floor((lo - density.origin) / density.spacing).astype(int)
    i1 = np.ceil((hi - density.origin) / density.spacing).astype(int)
    nx, ny = density.values.shape
    i0 = np.clip(i0, 0, [nx, ny])
    i1 = np.clip(i1, 0, [nx, ny])
    for ix in range(i0[0], i1[0]):
        for iy in range(i0[1], i1[1]):
            rho = density.values[ix, iy]
            if rho == 0.0:
                continue
            cl = density.origin + density.spacing * np.array([ix, iy])
            ch = cl + density.spacing
            piece = verts
            tags = [SOURCE_EDGE] * len(piece)
            for a, b in (((-1.0, 0.0), -cl[0]), ((1.0, 0.0), ch[0]),
                         ((0.0, -1.0), -cl[1]), ((0.0, 1.0), ch[1])):
                piece, tags = clip_halfplane(piece, tags, np.asarray(a), b,
                                             SOURCE_EDGE)
                if len(piece) == 0:
                    break
            if len(piece) >= 3:
                area, mx, my = polygon_moment(piece)
                mass += rho * area
                moment += rho * np.array([mx, my])
    return mass, moment


@dataclass(frozen=True)
class TargetDecomposition:
    """Weighted atoms partitioned into labelled pieces."""

    points: np.ndarray
    weights: np.ndarray
    piece_ids: np.ndarray
    piece_labels: tuple

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        piece_ids = np.asarray(self.piece_ids, dtype=int)
        labels = tuple(str(s) for s in self.piece_labels)
        if not (len(points) == len(weights) == len(piece_ids)):
            raise ValueError("points, weights, piece_ids must align")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        if piece_ids.min() < 0 or piece_ids.max() >= len(labels):
            raise ValueError("piece_ids out of range")
        # Atoms must be distinct, in particular across pieces.
        if len(np.unique(points, axis=0)) != len(points):
            raise ValueError("duplicate atoms are not allowed")
        for a in (points, weights, piece_ids):
            a.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "piece_ids", piece_ids)
        object.__setattr__(self, "piece_labels", labels)

    @classmethod
    def from_atoms(cls, atoms, normalize=False):
        """Build from (point, weight, label) triples."""
        pts = np.asarray([a[0] for a in atoms], dtype=float)
        w = np.asarray([a[1] for a in atoms], dtype=float)
        labels = []
        ids = []
        for a in atoms:
            lab = str(a[2])
            if lab not in labels:
                labels.append(lab)
            ids.append(labels.index(lab))
        if normalize:
            w = w / w.sum()
        return cls(pts, w, np.asarray(ids), tuple(labels))

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def n_atoms(self):
        return len(self.points)

    @property
    def n_pieces(self):
        return len(self.piece_labels)

    def piece_atoms(self, piece):
        pid = self.piece_index(piece)
        return np.flatnonzero(self.piece_ids == pid)

    def piece_index(self, piece):
        if isinstance(piece, str):
            return self.piece_labels.index(piece)
        return int(piece)

    def piece_cloud(self, piece):
        return self.points[self.piece_atoms(piece)]

    def translate_pieces(self, shifts):
        """New decomposition with piece i translated by shifts[i]."""
        pts = self.points.copy()
        for pid in range(self.n_pieces):
            pts[self.piece_ids == pid] += np.asarray(shifts[pid], dtype=float)
        return TargetDecomposition(pts, self.weights, self.piece_ids,
                                   self.piece_labels)

    def to_dict(self):
        return {
            "atoms": [{"point": p.tolist(), "weight": float(w),
                       "piece": self.piece_labels[i]}
                      for p, w, i in zip(self.points, self.weights,
                                         self.piece_ids)]
        }


@dataclass(frozen=True)
class DualWeights:
    """Solved Kantorovich dual weights; psi[0] = 0 fixes the gauge."""

    psi: np.ndarray
    residual: float
    iterations: int

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    def to_dict(self):
        return {"psi": self.psi.tolist(), "residual": self.residual,
                "iterations": self.iterations}


class LaguerreCells:
    """Exact 2D Laguerre cells of max_j(<x, xbar_j> - psi_j) in a polygon."""

    def __init__(self, source, points, psi):
        self.source = source
        self.points = np.asarray(points, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self._build()

    def _neighbor_candidates(self):
        pts = self.points
        n = len(pts)
        if n <= 8:
            full = [np.delete(np.arange(n), j) for j in range(n)]
            return full
        lifted = np.concatenate([pts, 2.0 * self.psi[:, None]], axis=1)
        try:
            hull = ConvexHull(lifted)
        except QhullError:
            try:
                hull = ConvexHull(lifted, qhull_options="QJ")
            except QhullError:
                return [np.delete(np.arange(n), j) for j in range(n)]
        neigh = [set() for _ in range(n)]
        for simplex, eq in zip(hull.simplices, hull.equations):
            if eq[2] >= -1e-12:  # keep lower-hull facets only
                continue
            for a in simplex:
                for b in simplex:
                    if a != b:
                        neigh[a].add(int(b))
        out = []
        for j in range(n):
            if neigh[j]:
                out.append(np.asarray(sorted(neigh[j]), dtype=int))
            else:
                out.append(np.empty(0, dtype=int))
        self._on_hull = np.asarray([len(s) > 0 for s in neigh])
        return out

    def _build(self):
        src_poly = self.source.polygon_2d()
        pts, psi = self.points, self.psi
        n = len(pts)
        self._on_hull = np.ones(n, dtype=bool)
        candidates = self._neighbor_candidates()
        self.polygons = []
        self.edge_tags = []
        for j in range(n):
            if not self._on_hull[j]:
                self.polygons.append(src_poly[:0])
                self.edge_tags.append([])
                continue
            poly, tags = self._clip_cell(j, candidates[j], src_poly)
            self.polygons.append(poly)
            self.edge_tags.append(tags)
        self._audit(src_poly)
        self._measure()

    def _clip_cell(self, j, cand, src_poly):
        pts, psi = self.points, self.psi
        poly = src_poly
        tags = [SOURCE_EDGE] * len(poly)
        for k in cand:
            if len(poly) == 0:
                break
            a = pts[k] - pts[j]
            b = psi[k] - psi[j]
            poly, tags = clip_halfplane(poly, tags, a, b, int(k))
        return poly, tags

    def _audit(self, src_poly):
        """Verify no foreign half-plane cuts a finished cell; repair if so."""
        pts, psi = self.points, self.psi
        n = len(pts)
        for j in range(n):
            poly = self.polygons[j]
            if len(poly) == 0:
                continue
            margins = (poly @ pts.T - (poly @ pts[j])[:, None]
                       - (psi - psi[j])[None, :])
            margins[:, j] = -np.inf
            scale = 1e-9 * (1.0 + float(np.abs(psi).max())
                            + float(np.abs(poly).max() * np.abs(pts).max()))
            worst = margins.max(axis=0)
            bad = np.flatnonzero(worst > scale)
            if bad.size:
                poly, tags = self._clip_cell(j, np.arange(n)[np.arange(n) != j],
                                             src_poly)
                self.polygons[j] = poly
                self.edge_tags[j] = tags

    def _measure(self):
        n = len(self.points)
        self.masses = np.zeros(n)
        self.moments = np.zeros((n, 2))
        for j in range(n):
            mass, mom = self.source.mass_and_moment(self.polygons[j])
            self.masses[j] = max(mass, 0.0)
            self.moments[j] = mom

    def wall_matrix(self):
        """Sparse-ish symmetric matrix of density-weighted wall couplings.

        Entry (j, k) is integral of rho over the j-k wall divided by
        |xbar_j - xbar_k|: the off-diagonal of the dual functional's Hessian.
        """
        n = len(self.points)
        coup = collections.defaultdict(float)
        dens = self.source.density
        norm = self.source._norm
        for j in range(n):
            poly = self.polygons[j]
            tags = self.edge_tags[j]
            m = len(poly)
            for e in range(m):
                k = tags[e]
                if k == SOURCE_EDGE or k < 0:
                    continue
                a, b = poly[e], poly[(e + 1) % m]
                length = float(np.linalg.norm(b - a))
                if length == 0.0:
                    continue
                if dens is None:
                    rho = 1.0
                else:
                    rho = float(_table_density_at(dens, (a + b)[None] / 2.0)[0])
                dist = float(np.linalg.norm(self.points[j] - self.points[k]))
                coup[(j, k)] += rho * length / (dist * norm)
        mat = np.zeros((n, n))
        for (j, k), v in coup.items():
            mat[j, k] = v
        return 0.5 * (mat + mat.T)


def cell_masses(mu, nu, psi, qmc_points=1 << 14, seed=0):
    """Per-atom source masses of the Laguerre cells.

    2D: exact via polygon clipping (stderr is zero).  Dimension >= 3:
    quasi-Monte Carlo estimate with a reported standard-error proxy.
    Returns (masses, stderr).
    """
    psi = np.asarray(psi.psi if isinstance(psi, DualWeights) else psi,
                     dtype=float)
    if mu.dim == 2:
        cells = LaguerreCells(mu, nu.points, psi)
        return cells.masses, np.zeros_like(cells.masses)
    pts, w = mu.qmc_sample(qmc_points, seed=seed)
    assign = _assign(pts, nu.points, psi)
    masses = np.bincount(assign, weights=w, minlength=nu.n_atoms)
    stderr = np.sqrt(np.maximum(masses * (1.0 - masses), 0.0) / len(pts))
    return masses, stderr


def _assign(pts, atoms, psi, chunk=1 << 15):
    out = np.empty(len(pts), dtype=int)
    for s in range(0, len(pts), chunk):
        block = pts[s:s + chunk]
        scores = block @ atoms.T - psi
        out[s:s + chunk] = np.argmax(scores, axis=1)
    return out


def solve_semidiscrete(mu, nu, tol=1e-7, max_iter=300, psi0=None,
                       qmc_points=1 << 14):
    """Damped Newton solve of the semidiscrete dual; returns DualWeights.

    Stops when every cell mass is within ``tol`` of its atom weight
    (sup-norm).  Steps are damped until the l2 residual decreases and no
    prescribed-positive cell vanishes; when the Newton direction stalls the
    solver falls back to gradient steps.  Raises :class:`SolverError` with
    the worst residual on failure to converge.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = nu.weights
    if psi0 is None:
        # Voronoi start: equal power weights, so every atom inside the
        # source owns a nonempty cell.
        psi = 0.5 * np.sum(nu.points**2, axis=1)
    else:
        psi = np.asarray(psi0, float).copy()
    psi -= psi[0]
    if mu.dim != 2:
        return _solve_qmc(mu, nu, psi, tol, qmc_points)

    def masses_of(p):
        return LaguerreCells(mu, nu.points, p)

    cells = masses_of(psi)
    res = cells.masses - w
    min_mass0 = float(cells.masses[w > 0].min())
    floor = 0.5 * min(min_mass0, float(w.min())) if min_mass0 > 0 else 0.0
    best_linf = float(np.abs(res).max())
    it = 0
    while best_linf > tol and it < max_iter:
        it += 1
        step = _newton_direction(cells, res)
        new_psi, new_cells, improved = _damped_update(
            masses_of, psi, res, step, w, floor)
        if not improved:
            step = res.copy()  # gradient of the dual functional
            step -= step[0]
            new_psi, new_cells, improved = _damped_update(
                masses_of, psi, res, step, w, floor)
        if not improved:
            raise SolverError(
                "no descent step found",
                worst_residual=best_linf, iterations=it)
        psi, cells = new_psi, new_cells
        res = cells.masses - w
        best_linf = float(np.abs(res).max())
        if floor == 0.0 and np.all(cells.masses[w > 0] > 0):
            floor = 0.5 * min(float(cells.masses[w > 0].min()), float(w.min()))
    if best_linf > tol:
        raise SolverError(
            f"did not reach tol={tol:g} in {max_iter} iterations",
            worst_residual=best_linf, iterations=it)
    return DualWeights(psi, best_linf, it)


def _newton_direction(cells, res):
    """Solve the reduced Laplacian system for the Newton step on psi."""
    coup = cells.wall_matrix()
    lap = -coup
    np.fill_diagonal(lap, coup.sum(axis=1))
    n = lap.shape[0]
    lap = lap + np.eye(n) * (1e-12 * (1.0 + lap.diagonal().max()))
    rhs = res.copy()
    step = np.zeros(n)
    try:
        step[1:] = np.linalg.solve(lap[1:, 1:], rhs[1:])
    except np.linalg.LinAlgError:
        step[1:] = np.linalg.lstsq(lap[1:, 1:], rhs[1:], rcond=None)[0]
    return step


def _damped_update(masses_of, psi, res, step, w, floor, max_halvings=30):
    r0 = float(np.linalg.norm(res))
    alpha = 1.0
    for _ in range(max_halvings):
        cand = psi + alpha * step
        cand -= cand[0]
        cells = masses_of(cand)
        r = cells.masses - w
        ok_mass = np.all(cells.masses[w > 0] >= floor)
        if ok_mass and float(np.linalg.norm(r)) < r0 * (1.0 - 1e-4 * alpha):
            return cand, cells, True
        alpha *= 0.5
    return psi, None, False


def _solve_qmc(mu, nu, psi0, tol, qmc_points):
    pts, w_pts = mu.qmc_sample(qmc_points)
    atoms, w = nu.points, nu.weights

    def fun(psi):
        scores = pts @ atoms.T - psi
        arg = np.argmax(scores, axis=1)
        val = float(w @ psi + w_pts @ scores[np.arange(len(pts)), arg])
        masses = np.bincount(arg, weights=w_pts, minlength=len(atoms))
        return val, w - masses

    res = minimize(fun, psi0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 500, "ftol": 1e-15, "gtol": 0.1 * tol})
    psi = res.x - res.x[0]
    _, grad = fun(psi)
    linf = float(np.abs(grad).max())
    if linf > tol:
        raise SolverError(
            f"QMC dual stalled at residual {linf:.3e} (sampling floor ~"
            f"{1.0 / np.sqrt(qmc_points):.1e}); increase qmc_points or tol",
            worst_residual=linf, iterations=int(res.nit))
    return DualWeights(psi, linf, int(res.nit))


def potential(nu, psi):
    """The solved potential u(x) = max_j(<x, xbar_j> - psi_j)."""
    psi = np.asarray(psi.psi if isinstance(psi, DualWeights) else psi, float)
    return MaxAffineFunction(nu.points, -psi)


def decompose(nu, psi):
    """Per-piece potentials u_i = max over piece-i atoms; envelope equals u."""
    psi = np.asarray(psi.psi if isinstance(psi, DualWeights) else psi, float)
    out = {}
    for pid, label in enumerate(nu.piece_labels):
        idx = np.flatnonzero(nu.piece_ids == pid)
        out[label] = MaxAffineFunction(nu.points[idx], -psi[idx])
    return out


def transport_cost(mu, nu, psi, qmc_points=1 << 14):
    """Total cost integral of -<x, T(x)> dmu for the solved map."""
    psi = np.asarray(psi.psi if isinstance(psi, DualWeights) else psi, float)
    if mu.dim == 2:
        cells = LaguerreCells(mu, nu.points, psi)
        return -float(np.sum(cells.moments * nu.points))
    pts, w = mu.qmc_sample(qmc_points)
    assign = _assign(pts, nu.points, psi)
    return -float(np.sum(w * np.sum(pts * nu.points[assign], axis=1)))


def write_dual_json(nu, dual, masses, path):
    payload = {
        "psi": dual.psi.tolist(),
        "residual": dual.residual,
        "iterations": dual.iterations,
        "masses": np.asarray(masses).tolist(),
        "weights": nu.weights.tolist(),
        "pieces": list(nu.piece_labels),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
