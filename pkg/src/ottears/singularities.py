"""Multiplicity fields, coincidence sets, affine independence, root finding.

Multiplicity counts how many target pieces a point's subdifferential touches.
When the pieces' convex hulls are mutually disjoint this equals the number of
active piece potentials, which is what a lattice can see; the analyzer
refuses to compute multiplicity from active values when hulls overlap.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .convex import MaxAffineFunction, extreme_points
from .errors import NoSeparationError, PreconditionError
from .lattice import Lattice
from .polygons import (convex_hull_2d, convex_polygon_distance,
                       points_to_polygon_distance)
from .tears import find_separating_frame


def _evaluate_piece(fn, nodes):
    out = np.asarray(fn(nodes), dtype=float)
    if out.shape != (len(nodes),):
        raise ValueError("piece function must map (N, n) to (N,)")
    return out


@dataclass(frozen=True)
class MultiplicityField:
    """Active piece sets and multiplicities sampled on a lattice."""

    lattice: Lattice
    piece_labels: tuple
    active: np.ndarray        # (N, K) bool, nodes in C order
    values: np.ndarray        # (N, K) piece values
    tol: float

    def __post_init__(self):
        active = np.asarray(self.active, dtype=bool)
        values = np.asarray(self.values, dtype=float)
        n_nodes = int(np.prod(self.lattice.counts))
        if active.shape != (n_nodes, len(self.piece_labels)):
            raise ValueError("active has the wrong shape")
        if values.shape != active.shape:
            raise ValueError("values has the wrong shape")
        active.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "piece_labels", tuple(self.piece_labels))

    @property
    def multiplicity(self):
        return self.active.sum(axis=1).reshape(self.lattice.counts)

    def active_grid(self, piece):
        k = self.piece_labels.index(piece) if isinstance(piece, str) else piece
        return self.active[:, k].reshape(self.lattice.counts)

    def nodes_with_multiplicity(self, m, at_least=False):
        mult = self.active.sum(axis=1)
        mask = mult >= m if at_least else mult == m
        return np.flatnonzero(mask)

    def to_csv(self, path):
        nodes = self.lattice.nodes()
        mult = self.active.sum(axis=1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k + 1}" for k in range(self.lattice.ndim)]
                            + ["multiplicity", "active_pieces"])
            for r in range(len(nodes)):
                ids = "|".join(self.piece_labels[k]
                               for k in np.flatnonzero(self.active[r]))
                writer.writerow([f"{c:.12g}" for c in nodes[r]]
                                + [int(mult[r]), ids])


def check_disjoint_hulls(piece_clouds, labels=None):
    """Raise PreconditionError when two piece hulls are not strictly separated."""
    labels = labels or [str(i) for i in range(len(piece_clouds))]
    for i in range(len(piece_clouds)):
        for j in range(i + 1, len(piece_clouds)):
            try:
                find_separating_frame(piece_clouds[i], piece_clouds[j])
            except NoSeparationError as exc:
                raise PreconditionError(
                    f"piece hulls '{labels[i]}' and '{labels[j]}' overlap; "
                    "active-value multiplicity is not valid",
                    details=exc.witness) from exc


def multiplicity_field(u_pieces, lattice, tol, piece_clouds=None):
    """Active-set multiplicity of the envelope of ``u_pieces`` on a lattice.

    ``u_pieces`` maps labels to convex functions (max-affine or vectorized
    callables).  Hull disjointness of the pieces' subgradient clouds is
    verified first (slope lists for max-affine; pass ``piece_clouds`` for
    other representations).
    """
    labels = list(u_pieces.keys())
    fns = [u_pieces[k] for k in labels]
    if piece_clouds is None:
        if not all(isinstance(f, MaxAffineFunction) for f in fns):
            raise ValueError("piece_clouds is required for non-max-affine pieces")
        piece_clouds = [f.slopes for f in fns]
    check_disjoint_hulls(piece_clouds, labels)
    nodes = lattice.nodes()
    values = np.stack([_evaluate_piece(f, nodes) for f in fns], axis=1)
    top = values.max(axis=1, keepdims=True)
    active = values >= top - tol
    return MultiplicityField(lattice, tuple(labels), active, values, tol)


@dataclass(frozen=True)
class CoincidenceSet:
    """Lattice view of a coincidence set for a subset of pieces.

    ``pairwise_nodes`` lists node indices where all subset pieces agree
    pairwise within tol (Sigma); ``upper_nodes`` where they additionally
    attain the envelope (Sigma-up).  The two can disagree near higher-order
    points; the discrepancy is reported, not resolved.
    """

    lattice: Lattice
    subset: tuple
    pairwise_nodes: np.ndarray
    upper_nodes: np.ndarray
    graph: dict

    @property
    def discrepancy_nodes(self):
        return np.setdiff1d(self.pairwise_nodes, self.upper_nodes)


def coincidence_set(u_pieces, subset, lattice, tol, tear=None):
    """Sigma_{I'} and Sigma^up at lattice resolution, with a graph fit.

    For ``|I'| = 2`` and a supplied TearGraph the set is checked against the
    graph within one lattice step (reported in ``graph['tear_agreement']``).
    For larger affinely independent subsets a Lipschitz graph over the best
    coordinate plane of dimension n+1-|I'| is fitted and its measured
    Lipschitz constant reported.
    """
    subset = list(subset)
    if len(subset) < 2:
        raise ValueError("need at least two pieces")
    labels = list(u_pieces.keys())
    nodes = lattice.nodes()
    values = np.stack([_evaluate_piece(u_pieces[k], nodes) for k in subset],
                      axis=1)
    all_values = np.stack([_evaluate_piece(u_pieces[k], nodes) for k in labels],
                          axis=1)
    spread = values.max(axis=1) - values.min(axis=1)
    pairwise = np.flatnonzero(spread <= tol)
    upper = np.flatnonzero(
        (all_values.max(axis=1) - values.min(axis=1)) <= tol)

    graph = {}
    if len(subset) == 2 and tear is not None:
        agree = True
        worst = 0.0
        step = float(np.max(lattice.spacing))
        for r in pairwise:
            y = tear.frame.rotation @ nodes[r]
            gap = abs(float(y[-1] - tear.interp_h(y[:-1])[0]))
            worst = max(worst, gap)
            if gap > step:
                agree = False
        graph["tear_agreement"] = {"ok": agree, "worst_gap": worst,
                                   "step": step}
    if len(subset) >= 3 and len(pairwise):
        graph["fit"] = _fit_coordinate_graph(u_pieces, subset, lattice,
                                             nodes[pairwise])
    return CoincidenceSet(lattice, tuple(subset), pairwise, upper, graph)


def _fit_coordinate_graph(u_pieces, subset, lattice, sigma_nodes):
    """Graph of the coincidence set over a coordinate plane.

    The plane is chosen greedily: take the k coordinate axes (k = |I'|-1)
    on which the matrix of representative gradient differences has the
    largest smallest singular value; the remaining n-k axes parameterize.
    """
    n = lattice.ndim
    k = len(subset) - 1
    center = sigma_nodes.mean(axis=0)
    grads = []
    for lab in subset:
        f = u_pieces[lab]
        if isinstance(f, MaxAffineFunction):
            grads.append(f.slopes[int(np.argmax(f.values(center)))])
        else:
            grads.append(_fd_gradient(f, center, 1e-5))
    grads = np.asarray(grads)
    diffs = grads[:-1] - grads[-1]

    best_axes, best_sv = None, -1.0
    for axes in itertools.combinations(range(n), k):
        sv = np.linalg.svd(diffs[:, list(axes)], compute_uv=False)
        if sv[-1] > best_sv:
            best_sv, best_axes = float(sv[-1]), axes
    graph_axes = list(best_axes)
    base_axes = [a for a in range(n) if a not in graph_axes]

    if not base_axes:
        return {"graph_axes": graph_axes, "base_axes": [], "dimension": 0,
                "smallest_sv": best_sv}
    idx = np.rint((sigma_nodes - lattice.origin) / lattice.spacing).astype(int)
    base_idx = idx[:, base_axes]
    heights = {}
    for r in range(len(sigma_nodes)):
        key = tuple(base_idx[r])
        heights.setdefault(key, []).append(sigma_nodes[r][graph_axes])
    single_valued = True
    table = {}
    for key, vals in heights.items():
        vals = np.asarray(vals)
        span = vals.max(axis=0) - vals.min(axis=0) if len(vals) > 1 else 0.0
        if np.max(span) > 2.0 * float(np.max(lattice.spacing)):
            single_valued = False
        table[key] = vals.mean(axis=0)
    lip = 0.0
    keys = sorted(table.keys())
    base_spacing = np.asarray([lattice.spacing[a] for a in base_axes])
    for a in keys:
        for b in keys:
            if a == b:
                continue
            d_base = np.linalg.norm((np.asarray(a) - np.asarray(b))
                                    * base_spacing)
            if d_base <= 1.5 * float(np.max(base_spacing)):
                d_graph = np.linalg.norm(table[a] - table[b])
                lip = max(lip, d_graph / d_base)
    return {"graph_axes": graph_axes, "base_axes": base_axes,
            "dimension": len(base_axes), "smallest_sv": best_sv,
            "single_valued": single_valued, "measured_lip": lip,
            "n_base_points": len(table)}


def _fd_gradient(f, x, h):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (float(f((x + e)[None, :])[0]) - float(f((x - e)[None, :])[0])) / (2 * h)
    return g


@dataclass(frozen=True)
class IndependenceReport:
    independent: bool
    witness: dict

    def __bool__(self):
        return self.independent


def affine_independence(hull_point_sets, k=None):
    """Decide affine independence of k convex hulls.

    A collection of k sets is affinely independent when no (k-2)-dimensional
    affine flat meets all of them.  Implemented exactly for:

    * k = 2: the hulls are disjoint (strict separation margin > 0);
    * k = 3: a line meets three convex sets iff one of them intersects the
      convex join of the other two, so three disjointness tests decide;
    * k = n + 1: the flats are hyperplanes, decided by a direction sweep of
      ``max_i min_{K_i}<a, x> <= min_i max_{K_i}<a, x>`` (2D).

    The witness carries either an affinely independent vertex selection or a
    description of a flat meeting all hulls.
    """
    sets = [np.atleast_2d(np.asarray(s, dtype=float)) for s in hull_point_sets]
    if k is None:
        k = len(sets)
    if k != len(sets):
        raise ValueError("k must equal the number of sets")
    n = sets[0].shape[1]
    if k > n + 1:
        return IndependenceReport(False, {
            "reason": f"{k} sets can never be affinely independent in R^{n}"})
    if k == 1:
        return IndependenceReport(True, {"selection": [sets[0][0].tolist()]})
    if k == 2:
        return _independence_pair(sets)
    if k == 3:
        return _independence_triple(sets)
    if k == n + 1 and n == 2:
        return _independence_triple(sets)
    if k == n + 1:
        return _independence_hyperplane_sweep(sets)
    raise NotImplementedError(
        f"affine independence for k={k} sets in R^{n} is not implemented")


def _selection_witness(sets):
    selection = [extreme_points(s)[0] for s in sets]
    return {"selection": [p.tolist() for p in selection]}


def _independence_pair(sets):
    try:
        frame = find_separating_frame(sets[0], sets[1])
    except NoSeparationError as exc:
        (p, q), dist = exc.witness
        return IndependenceReport(False, {
            "flat": {"kind": "point", "point": (0.5 * (p + q)).tolist()},
            "hull_distance": dist})
    return IndependenceReport(True, {
        "separation_margin": 2.0 * frame.spacing,
        **_selection_witness(sets)})


def _independence_triple(sets):
    # A line meets convex A, B, C iff the middle one meets the convex join
    # of the other two; the join of point clouds is the hull of their union.
    for mid in range(3):
        others = [s for i, s in enumerate(sets) if i != mid]
        join = np.concatenate(others, axis=0)
        try:
            find_separating_frame(sets[mid], join)
        except NoSeparationError:
            return IndependenceReport(False, {
                "flat": {"kind": "line", "through_set": mid},
                "reason": f"set {mid} meets the convex join of the others"})
    return IndependenceReport(True, _selection_witness(sets))


def _independence_hyperplane_sweep(sets, coarse=720):
    n = sets[0].shape[1]
    if n != 3:
        raise NotImplementedError("hyperplane sweep implemented for R^3")
    best = (np.inf, None)
    phis = np.linspace(0, np.pi, coarse, endpoint=False)
    thetas = np.linspace(0, np.pi, coarse // 2, endpoint=False)
    for phi in phis:
        for th in thetas:
            a = np.array([np.sin(th) * np.cos(phi), np.sin(th) * np.sin(phi),
                          np.cos(th)])
            lo = max(float(np.min(s @ a)) for s in sets)
            hi = min(float(np.max(s @ a)) for s in sets)
            gap = lo - hi
            if gap < best[0]:
                best = (gap, a)
    gap, a = best
    if gap <= 0:
        lo = max(float(np.min(s @ a)) for s in sets)
        hi = min(float(np.max(s @ a)) for s in sets)
        return IndependenceReport(False, {
            "flat": {"kind": "hyperplane", "normal": a.tolist(),
                     "offset": 0.5 * (lo + hi)}})
    return IndependenceReport(True, {"min_direction_gap": gap,
                                     **_selection_witness(sets)})


@dataclass(frozen=True)
class ClusterVerdict:
    ok: bool
    n_clusters: int
    max_diameter_steps: int
    counterexample: list


def _clusters(mask_grid):
    structure = np.ones((3,) * mask_grid.ndim, dtype=int)
    labels, count = ndimage.label(mask_grid, structure=structure)
    return labels, count


def unique_max_multiplicity(field, piece_clouds=None):
    """Verify the {multiplicity = n+1} nodes form at most one tight cluster.

    When ``piece_clouds`` is given they are first checked to be affinely
    independent (path-connectedness of pieces is the caller's concern).
    Returns a :class:`ClusterVerdict`; on failure the counterexample lists
    one node index per offending cluster.
    """
    n = field.lattice.ndim
    want = n + 1
    if piece_clouds is not None:
        report = affine_independence(piece_clouds)
        if not report:
            raise PreconditionError("pieces are not affinely independent",
                                    details=report.witness)
    mask = (field.multiplicity == want)
    labels, count = _clusters(mask)
    if count == 0:
        return ClusterVerdict(True, 0, 0, [])
    diam = 0
    for c in range(1, count + 1):
        idx = np.argwhere(labels == c)
        spread = idx.max(axis=0) - idx.min(axis=0)
        diam = max(diam, int(spread.max()))
    ok = count <= 1 and diam <= 2
    counterexample = []
    if not ok:
        for c in range(1, count + 1):
            idx = np.argwhere(labels == c)
            counterexample.append(idx[0].tolist())
    return ClusterVerdict(ok, count, diam, counterexample)


@dataclass(frozen=True)
class RootResult:
    x: np.ndarray
    residual: float
    converged: bool
    used_fallback: bool


def _root_residual(h_fns, x):
    worst = 0.0
    for i, h in enumerate(h_fns):
        xh = np.delete(x, i)
        worst = max(worst, abs(float(x[i]) - float(h(xh))))
    return worst


def find_coincident_root(h_fns, n, tol=1e-9, max_iter=400, grid=33):
    """Common coincidence point of k tear-height maps on [-1, 1]^n.

    Solves ``x_i = h_i(x with coordinate i removed)`` for i < k via damped
    fixed-point iteration of ``F(x) = (h_1, ..., h_k, x_{k+1}, ..., x_n)``,
    with an exhaustive-grid fallback; each ``h_i`` must map into [-1, 1]
    (verified by sampling).
    """
    k = len(h_fns)
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n height functions")
    sample = np.linspace(-1.0, 1.0, 9)
    grids = np.meshgrid(*([sample] * (n - 1)), indexing="ij") if n > 1 else []
    probe = (np.stack([g.ravel() for g in grids], axis=-1)
             if n > 1 else np.zeros((1, 0)))
    for i, h in enumerate(h_fns):
        vals = np.asarray([float(h(p)) for p in probe])
        if np.any(np.abs(vals) > 1.0 + 1e-9):
            raise PreconditionError(
                f"height function {i} leaves [-1, 1] "
                f"(worst {float(np.abs(vals).max()):.6g})")

    x = np.zeros(n)
    omega = 1.0
    last = np.inf
    for _ in range(max_iter):
        res = _root_residual(h_fns, x)
        if res <= tol:
            return RootResult(x, res, True, False)
        new = x.copy()
        for i, h in enumerate(h_fns):
            new[i] = float(h(np.delete(x, i)))
        x_next = (1.0 - omega) * x + omega * new
        x_next = np.clip(x_next, -1.0, 1.0)
        res_next = _root_residual(h_fns, x_next)
        if res_next > last:
            omega = max(0.05, 0.5 * omega)
        last = res_next
        x = x_next
    if _root_residual(h_fns, x) <= tol:
        return RootResult(x, _root_residual(h_fns, x), True, False)

    # Exhaustive coarse-to-fine grid over the first k coordinates.
    tail = x[k:]
    lo = -np.ones(k)
    hi = np.ones(k)
    best_x, best_res = x, _root_residual(h_fns, x)
    for _ in range(8):
        axes = [np.linspace(lo[i], hi[i], grid) for i in range(k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        for p in pts:
            cand = np.concatenate([p, tail])
            r = _root_residual(h_fns, cand)
            if r < best_res:
                best_res, best_x = r, cand
        if best_res <= tol:
            break
        width = (hi - lo) / (grid - 1)
        center = best_x[:k]
        lo = np.maximum(center - 2 * width, -1.0)
        hi = np.minimum(center + 2 * width, 1.0)
    return RootResult(best_x, best_res, best_res <= tol, True)


@dataclass(frozen=True)
class ConnectivityVerdict:
    ok: bool
    n_components: int
    component_sizes: list


def connectivity_check(field, piece):
    """Flood-fill check that {u_piece = u} is lattice-connected."""
    grid = field.active_grid(piece)
    labels, count = _clusters(grid)
    sizes = sorted((int((labels == c).sum()) for c in range(1, count + 1)),
                   reverse=True)
    return ConnectivityVerdict(count <= 1, count, sizes)


def dilated_multiplicity(u, piece_polygons, nodes, delta, tol, chunk=1 << 13):
    """Multiplicity relative to delta-dilations of reference piece sets (2D).

    For the max-affine potential ``u``, the subdifferential at a node is the
    hull of its active atoms; piece i is counted when that hull comes within
    ``delta`` of the i-th reference polygon.  The hull test matters: a
    coincidence segment between two far pieces can pass near a third piece
    without any of its atoms being active.

    Returns (multiplicities aligned with ``nodes``, diagnostics).
    """
    if u.ambient_dim != 2:
        raise NotImplementedError("dilated multiplicity is 2D only")
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    atoms = u.slopes
    polys = [np.atleast_2d(np.asarray(p, dtype=float)) for p in piece_polygons]
    atom_piece_dist = np.stack(
        [points_to_polygon_distance(atoms, p) for p in polys], axis=1)
    atom_hits = atom_piece_dist <= delta

    n_nodes = len(nodes)
    mult = np.zeros(n_nodes, dtype=int)
    multi_rows = []
    multi_sets = []
    for s in range(0, n_nodes, chunk):
        block = nodes[s:s + chunk]
        vals = block @ atoms.T + u.intercepts
        top = vals.max(axis=1, keepdims=True)
        act = vals >= top - tol
        counts = act.sum(axis=1)
        single = np.flatnonzero(counts == 1)
        if single.size:
            arg = np.argmax(vals[single], axis=1)
            mult[s + single] = atom_hits[arg].sum(axis=1)
        for r in np.flatnonzero(counts > 1):
            multi_rows.append(s + r)
            multi_sets.append(tuple(np.flatnonzero(act[r])))

    cache = {}
    for row, key in zip(multi_rows, multi_sets):
        if key not in cache:
            pts = atoms[list(key)]
            hull = convex_hull_2d(pts)
            count = 0
            for pi, poly in enumerate(polys):
                if atom_hits[list(key), pi].any():
                    count += 1
                elif convex_polygon_distance(hull, poly) <= delta:
                    count += 1
            cache[key] = count
        mult[row] = cache[key]
    diagnostics = {"n_multi_nodes": len(multi_rows),
                   "n_unique_active_sets": len(cache)}
    return mult, diagnostics
