"""Oriented simplicial meshes of the truncated level F_t ∩ B_R.

Surfaces (n=3) come from marching cubes on a fixed-registration grid; curves
(n=2) are traced by predictor-corrector continuation started from the grid
edge crossings, so the step can shrink to the local radius of curvature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .expr import DomainError, ScalarField
from .geometry import CurvatureField, curvature_field, grad_floor

log = logging.getLogger(__name__)

NEWTON_MAX_ITER = 20
TRACE_THETA = 0.05      # max normal turn per traced step (radians)
TRACE_DKAPPA = 0.05    # max |delta kappa| * step, in units of TRACE_THETA
SLAB_POINTS = 2_000_000


def level_tol(t: float) -> float:
    return 1e-9 * (1.0 + abs(t))


@dataclass
class LevelSetMesh:
    level: float
    radius: float
    cell_size: float
    arity: int
    vertices: np.ndarray
    simplices: np.ndarray
    component_id: np.ndarray
    touches_boundary: np.ndarray
    per_vertex: CurvatureField
    boundary_vertex: np.ndarray
    misoriented: np.ndarray
    n_diverged: int = 0
    n_stalled: int = 0
    info: dict = dc_field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return len(self.touches_boundary)

    @property
    def empty(self) -> bool:
        return len(self.simplices) == 0

    def simplex_volumes(self) -> np.ndarray:
        P = self.vertices[self.simplices]
        if self.arity == 2:
            return np.linalg.norm(P[:, 1] - P[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)

    def simplex_normals(self) -> np.ndarray:
        """Unit normals n with det[v1-v0, ..., n] > 0."""
        P = self.vertices[self.simplices]
        if self.arity == 2:
            d = P[:, 1] - P[:, 0]
            nrm = np.stack([-d[:, 1], d[:, 0]], axis=1)
        else:
            nrm = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
        return nrm / np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)

    def vertex_weights(self) -> np.ndarray:
        """Share of adjacent simplex volume carried by each vertex (vol / n per simplex)."""
        w = np.zeros(len(self.vertices))
        vol = self.simplex_volumes() / self.arity
        for k in range(self.arity):
            np.add.at(w, self.simplices[:, k], vol)
        return w

    def measure(self) -> float:
        return float(self.simplex_volumes().sum())


@dataclass(frozen=True)
class ComponentSummary:
    count: int
    measure: np.ndarray
    touches_boundary: np.ndarray


def components(mesh: LevelSetMesh) -> ComponentSummary:
    """Connected components of the mesh with their (n-1)-volumes."""
    if mesh.empty:
        return ComponentSummary(0, np.zeros(0), np.zeros(0, dtype=bool))
    vol = mesh.simplex_volumes()
    comp = mesh.component_id[mesh.simplices[:, 0]]
    measure = np.bincount(comp, weights=vol, minlength=mesh.n_components)
    return ComponentSummary(mesh.n_components, measure, mesh.touches_boundary.copy())


# --------------------------------------------------------------------------
# helpers

def grid_axis(R: float, h: float) -> np.ndarray:
    """Grid coordinates (k + 1/2) h covering [-R - h, R + h]."""
    k = int(np.ceil((R + h) / h))
    return (np.arange(-k, k) + 0.5) * h


def _grid_values(field: ScalarField, axis: np.ndarray) -> np.ndarray:
    n = field.arity
    m = len(axis)
    out = np.empty((m,) * n)
    per_slab = m ** (n - 1)
    step = max(1, SLAB_POINTS // per_slab)
    rest = np.meshgrid(*([axis] * (n - 1)), indexing="ij")
    rest = np.stack([r.ravel() for r in rest], axis=1)
    for i0 in range(0, m, step):
        xs = axis[i0:i0 + step]
        pts = np.empty((len(xs), per_slab, n))
        pts[:, :, 0] = xs[:, None]
        pts[:, :, 1:] = rest[None]
        out[i0:i0 + step] = field.value(pts).reshape((len(xs),) + (m,) * (n - 1))
    if not np.isfinite(out).any():
        raise DomainError("f is undefined at every grid point", field.tree)
    return out


def newton_project(field: ScalarField, X, t: float, max_iter: int = NEWTON_MAX_ITER):
    """Project points onto f = t by Newton steps along grad f / |grad f|^2.

    Returns (points, converged mask).
    """
    X = np.array(X, dtype=float)
    tol = level_tol(t)
    active = np.ones(len(X), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        v, g = field.gradient(X[idx])
        r = v - t
        g2 = np.einsum("ij,ij->i", g, g)
        done = np.abs(r) < 1e-3 * tol
        ok = np.isfinite(r) & (g2 > 0)
        move = ~done & ok
        X[idx[move]] -= (r[move] / g2[move])[:, None] * g[move]
        active[idx[done | ~ok]] = False
    v = field.value(X)
    converged = np.isfinite(v) & (np.abs(v - t) < tol) & np.all(np.isfinite(X), axis=1)
    return X, converged


def _label(n_vertices: int, simplices: np.ndarray, boundary_vertex: np.ndarray):
    if n_vertices == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=bool)
    k = simplices.shape[1]
    rows = np.repeat(simplices[:, 0], k - 1)
    cols = simplices[:, 1:].ravel()
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices))
    ncomp, labels = connected_components(graph, directed=False)
    touches = np.zeros(ncomp, dtype=bool)
    touches[labels[boundary_vertex]] = True
    return labels, touches


def _compact(vertices, simplices, *vertex_arrays):
    used = np.zeros(len(vertices), dtype=bool)
    used[simplices.ravel()] = True
    remap = np.cumsum(used) - 1
    return (vertices[used], remap[simplices]) + tuple(a[used] for a in vertex_arrays)


def _assemble(field, t, R, h, vertices, simplices, boundary_vertex, n_diverged, n_stalled, info):
    n = field.arity
    if len(simplices) == 0:
        vertices = np.zeros((0, n))
        simplices = np.zeros((0, n), dtype=int)
        boundary_vertex = np.zeros(0, dtype=bool)
    else:
        vertices, simplices, boundary_vertex = _compact(vertices, simplices, boundary_vertex)
    per_vertex = curvature_field(field, vertices)
    mesh = LevelSetMesh(t, R, h, n, vertices, simplices, np.zeros(len(vertices), dtype=int),
                        np.zeros(0, dtype=bool), per_vertex, boundary_vertex,
                        np.zeros(len(simplices), dtype=bool), n_diverged, n_stalled, info)
    if len(simplices):
        # orient every simplex along grad f at its barycenter
        _, g = field.gradient(vertices[simplices].mean(axis=1))
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        cos = np.einsum("ij,ij->i", mesh.simplex_normals(), g)
        flip = cos < 0
        simplices[flip] = simplices[flip][:, ::-1] if n == 2 else simplices[flip][:, [0, 2, 1]]
        mesh.misoriented = np.abs(cos) < 1e-3
    mesh.component_id, mesh.touches_boundary = _label(len(vertices), simplices, boundary_vertex)
    return mesh


# --------------------------------------------------------------------------
# n = 3

def _extract_surface(field: ScalarField, t: float, R: float, h: float) -> LevelSetMesh:
    from skimage.measure import marching_cubes

    axis = grid_axis(R, h)
    vol = _grid_values(field, axis) - t
    vol = np.where(np.isfinite(vol), vol, np.nan)
    if np.isnan(vol).any():
        raise ArithmeticError("field is not finite on the sampling grid")
    if vol.min() > 0 or vol.max() < 0:
        return _assemble(field, t, R, h, np.zeros((0, 3)), np.zeros((0, 3), dtype=int),
                         np.zeros(0, dtype=bool), 0, 0, {})
    verts, faces, _, _ = marching_cubes(vol, 0.0, spacing=(h, h, h), method="lewiner",
                                        allow_degenerate=False)
    verts = verts + axis[0]
    # marching cubes emits one vertex per face-corner; merge shared edge points
    key = np.round(verts / (h * 1e-6)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    verts = verts[first]
    faces = inverse.reshape(-1)[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]

    start = verts.copy()
    verts, ok = newton_project(field, verts, t)
    ok &= np.linalg.norm(verts - start, axis=1) < 2 * h
    n_diverged = int(np.count_nonzero(~ok))
    if n_diverged:
        log.warning("%d vertices failed to project onto level %g", n_diverged, t)
    inside = ok & (np.linalg.norm(verts, axis=1) < R)
    keep = inside[faces].all(axis=1)
    boundary_vertex = np.zeros(len(verts), dtype=bool)
    boundary_vertex[faces[~keep].ravel()] = True
    faces = faces[keep]
    boundary_vertex &= inside
    return _assemble(field, t, R, h, verts, faces, boundary_vertex, n_diverged, 0, {})


# --------------------------------------------------------------------------
# n = 2

def _crossings(vals: np.ndarray, axis: np.ndarray, h: float, R: float) -> np.ndarray:
    """Linear-interpolated sign changes of grid values along both grid directions."""
    pts = []
    for ax in (0, 1):
        a = np.take(vals, np.arange(len(axis) - 1), axis=ax)
        b = np.take(vals, np.arange(1, len(axis)), axis=ax)
        with np.errstate(all="ignore"):
            hit = (np.sign(a) != np.sign(b)) & np.isfinite(a) & np.isfinite(b)
            i, j = np.nonzero(hit)
            frac = a[i, j] / (a[i, j] - b[i, j])
        p = np.stack([axis[i], axis[j]], axis=1)
        p[:, ax] += frac * h
        pts.append(p)
    pts = np.concatenate(pts)
    return pts[np.linalg.norm(pts, axis=1) < R]


def _edge_crossings(field: ScalarField, t: float, R: float, h: float) -> np.ndarray:
    axis = grid_axis(R, h)
    return _crossings(_grid_values(field, axis) - t, axis, h, R)


def _grid_partial(field: ScalarField, axis: np.ndarray, j: int) -> np.ndarray:
    m = len(axis)
    out = np.empty((m, m))
    step = max(1, SLAB_POINTS // m)
    for i0 in range(0, m, step):
        xs = axis[i0:i0 + step]
        pts = np.stack(np.meshgrid(xs, axis, indexing="ij"), axis=-1)
        out[i0:i0 + step] = field.gradient(pts.reshape(-1, 2))[1][:, j].reshape(len(xs), m)
    return out


class _PolarTracer:
    """Continuation along {df/dx_j = 0}: the points where the level's normal is
    parallel to the j-th axis, i.e. the folds of the levels in that direction."""

    def __init__(self, field: ScalarField, j: int, R: float, h: float, theta: float = 0.1,
                 max_steps: int = 200_000):
        self.field, self.j, self.R, self.h = field, j, R, h
        self.cos_accept = np.cos(theta)
        self.max_steps = max_steps

    def local(self, x):
        jet = self.field.jet(x)
        return float(jet.gradient[self.j]), jet.hessian[self.j]

    def correct(self, p):
        for _ in range(12):
            G, dG = self.local(p)
            d2 = float(dG @ dG)
            if not (np.isfinite(G) and d2 > 0):
                return p, False
            dp = G / d2 * dG
            p = p - dp
            if np.hypot(dp[0], dp[1]) < 1e-13 * (1.0 + np.hypot(p[0], p[1])):
                break
        G, dG = self.local(p)
        dn = float(np.hypot(dG[0], dG[1]))
        return p, bool(dn > 0 and abs(G) / dn < 1e-9 * (1.0 + np.hypot(p[0], p[1])))

    def march(self, x0, sign, n0):
        pts = [x0]
        x, n = x0, n0
        s = 0.25 * self.h
        for _ in range(self.max_steps):
            d = sign * np.array([n[1], -n[0]])
            s = min(1.5 * s, self.h)
            floor = 1e-12 * (1.0 + np.hypot(x[0], x[1]))
            while True:
                if s < floor:
                    return pts, "stall"
                p = x + s * d
                y, ok = self.correct(p)
                if ok:
                    dy = y - x
                    chord = np.hypot(dy[0], dy[1])
                    _, dG = self.local(y)
                    n_y = dG / np.hypot(dG[0], dG[1])
                    if (np.hypot(*(y - p)) <= 0.5 * s and 0.5 * s <= chord <= 1.5 * s
                            and dy @ d > 0 and n_y @ n >= self.cos_accept):
                        break
                s *= 0.5
            if np.hypot(y[0], y[1]) >= self.R:
                return pts, "boundary"
            if len(pts) > 2:
                w = x0 - x
                if 0 < w @ d <= chord and abs(w[0] * d[1] - w[1] * d[0]) <= 0.05 * chord and n0 @ n_y > 0:
                    return pts, "closed"
            pts.append(y)
            x, n = y, n_y
        return pts, "limit"

    def trace(self, seed):
        _, dG = self.local(seed)
        n0 = dG / np.hypot(dG[0], dG[1])
        fwd, end = self.march(seed, 1.0, n0)
        if end == "closed":
            return np.array(fwd)
        bwd, _ = self.march(seed, -1.0, n0)
        return np.array(bwd[::-1] + fwd[1:])


_POLAR_CACHE: dict = {}


def _polar_curves(field: ScalarField, R: float, h: float) -> list[np.ndarray]:
    """Polylines of {df/dx = 0} and {df/dy = 0} in B_R, cached per (f, R, h).

    Every fold of a level in a coordinate direction lies on one of them, so
    their crossings with f = t seed components thinner than the grid.
    """
    key = (field.source_text, field.arity, float(R), float(h))
    if key in _POLAR_CACHE:
        return _POLAR_CACHE[key]
    axis = grid_axis(R, h)
    curves = []
    for j in (0, 1):
        seeds = _crossings(_grid_partial(field, axis, j), axis, h, R)
        tracer = _PolarTracer(field, j, R, h)
        proj = [tracer.correct(p) for p in seeds]
        seeds = np.array([p for p, ok in proj if ok and np.hypot(*p) < R]).reshape(-1, 2)
        if not len(seeds):
            continue
        seeds = seeds[np.lexsort((seeds[:, 1], seeds[:, 0]))]
        dG = field.jet(seeds).hessian[:, j]
        good = np.linalg.norm(dG, axis=1) > 0
        seeds, dG = seeds[good], dG[good]
        key_n = h * dG / np.linalg.norm(dG, axis=1, keepdims=True)
        covered = np.zeros(len(seeds), dtype=bool)
        for i in range(len(seeds)):
            if covered[i]:
                continue
            covered[i] = True
            pts = tracer.trace(seeds[i])
            if len(pts) < 2:
                continue
            curves.append(pts)
            dGp = field.jet(pts).hessian[:, j]
            np_ = h * dGp / np.linalg.norm(dGp, axis=1, keepdims=True)
            dist, _ = cKDTree(np.hstack([pts, np_])).query(np.hstack([seeds, key_n]),
                                                            distance_upper_bound=0.75 * h)
            covered |= np.isfinite(dist)
    if len(_POLAR_CACHE) >= 8:
        _POLAR_CACHE.pop(next(iter(_POLAR_CACHE)))
    _POLAR_CACHE[key] = curves
    return curves


def _fold_seeds(field: ScalarField, t: float, R: float, h: float) -> np.ndarray:
    """Points of the polar curves where f crosses t."""
    out = []
    for P in _polar_curves(field, R, h):
        F = field.value(P) - t
        i = np.flatnonzero(np.sign(F[:-1]) * np.sign(F[1:]) < 0)
        if len(i):
            w = (F[i] / (F[i] - F[i + 1]))[:, None]
            out.append(P[i] + w * (P[i + 1] - P[i]))
    return np.concatenate(out) if out else np.zeros((0, 2))


_CHORD_SAMPLES = np.arange(1, 16) / 16


class _CurveTracer:
    """Predictor-corrector continuation along one component of f = t."""

    def __init__(self, field: ScalarField, t: float, R: float, h: float, theta: float = TRACE_THETA,
                 max_steps: int = 2_000_000):
        self.field, self.t, self.R, self.h = field, t, R, h
        self.theta = theta
        self.cos_accept = np.cos(1.5 * theta)
        self.dk_max = TRACE_DKAPPA * theta
        self.max_steps = max_steps
        self.tol = level_tol(t)
        self.overshoot = None

    def local(self, x):
        jet = self.field.jet(x)
        g = jet.gradient
        gn = float(np.hypot(g[0], g[1]))
        nu = g / gn
        e1 = np.array([nu[1], -nu[0]])  # det[e1, nu] = 1
        kappa = float(e1 @ jet.hessian @ e1) / gn
        return nu, e1, kappa, gn

    def correct(self, p):
        for _ in range(12):
            v, g = self.field.gradient(p)
            g2 = float(g @ g)
            if not (np.isfinite(v) and g2 > 0):
                return p, False
            dp = (float(v) - self.t) / g2 * g
            p = p - dp
            if np.hypot(dp[0], dp[1]) < 1e-14 * (1.0 + np.hypot(p[0], p[1])):
                break
        v = float(self.field.value(p))
        return p, abs(v - self.t) < self.tol

    def one_sided(self, x, y) -> bool:
        """f - t keeps one sign along the open chord: a chord that jumps across
        a thin fold to a parallel branch must cross the level in between."""
        v = self.field.value(x + _CHORD_SAMPLES[:, None] * (y - x)) - self.t
        return not (v.max() > self.tol and v.min() < -self.tol)

    def march(self, x0, sign, nu0):
        """Walk from x0 in direction sign*e1. Returns (points, end) with end in
        {'boundary', 'closed', 'stall', 'limit', 'critical'}."""
        pts = [x0]
        x = x0
        nu, e1, kappa, gn = self.local(x)
        s = min(self.h, self.theta / max(abs(kappa), 1e-300)) * 0.5
        for _ in range(self.max_steps):
            if gn < float(grad_floor(x)):
                return pts, "critical"
            s = min(1.5 * s, self.h, self.theta / max(abs(kappa), 1e-300))
            floor = 1e-13 * (1.0 + np.hypot(x[0], x[1]))
            d = sign * e1
            while True:
                if s < floor:
                    return pts, "stall"
                p = x + s * d
                y, ok = self.correct(p)
                if ok:
                    dy = y - x
                    chord = np.hypot(dy[0], dy[1])
                    if (np.hypot(*(y - p)) <= 0.5 * s and 0.5 * s <= chord <= 1.5 * s
                            and dy @ d > 0 and self.one_sided(x, y)):
                        nu_y, e1_y, kappa_y, gn_y = self.local(y)
                        # also bound the curvature change so the vertex-averaged
                        # quadrature stays accurate on the flanks of sharp folds
                        # the corrector offset must match the sagitta of the local
                        # curvature, else the step landed on a nearby parallel branch
                        sag = (abs(kappa) + abs(kappa_y)) * s * s + 10 * self.tol / min(gn, gn_y) + floor
                        if (nu_y @ nu >= self.cos_accept and abs(kappa_y - kappa) * s <= self.dk_max
                                and np.hypot(*(y - p)) <= sag):
                            break
                s *= 0.5
            if np.hypot(y[0], y[1]) >= self.R:
                self.overshoot = y
                return pts, "boundary"
            if len(pts) > 2:
                w = x0 - x
                along = w @ d
                off = abs(w[0] * d[1] - w[1] * d[0])
                if 0 < along <= chord and off <= 0.05 * chord and nu0 @ nu >= self.cos_accept:
                    return pts, "closed"
            pts.append(y)
            x, nu, e1, kappa, gn = y, nu_y, e1_y, kappa_y, gn_y
        return pts, "limit"

    def trace(self, seed):
        """Returns (points, closed, end reasons, points extended by the
        out-of-ball overshoot at boundary ends)."""
        nu0, _, _, _ = self.local(seed)
        fwd, end_f = self.march(seed, 1.0, nu0)
        if end_f == "closed":
            pts = np.array(fwd)
            return pts, True, [end_f], pts
        tail_f = [self.overshoot] if end_f == "boundary" else []
        bwd, end_b = self.march(seed, -1.0, nu0)
        tail_b = [self.overshoot] if end_b == "boundary" else []
        pts = np.array(bwd[::-1] + fwd[1:])
        return pts, False, [end_b, end_f], np.array(tail_b + bwd[::-1] + fwd[1:] + tail_f)


def _on_trace(field: ScalarField, t: float, pts: np.ndarray, closed: bool, Q: np.ndarray,
              h: float, k: int = 4) -> np.ndarray:
    """Which points of the level ``Q`` lie on the traced arc ``pts``.

    For a nearby chord, the arc meets the perpendicular through the foot of q
    at a single point, found by 1-D Newton from the chord; q is on this arc iff
    it is that point. Parallel branches closer than the grid are kept apart.
    """
    if len(Q) == 0 or len(pts) < 2:
        return np.zeros(len(Q), dtype=bool)
    A = pts
    B = np.roll(pts, -1, axis=0) if closed else pts[1:]
    A = A[: len(B)]
    D = B - A
    L = np.linalg.norm(D, axis=1)
    k = min(k, len(A))
    _, seg = cKDTree(0.5 * (A + B)).query(Q, k=k)
    seg = seg.reshape(len(Q), k)
    a, d, l = A[seg], D[seg], L[seg]
    lam = np.einsum("skd,skd->sk", Q[:, None, :] - a, d) / l ** 2
    foot = a + lam[..., None] * d
    nrm = np.stack([-d[..., 1], d[..., 0]], axis=-1) / l[..., None]
    mu = np.zeros(lam.shape)
    flat = lambda X: X.reshape(-1, 2)
    for _ in range(30):
        x = foot + mu[..., None] * nrm
        v, g = field.gradient(flat(x))
        dv = np.einsum("sd,sd->s", g, flat(nrm))
        with np.errstate(all="ignore"):
            step = ((v - t) / dv).reshape(mu.shape)
        step = np.where(np.isfinite(step), np.clip(step, -h, h), 0.0)
        mu -= step
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(mu))):
            break
    arc = foot + mu[..., None] * nrm
    _, gq = field.gradient(Q)
    gq = np.linalg.norm(gq, axis=1)
    with np.errstate(all="ignore"):
        tol = 1e-6 * h + level_tol(t) / gq
    hit = (np.linalg.norm(arc - Q[:, None, :], axis=2) <= tol[:, None]) & (lam >= -1e-6) & (lam <= 1 + 1e-6)
    return hit.any(axis=1)


def _extract_curve(field: ScalarField, t: float, R: float, h: float) -> LevelSetMesh:
    seeds = np.vstack([_edge_crossings(field, t, R, h), _fold_seeds(field, t, R, h)])
    seeds, ok = newton_project(field, seeds, t)
    _, g = field.gradient(seeds)
    ok &= np.linalg.norm(g, axis=1) >= grad_floor(seeds)
    ok &= np.linalg.norm(seeds, axis=1) < R
    seeds = seeds[ok]
    # canonical order: tracing starts do not depend on the grid extent
    order = np.lexsort((seeds[:, 1], seeds[:, 0]))
    seeds = seeds[order]
    tracer = _CurveTracer(field, t, R, h)
    covered = np.zeros(len(seeds), dtype=bool)
    verts, simps, bnd = [], [], []
    offset = 0
    n_stalled = 0
    ends, traced = [], []
    for i in range(len(seeds)):
        if covered[i]:
            continue
        pts, closed, end, ext = tracer.trace(seeds[i])
        covered[i] = True
        if len(pts) < 2:
            continue
        # a seed that failed its coverage test may retrace a known branch
        if any(np.mean(_on_trace(field, t, e_pts, e_closed, pts, h)) > 0.5 for e_pts, e_closed in traced):
            continue
        traced.append((ext, closed))
        ends.append(end)
        n_stalled += sum(e in ("stall", "limit") for e in end)
        m = len(pts)
        idx = np.arange(m) + offset
        seg = np.stack([idx[:-1], idx[1:]], axis=1)
        if closed:
            seg = np.vstack([seg, [idx[-1], idx[0]]])
        b = np.zeros(m, dtype=bool)
        if not closed:
            b[0] = end[0] == "boundary"
            b[-1] = end[-1] == "boundary"
        verts.append(pts)
        simps.append(seg)
        bnd.append(b)
        offset += m
        rest = np.flatnonzero(~covered)
        covered[rest] = _on_trace(field, t, ext, closed, seeds[rest], h)
    if verts:
        V = np.concatenate(verts)
        S = np.concatenate(simps)
        B = np.concatenate(bnd)
    else:
        V, S, B = np.zeros((0, 2)), np.zeros((0, 2), dtype=int), np.zeros(0, dtype=bool)
    return _assemble(field, t, R, h, V, S, B, 0, n_stalled, {"n_seeds": len(seeds), "ends": ends})


# --------------------------------------------------------------------------
# public API

def extract_level(field: ScalarField, t: float, R: float, h: float) -> LevelSetMesh:
    """Oriented mesh of F_t ∩ B_R on a grid of spacing ``h``.

    For n=2 ``h`` is the seed spacing and the largest tracing step.
    """
    if not (R > 0 and h > 0):
        raise ValueError("R and h must be positive")
    if h >= R / 8:
        raise ValueError(f"cell size {h} must be below R/8 = {R / 8}")
    t = float(t)
    if field.arity == 3:
        mesh = _extract_surface(field, t, R, h)
    else:
        mesh = _extract_curve(field, t, R, h)
    mesh.info["singular_vertices"] = int(np.count_nonzero(mesh.per_vertex.critical))
    return mesh


def find_critical_points(field: ScalarField, R: float, spacing: float | None = None,
                         max_iter: int = 50):
    """Critical points of f inside B_R: local minima of |grad f|^2 on a coarse
    grid refined by Newton on grad f = 0. Returns (points, values)."""
    n = field.arity
    spacing = spacing or R / 48
    axis = grid_axis(R, spacing)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1)
    _, g = field.gradient(mesh.reshape(-1, n))
    g2 = np.einsum("ij,ij->i", g, g).reshape(mesh.shape[:-1])
    g2 = np.where(np.isfinite(g2), g2, np.inf)
    minima = (g2 == ndimage.minimum_filter(g2, size=3, mode="nearest")) & np.isfinite(g2)
    cand = mesh[minima]
    found = []
    for x in cand:
        for _ in range(max_iter):
            jet = field.jet(x)
            if not np.all(np.isfinite(jet.gradient)):
                break
            dx = np.linalg.lstsq(jet.hessian, jet.gradient, rcond=None)[0]
            x = x - dx
            if np.linalg.norm(dx) < 1e-13 * (1 + np.linalg.norm(x)) or np.linalg.norm(x) > 2 * R:
                break
        _, gx = field.gradient(x)
        if np.linalg.norm(x) <= R and np.linalg.norm(gx) < float(grad_floor(x)):
            if not any(np.linalg.norm(x - y) < 1e-6 * (1 + np.linalg.norm(y)) for y in found):
                found.append(x)
    pts = np.array(found).reshape(-1, n)
    return pts, field.value(pts) if len(pts) else np.zeros(0)


def export_obj(mesh: LevelSetMesh, path) -> None:
    """Write vertices and oriented triangles (n=3) or line elements (n=2)."""
    with open(path, "w") as fh:
        fh.write(f"# level t={mesh.level!r} R={mesh.radius!r} h={mesh.cell_size!r}\n")
        for v in mesh.vertices:
            z = v[2] if mesh.arity == 3 else 0.0
            fh.write(f"v {v[0]!r} {v[1]!r} {z!r}\n")
        tag = "f" if mesh.arity == 3 else "l"
        for s in mesh.simplices + 1:
            fh.write(tag + " " + " ".join(str(int(i)) for i in s) + "\n")
