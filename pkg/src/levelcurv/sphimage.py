"""Gauss images on an equal-area partition of the unit sphere.

The raster counts, for each cell, how many mesh simplices have a normal
image covering the cell center (fiber count) and with which orientation
(degree). Strata areas, Hausdorff distances between covered sets, one-sided
limits in t and the escape diagnostic for directions are built on top.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .expr import ScalarField
from .geometry import curvature_field, grad_floor, tangent_basis
from .levelset import LevelSetMesh, extract_level
from .preimage import contains, locate, normal_simplex_sign

log = logging.getLogger(__name__)

DEFAULT_CELLS = {2: 720, 3: 10242}
MIN_CELLS = {2: 360, 3: 1000}
TINY_SPHERICAL_AREA = 1e-12


# --------------------------------------------------------------------------
# partitions

def _fixed_rotation() -> np.ndarray:
    a, b, c = 0.3719, 0.8862, 0.1427
    Rz = lambda t: np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]])
    Rx = lambda t: np.array([[1, 0, 0], [0, np.cos(t), -np.sin(t)], [0, np.sin(t), np.cos(t)]])
    return Rz(a) @ Rx(b) @ Rz(c)


class SpherePartition:
    """Equal-area partition of S^{n-1} into ``m`` cells.

    n=2: equal arcs. n=3: two polar caps plus latitude collars, each collar
    cut into equal longitude sectors (odd collars rotated by half a sector).
    Every cell has area exactly vol(S^{n-1}) / m. The whole partition is
    turned by a fixed generic rotation so that no cell center sits on a
    coordinate axis, where symmetric test fields have non-generic fibers.
    """

    def __init__(self, arity: int, m: int):
        if arity not in (2, 3):
            raise ValueError("arity must be 2 or 3")
        if m < 1 or (arity == 3 and m < 2):
            raise ValueError("too few cells")
        self.arity = arity
        self.m = int(m)
        self.total_area = 2 * np.pi if arity == 2 else 4 * np.pi
        self.cell_area = self.total_area / self.m
        if arity == 3:
            self._build_zones()
            self.rotation = _fixed_rotation()

    def _build_zones(self):
        m = self.m
        if m == 2:
            counts = [1, 1]
        else:
            A = self.cell_area
            cap = np.arccos(1 - A / (2 * np.pi))
            n_collars = max(1, int(round((np.pi - 2 * cap) / np.sqrt(A))))
            edges = cap + (np.pi - 2 * cap) * np.arange(n_collars + 1) / n_collars
            ideal = 2 * np.pi * (np.cos(edges[:-1]) - np.cos(edges[1:])) / A
            counts, carry = [1], 0.0
            for a in ideal:
                k = int(round(a + carry))
                carry += a - k
                counts.append(k)
            counts[-1] += (m - 2) - sum(counts[1:])
            counts.append(1)
        self.counts = np.array(counts)
        cum = np.concatenate([[0], np.cumsum(self.counts)])
        self.zone_start = cum[:-1]
        self.z_edges = 1 - 2 * cum / m          # decreasing from 1 to -1
        self.offset = np.where(np.arange(len(counts)) % 2 == 1, np.pi / self.counts, 0.0)

    @cached_property
    def centers(self) -> np.ndarray:
        if self.arity == 2:
            phi = (np.arange(self.m) + 0.5) * 2 * np.pi / self.m
            return np.stack([np.cos(phi), np.sin(phi)], axis=1)
        out = []
        for z0, z1, k, off in zip(self.z_edges[:-1], self.z_edges[1:], self.counts, self.offset):
            if k == 1 and (z0 == 1 or z1 == -1):
                out.append([[0.0, 0.0, 1.0 if z0 == 1 else -1.0]])
                continue
            z = 0.5 * (z0 + z1)
            phi = off + (np.arange(k) + 0.5) * 2 * np.pi / k
            r = np.sqrt(1 - z * z)
            out.append(np.stack([r * np.cos(phi), r * np.sin(phi), np.full(k, z)], axis=1))
        return np.concatenate(out) @ self.rotation.T

    @cached_property
    def diameter(self) -> float:
        """Upper bound on the chordal diameter of any cell."""
        if self.arity == 2:
            return 2 * np.sin(np.pi / self.m)
        worst = 0.0
        for z0, z1, k in zip(self.z_edges[:-1], self.z_edges[1:], self.counts):
            r0, r1 = np.sqrt(max(0, 1 - z0 * z0)), np.sqrt(max(0, 1 - z1 * z1))
            if k == 1:
                worst = max(worst, 2 * max(r0, r1))
                continue
            dphi = 2 * np.pi / k
            a = np.array([r0, 0, z0])
            b = np.array([r1 * np.cos(dphi), r1 * np.sin(dphi), z1])
            c = np.array([r0 * np.cos(dphi), r0 * np.sin(dphi), z0])
            d = np.array([r1, 0, z1])
            worst = max(worst, np.linalg.norm(a - b), np.linalg.norm(c - d),
                        np.linalg.norm(a - c), np.linalg.norm(d - b))
        return float(worst)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.centers)

    def locate(self, U) -> np.ndarray:
        """Cell index of each unit vector in ``U`` (shape (k, n))."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.arity == 2:
            phi = np.mod(np.arctan2(U[:, 1], U[:, 0]), 2 * np.pi)
            return np.minimum((phi / (2 * np.pi) * self.m).astype(int), self.m - 1)
        U = U @ self.rotation
        z = np.clip(U[:, 2] / np.linalg.norm(U, axis=1), -1, 1)
        zone = np.clip(np.searchsorted(-self.z_edges, -z, side="right") - 1, 0, len(self.counts) - 1)
        k = self.counts[zone]
        phi = np.mod(np.arctan2(U[:, 1], U[:, 0]) - self.offset[zone], 2 * np.pi)
        j = np.minimum((phi / (2 * np.pi) * k).astype(int), k - 1)
        return self.zone_start[zone] + j


# --------------------------------------------------------------------------
# raster

@dataclass
class SphericalRaster:
    level: float
    partition: SpherePartition
    fiber_count: np.ndarray
    degree: np.ndarray
    flagged: np.ndarray
    cover_cell: np.ndarray = dc_field(repr=False)      # (cell, simplex) pairs sorted by cell
    cover_simplex: np.ndarray = dc_field(repr=False)
    cover_sign: np.ndarray = dc_field(repr=False)

    @property
    def covered(self) -> np.ndarray:
        return self.fiber_count > 0

    @property
    def cell_area(self) -> float:
        return self.partition.cell_area

    def abs_total(self) -> float:
        """Sum of fiber_count x area: the raster value of |K|."""
        return float(self.fiber_count.sum() * self.cell_area)

    def signed_total(self) -> float:
        return float(self.degree.sum() * self.cell_area)

    def covered_area(self) -> float:
        return float(np.count_nonzero(self.covered) * self.cell_area)

    def simplices_of(self, cell: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.cover_cell, [cell, cell + 1])
        return self.cover_simplex[lo:hi]

    def parity_violations(self) -> int:
        ok = ~self.flagged
        bad = (np.abs(self.degree) > self.fiber_count) | ((self.degree - self.fiber_count) % 2 != 0)
        return int(np.count_nonzero(bad & ok))

    def to_csv(self, path) -> None:
        C = self.partition.centers
        with open(path, "w") as fh:
            cols = ["x", "y", "z"][: self.partition.arity]
            fh.write(",".join(cols + ["area", "fiber_count", "degree", "flagged"]) + "\n")
            for i in range(self.partition.m):
                fh.write(",".join([repr(float(v)) for v in C[i]] + [repr(self.cell_area),
                         str(int(self.fiber_count[i])), str(int(self.degree[i])),
                         str(int(self.flagged[i]))]) + "\n")


def flag_simplices(mesh: LevelSetMesh) -> np.ndarray:
    """Simplices whose normal image is unreliable for degree statistics."""
    if mesh.empty:
        return np.zeros(0, dtype=bool)
    pc = mesh.per_vertex
    S = mesh.simplices
    N = pc.normal[S]
    sign = normal_simplex_sign(N)
    if mesh.arity == 3:
        # spherical area ~ half the |det| for small triangles
        small = np.abs(sign) < TINY_SPHERICAL_AREA
        spread = np.min(np.stack([np.einsum("ij,ij->i", N[:, a], N[:, b])
                                  for a, b in ((0, 1), (1, 2), (0, 2))]), axis=0) < 0
    else:
        small = np.abs(sign) < TINY_SPHERICAL_AREA
        spread = np.einsum("ij,ij->i", N[:, 0], N[:, 1]) < 0
    gs = np.sign(pc.gauss[S])
    mixed = np.any(gs != gs[:, :1], axis=1)
    degenerate = np.any(pc.degenerate[S], axis=1)
    return small | spread | mixed | degenerate | mesh.misoriented


def _candidates(mesh: LevelSetMesh, part: SpherePartition):
    """(simplex, cell) candidate pairs whose cell center may lie in the normal image."""
    N = mesh.per_vertex.normal[mesh.simplices]
    if mesh.arity == 3:
        cen = N.sum(axis=1)
        nrm = np.linalg.norm(cen, axis=1, keepdims=True)
        cen = np.where(nrm > 1e-12, cen / np.maximum(nrm, 1e-300), N[:, 0])
        rad = np.max(np.linalg.norm(N - cen[:, None, :], axis=2), axis=1) + 1e-9
        # spread > 90 degrees: the simplex is flagged; still search a full ball
        rad = np.where(nrm[:, 0] > 1e-12, rad, 2.0)
        lists = part.tree.query_ball_point(cen, rad)
        counts = np.array([len(l) for l in lists])
        simp = np.repeat(np.arange(len(N)), counts)
        cell = np.fromiter((c for l in lists for c in l), dtype=int, count=counts.sum())
        return simp, cell
    # n=2: cells whose center angle lies in the short arc between the two normals
    a = np.arctan2(N[:, 0, 1], N[:, 0, 0])
    d = np.arctan2(N[:, 1, 1], N[:, 1, 0]) - a
    d = (d + np.pi) % (2 * np.pi) - np.pi
    lo = np.where(d >= 0, a, a + d)
    w = 2 * np.pi / part.m
    k0 = np.floor(lo / w - 0.5).astype(int)
    k1 = np.floor((lo + np.abs(d)) / w - 0.5).astype(int) + 1
    counts = k1 - k0 + 1
    simp = np.repeat(np.arange(len(N)), counts)
    start = np.repeat(k0, counts)
    within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return simp, np.mod(start + within, part.m)


def rasterize(mesh: LevelSetMesh, field: ScalarField | None = None, m: int | None = None,
              partition: SpherePartition | None = None) -> SphericalRaster:
    """Fiber counts and degree of the Gauss map of the mesh, per cell."""
    n = mesh.arity
    part = partition or SpherePartition(n, m or DEFAULT_CELLS[n])
    if part.m < MIN_CELLS[n] and partition is None:
        raise ValueError(f"need at least {MIN_CELLS[n]} cells for n={n}")
    fiber = np.zeros(part.m, dtype=int)
    degree = np.zeros(part.m, dtype=int)
    flagged = np.zeros(part.m, dtype=bool)
    empty = np.zeros(0, dtype=int)
    if mesh.empty:
        return SphericalRaster(mesh.level, part, fiber, degree, flagged, empty, empty, empty)
    N = mesh.per_vertex.normal[mesh.simplices]
    simp, cell = _candidates(mesh, part)
    inside = contains(N[simp], part.centers[cell])
    simp, cell = simp[inside], cell[inside]
    sign = np.sign(normal_simplex_sign(N)).astype(int)[simp]
    np.add.at(fiber, cell, 1)
    np.add.at(degree, cell, sign)
    bad = flag_simplices(mesh)[simp]
    flagged[cell[bad]] = True
    order = np.lexsort((simp, cell))
    return SphericalRaster(mesh.level, part, fiber, degree, flagged,
                           cell[order], simp[order], sign[order])


def strata_areas(raster: SphericalRaster) -> dict[int, float]:
    """Area of U_k (cells with exactly k preimages) for each k >= 1."""
    ks, counts = np.unique(raster.fiber_count[raster.fiber_count > 0], return_counts=True)
    return {int(k): float(c * raster.cell_area) for k, c in zip(ks, counts)}


# --------------------------------------------------------------------------
# degree identity

@dataclass(frozen=True)
class DegreeStats:
    n_samples: int
    n_agree: int
    n_flagged: int
    mismatches: list

    @property
    def rate(self) -> float:
        return self.n_agree / self.n_samples if self.n_samples else float("nan")


def degree_check(raster: SphericalRaster, mesh: LevelSetMesh, field: ScalarField, samples: int,
                 rng: np.random.Generator | None = None) -> DegreeStats:
    """Compare raster degree with the sum of (-1)^index over refined preimages
    at randomly chosen covered, unflagged cells."""
    rng = rng or np.random.default_rng(0)
    pool = np.flatnonzero(raster.covered & ~raster.flagged)
    if len(pool) == 0:
        return DegreeStats(0, 0, 0, [])
    cells = rng.choice(pool, size=min(samples, len(pool)), replace=False)
    agree = flagged = 0
    mismatches = []
    for c in cells:
        u = raster.partition.centers[c]
        pts, failed = locate(field, mesh, u, raster.simplices_of(c))
        cf = curvature_field(field, pts) if len(pts) else None
        if failed or (cf is not None and cf.degenerate.any()):
            flagged += 1
            continue
        total = int(np.sum((-1) ** cf.index)) if cf is not None else 0
        if total == raster.degree[c]:
            agree += 1
        else:
            mismatches.append((int(c), int(raster.degree[c]), total))
    return DegreeStats(len(cells) - flagged, agree, flagged, mismatches)


# --------------------------------------------------------------------------
# Hausdorff distance and limits

@dataclass(frozen=True)
class HausdorffEstimate:
    value: float
    witness_pair: tuple


def hausdorff(A, B) -> HausdorffEstimate:
    """Chordal Hausdorff distance between two finite sets of unit vectors."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("Hausdorff distance of an empty set is undefined")
    dab, jab = cKDTree(B).query(A)
    dba, jba = cKDTree(A).query(B)
    ia, ib = int(np.argmax(dab)), int(np.argmax(dba))
    if dab[ia] >= dba[ib]:
        return HausdorffEstimate(float(dab[ia]), (A[ia], B[jab[ia]]))
    return HausdorffEstimate(float(dba[ib]), (A[jba[ib]], B[ib]))


def hausdorff_cells(partition: SpherePartition, cells_a, cells_b) -> HausdorffEstimate:
    C = partition.centers
    return hausdorff(C[np.asarray(cells_a, dtype=int)], C[np.asarray(cells_b, dtype=int)])


@dataclass
class LimitEstimate:
    c: float
    side: int
    t_values: np.ndarray
    covered: list                  # covered-cell masks per t_j
    fiber: list                    # fiber counts per t_j
    limit: np.ndarray              # stable covered mask V
    limit_k: dict                  # k -> stable mask of cells with fiber count k
    unstable: int
    hausdorff_steps: list
    partition: SpherePartition

    @property
    def area(self) -> float:
        return float(np.count_nonzero(self.limit) * self.partition.cell_area)

    @property
    def weighted_area(self) -> float:
        return float(sum(k * np.count_nonzero(v) for k, v in self.limit_k.items())
                     * self.partition.cell_area)

    def areas(self) -> np.ndarray:
        return np.array([np.count_nonzero(c) for c in self.covered]) * self.partition.cell_area

    def weighted_areas(self) -> np.ndarray:
        return np.array([f.sum() for f in self.fiber]) * self.partition.cell_area


def one_sided_limit(field: ScalarField, c: float, side: int, R: float, h: float,
                    m: int | None = None, delta0: float = 0.1, J: int = 12, window: int = 3,
                    avoid=()) -> LimitEstimate:
    """Estimate V_c^{side} from rasters at t_j = c + side * delta0 * 2^-j, j = 0..J.

    A cell belongs to the limit when it is covered at each of the last
    ``window`` samples; cells whose membership changes there are unstable.
    Samples within 1e-9 of a value in ``avoid`` are skipped.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    part = SpherePartition(field.arity, m or DEFAULT_CELLS[field.arity])
    ts = [c + side * delta0 * 2.0 ** -j for j in range(J + 1)]
    ts = [t for t in ts if all(abs(t - a) > 1e-9 for a in avoid)]
    if len(ts) < window:
        raise ValueError("not enough samples for the stabilization window")
    covered, fibers, steps = [], [], []
    for t in ts:
        r = rasterize(extract_level(field, t, R, h), field, partition=part)
        covered.append(r.covered)
        fibers.append(r.fiber_count)
    for a, b in zip(covered, covered[1:]):
        steps.append(hausdorff_cells(part, np.flatnonzero(a), np.flatnonzero(b)).value
                     if a.any() and b.any() else float("nan"))
    last = np.array(covered[-window:])
    limit = last.all(axis=0)
    unstable = int(np.count_nonzero(last.any(axis=0) & ~limit))
    lastf = np.array(fibers[-window:])
    stable_f = (lastf == lastf[0]).all(axis=0)
    limit_k = {int(k): stable_f & (lastf[0] == k) for k in np.unique(lastf[0][lastf[0] > 0])}
    return LimitEstimate(c, side, np.array(ts), covered, fibers, limit, limit_k, unstable, steps, part)


# --------------------------------------------------------------------------
# escape diagnostic: the curve {nu_f = u}

@dataclass
class EscapeComponent:
    points: np.ndarray
    f_range: tuple
    crosses_c: bool
    exits: bool
    truncated: bool
    ends: tuple

    @property
    def one_sided_escape(self) -> bool:
        return self.exits and not self.crosses_c


class _DirectionCurve:
    """Continuation of {x : E_u^T grad f(x) = 0, <grad f, u> > 0}."""

    def __init__(self, field, u, c, eps, R, max_step, max_points=20000):
        self.field, self.c, self.eps, self.R = field, c, eps, R
        self.u = u / np.linalg.norm(u)
        self.E = tangent_basis(self.u)
        self.max_step = max_step
        self.max_points = max_points

    def residual(self, x):
        jet = self.field.jet(x)
        return jet, self.E @ jet.gradient, self.E @ jet.hessian

    def tangent(self, DG):
        if DG.shape[0] == 1:
            tau = np.array([-DG[0, 1], DG[0, 0]])
        else:
            tau = np.cross(DG[0], DG[1])
        nrm = np.linalg.norm(tau)
        return tau / nrm if nrm > 0 else None

    def correct(self, x, scale):
        for _ in range(20):
            jet, G, DG = self.residual(x)
            dx = np.linalg.lstsq(DG, G, rcond=None)[0]
            x = x - dx
            if np.linalg.norm(dx) < 1e-13 * (1 + np.linalg.norm(x)):
                break
        jet, G, DG = self.residual(x)
        gn = np.linalg.norm(jet.gradient)
        ok = (np.isfinite(gn) and gn >= float(grad_floor(x)) and jet.gradient @ self.u > 0
              and np.linalg.norm(G) <= 1e-9 * gn)
        return x, ok, jet, DG

    def march(self, x0, direction):
        jet, _, DG = self.residual(x0)
        tau = self.tangent(DG)
        if tau is None:
            return [x0], "critical"
        # orient by f: direction=+1 follows increasing f at the seed
        if direction * (tau @ jet.gradient) < 0:
            tau = -tau
        pts = [x0]
        x = x0
        s = self.max_step * 0.1
        while len(pts) < self.max_points:
            s = min(1.5 * s, self.max_step)
            floor = 1e-12 * (1 + np.linalg.norm(x))
            while True:
                if s < floor:
                    return pts, "stall"
                y, ok, jy, DGy = self.correct(x + s * tau, s)
                if ok and np.linalg.norm(y - x) <= 2 * s and (y - x) @ tau > 0:
                    tau_y = self.tangent(DGy)
                    if tau_y is not None:
                        if tau_y @ tau < 0:
                            tau_y = -tau_y
                        if tau_y @ tau > np.cos(0.2):
                            break
                s *= 0.5
            pts.append(y)
            x, tau = y, tau_y
            fy = float(jy.value)
            if np.linalg.norm(x) >= self.R:
                return pts, "boundary"
            if abs(fy - self.c) > 2 * self.eps:
                return pts, "window"
        return pts, "limit"


def escape_diagnostic(field: ScalarField, c: float, u, eps: float, R: float,
                      h: float | None = None, max_step: float | None = None) -> list[EscapeComponent]:
    """Trace the components of {nu_f = u} met by the levels c - eps and c + eps
    inside the window |f - c| <= 2 eps and classify them."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    h = h or R / 200
    max_step = max_step or R / 100
    curve = _DirectionCurve(field, u, c, eps, R, max_step)
    seeds = []
    for t in (c - eps, c + eps):
        mesh = extract_level(field, t, R, h)
        pts, _ = locate(field, mesh, u)
        seeds.extend(pts)
    comps: list[EscapeComponent] = []
    traced = []
    for x0 in seeds:
        if any(np.min(np.linalg.norm(P - x0, axis=1)) < 2 * max_step for P in traced):
            continue
        up, end_up = curve.march(x0, +1)
        down, end_down = curve.march(x0, -1)
        P = np.array(down[::-1] + up[1:])
        traced.append(P)
        fv = field.value(P)
        lo, hi = float(fv.min()), float(fv.max())
        ends = (end_down, end_up)
        comps.append(EscapeComponent(P, (lo, hi), lo < c < hi, "boundary" in ends,
                                     any(e in ("stall", "limit", "critical") for e in ends), ends))
    return comps
