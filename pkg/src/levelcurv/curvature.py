"""Integrated curvature of a level mesh: K, |K|, index strata and LK totals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .expr import ScalarField
from .levelset import LevelSetMesh, extract_level


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class CurvatureTotals:
    t: float
    R: float
    arity: int
    k_total: float
    k_abs: float
    k_lambda: np.ndarray       # index 0..n-1
    k_abs_lambda: np.ndarray
    lk: np.ndarray             # rows q = 1..n-1, columns (L_q, |L|_q)
    n_components: int
    boundary_fraction: float
    degenerate_mass: float
    singular_vertices: int = 0

    @staticmethod
    def header(arity: int) -> list[str]:
        lam = range(arity)
        cols = ["t", "R", "K", "absK"]
        cols += [f"K_l{i}" for i in lam] + [f"absK_l{i}" for i in lam]
        for q in range(1, arity):
            cols += [f"L_{q}", f"absL_{q}"]
        return cols + ["n_components", "boundary_fraction", "degenerate_mass"]

    def row(self) -> list:
        out = [self.t, self.R, self.k_total, self.k_abs]
        out += [float(v) for v in self.k_lambda] + [float(v) for v in self.k_abs_lambda]
        for q in range(self.arity - 1):
            out += [float(self.lk[q, 0]), float(self.lk[q, 1])]
        return out + [self.n_components, self.boundary_fraction, self.degenerate_mass]

    def L(self, q: int) -> float:
        return float(self.lk[q - 1, 0])

    def absL(self, q: int) -> float:
        return float(self.lk[q - 1, 1])


def empty_totals(t: float, R: float, arity: int) -> CurvatureTotals:
    return CurvatureTotals(float(t), float(R), arity, 0.0, 0.0, np.zeros(arity), np.zeros(arity),
                           np.zeros((arity - 1, 2)), 0, 0.0, 0.0)


def totals(mesh: LevelSetMesh, field: ScalarField | None = None) -> CurvatureTotals:
    """Integrate Gauss curvature and LK densities over the mesh.

    Each simplex contributes its (n-1)-volume times the mean of its vertex
    densities, i.e. every vertex carries vol/n of each adjacent simplex.
    Degenerate vertices (some principal curvature ~ 0) carry no index and are
    kept out of K, |K| and the strata; their |gauss| mass is reported as
    ``degenerate_mass``.
    """
    n = mesh.arity
    if mesh.empty:
        return empty_totals(mesh.level, mesh.radius, n)
    pc = mesh.per_vertex
    w = mesh.vertex_weights()
    regular = ~pc.critical
    good = regular & ~pc.degenerate
    gauss = np.where(good, pc.gauss, 0.0)
    wg = w * gauss
    wabs = np.abs(wg)
    k_lambda = np.zeros(n)
    k_abs_lambda = np.zeros(n)
    for lam in range(n):
        sel = good & (pc.index == lam)
        k_lambda[lam] = wg[sel].sum()
        k_abs_lambda[lam] = wabs[sel].sum()
    k_total = float(wg.sum())
    k_abs = float(wabs.sum())
    degenerate_mass = float(np.sum(w * np.abs(pc.gauss) * (regular & pc.degenerate)))
    lk = np.zeros((n - 1, 2))
    for q in range(1, n):
        dens = np.where(regular, pc.lk(q), 0.0)
        lk[q - 1] = (np.sum(w * dens), np.sum(w * np.abs(dens)))
    boundary_fraction = 0.0
    if mesh.boundary_vertex.any() and k_abs > 0:
        tree = cKDTree(mesh.vertices[mesh.boundary_vertex])
        d, _ = tree.query(mesh.vertices, distance_upper_bound=2 * mesh.cell_size)
        boundary_fraction = float(wabs[np.isfinite(d)].sum() / k_abs)
    return CurvatureTotals(mesh.level, mesh.radius, n, k_total, k_abs, k_lambda, k_abs_lambda, lk,
                           mesh.n_components, boundary_fraction, degenerate_mass,
                           int(np.count_nonzero(pc.critical)))


def level_totals(field: ScalarField, t: float, R: float, h: float) -> CurvatureTotals:
    return totals(extract_level(field, t, R, h), field)


def r_sweep(field: ScalarField, t: float, radii: Sequence[float],
            h_rule: Callable[[float], float] | float) -> list[CurvatureTotals]:
    """Totals at each radius; ``h_rule`` maps R to a cell size (or is a constant)."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    rule = h_rule if callable(h_rule) else (lambda R: float(h_rule))
    return [level_totals(field, t, R, rule(R)) for R in radii]


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    coefficient: float
    residual: float

    def __iter__(self):
        return iter((self.exponent, self.coefficient, self.residual))


def fit_power_law(radii, values) -> PowerFit:
    """Least-squares fit of values ~ c R^a on log-log axes."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(radii) < 4:
        raise FitError(f"need at least 4 radii, got {len(radii)}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise FitError("fit refused: values must be finite and positive")
    A = np.stack([np.log(radii), np.ones_like(radii)], axis=1)
    y = np.log(values)
    (a, logc), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [a, logc] - y) ** 2)))
    return PowerFit(float(a), float(np.exp(logc)), resid)


def asymptotic_fit(sweep: Sequence[CurvatureTotals], q: int) -> PowerFit:
    """Fit |L|_q(t; R) ~ c R^a over an R-sweep."""
    return fit_power_law([s.R for s in sweep], [s.absL(q) for s in sweep])
