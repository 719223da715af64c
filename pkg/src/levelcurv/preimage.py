"""Locating points of a level whose unit normal equals a given direction."""
from __future__ import annotations

import numpy as np

from .expr import ScalarField
from .geometry import grad_floor, tangent_basis
from .levelset import LevelSetMesh, level_tol

ALIGN_TOL = 1e-10


def normal_simplex_sign(N: np.ndarray) -> np.ndarray:
    """Orientation of the spherical simplex spanned by vertex normals ``N`` (k, n, n).

    For n=3 this is det[Na, Nb, Nc]; for n=2 it is det[Nb, Na]. With a
    positively oriented mesh simplex the sign equals the sign of the Gauss
    curvature of the normal map over it.
    """
    if N.shape[-1] == 3:
        return np.einsum("ij,ij->i", N[:, 0], np.cross(N[:, 1], N[:, 2]))
    return N[:, 1, 0] * N[:, 0, 1] - N[:, 1, 1] * N[:, 0, 0]


def contains(N: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Whether direction U[i] lies in the spherical simplex with vertices N[i]."""
    if N.shape[-1] == 3:
        a, b, c = N[:, 0], N[:, 1], N[:, 2]
        d = np.einsum("ij,ij->i", a, np.cross(b, c))
        s1 = np.einsum("ij,ij->i", U, np.cross(a, b))
        s2 = np.einsum("ij,ij->i", U, np.cross(b, c))
        s3 = np.einsum("ij,ij->i", U, np.cross(c, a))
        front = np.einsum("ij,ij->i", U, a + b + c) > 0
        pos = (s1 >= 0) & (s2 >= 0) & (s3 >= 0)
        neg = (s1 <= 0) & (s2 <= 0) & (s3 <= 0)
        return front & (d != 0) & np.where(d > 0, pos, neg)
    a, b = N[:, 0], N[:, 1]
    # u on the short arc from a to b: u = alpha a + beta b with alpha, beta >= 0
    cross_ab = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    cross_au = a[:, 0] * U[:, 1] - a[:, 1] * U[:, 0]
    cross_ub = U[:, 0] * b[:, 1] - U[:, 1] * b[:, 0]
    front = np.einsum("ij,ij->i", U, a + b) > 0
    same = np.where(cross_ab > 0, (cross_au >= 0) & (cross_ub >= 0), (cross_au <= 0) & (cross_ub <= 0))
    return front & (cross_ab != 0) & same


def simplices_covering(mesh: LevelSetMesh, u: np.ndarray) -> np.ndarray:
    """Indices of mesh simplices whose normal image contains ``u``."""
    if mesh.empty:
        return np.zeros(0, dtype=int)
    N, cen, rad2 = _normal_caps(mesh)
    u = np.asarray(u, dtype=float)
    near = np.flatnonzero(np.sum((cen - u) ** 2, axis=1) <= rad2)
    U = np.broadcast_to(u, (len(near), mesh.arity))
    return near[contains(N[near], U)]


def _normal_caps(mesh: LevelSetMesh):
    """Vertex normals per simplex with a bounding ball of each normal image (cached)."""
    caps = mesh.info.get("_normal_caps")
    if caps is None:
        N = mesh.per_vertex.normal[mesh.simplices]
        cen = N.mean(axis=1)
        rad = np.sqrt(np.max(np.sum((N - cen[:, None, :]) ** 2, axis=2), axis=1))
        # the spherical simplex bulges past the flat one by at most ~rad^2
        rad2 = (rad * (1 + rad) + 1e-9) ** 2
        wide = np.min(np.einsum("kid,kjd->kij", N, N).reshape(len(N), -1), axis=1) < 0
        rad2[wide] = 4.0 + 1e-9
        caps = mesh.info["_normal_caps"] = (N, cen, rad2)
    return caps


def refine(field: ScalarField, t: float, u: np.ndarray, x0: np.ndarray, max_step: float,
           max_iter: int = 40):
    """Newton on {f = t, E_u^T grad f = 0}. Returns (x, converged)."""
    E = tangent_basis(u)
    x = np.array(x0, dtype=float)
    tol = level_tol(t)
    for _ in range(max_iter):
        jet = field.jet(x)
        g = jet.gradient
        gn = np.linalg.norm(g)
        if not np.isfinite(gn) or gn < float(grad_floor(x)):
            return x, False
        F = np.concatenate([[jet.value - t], E @ g])
        J = np.vstack([g, E @ jet.hessian])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, F, rcond=None)[0]
        step = np.linalg.norm(dx)
        if step > max_step:
            dx *= max_step / step
        x = x - dx
        if step < 1e-14 * (1 + np.linalg.norm(x)):
            break
    jet = field.jet(x)
    g = jet.gradient
    gn = np.linalg.norm(g)
    ok = (np.isfinite(gn) and gn >= float(grad_floor(x)) and abs(jet.value - t) < tol
          and np.linalg.norm(E @ g) / gn < ALIGN_TOL and g @ u > 0)
    return x, bool(ok)


def locate(field: ScalarField, mesh: LevelSetMesh, u: np.ndarray, simplices=None):
    """Preimages of ``u`` under the Gauss map of the level, seeded from the mesh.

    Returns (points, n_failed). Points outside B_R and duplicates are dropped.
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    if simplices is None:
        simplices = simplices_covering(mesh, u)
    found, failed = [], 0
    for s in simplices:
        P = mesh.vertices[mesh.simplices[s]]
        N = mesh.per_vertex.normal[mesh.simplices[s]]
        # barycentric weights of u in the normal simplex give the start point
        w = np.linalg.lstsq(N.T, u, rcond=None)[0]
        w = np.clip(w, 0, None)
        w = w / w.sum() if w.sum() > 0 else np.full(len(w), 1.0 / len(w))
        x, ok = refine(field, mesh.level, u, w @ P, max_step=mesh.cell_size)
        if not ok:
            failed += 1
            continue
        if np.linalg.norm(x) >= mesh.radius:
            continue
        if any(np.linalg.norm(x - y) < 1e-7 * (1 + np.linalg.norm(y)) for y in found):
            continue
        found.append(x)
    return np.array(found).reshape(-1, mesh.arity), failed
