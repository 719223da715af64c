"""Cross-check of the curvature integrals by counting critical points of
linear projections on the level (Morse counting over random directions)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .expr import ScalarField
from .geometry import curvature_field, tangent_basis
from .levelset import LevelSetMesh, extract_level
from .preimage import locate, simplices_covering
from .sphimage import flag_simplices

DEFAULT_SEQUENCE_SEED = 20240611


@dataclass(frozen=True)
class ProjectionCritical:
    """A critical point of phi_u = <., u> on the level.

    ``morse_index`` follows the shape-operator convention: it is the Morse
    index of the depth <p - x, nu(p)> below the tangent plane, which equals
    the number of negative principal curvatures. The literal Morse index of
    phi_u itself is ``projection_index``.
    """

    point: np.ndarray
    direction: np.ndarray
    morse_index: int
    aligned: bool
    nondegenerate: bool
    principal: np.ndarray

    @property
    def projection_index(self) -> int:
        m = len(self.principal)
        return self.morse_index if not self.aligned else m - self.morse_index


def find_projection_criticals(mesh: LevelSetMesh, field: ScalarField, u) -> list[ProjectionCritical]:
    """Points with nu = +u (aligned) or nu = -u on the mesh level."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    out = []
    for sgn in (1.0, -1.0):
        pts, _ = locate(field, mesh, sgn * u)
        if not len(pts):
            continue
        cf = curvature_field(field, pts)
        for i, p in enumerate(pts):
            out.append(ProjectionCritical(p, u, int(cf.index[i]), sgn > 0,
                                          not bool(cf.degenerate[i]), cf.principal[i].copy()))
    return out


def depth_hessian(field: ScalarField, t: float, p, delta: float | None = None) -> np.ndarray:
    """Finite-difference Hessian of the depth function of the level at ``p``.

    The level near p is written as p + E a - d(a) nu with E the tangent basis
    and nu the unit normal at p; d(a) is found by a 1-D Newton solve on f only.
    """
    p = np.asarray(p, dtype=float)
    jet = field.jet(p)
    nu = jet.gradient / np.linalg.norm(jet.gradient)
    E = tangent_basis(nu)
    if delta is None:
        cf = curvature_field(field, p[None])
        kmax = float(np.max(np.abs(cf.principal)))
        delta = min(1e-3, 0.05 / max(kmax, 1e-12))

    def depth(a):
        base = p + a @ E
        d = 0.0
        for _ in range(60):
            x = base - d * nu
            v, g = field.gradient(x)
            step = -(float(v) - t) / float(g @ nu)
            d -= step
            if abs(step) < 1e-16 * (1 + abs(d)):
                break
        return d

    m = len(E)
    I = np.eye(m) * delta
    d0 = depth(np.zeros(m))
    Hd = np.zeros((m, m))
    for i in range(m):
        Hd[i, i] = (depth(I[i]) - 2 * d0 + depth(-I[i])) / delta ** 2
        for j in range(i + 1, m):
            Hd[i, j] = Hd[j, i] = (depth(I[i] + I[j]) - depth(I[i] - I[j]) - depth(I[j] - I[i])
                                   + depth(-I[i] - I[j])) / (4 * delta ** 2)
    return Hd


def morse_index_check(field: ScalarField, p: ProjectionCritical, t: float | None = None) -> bool:
    """Shape-operator index versus the index of the finite-difference depth Hessian."""
    t = float(field.value(p.point)) if t is None else t
    Hd = depth_hessian(field, t, p.point)
    fd_index = int(np.sum(np.linalg.eigvalsh(Hd) < 0))
    return fd_index == p.morse_index


# --------------------------------------------------------------------------
# Monte-Carlo estimate

@dataclass(frozen=True)
class MCEstimate:
    K_est: float
    absK_est: float
    stderr: float
    stderr_K: float
    n_used: int
    n_rejected: int

    def as_dict(self) -> dict:
        return {"K_est": self.K_est, "absK_est": self.absK_est, "stderr": self.stderr,
                "stderr_K": self.stderr_K, "n_used": self.n_used, "n_rejected": self.n_rejected}


def direction_stream(arity: int, seed: int | None = None, batch: int = 256):
    """Unit directions: scrambled Sobol points mapped area-preservingly to the
    sphere (fixed default seed), or i.i.d. uniform when ``seed`` is given."""
    if seed is None:
        sob = qmc.Sobol(d=arity - 1, scramble=True, seed=DEFAULT_SEQUENCE_SEED)
        draw = lambda: sob.random(batch)
    else:
        rng = np.random.default_rng(seed)
        draw = lambda: rng.random((batch, arity - 1))
    while True:
        q = draw()
        if arity == 2:
            phi = 2 * np.pi * q[:, 0]
            U = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        else:
            z = 1 - 2 * q[:, 0]
            phi = 2 * np.pi * q[:, 1]
            r = np.sqrt(np.maximum(0, 1 - z * z))
            U = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        yield from U


def mc_estimate(field: ScalarField, t: float, R: float, n_samples: int, h: float | None = None,
                seed: int | None = None, mesh: LevelSetMesh | None = None,
                max_attempts: int | None = None) -> MCEstimate:
    """Average preimage counts of the Gauss map over uniform directions.

    |K| = vol(S^{n-1}) E[#nu^-1(u)] and K = vol(S^{n-1}) E[sum (-1)^index].
    Directions whose preimages are degenerate, fail to refine, or touch a
    flagged simplex are rejected and replaced.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    n = field.arity
    if mesh is None:
        mesh = extract_level(field, t, R, h or R / 80)
    bad = flag_simplices(mesh)
    vol = 2 * np.pi if n == 2 else 4 * np.pi
    counts, signed = [], []
    rejected = 0
    max_attempts = max_attempts or 4 * n_samples
    for u in direction_stream(n, seed):
        if len(counts) >= n_samples or len(counts) + rejected >= max_attempts:
            break
        cover = simplices_covering(mesh, u)
        if bad[cover].any():
            rejected += 1
            continue
        pts, failed = locate(field, mesh, u, cover)
        cf = curvature_field(field, pts) if len(pts) else None
        if failed or (cf is not None and cf.degenerate.any()):
            rejected += 1
            continue
        counts.append(len(pts))
        signed.append(int(np.sum((-1) ** cf.index)) if cf is not None else 0)
    counts = np.array(counts, dtype=float)
    signed = np.array(signed, dtype=float)
    N = len(counts)
    if N < 2:
        raise ArithmeticError("too few usable directions")
    return MCEstimate(float(vol * signed.mean()), float(vol * counts.mean()),
                      float(vol * counts.std(ddof=1) / np.sqrt(N)),
                      float(vol * signed.std(ddof=1) / np.sqrt(N)), N, rejected)
