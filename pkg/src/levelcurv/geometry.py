"""Pointwise differential geometry of the levels of a scalar field.

Everything here works on a single point or on a batch of points ``(N, n)``;
the scalar entry points (``gauss_map``, ``shape_operator``, ...) wrap the
batch kernel :func:`curvature_field`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import ScalarField

GRAD_FLOOR = 1e-8
EIGEN_ZERO_TOL = 1e-7


class NearCriticalError(ArithmeticError):
    """Raised when |grad f| is below the critical-point floor."""


def grad_floor(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return GRAD_FLOOR * (1.0 + np.linalg.norm(X, axis=-1))


@dataclass(frozen=True)
class TangentFrame:
    base_point: np.ndarray
    normal: np.ndarray
    tangent_basis: np.ndarray  # rows are the n-1 tangent vectors


@dataclass(frozen=True)
class PointCurvature:
    shape: np.ndarray
    principal: np.ndarray
    gauss: float
    index: int
    degenerate: bool


@dataclass
class CurvatureField:
    """Struct-of-arrays curvature data for a batch of points."""

    value: np.ndarray
    gradient: np.ndarray
    grad_norm: np.ndarray
    normal: np.ndarray
    basis: np.ndarray       # (N, n-1, n)
    shape: np.ndarray       # (N, n-1, n-1)
    principal: np.ndarray   # (N, n-1), ascending
    gauss: np.ndarray
    index: np.ndarray
    degenerate: np.ndarray
    critical: np.ndarray    # |grad f| below the floor

    def __len__(self):
        return len(self.gauss)

    def take(self, idx) -> "CurvatureField":
        return CurvatureField(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})

    def record(self, i: int) -> PointCurvature:
        return PointCurvature(self.shape[i], self.principal[i], float(self.gauss[i]),
                              int(self.index[i]), bool(self.degenerate[i]))

    def lk(self, q: int) -> np.ndarray:
        return lk_from_principal(self.principal, q)


def tangent_basis(normal: np.ndarray) -> np.ndarray:
    """Orthonormal tangent vectors completing ``normal`` to a direct frame.

    Built by Gram-Schmidt from the coordinate axes least aligned with the
    normal; rows ``(e_1, ..., e_{n-1})`` satisfy ``det[e_1, ..., e_{n-1}, nu] > 0``.
    """
    nu = np.asarray(normal, dtype=float)
    single = nu.ndim == 1
    nu = np.atleast_2d(nu)
    N, n = nu.shape
    order = np.argsort(np.abs(nu), axis=1, kind="stable")
    eye = np.eye(n)
    basis = np.zeros((N, n - 1, n))
    for k in range(n - 1):
        v = eye[order[:, k]]
        v = v - np.sum(v * nu, axis=1, keepdims=True) * nu
        for j in range(k):
            v = v - np.sum(v * basis[:, j], axis=1, keepdims=True) * basis[:, j]
        basis[:, k] = v / np.linalg.norm(v, axis=1, keepdims=True)
    frame = np.concatenate([basis, nu[:, None, :]], axis=1)
    negative = np.linalg.det(frame) < 0
    if n == 2:
        basis[negative, 0] *= -1.0
    else:
        basis[negative] = basis[negative][:, ::-1]
    return basis[0] if single else basis


def curvature_field(field: ScalarField, X) -> CurvatureField:
    """Gauss map, shape operator and derived quantities at every point of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    jet = field.jet(X)
    grad = jet.gradient
    gnorm = np.linalg.norm(grad, axis=1)
    critical = ~(gnorm >= grad_floor(X))
    safe = np.where(critical, 1.0, gnorm)
    nu = grad / safe[:, None]
    nu[critical] = np.eye(field.arity)[-1]
    basis = tangent_basis(nu)
    # shape[i, j] = <d nu . e_i, e_j> = e_i^T H e_j / |grad f|: the projection term drops out
    shape = np.einsum("nia,nab,njb->nij", basis, jet.hessian, basis) / safe[:, None, None]
    shape = 0.5 * (shape + np.swapaxes(shape, 1, 2))
    principal = np.linalg.eigvalsh(shape)
    gauss = np.prod(principal, axis=1)
    index = np.sum(principal < 0.0, axis=1)
    radius = np.max(np.abs(principal), axis=1)
    tol = EIGEN_ZERO_TOL * np.maximum(1.0, radius)
    degenerate = np.any(np.abs(principal) < tol[:, None], axis=1) | critical
    return CurvatureField(jet.value, grad, gnorm, nu, basis, shape, principal,
                          gauss, index, degenerate, critical)


def lk_from_principal(principal: np.ndarray, q: int) -> np.ndarray:
    """Lipschitz-Killing density LK_q from principal curvatures (c_{n,q} = 1).

    The Grassmannian of q-planes carries its un-normalised uniform measure:
    for a surface in R^3 and q = 1 this is the circle of length 2*pi, giving
    ``integral of k1 cos^2 + k2 sin^2 = pi (k1 + k2)``.
    """
    principal = np.asarray(principal, dtype=float)
    m = principal.shape[-1]  # n - 1
    if not 1 <= q <= m:
        raise ValueError(f"q must be in [1, {m}], got {q}")
    if q == m:
        return np.prod(principal, axis=-1)
    if m == 2 and q == 1:
        return np.pi * (principal[..., 0] + principal[..., 1])
    raise ValueError(f"LK_{q} not implemented for hypersurfaces of dimension {m}")


# --------------------------------------------------------------------------
# scalar API

def _single(field: ScalarField, x) -> CurvatureField:
    x = np.asarray(x, dtype=float)
    if x.shape != (field.arity,):
        raise ValueError(f"expected a point of dimension {field.arity}")
    cf = curvature_field(field, x[None, :])
    if cf.critical[0]:
        raise NearCriticalError(f"|grad f| = {cf.grad_norm[0]:.3g} below floor at {x.tolist()}")
    return cf


def gauss_map(field: ScalarField, x) -> np.ndarray:
    """Unit normal grad f / |grad f| at ``x``."""
    return _single(field, x).normal[0]


def tangent_frame(field: ScalarField, x) -> TangentFrame:
    cf = _single(field, x)
    return TangentFrame(np.asarray(x, dtype=float), cf.normal[0], cf.basis[0])


def gauss_differential(field: ScalarField, x, xi) -> np.ndarray:
    """d_x nu_f . xi = (H xi - <H xi, nu> nu) / |grad f|."""
    x = np.asarray(x, dtype=float)
    jet = field.jet(x)
    gnorm = float(np.linalg.norm(jet.gradient))
    if not gnorm >= float(grad_floor(x)):
        raise NearCriticalError(f"|grad f| = {gnorm:.3g} below floor at {x.tolist()}")
    nu = jet.gradient / gnorm
    hx = jet.hessian @ np.asarray(xi, dtype=float)
    return (hx - np.dot(hx, nu) * nu) / gnorm


def shape_operator(field: ScalarField, x) -> PointCurvature:
    return _single(field, x).record(0)


def lk_density(field: ScalarField, x, q: int) -> float:
    cf = _single(field, x)
    return float(lk_from_principal(cf.principal[0], q))


def psi(field: ScalarField, x) -> tuple[np.ndarray, float]:
    """The pair (nu_f(x), f(x))."""
    cf = _single(field, x)
    return cf.normal[0], float(cf.value[0])
