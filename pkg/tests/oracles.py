"""Independent reference computations used as test oracles.

The finite-difference and closed-form oracles do not go through the
package's parser or differentiation.
"""
import re

import mpmath as mp
import numpy as np
from scipy import integrate

from levelcurv.expr import parse

ELLIPSOID_TEXT = "x^2 + 1.5*y^2 + 2*z^2"


def mp_function(text: str, arity: int):
    """Evaluate an expression text with mpmath via Python's own evaluator."""
    names = ["x", "y", "z"][:arity]
    code = text.replace("^", "**")
    env = {"sqrt": mp.sqrt, "exp": mp.exp}

    def f(*args):
        return eval(code, env, dict(zip(names, args)))
    return f


def fd_jet(text: str, arity: int, point, step: float = 1e-5, dps: int = 50):
    """Central differences at high precision with one Richardson step.

    Truncation error is O(step^4) and round-off is negligible at 50 digits,
    so the result is an accurate reference for the gradient and Hessian.
    """
    f = mp_function(text, arity)
    with mp.workdps(dps):
        x = [mp.mpf(float(v)) for v in point]

        def at(*shifts):
            y = list(x)
            for i, d in shifts:
                y[i] += d
            return f(*y)

        def grad(h):
            return [(at((i, h)) - at((i, -h))) / (2 * h) for i in range(arity)]

        def hess(h):
            H = [[None] * arity for _ in range(arity)]
            f0 = at()
            for i in range(arity):
                H[i][i] = (at((i, h)) - 2 * f0 + at((i, -h))) / h ** 2
                for j in range(i + 1, arity):
                    H[i][j] = H[j][i] = (at((i, h), (j, h)) - at((i, h), (j, -h))
                                         - at((i, -h), (j, h)) + at((i, -h), (j, -h))) / (4 * h ** 2)
            return H

        h = mp.mpf(step)
        g1, g2 = grad(h), grad(h / 2)
        H1, H2 = hess(h), hess(h / 2)
        g = [(4 * b - a) / 3 for a, b in zip(g1, g2)]
        H = [[(4 * H2[i][j] - H1[i][j]) / 3 for j in range(arity)] for i in range(arity)]
        return (float(f(*x)), np.array([float(v) for v in g]),
                np.array([[float(v) for v in row] for row in H]))


def hyperbola_abs_curvature(R: float, t: float = 1.0) -> float:
    """|K| of {xy = t} inside B_R by quadrature of the curvature along x.

    Branch y = t/x: curvature 2t x^3 / (x^4 + t^2)^(3/2) times arc length
    sqrt(1 + t^2/x^4) dx; integrate over x with x^2 + t^2/x^2 < R^2, both branches.
    """
    # endpoints of the in-ball x range: x^4 - R^2 x^2 + t^2 = 0
    disc = np.sqrt(R ** 4 - 4 * t ** 2)
    a, b = np.sqrt((R ** 2 - disc) / 2), np.sqrt((R ** 2 + disc) / 2)

    def integrand(x):
        kappa = 2 * t * x ** 3 / (x ** 4 + t ** 2) ** 1.5
        return kappa * np.sqrt(1 + t ** 2 / x ** 4)
    val, _ = integrate.quad(integrand, a, b, points=[np.sqrt(t)], epsabs=1e-13, epsrel=1e-13, limit=400)
    return 2 * abs(val)


def zfold_curve_abs_curvature(t: float, R: float, n: int = 400001) -> float:
    """|K| of {y(2x^2y^2 - 9xy + 12) = t} inside B_R, for t != 0.

    With s = xy the level is y = t / (2s^2 - 9s + 12), x = s / y, a single
    smooth curve parametrized by s; |K| is the total variation of its tangent
    angle over the part inside B_R (dense sampling of the exact parametrization).
    """
    # the part inside B_R is a bounded s-interval around the turning region
    s = np.concatenate([-np.logspace(8, -8, n // 2), [0.0], np.logspace(-8, 8, n // 2)])
    q = 2 * s ** 2 - 9 * s + 12
    y = t / q
    x = s / y
    dq = 4 * s - 9
    dy = -t * dq / q ** 2
    dx = (y - s * dy) / y ** 2
    inside = x ** 2 + y ** 2 < R ** 2
    ang = np.unwrap(np.arctan2(dy, dx))
    total = 0.0
    # sum over maximal runs of consecutive in-ball samples
    idx = np.flatnonzero(inside)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    for run in runs:
        if len(run) > 1:
            total += np.sum(np.abs(np.diff(ang[run])))
    return float(total)


def substitute(text: str, arity: int, Q: np.ndarray, shift=None) -> str:
    """Text of x -> f(Q x + shift) by textual substitution of each variable."""
    names = ["x", "y", "z"][:arity]
    shift = np.zeros(arity) if shift is None else shift
    forms = {}
    for i, name in enumerate(names):
        terms = " + ".join(f"({float(Q[i, j])!r})*{names[j]}" for j in range(arity))
        forms[name] = f"({terms} + ({float(shift[i])!r}))"
    return re.sub(r"\b[xyz]\b", lambda m: forms[m.group(0)], text)


def random_rotation(n: int, rng) -> np.ndarray:
    Q, Rm = np.linalg.qr(rng.normal(size=(n, n)))
    Q = Q * np.sign(np.diag(Rm))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def _sample_points(ref, rng, k):
    pts = []
    while len(pts) < k:
        p = rng.uniform(-2, 2, size=ref.arity)
        if ref.name == "torus" and np.hypot(p[0], p[1]) < 0.2:
            continue
        pts.append(p)
    return np.array(pts)


def ad_fd_agreement(ref, n_points=100, seed=0):
    """Worst relative error (absolute when |true| < 1) of AD against FD."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    f = ref.field
    for p in _sample_points(ref, rng, n_points):
        jet = f.jet(p)
        _, g, H = fd_jet(ref.text, ref.arity, p)
        for ad, ref_v in ((jet.gradient, g), (jet.hessian, H)):
            ad, ref_v = np.ravel(ad), np.ravel(ref_v)
            scale = np.where(np.abs(ref_v) < 1, 1e-2, np.abs(ref_v))  # abs 1e-8 == rel 1e-6 * 1e-2
            worst = max(worst, float(np.max(np.abs(ad - ref_v) / scale)))
    return worst


def ellipsoid_points(k, rng):
    f = parse(ELLIPSOID_TEXT, 3)
    U = rng.normal(size=(k, 3))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return f, U / np.sqrt(f.value(U))[:, None]  # f is 2-homogeneous: f(x) = 1


ELLIPSOID_HESSIAN = np.diag([2.0, 3.0, 4.0])


def grassmannian_mc(x, rng, n_dirs=10_000):
    """2 pi times the mean normal curvature of the ellipsoid over uniform
    tangent directions, from its closed-form gradient and Hessian."""
    g = ELLIPSOID_HESSIAN @ x
    nu = g / np.linalg.norm(g)
    a = np.eye(3)[np.argmin(np.abs(nu))]
    e1 = a - (a @ nu) * nu
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nu, e1)
    theta = (np.arange(n_dirs) + rng.random()) * (2 * np.pi / n_dirs)  # uniform, stratified
    N = np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2
    kn = np.einsum("ka,ab,kb->k", N, ELLIPSOID_HESSIAN, N) / np.linalg.norm(g)
    return 2 * np.pi * kn.mean()
