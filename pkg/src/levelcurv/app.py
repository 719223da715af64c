"""Scans over t, discontinuity detection for t -> |K|(t), and report output."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .curvature import CurvatureTotals, empty_totals, level_totals
from .expr import ScalarField
from .levelset import extract_level, find_critical_points, grid_axis
from .sphimage import escape_diagnostic

log = logging.getLogger(__name__)

JUMP_FLOOR = 0.02        # jump threshold floor, as a fraction of max |K|
K_CONT_TOL = 0.04        # K-continuity tolerance, fraction of max |K|
LIMIT_BOUND_TOL = 0.02
CRITICAL_EPS = 1e-9


@dataclass
class CurvatureProfile:
    field: ScalarField | None
    R: float
    h: float
    grid: np.ndarray
    totals: list
    critical_values_detected: list
    errors: dict = dc_field(default_factory=dict)
    samples: dict = dc_field(default_factory=dict)   # every evaluated t -> totals

    @property
    def arity(self) -> int:
        return self.field.arity if self.field is not None else self.totals[0].arity

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(tt, name) for tt in self.totals], dtype=float)

    @property
    def abs_k(self) -> np.ndarray:
        return self.series("k_abs")

    @property
    def k(self) -> np.ndarray:
        return self.series("k_total")

    def evaluate(self, t: float) -> CurvatureTotals | None:
        t = float(t)
        if t not in self.samples:
            try:
                self.samples[t] = level_totals(self.field, t, self.R, self.h)
            except (ArithmeticError, ValueError) as exc:
                log.warning("level %r failed: %s", t, exc)
                self.errors[t] = str(exc)
                self.samples[t] = None
        return self.samples[t]

    def near_critical(self, t: float, eps: float = CRITICAL_EPS) -> bool:
        return any(abs(t - c) <= eps for c in self.critical_values_detected)


def scan(field: ScalarField, t_range, n_t: int, R: float, h: float,
         detect_critical: bool = True) -> CurvatureProfile:
    """Totals at ``n_t`` equally spaced levels of ``t_range``."""
    if n_t < 2:
        raise ValueError("n_t must be at least 2")
    a, b = map(float, t_range)
    if not b > a:
        raise ValueError("t range must be increasing")
    grid = np.linspace(a, b, n_t)
    crit = []
    if detect_critical:
        _, values = find_critical_points(field, R)
        span = b - a
        crit = sorted({float(v) for v in values if a - span <= v <= b + span})
    prof = CurvatureProfile(field, float(R), float(h), grid, [], crit)
    for t in grid:
        tt = prof.evaluate(t)
        prof.totals.append(tt if tt is not None else _nan_totals(t, R, field.arity))
    singular = [float(t) for t, tt in prof.samples.items() if tt is not None and tt.singular_vertices]
    prof.critical_values_detected = sorted(set(crit) | set(singular))
    return prof


def _nan_totals(t, R, n) -> CurvatureTotals:
    e = empty_totals(t, R, n)
    nan = float("nan")
    return CurvatureTotals(e.t, e.R, n, nan, nan, e.k_lambda * nan, e.k_abs_lambda * nan,
                           e.lk * nan, 0, nan, nan)


# --------------------------------------------------------------------------
# jumps

@dataclass
class Jump:
    c: float
    left_limit: float
    right_limit: float
    value_at_c: float | None
    kind: str
    k_continuous: bool
    k_left: float
    k_right: float
    k_at_c: float
    shape: str                 # 'step', 'valley' or 'point' (isolated value at c)
    span: tuple                # transition interval(s) in t
    resolution: float          # final refined cell width

    def as_dict(self) -> dict:
        return {"c": self.c, "left_limit": self.left_limit, "right_limit": self.right_limit,
                "value_at_c": self.value_at_c, "kind": self.kind, "k_continuous": self.k_continuous,
                "k_left": self.k_left, "k_right": self.k_right, "k_at_c": self.k_at_c,
                "shape": self.shape, "span": list(self.span), "resolution": self.resolution}


@dataclass
class JumpReport:
    jumps: list
    threshold: float
    limit_bound: list = dc_field(default_factory=list)

    @property
    def k_continuous_at(self) -> list:
        return [j.k_continuous for j in self.jumps]

    def limit_bound_violations(self) -> list:
        return [row for row in self.limit_bound if not row["ok"]]

    def as_dict(self) -> dict:
        return {"threshold": self.threshold, "jumps": [j.as_dict() for j in self.jumps],
                "limit_bound_violations": self.limit_bound_violations()}


def jump_threshold(abs_k: np.ndarray) -> float:
    """5x the median successive difference, floored at 2% of max |K|."""
    y = abs_k[np.isfinite(abs_k)]
    if len(y) < 2:
        return float("inf")
    d = np.abs(np.diff(y))
    return float(max(5 * np.median(d), JUMP_FLOOR * np.max(np.abs(y)), 1e-12))


def _sorted_samples(prof: CurvatureProfile, name: str):
    ts = np.array(sorted(t for t, v in prof.samples.items() if v is not None))
    ys = np.array([getattr(prof.samples[t], name) for t in ts])
    return ts, ys


def _extrapolate(ts, ys, c, spacing, tol):
    """One-sided limit at c from samples ordered by distance to c."""
    if len(ts) == 0:
        return float("nan")
    nearest = float(ys[0])
    if abs(ts[0] - c) > 2 * spacing or len(ts) < 2:
        return nearest
    for k in (3, 2):
        if len(ts) < k:
            continue
        x, y = ts[:k], ys[:k]
        est = 0.0
        for i in range(k):
            w = 1.0
            for j in range(k):
                if j != i:
                    w *= (c - x[j]) / (x[i] - x[j])
            est += w * y[i]
        if abs(est - nearest) <= tol:
            return float(est)
    return nearest


def _side_samples(prof, name, c, side, lo, hi):
    """Samples strictly on one side of the transition [lo, hi], nearest first."""
    ts, ys = _sorted_samples(prof, name)
    keep = np.array([not prof.near_critical(t) for t in ts], dtype=bool) if len(ts) else ts.astype(bool)
    if side < 0:
        sel = (ts <= lo) & keep
        order = np.argsort(-ts[sel])
    else:
        sel = (ts >= hi) & keep
        order = np.argsort(ts[sel])
    return ts[sel][order], ys[sel][order]


def _refine_step(prof: CurvatureProfile, lo: float, hi: float, budget: int):
    for _ in range(budget):
        ts, ys = _sorted_samples(prof, "k_abs")
        sel = (ts >= lo) & (ts <= hi)
        ts, ys = ts[sel], ys[sel]
        j = int(np.argmax(np.abs(np.diff(ys))))
        a, b = ts[j], ts[j + 1]
        if b - a < 1e-12 * (1 + abs(a)):
            break
        prof.evaluate(0.5 * (a + b))
    ts, ys = _sorted_samples(prof, "k_abs")
    sel = (ts >= lo) & (ts <= hi)
    ts, ys = ts[sel], ys[sel]
    j = int(np.argmax(np.abs(np.diff(ys))))
    return float(ts[j]), float(ts[j + 1])


def _attained_range(field: ScalarField, R: float):
    n = field.arity
    axis = grid_axis(R, R / 40)
    pts = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    pts = pts[np.linalg.norm(pts, axis=1) < R]
    v = field.value(pts)
    v = v[np.isfinite(v)]
    return float(v.min()), float(v.max())


def _events(grid, y, thr):
    """Group flagged cells into steps and valleys."""
    flagged = np.abs(np.diff(y)) > thr
    clusters = []
    i = 0
    while i < len(flagged):
        if flagged[i]:
            j = i
            while j + 1 < len(flagged) and flagged[j + 1]:
                j += 1
            clusters.append((i, j + 1))    # grid index range of the transition
            i = j + 1
        else:
            i += 1
    if not clusters:
        return []
    # plateaus between clusters
    bounds = [0] + [x for c in clusters for x in c] + [len(grid) - 1]
    plateaus = [(bounds[2 * k], bounds[2 * k + 1]) for k in range(len(clusters) + 1)]
    level = [float(np.median(y[a:b + 1])) for a, b in plateaus]
    events = []
    used = set()
    for p in range(1, len(plateaus) - 1):
        if not (level[p] < level[p - 1] - thr and level[p] < level[p + 1] - thr):
            continue
        a = p - 1
        while a - 1 >= 0 and level[a - 1] > level[a] + thr:
            a -= 1
        b = p + 1
        while b + 1 < len(plateaus) and level[b + 1] > level[b] + thr:
            b += 1
        cl = list(range(a, b))   # clusters between plateaus a and b
        if used.intersection(cl):
            continue
        used.update(cl)
        events.append(("valley", plateaus[p], clusters[a][0], clusters[b - 1][1], plateaus[a], plateaus[b]))
    for k, cl in enumerate(clusters):
        if k not in used:
            events.append(("step", None, cl[0], cl[1], None, None))
    events.sort(key=lambda e: e[2])
    return events


def detect_jumps(profile: CurvatureProfile, refine_budget: int = 6, escape: bool = True,
                 threshold: float | None = None) -> JumpReport:
    """Locate discontinuities of t -> |K|(t) on the scanned grid and classify them."""
    grid = profile.grid
    y = profile.abs_k
    thr = threshold if threshold is not None else jump_threshold(y)
    scale = float(np.nanmax(np.abs(y))) if np.isfinite(y).any() else 0.0
    spacing = float(grid[1] - grid[0])
    tol_lim = max(thr, 0.05 * scale)
    y = np.where(np.isfinite(y), y, 0.0)
    jumps = []
    f_lo, f_hi = _attained_range(profile.field, profile.R) if profile.field is not None else (-np.inf, np.inf)
    if profile.critical_values_detected:
        f_lo = min(f_lo, min(profile.critical_values_detected))
        f_hi = max(f_hi, max(profile.critical_values_detected))
    for shape, bottom, g0, g1, _, _ in _events(grid, y, thr):
        if shape == "valley":
            a, b = bottom
            ys = y[a:b + 1]
            cand = np.flatnonzero(ys <= ys.min() + 0.1 * thr) + a
            mid = 0.5 * (grid[a] + grid[b])
            ci = cand[np.argmin(np.abs(grid[cand] - mid))]
            c = float(grid[ci])
            lo, hi = float(grid[g0]), float(grid[g1])
            resolution = spacing
            span = (lo, hi)
        else:
            lo, hi = _refine_step(profile, float(grid[g0]), float(grid[g1]), refine_budget)
            c = 0.5 * (lo + hi)
            resolution = hi - lo
            for cv in profile.critical_values_detected:
                if lo - CRITICAL_EPS <= cv <= hi + CRITICAL_EPS:
                    c = float(cv)
                    break
            span = (lo, hi)
        if not (f_lo <= c <= f_hi):
            continue
        tc = profile.evaluate(c)
        value = None if tc is None else float(tc.k_abs)
        k_c = float("nan") if tc is None else float(tc.k_total)
        side_lo, side_hi = (lo, hi) if shape == "step" else (float(grid[g0]), float(grid[g1]))
        lims = {}
        for name in ("k_abs", "k_total"):
            for side, edge in ((-1, side_lo), (1, side_hi)):
                ts, vs = _side_samples(profile, name, c, side, side_lo, side_hi)
                lims[name, side] = _extrapolate(ts, vs, c, spacing if shape == "valley" else resolution, tol_lim)
        k_tol = K_CONT_TOL * scale
        k_cont = (abs(lims["k_total", -1] - k_c) <= k_tol and abs(lims["k_total", 1] - k_c) <= k_tol)
        kind = "unresolved"
        if any(side_lo - CRITICAL_EPS <= cv <= side_hi + CRITICAL_EPS for cv in profile.critical_values_detected):
            kind = "critical-value"
        elif escape and profile.field is not None and _escapes(profile, c, side_lo, side_hi):
            kind = "regular-bifurcation"
        jumps.append(Jump(c, lims["k_abs", -1], lims["k_abs", 1], value, kind, bool(k_cont),
                          lims["k_total", -1], lims["k_total", 1], k_c, shape, span, resolution))
    # critical values the grid may straddle: compare |K|(c) with both sides
    for cv in profile.critical_values_detected:
        if not (grid[0] <= cv <= grid[-1] and f_lo <= cv <= f_hi):
            continue
        if any(j.span[0] - spacing <= cv <= j.span[1] + spacing for j in jumps):
            continue
        tc = profile.evaluate(cv)
        if tc is None:
            continue
        lims = {}
        for name in ("k_abs", "k_total"):
            for side in (-1, 1):
                ts, vs = _side_samples(profile, name, cv, side, cv, cv)
                lims[name, side] = _extrapolate(ts, vs, cv, spacing, tol_lim)
        left, right = lims["k_abs", -1], lims["k_abs", 1]
        if not (abs(tc.k_abs - left) > thr or abs(tc.k_abs - right) > thr):
            continue
        k_tol = K_CONT_TOL * scale
        k_cont = abs(lims["k_total", -1] - tc.k_total) <= k_tol and abs(lims["k_total", 1] - tc.k_total) <= k_tol
        shape = "step" if abs(left - right) > thr else "point"
        jumps.append(Jump(float(cv), left, right, float(tc.k_abs), "critical-value", bool(k_cont),
                          lims["k_total", -1], lims["k_total", 1], float(tc.k_total), shape,
                          (float(cv), float(cv)), spacing))
    jumps.sort(key=lambda j: j.c)
    report = JumpReport(jumps, thr)
    report.limit_bound = limit_bound_check(profile, report)
    return report


def _escapes(profile: CurvatureProfile, c: float, lo: float, hi: float, n_dirs: int = 3) -> bool:
    """Look for a component of {nu_f = u} confined to one side of c that leaves B_R."""
    field = profile.field
    for t_side in (lo, hi):
        if t_side == c:
            continue
        mesh = extract_level(field, t_side, profile.R, profile.h)
        if mesh.empty:
            continue
        pc = mesh.per_vertex
        good = np.flatnonzero(~pc.degenerate)
        if not len(good):
            continue
        order = good[np.argsort(-np.abs(pc.gauss[good]))]
        dirs = []
        for i in order:
            u = pc.normal[i]
            if all(np.linalg.norm(u - v) > 0.3 for v in dirs):
                dirs.append(u)
            if len(dirs) >= n_dirs:
                break
        eps = abs(t_side - c)
        for u in dirs:
            try:
                comps = escape_diagnostic(field, c, u, eps, profile.R, h=profile.h)
            except (ArithmeticError, ValueError):
                continue
            if any(comp.one_sided_escape for comp in comps):
                return True
    return False


def limit_bound_check(profile: CurvatureProfile, report: JumpReport | None = None,
                      tol: float = LIMIT_BOUND_TOL, probe_depth: int = 5) -> list[dict]:
    """|K|(t) <= min(one-sided limits) + tol * max|K| at every scanned t.

    One-sided limits are read off the neighbouring grid value, or from a direct
    sample at t -+ dt 2^-probe_depth when the neighbouring cell holds a jump.
    """
    grid = profile.grid
    y = profile.abs_k
    thr = report.threshold if report is not None else jump_threshold(y)
    scale = float(np.nanmax(np.abs(y))) if np.isfinite(y).any() else 0.0
    dt = float(grid[1] - grid[0])
    rows = []
    for i, t in enumerate(grid):
        if not np.isfinite(y[i]):
            continue
        lims = []
        for side, j in ((-1, i - 1), (1, i + 1)):
            if not 0 <= j < len(grid):
                continue
            if np.isfinite(y[j]) and abs(y[j] - y[i]) <= thr:
                lims.append(float(y[j]))
                continue
            probe = profile.evaluate(t + side * dt * 2.0 ** -probe_depth)
            if probe is not None:
                lims.append(float(probe.k_abs))
        bound = min(lims) if lims else float("inf")
        rows.append({"t": float(t), "value": float(y[i]), "bound": bound,
                     "ok": bool(y[i] <= bound + tol * scale)})
    return rows


# --------------------------------------------------------------------------
# output

def _num(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(profile: CurvatureProfile, path) -> None:
    header = CurvatureTotals.header(profile.arity)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for tt in profile.totals:
            fh.write(",".join(_num(v) for v in tt.row()) + "\n")


def report_dict(profile: CurvatureProfile, report: JumpReport | None) -> dict:
    out = {"function": str(profile.field) if profile.field is not None else None,
           "arity": profile.arity, "R": profile.R, "h": profile.h,
           "grid": [float(t) for t in profile.grid],
           "critical_values_detected": list(profile.critical_values_detected),
           "errors": {repr(k): v for k, v in sorted(profile.errors.items())}}
    if report is not None:
        out.update(report.as_dict())
    return out


def write_svg(profile: CurvatureProfile, report: JumpReport | None, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "levelcurv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        t = profile.grid
        ax.plot(t, profile.abs_k, label="|K|", color="k")
        ax.plot(t, profile.k, label="K", color="tab:blue")
        lam = np.array([tt.k_abs_lambda for tt in profile.totals])
        for i in range(lam.shape[1]):
            ax.plot(t, lam[:, i], ls="--", lw=0.8, label=f"|K|(λ={i})")
        if report is not None:
            for i, j in enumerate(report.jumps):
                ax.axvline(j.c, color="tab:red", lw=1, gid=f"jump-{i}")
        ax.set_xlabel("t")
        ax.set_ylabel("curvature")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit(profile: CurvatureProfile, report: JumpReport | None, out_dir, formats=("csv", "json", "svg"),
         stem: str = "profile") -> list[Path]:
    """Write CSV/JSON/SVG outputs; returns the written paths."""
    if profile is None or len(profile.grid) == 0 or len(profile.totals) == 0:
        raise ValueError("empty profile")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        try:
            if fmt == "csv":
                write_csv(profile, path)
            elif fmt == "json":
                with open(path, "w") as fh:
                    json.dump(_clean(report_dict(profile, report)), fh, indent=2, sort_keys=True)
                    fh.write("\n")
            elif fmt == "svg":
                write_svg(profile, report, path)
            else:
                raise ValueError(f"unknown format {fmt!r}")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def _clean(o):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple, np.ndarray)):
        return [_clean(v) for v in o]
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o
