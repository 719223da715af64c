"""The twelve acceptance criteria, one test each; every test prints a
PASS/FAIL line that is repeated in the terminal summary."""
import time

import numpy as np
import pytest

from levelcurv import app
from levelcurv.curvature import CurvatureTotals, level_totals
from levelcurv.geometry import lk_density
from levelcurv.levelset import extract_level
from levelcurv.oracle import find_projection_criticals, mc_estimate, morse_index_check
from levelcurv.sphimage import degree_check, one_sided_limit, rasterize, strata_areas
from levelcurv.suite import SUITE

from oracles import ad_fd_agreement, ellipsoid_points, grassmannian_mc

TWO_PI, FOUR_PI, EIGHT_PI = 2 * np.pi, 4 * np.pi, 8 * np.pi

# scan setups for every suite function: (t range, n_t, R, h)
SCANS = {
    "circle": ((0.5, 2.0), 16, 2.0, 0.01),
    "ellipse": ((0.5, 2.0), 9, 2.5, 0.02),
    "sphere": ((-1.0, 1.0), 9, 2.0, 0.1),
    "torus": ((0.5, 2.0), 4, 5.0, 0.1),
    "saddle": ((-1.0, 1.0), 9, 3.0, 0.1),
    "hyperbola": ((-1.0, 1.0), 9, 10.0, 0.05),
}
# polynomial suite for the stability criterion; the worked example runs at R = 40 here
STABILITY = dict(SCANS, zfold=((-0.2, 0.2), 21, 40.0, 0.05))
STABILITY.pop("torus")

COMPUTED: list = []   # every CurvatureTotals produced here, for the identity criterion


def _record(totals):
    COMPUTED.extend(t for t in totals if t is not None and np.isfinite(t.k_abs))


@pytest.fixture(scope="module")
def zfold_run():
    start = time.perf_counter()
    prof = app.scan(SUITE["zfold"].field, (-0.2, 0.2), 41, 80.0, 0.05)
    report = app.detect_jumps(prof)
    elapsed = time.perf_counter() - start
    _record(prof.samples.values())
    return prof, report, elapsed


@pytest.fixture(scope="module")
def suite_runs():
    runs = {}
    for name, (tr, n_t, R, h) in SCANS.items():
        prof = app.scan(SUITE[name].field, tr, n_t, R, h)
        runs[name] = (prof, app.detect_jumps(prof))
        _record(prof.samples.values())
    return runs


def test_criterion_01_zfold_example(zfold_run, acceptance_report):
    prof, report, elapsed = zfold_run
    jumps = report.jumps
    ok = len(jumps) == 1
    detail = f"{len(jumps)} jump(s), {elapsed:.0f} s"
    if ok:
        j = jumps[0]
        ok = (abs(j.c) <= 1e-9
              and 0.9 * TWO_PI <= j.left_limit <= 1.1 * TWO_PI and 0.9 * TWO_PI <= j.right_limit <= 1.1 * TWO_PI
              and j.value_at_c is not None and j.value_at_c < 0.2
              and abs(j.k_left) <= 0.3 and abs(j.k_right) <= 0.3 and j.k_continuous
              and elapsed < 300)
        detail = (f"c={j.c:g} limits=({j.left_limit:.4f}, {j.right_limit:.4f}) |K|(0)={j.value_at_c:.3g} "
                  f"K limits=({j.k_left:.3g}, {j.k_right:.3g}) kind={j.kind} runtime={elapsed:.0f}s")
    assert acceptance_report(1, ok, detail), detail


def test_criterion_02_gauss_bonnet_constants(acceptance_report):
    rows = []
    ok = True
    for name, expected in (("circle", TWO_PI), ("sphere", FOUR_PI)):
        ref = SUITE[name]
        start = time.perf_counter()
        tt = level_totals(ref.field, ref.t, ref.R, ref.h)
        dt = time.perf_counter() - start
        _record([tt])
        good = (abs(tt.k_total / expected - 1) <= 0.01 and abs(tt.k_abs / expected - 1) <= 0.01 and dt < 10)
        ok &= good
        rows.append(f"{name}: K={tt.k_total:.5f} |K|={tt.k_abs:.5f} ({dt:.1f}s)")
    detail = "; ".join(rows)
    assert acceptance_report(2, ok, detail), detail


def test_criterion_03_torus(acceptance_report):
    ref = SUITE["torus"]
    mesh = extract_level(ref.field, 1.0, 5.0, ref.h)
    from levelcurv.curvature import totals
    tt = totals(mesh)
    _record([tt])
    strata = strata_areas(rasterize(mesh, ref.field))
    ok = (abs(tt.k_total) <= 0.16 and abs(tt.k_abs / EIGHT_PI - 1) <= 0.02
          and set(k for k, a in strata.items() if a > 0.02 * FOUR_PI) == {2}
          and abs(strata.get(2, 0) / FOUR_PI - 1) <= 0.02)
    detail = f"K={tt.k_total:.4f} |K|={tt.k_abs:.4f} (8pi={EIGHT_PI:.4f}) strata={ {k: round(a, 4) for k, a in strata.items()} }"
    assert acceptance_report(3, ok, detail), detail


DEGREE_LEVELS = [("circle", 1.0, 2.0, 0.01), ("ellipse", 1.0, 2.0, 0.01), ("sphere", 1.0, 2.0, 0.05),
                 ("torus", 1.0, 5.0, 0.05), ("saddle", 0.0, 3.0, 0.05), ("hyperbola", 1.0, 20.0, 0.05),
                 ("zfold", 0.1, 80.0, 0.05)]


def test_criterion_04_degree_identity(acceptance_report):
    agree = total = 0
    rng = np.random.default_rng(2024)
    for name, t, R, h in DEGREE_LEVELS:
        f = SUITE[name].field
        mesh = extract_level(f, t, R, h)
        stats = degree_check(rasterize(mesh, f), mesh, f, 25, rng)
        agree += stats.n_agree
        total += stats.n_samples
    rate = agree / total
    ok = total >= 100 and rate >= 0.95
    detail = f"{agree}/{total} unflagged cells agree ({rate:.1%})"
    assert acceptance_report(4, ok, detail), detail


def test_criterion_05_morse_index_agreement(acceptance_report):
    rng = np.random.default_rng(99)
    checked = agree = 0
    for name, t, R, h, n_dirs in (("circle", 1.0, 2.0, 0.01, 15), ("sphere", 1.0, 2.0, 0.05, 15),
                                  ("torus", 1.0, 5.0, 0.05, 15), ("saddle", 0.0, 3.0, 0.05, 25)):
        f = SUITE[name].field
        mesh = extract_level(f, t, R, h)
        for _ in range(n_dirs):
            u = rng.normal(size=f.arity)
            for c in find_projection_criticals(mesh, f, u / np.linalg.norm(u)):
                if not c.nondegenerate:
                    continue
                checked += 1
                agree += morse_index_check(f, c, t)
    ok = checked >= 100 and agree == checked
    detail = f"{agree}/{checked} nondegenerate projection criticals agree"
    assert acceptance_report(5, ok, detail), detail


def test_criterion_06_oracle_equivalence(acceptance_report):
    rows, ok = [], True
    for name, ref in SUITE.items():
        mesh = extract_level(ref.field, ref.t, ref.R, ref.h)
        from levelcurv.curvature import totals
        tt = totals(mesh)
        _record([tt])
        est = mc_estimate(ref.field, ref.t, ref.R, 500, mesh=mesh)
        # 5% is taken relative to the |K| scale of the level for both K and |K|
        tol_abs = max(0.05 * tt.k_abs, 3 * est.stderr)
        tol_k = max(0.05 * tt.k_abs, 3 * est.stderr_K)
        good = abs(est.absK_est - tt.k_abs) <= tol_abs and abs(est.K_est - tt.k_total) <= tol_k
        ok &= good
        rows.append(f"{name}: |K| mc={est.absK_est:.3f}±{est.stderr:.3f} mesh={tt.k_abs:.3f}, "
                    f"K mc={est.K_est:.3f} mesh={tt.k_total:.3f}{'' if good else ' FAIL'}")
    detail = "; ".join(rows)
    assert acceptance_report(6, ok, detail), detail


def test_criterion_08_limit_bound_inequality(zfold_run, suite_runs, acceptance_report):
    rows, bad = [], 0
    runs = dict(suite_runs, zfold=zfold_run[:2])
    for name, (prof, report) in runs.items():
        v = report.limit_bound_violations()
        bad += len(v)
        rows.append(f"{name}: {len(report.limit_bound) - len(v)}/{len(report.limit_bound)}")
    ok = bad == 0
    detail = "values within bound: " + ", ".join(rows)
    assert acceptance_report(8, ok, detail), detail


def _jump_locations(name, n_t, h):
    tr, _, R, _ = STABILITY[name]
    prof = app.scan(SUITE[name].field, tr, n_t, R, h)
    _record(prof.samples.values())
    return [j.c for j in app.detect_jumps(prof).jumps]


def test_criterion_09_jump_list_stability(acceptance_report):
    rows, ok = [], True
    for name, (tr, n_t, R, h) in STABILITY.items():
        coarse = _jump_locations(name, n_t, h)
        fine = _jump_locations(name, 2 * n_t, h / 2)
        cell = (tr[1] - tr[0]) / (2 * n_t - 1)
        good = len(coarse) == len(fine) and all(abs(a - b) <= cell for a, b in zip(coarse, fine))
        ok &= good
        rows.append(f"{name}: {[round(c, 4) for c in coarse]} -> {[round(c, 4) for c in fine]}")
    detail = "; ".join(rows)
    assert acceptance_report(9, ok, detail), detail


def _grow_one_ring(part, mask):
    grown = mask.copy()
    idx = np.flatnonzero(mask)
    if len(idx):
        for lst in part.tree.query_ball_point(part.centers[idx], 1.01 * part.diameter):
            grown[lst] = True
    return grown


def test_criterion_10_limits(acceptance_report):
    contained = []
    cases = [("ellipse", c, 3.0, 0.01, None) for c in (0.6, 0.9, 1.2, 1.5)] + [("torus", 1.0, 5.0, 0.1, 2000)]
    for name, c, R, h, m in cases:
        f = SUITE[name].field
        u_c = rasterize(extract_level(f, c, R, h), f, m=m)
        both = np.ones(u_c.partition.m, dtype=bool)
        for side in (-1, 1):
            both &= one_sided_limit(f, c, side, R, h, m=m, delta0=0.05, J=4).limit
        contained.append(not (u_c.covered & ~_grow_one_ring(u_c.partition, both)).any())
    f = SUITE["circle"].field
    le = one_sided_limit(f, 1.0, 1, 2.0, 0.01, J=8)
    gaps = np.abs(le.areas() - le.area)
    continuity = gaps[-1] < le.partition.cell_area
    ok = all(contained) and continuity
    detail = (f"containment {sum(contained)}/{len(contained)} regular values; "
              f"circle c=1 area gaps {np.array2string(gaps[-4:], precision=3)} (cell {le.partition.cell_area:.4f})")
    assert acceptance_report(10, ok, detail), detail


def test_criterion_11_lk_densities(acceptance_report):
    rows, ok = [], True
    f = SUITE["sphere"].field
    for r in (0.5, 1.0, 2.0):
        tt = level_totals(f, r * r, 4 * r, r / 20)
        _record([tt])
        expected = 8 * np.pi ** 2 * r
        good = abs(tt.L(1) / expected - 1) <= 0.02
        ok &= good
        rows.append(f"r={r}: {tt.L(1):.4f} vs {expected:.4f}")
    rng = np.random.default_rng(11)
    field, X = ellipsoid_points(100, rng)
    worst = max(abs(grassmannian_mc(x, rng) / lk_density(field, x, 1) - 1) for x in X)
    ok &= worst < 0.01
    detail = "; ".join(rows) + f"; Grassmannian MC worst rel. error {worst:.2e} at 100 points"
    assert acceptance_report(11, ok, detail), detail


def test_criterion_12_ad_correctness(acceptance_report):
    worst = {name: ad_fd_agreement(ref, n_points=100, seed=12) for name, ref in SUITE.items()}
    ok = max(worst.values()) < 1e-6
    detail = "worst relative error " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert acceptance_report(12, ok, detail), detail


def test_criterion_07_lambda_identities(acceptance_report):
    """Runs last in this module so it sees every level computed above."""
    bad = 0
    for tt in COMPUTED:
        scale = max(tt.k_abs, 1e-300)
        signs = (-1.0) ** np.arange(len(tt.k_lambda))
        if (abs(tt.k_abs_lambda.sum() - tt.k_abs) > 1e-9 * scale
                or np.any(np.abs(tt.k_lambda - signs * tt.k_abs_lambda) > 1e-9 * scale)):
            bad += 1
    ok = len(COMPUTED) > 0 and bad == 0
    detail = f"{len(COMPUTED) - bad}/{len(COMPUTED)} computed levels satisfy both identities"
    assert acceptance_report(7, ok, detail), detail
