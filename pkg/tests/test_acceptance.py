"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Inputs come from the bundled configs wherever one exists, so the suite
exercises the same parameters as the command line.
"""

import time
from importlib import resources

import numpy as np
import pytest

from conftest import ACCEPTANCE
from pslambda.benchmarks import example1_flow, example1_system, linear_saddle_map, tier_a_systems
from pslambda.config import build_extension, build_map, build_system, load_config
from pslambda.experiments import homoclinic_setup, stable_traces, window
from pslambda.flow import FlowControls, flow_map, solve
from pslambda.lemma import Box, hausdorff, lambda_experiment, lambda_set_depth, measure_constants, phase_sweep
from pslambda.manifolds import continue_manifold, start_atlas, straightened_chart
from pslambda.poincare import ExtendedSystem, PoincareMap, conjugacy_residual, find_fixed_point
from pslambda.variational import flow_jacobian

DATA = resources.files("pslambda") / "data"


def config(name):
    return load_config(str(DATA / name))


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def example1_branch(y, t):
    if y <= 0:
        return 0 if t <= -y else 1
    return 2 if t >= -y else 3


# -- shared tier-B setup ----------------------------------------------------

@pytest.fixture(scope="module")
def tier_b_lambda():
    cfg = config("tier_b_lambda_verify.json")
    xp = cfg.experiment
    ext = build_extension(cfg, cfg.extension.epsilon[0])
    P = PoincareMap(ext, xp.phase)
    sd = find_fixed_point(P, xp.guess, tol=xp.newton_tol)
    box_V, box_V1 = Box.symmetric(*xp.box_V), Box.symmetric(*xp.box_V1)
    chart = straightened_chart(P, sd, xp.chart_radius)
    consts = measure_constants(P, chart, sd, box_V, box_V1, samples=xp.samples, eta=xp.eta)
    return cfg, ext, P, sd, chart, consts, box_V, box_V1


@pytest.fixture(scope="module")
def tier_b_homoclinic(tier_b_lambda):
    cfg, ext, P, sd, chart, consts, box_V, box_V1 = tier_b_lambda
    conv = cfg.experiment.convergence
    return homoclinic_setup(P, sd, box_V, box_V1, atlas_radius=conv.radius, side=conv.side,
                            unstable_steps=conv.unstable_steps, stable_steps=conv.stable_steps,
                            clearance=conv.clearance, angle_threshold=conv.angle_threshold,
                            q_guess=conv.q_guess, chart=chart, constants=consts)


# -- criteria -------------------------------------------------------------------

def test_criterion_01_example1_oracle():
    ex1 = example1_system()
    start = time.perf_counter()
    err, branches = 0.0, set()
    for x in np.linspace(-1.0, 1.0, 21):
        for y in np.linspace(-1.5, 1.5, 21):
            for T in np.linspace(-2.0, 2.0, 5):
                branches.add(example1_branch(y, T))
                err = max(err, float(np.max(np.abs(flow_map(ex1, [x, y], 0.0, T) - example1_flow(x, y, T)))))
    elapsed = time.perf_counter() - start
    ok = err <= 1e-9 and elapsed < 5.0 and branches == {0, 1, 2, 3}
    report(1, ok, f"max error {err:.2e} (<= 1e-9), {elapsed:.2f} s (< 5 s), branches {sorted(branches)}")
    assert ok


def test_criterion_02_one_sided_derivatives():
    ex1 = example1_system()
    T = 1.0
    base = flow_map(ex1, [0.0, 0.0], 0.0, T)

    def quotient(sign, h):
        return (flow_map(ex1, [0.0, sign * h], 0.0, T) - base) / (sign * h)

    errs = []
    for sign, expected in ((1.0, [0.0, 1.0]), (-1.0, [-1.0, 1.0])):
        h = 1e-2
        rich = [2 * quotient(sign, h / 2 ** (k + 1)) - quotient(sign, h / 2 ** k) for k in range(4)]
        errs.append(float(np.max(np.abs(rich[-1] - expected))))
    ok = max(errs) <= 1e-6
    report(2, ok, f"Richardson errors +y {errs[0]:.2e}, -y {errs[1]:.2e} (<= 1e-6)")
    assert ok


def test_criterion_03_saltation():
    tb = build_system(config("tier_b_poincare.json").system)
    tight = FlowControls(rtol=1e-13, atol=1e-15)
    rng = np.random.default_rng(3)
    # central differences carry an O(h^2) truncation term that dominates near folds at h = 1e-5
    worst, used, h = 0.0, 0, 1e-6
    while used < 200:
        x0 = rng.uniform([-0.2, -0.6], [1.3, 0.6])
        T = float(rng.uniform(0.5, 6.0))
        traj = solve(tb, x0, 0.0, T, tight, keep_dense=False)
        if not traj.completed or not 1 <= traj.n_events <= 4:
            continue
        if min(abs(s(traj.x_end)) for s in tb.surfaces) < 1e-3:
            continue
        try:
            _, J, _ = flow_jacobian(tb, x0, 0.0, T, controls=tight)
            cols = []
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                cols.append((flow_map(tb, x0 + e, 0.0, T, tight) - flow_map(tb, x0 - e, 0.0, T, tight)) / (2 * h))
        except Exception:
            continue  # a perturbed orbit changed its crossing pattern
        fd = np.array(cols).T
        worst = max(worst, float(np.linalg.norm(J - fd) / np.linalg.norm(J)))
        used += 1
    ex1 = example1_system()
    s_err = 0.0
    for x0 in rng.uniform([-1, -2], [1, -0.1], (50, 2)):
        traj = solve(ex1, x0, 0.0, 3.0)
        for ev in traj.events:
            s_err = max(s_err, float(np.max(np.abs(ev.saltation - [[1.0, -1.0], [0.0, 1.0]]))))
        _, J, _ = flow_jacobian(ex1, x0, 0.0, 3.0)
        s_err = max(s_err, float(np.max(np.abs(J - [[1.0, -1.0], [0.0, 1.0]]))))
    ok = worst <= 1e-5 and s_err <= 1e-10
    report(3, ok, f"tier-B FD relative error {worst:.2e} over {used} points (<= 1e-5); "
                  f"Example-1 saltation error {s_err:.1e} (<= 1e-10)")
    assert ok


def test_criterion_04_smooth_split():
    cfg = config("tier_a_manifold.json")
    split, smooth = tier_a_systems(cfg.system.params.c)
    rng = np.random.default_rng(4)
    traj_err = jac_err = map_err = 0.0
    crossings = 0
    for x0 in rng.uniform([-1.3, -0.5], [1.3, 0.5], (40, 2)):
        a = solve(split, x0, 0.0, 6.0)
        b = solve(smooth, x0, 0.0, 6.0)
        crossings += a.n_events
        for t in np.linspace(0.0, 6.0, 13):
            traj_err = max(traj_err, float(np.max(np.abs(a(t) - b(t)))))
        if min(abs(s(a.x_end)) for s in split.surfaces) > 1e-3:
            Ja = flow_jacobian(split, x0, 0.0, 6.0)[1]
            Jb = flow_jacobian(smooth, x0, 0.0, 6.0)[1]
            jac_err = max(jac_err, float(np.max(np.abs(Ja - Jb)) / max(1.0, np.max(np.abs(Jb)))))
    period = cfg.extension.period
    maps = [PoincareMap(ExtendedSystem(s, None, 0.0, period=period), 0.0) for s in (split, smooth)]
    for x0 in rng.uniform([-1.3, -0.5], [1.3, 0.5], (20, 2)):
        map_err = max(map_err, float(np.max(np.abs(maps[0](x0) - maps[1](x0)))))
    atlases = []
    for P in maps:
        sd = find_fixed_point(P, [0.01, 0.01])
        atlases.append(continue_manifold(start_atlas(P, sd, cfg.experiment.branch, cfg.experiment.radius,
                                                     cfg.experiment.side), 2))
    through = int(sum(d.crossed.sum() for d in atlases[0].disks))
    h = hausdorff(atlases[0].polyline(), atlases[1].polyline())
    ok = max(traj_err, jac_err, map_err, h) <= 1e-6 and crossings > 0 and through > 0
    report(4, ok, f"trajectory {traj_err:.1e}, Jacobian {jac_err:.1e}, time-T map {map_err:.1e}, "
                  f"atlas Hausdorff {h:.1e} (all <= 1e-6); {crossings} crossings, {through} atlas nodes past Sigma")
    assert ok


def test_criterion_05_trajectory_properties():
    cfg = config("tier_b_poincare.json")
    ext = build_extension(cfg, 0.05)
    controls = FlowControls()
    rng = np.random.default_rng(5)
    min_gap, completed, through = np.inf, 0, 0
    capped = 0
    for x0 in rng.uniform([-1.2, -0.6], [1.2, 0.6], (500, 2)):
        traj = solve(ext.system, x0, 0.0, 10 * ext.period, controls, keep_dense=False)
        if not traj.completed:
            continue
        completed += 1
        capped += traj.n_events > controls.max_events
        times = [e.t for e in traj.events]
        if len(times) > 1:
            min_gap = min(min_gap, float(np.min(np.diff(times))))
    P = PoincareMap(ext, 0.0, controls)
    inv_err = 0.0
    for x0 in rng.uniform([-1.2, -0.6], [1.2, 0.6], (100, 2)):
        traj = P.trajectory(x0)
        through += traj.n_events > 0
        inv_err = max(inv_err, float(np.linalg.norm(P.inverse(traj.x_end) - x0)))
    ok = min_gap > 1e-6 and capped == 0 and inv_err <= 1e-8 and through > 0 and completed > 0
    report(5, ok, f"{completed}/500 completed, min event gap {min_gap:.2e} (> 1e-6), "
                  f"P^-1 P error {inv_err:.1e} (<= 1e-8) over 100 points, {through} through Sigma")
    assert ok


def test_criterion_06_conjugacy():
    cfg = config("tier_b_conjugacy.json")
    xp = cfg.experiment
    rng = np.random.default_rng(6)
    lo, hi = np.array(xp.box[0]), np.array(xp.box[1])
    start = time.perf_counter()
    worst, failures = 0.0, 0
    for eps in cfg.extension.epsilon:
        ext = build_extension(cfg, eps)
        for t1, t2 in xp.pairs:
            samples = rng.uniform(lo, hi, (xp.samples, 2))
            r = conjugacy_residual(ext, t1, t2, samples)
            worst = max(worst, r.max_residual)
            failures += r.failures
    elapsed = time.perf_counter() - start
    n = len(cfg.extension.epsilon) * len(xp.pairs)
    ok = worst <= 1e-7 and failures == 0 and elapsed < 60.0 and n == 9 and xp.samples == 100
    report(6, ok, f"max residual {worst:.2e} (<= 1e-7) over {n} pairs x {xp.samples} samples, "
                  f"{failures} failures, {elapsed:.1f} s (< 60 s)")
    assert ok


def test_criterion_07_proof_chain(tier_b_lambda):
    cfg, ext, P, sd, chart, consts, box_V, box_V1 = tier_b_lambda
    xp = cfg.experiment
    reports = stable_traces(P, sd, chart, consts, xp.traces, xp.iterates, np.random.default_rng(0))
    failures = [(r.label, c.name, c.n) for r in reports for c in r.failures()]
    names = set().union(*(r.names() for r in reports))
    required = {"one-step recursion", "geometric bound", "threshold existence", "seed condition",
                "mu one-step recursion", "mu preservation", "mu geometric bound", "mu final bound", "stretch"}
    checks = sum(len(r.checks) for r in reports)
    min_len = min(len(r.checks) for r in reports)
    ok = consts.feasible and not failures and required <= names and len(reports) == 100 and xp.iterates >= 20
    report(7, ok, f"{len(reports)} traces x {xp.iterates} iterates, {checks} checks, {len(failures)} failures, "
                  f"missing kinds {sorted(required - names)}, k={consts.k:.3e}, k1={consts.k1:.3e}")
    assert ok, failures[:5]
    assert min_len > 0


def test_criterion_08_lambda_convergence(tier_b_lambda, tier_b_homoclinic):
    cfg, ext, P, sd, chart, consts, box_V, box_V1 = tier_b_lambda
    xp, conv = cfg.experiment, cfg.experiment.convergence
    setup = tier_b_homoclinic
    hit = setup.intersection
    start = time.perf_counter()
    curves = setup.unstable.curves()
    tables = []
    for t in conv.targets:
        D = window(curves[t.curve], t.axis, t.lo, t.hi)
        tables.append(lambda_experiment(P, sd, chart, setup.delta, D, conv.schedule, box_V, eta=xp.eta,
                                        constants=consts, clearance=conv.clearance,
                                        angle_threshold=conv.angle_threshold))
    elapsed = time.perf_counter() - start
    clear = [tb for tb in tables if not tb.target_meets_sigma]
    meeting = [tb for tb in tables if tb.target_meets_sigma]
    c1_first = [tb.first_below("c1", 1e-2) for tb in clear]
    c0_first = [tb.first_below("c0", 1e-2) for tb in meeting]
    depth_ok = all(f is not None and tb.N + f + tb.m <= 25 for f, tb in zip(c1_first, clear))
    mono = all(tb.monotone_past(slack=0.1) for tb in clear)
    decays = all(tb.c1[-1] < 1e-3 * tb.c1[0] for tb in clear) and all(tb.c0[-1] < 1e-3 * tb.c0[0] for tb in meeting)
    ok = (hit.angle >= 1e-3 and hit.clearance >= 1e-4 and clear and meeting and depth_ok and mono and decays
          and all(f is not None for f in c0_first) and elapsed < 600)
    report(8, ok, f"q angle {hit.angle:.3f}, clearance {hit.clearance:.3f}; Sigma-clear C1 below 1e-2 at n={c1_first} "
                  f"(n2={[tb.n2 for tb in clear]}, monotone={mono}); Sigma-meeting C0 below 1e-2 at n={c0_first}; "
                  f"final C1 {[f'{tb.c1[-1]:.1e}' for tb in clear]}; {elapsed:.0f} s (< 600 s)")
    assert ok


def test_criterion_09_phase_sweep(tier_b_lambda, tier_b_homoclinic):
    cfg, ext, P, sd, *_ = tier_b_lambda
    hit = tier_b_homoclinic.intersection
    sweep = phase_sweep(ext, hit.point, P.phase, sd.point, sections=32,
                        angle_threshold=cfg.experiment.convergence.angle_threshold)
    fails = sweep.failures()
    localized = all(f.clearance <= 1e-3 for f in fails)
    ok = sweep.passed >= 30 and localized
    min_angle = min(s.angle for s in sweep.sections if s.transversal)
    report(9, ok, f"{sweep.passed}/32 sections transversal (>= 30), min angle {min_angle:.3f}, "
                  f"failing sections within 1e-3 of Sigma: {localized}")
    assert ok


def test_criterion_10_lambda_set():
    cfg = config("linear_saddle_lambda_set.json")
    xp = cfg.experiment
    F = build_map(cfg.map)
    np.testing.assert_array_equal(F.A, linear_saddle_map().A)
    L = lambda_set_depth(F, F.surfaces, xp.depth, xp.box, xp.resolution, xp.tol)
    nested = all(np.all(L.mask(n) <= L.mask(n + 1)) for n in range(xp.depth))
    dx = L.xs[1] - L.xs[0]
    oracle_err = 0.0
    for n in range(xp.depth + 1):
        cols = L.xs[np.any(L.level == n, axis=1)]
        expected = 2.0 ** -n  # diag(2, 0.5) pulls x = 1 back to x = 2^-n
        assert cols.size, f"depth {n} marks nothing"
        oracle_err = max(oracle_err, float(np.max(np.abs(cols - expected))))
        full = np.all(L.level[np.argmin(np.abs(L.xs - expected))] == n)
        assert full
    ex = config("example1_lambda_set.json")
    system = build_system(ex.system)
    L1 = lambda_set_depth(lambda x: flow_map(system, x, 0.0, ex.experiment.duration), system.surfaces,
                          ex.experiment.depth, ex.experiment.box, ex.experiment.resolution)
    nested1 = all(np.all(L1.mask(n) <= L1.mask(n + 1)) for n in range(ex.experiment.depth))
    ok = nested and nested1 and oracle_err <= dx / 2 + 1e-12 and xp.depth >= 6
    report(10, ok, f"nesting over depths 0-{xp.depth}: {nested and nested1}; preimage lines x = 2^-n "
                   f"within {oracle_err:.1e} (grid half-step {dx / 2:.1e})")
    assert ok
