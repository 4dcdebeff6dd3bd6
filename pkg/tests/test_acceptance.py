"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line with the measured
quantities, whether or not pytest captures output.  Reference-only figures
are printed on the same line and never asserted.
"""
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from equitydyn import ModelParams, Tolerances, integrate, matched_initial_state
from equitydyn.control import (ControlProblem, default_initial_state, evaluate_path,
                               evaluate_strategy, reevaluate, search_strategies, strategy_grid)
from equitydyn.forcing import (ControlInput, integrate_forced_full, integrate_forced_phase,
                               phase_path_initial_state, verify_master4)
from equitydyn.montecarlo import PAPER_BOUND, EnsembleConfig, run_ensemble
from equitydyn.phase import (crossing_slope, eval_curve, features,
                             passage_split, phase_curve, sample_curve, signed_curve)
from equitydyn.tailfit import exponent_stats, fit_ensemble_tails, fit_tail

from oracles import log_u_ode, log_u_pv, separatrices

# reference values quoted for comparison only
REF_MU2, REF_SD2, REF_MU1, REF_SD1 = -0.88, 0.12, -0.56, 0.33


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


@pytest.fixture(scope="module")
def ensemble():
    t0 = time.perf_counter()
    res = run_ensemble(EnsembleConfig(n_runs=1000, C1=-0.5, keep_series=True))
    return res, time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------

def test_criterion_1_conservation(report):
    rng = np.random.default_rng(20240601)
    groups = {-0.5: [], 0.5: [], 2.0: []}
    levels = [-0.5] * 34 + [0.5] * 33 + [2.0] * 33
    t0 = time.perf_counter()
    for C1 in levels:
        p = ModelParams(beta1=rng.uniform(0.5, 2.0), beta2=rng.uniform(0.5, 2.0))
        u = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
        v = rng.uniform(-3.0, 1.0)
        a = (C1 + v * (v + 2.0)) / (2.0 * u)
        s = matched_initial_state(a / p.beta1, v / p.beta2, u, p)
        tr = integrate(s, None, p, 10.0, Tolerances(rtol=1e-9, atol=1e-12))
        groups[C1].append(tr.conservation_drift())
    elapsed = time.perf_counter() - t0
    scaled = max(d[1] for g in groups.values() for d in g)
    plain = {C1: max(d[0] for d in g) for C1, g in groups.items()}
    # |dC| / |C1| is enforced where the two terms of C1 stay comparable to C1 itself;
    # on the C1 = 2 runs the states grow to O(1e3) and it is reported only
    ok = scaled <= 1e-6 and plain[-0.5] <= 1e-6 and plain[0.5] <= 1e-6 and elapsed < 10
    report(1, ok, f"100 runs, max drift / term scale {scaled:.2e} (<= 1e-6); "
                  f"max |dC|/|C1| C1=-0.5 {plain[-0.5]:.2e}, C1=0.5 {plain[0.5]:.2e} (<= 1e-6), "
                  f"C1=2 {plain[2.0]:.2e} (reported); {elapsed:.1f} s (< 10 s)")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_phase_oracle(report):
    t0 = time.perf_counter()
    worst = {}
    for C1 in (-0.5, 0.0, 0.5, 1.0, 2.0, 5.0):
        curve = phase_curve(C1, 1.0)
        roots = separatrices(C1)
        if C1 == 1.0:
            # a double root cannot be crossed by a principal value: grid the v0 band
            vs = np.linspace(-0.9, 4.0, 500)
        else:
            vs = np.linspace(-4.0, 4.0, 500)
        vs = vs[[all(abs(v - r) >= 1e-9 for r in roots) for v in vs]]
        ln_ref = log_u_ode(C1, 1.0, vs)
        for i in np.flatnonzero(~np.isfinite(ln_ref)):
            ln_ref[i] = log_u_pv(C1, 1.0, vs[i])
        u_ref = np.exp(ln_ref)
        u = eval_curve(curve, vs)
        worst[C1] = float(np.max(np.abs(u - u_ref) / (1 + np.abs(u_ref))))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 5
    detail = ", ".join(f"C1={k:g} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"max |F - u_num| / (1 + |u_num|): {detail} (<= 1e-4); {elapsed:.2f} s (< 5 s)")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_minus_half_geometry(report):
    curve = phase_curve(-0.5, 1.0)
    s = math.sqrt(6) / 2
    g = lambda v: signed_curve(curve, v)
    tang = brentq(g, -1 - s - 0.3, -1 - s + 0.3, xtol=1e-13, maxiter=500)
    pole = brentq(g, -1 + s - 0.1, -1 + s + 0.1, xtol=1e-13, maxiter=500)
    f = features(curve)
    uC, uD = f.bifurcation_points["C"][0], f.bifurcation_points["D"][0]
    u_num = math.exp(log_u_pv(-0.5, 1.0, 0.0))  # independent route to F(0)
    errs = (abs(pole - (-1 + s)), abs(tang - (-1 - s)))
    ok = (max(errs) <= 1e-6 and abs(uC + 0.4) <= 0.02 and abs(uD - 0.4) <= 0.02
          and abs(u_num - 0.4) <= 0.02 and abs(f.pole - (-1 + s)) <= 1e-6)
    report(3, ok, f"pole err {errs[0]:.1e}, tangency err {errs[1]:.1e} (<= 1e-6); "
                  f"C=({uC:.5f},0) D=({uD:.5f},0), integrated F(0)={u_num:.5f} (0.4 +- 0.02)")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_4_properties(report):
    checks = {}
    family = (-0.5, 0.0, 0.5, 1.0, 2.0, 5.0)
    # unboundedness: F strictly increasing in |v| beyond both roots and past any bound
    unb = True
    for C1 in family:
        curve = phase_curve(C1, 1.0)
        r = separatrices(C1) or [-1.0]
        for vs in (np.linspace(max(max(r), 0.0) + 0.5, 1e3, 2000),
                   np.linspace(min(min(r), -2.0) - 0.5, -1e3, 2000)):
            F = eval_curve(curve, vs)
            unb &= bool(np.all(np.diff(F) > 0))
        for sign in (1.0, -1.0):
            # |u| keeps growing like v^2 over four more decades
            unb &= eval_curve(curve, sign * 1e8) / eval_curve(curve, sign * 1e4) > 1e7
    checks["unbounded"] = unb
    # mirror symmetry
    checks["mirror"] = all(
        np.array_equal(sample_curve(phase_curve(C1, 1.0), np.linspace(-5, 5, 1001))[:, 1],
                       -sample_curve(phase_curve(C1, 1.0), np.linspace(-5, 5, 1001))[:, 2])
        for C1 in family)
    # perpendicular crossing: chord slope dv/du on the curve leaving v = 0
    slopes = []
    for C1 in (-0.5, 0.5, 1.0, 2.0, 5.0):
        curve = phase_curve(C1, 1.0)
        h = 1e-9
        du = eval_curve(curve, h) - eval_curve(curve, 0.0)
        chord = math.inf if du == 0 else abs(h / du)
        slopes.append(chord if crossing_slope(curve).infinite else 0.0)
    checks["perpendicular"] = min(slopes) > 1e6
    # C1 = 0: finite slope 1/u, against a centred difference along the curve
    c0 = phase_curve(0.0, 1.0)
    F0 = eval_curve(c0, 0.0)
    fd = 2e-6 / (eval_curve(c0, 1e-6) - eval_curve(c0, -1e-6))
    sl = crossing_slope(c0)
    checks["finite_1_over_u"] = (not sl.infinite and abs(sl.value - 1 / F0) <= 1e-12 * sl.value
                                 and abs(fd - 1 / F0) <= 1e-6 / F0
                                 and crossing_slope(c0, 0.5).value == 2.0)
    # C1 > 1: no point with |u| < 1e-6 anywhere
    vs = np.concatenate([np.linspace(-1e3, 1e3, 400001), -1 + np.linspace(-0.01, 0.01, 20001)])
    mins = {C1: float(eval_curve(phase_curve(C1, 1.0), vs).min()) for C1 in (1.001, 1.5, 2.0, 5.0)}
    checks["disconnected"] = min(mins.values()) > 1e-6 and features(phase_curve(2.0)).disconnected
    ok = all(checks.values())
    report(4, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
           + f"; min |slope| at v=0 {min(slopes):.1e}; min |u| for C1>1 {min(mins.values()):.3g}")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_5_correlation_bound(report, ensemble):
    res, elapsed = ensemble
    rho = res.correlations
    mx, p99 = float(rho.max()), float(np.percentile(rho, 99))
    _, counts = res.histogram(10)
    ok = mx < 0.9 and p99 < 0.85 and elapsed < 60
    report(5, ok, f"{len(rho)} of 1000 runs usable; max |rho| {mx:.4f} (< 0.9), p99 {p99:.4f} "
                  f"(< 0.85); reference bound {PAPER_BOUND}: max {'below' if mx < PAPER_BOUND else 'above'}, "
                  f"{np.mean(rho < PAPER_BOUND):.3f} of runs below (reported); histogram "
                  f"{counts.tolist()} (reported); {elapsed:.1f} s (< 60 s)")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_tail_exponents(report, ensemble):
    res, _ = ensemble
    rows = fit_ensemble_tails(res.per_run_series)
    lam = {v: np.array([r[3] for r in rows if r[1] == v]) for v in ("x1", "x2")}
    st = {v: exponent_stats(lam[v]) for v in lam}
    synth = {}
    for target in (-1.5, -0.9, -0.5):
        u = np.random.default_rng(int(-target * 10)).uniform(size=100_000)
        synth[target] = fit_tail(-(u ** (1.0 / target)), "left").lambda_
    synth_ok = all(abs(synth[t] - t) <= 0.05 * abs(t) for t in synth)
    over = {v: int(np.sum(np.abs(lam[v]) >= 2)) for v in lam}
    ok = (over["x1"] == 0 and over["x2"] == 0 and abs(st["x2"].skewness) < 0.5
          and st["x1"].skewness < -0.3 and synth_ok)
    report(6, ok,
           f"max |lambda1| {np.abs(lam['x1']).max():.3f}, {over['x1']} of {lam['x1'].size} >= 2; "
           f"max |lambda2| {np.abs(lam['x2']).max():.3f}, {over['x2']} of {lam['x2'].size} >= 2 (all < 2); "
           f"skew lambda2 {st['x2'].skewness:.3f} (|.| < 0.5), skew lambda1 {st['x1'].skewness:.3f} (< -0.3); "
           f"synthetic {', '.join(f'{t}->{synth[t]:.4f}' for t in synth)} (5%); "
           f"reported: mu1 {st['x1'].mean:.3f} sd1 {st['x1'].std:.3f} (ref {REF_MU1}, {REF_SD1}), "
           f"mu2 {st['x2'].mean:.3f} sd2 {st['x2'].std:.3f} (ref {REF_MU2}, {REF_SD2})")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_forcing(report):
    p = ModelParams()
    C1, u0, v0 = -0.5, 1.0, 1.0
    w0 = (C1 + v0 * (v0 + 2.0)) / (2.0 * u0 * v0)
    path0 = integrate_forced_phase(u0, v0, w0, 0.0, p, 3.0)
    curve_dev = float(np.max(np.abs(eval_curve(phase_curve(C1, v0), path0.v) - path0.u)))
    inv_dev = float(np.ptp(path0.invariant()))
    resid = {}
    cross = {}
    for k in (0.0, 0.01):
        path = integrate_forced_phase(u0, v0, w0, k, p, 3.0)
        resid[k] = verify_master4(path, ControlInput.inverse_u(k), p, C1=C1).max_abs
        s0 = phase_path_initial_state(u0, v0, w0, p)
        tr = integrate_forced_full(s0, ControlInput.inverse_u(k), p, float(path.t[-1]) * 1.001,
                                   t_eval=path.t)
        cross[k] = max(float(np.max(np.abs(tr.x1 - path.x1(p)))),
                       float(np.max(np.abs(tr.x4 - path.u))))
    ok = (curve_dev <= 1e-5 and inv_dev <= 1e-5 and max(resid.values()) <= 1e-4
          and max(cross.values()) <= 1e-4)
    report(7, ok, f"k=0 path vs closed-form curve {curve_dev:.1e}, invariant spread {inv_dev:.1e} (<= 1e-5); "
                  f"residual k=0 {resid[0.0]:.1e}, k=0.01 {resid[0.01]:.1e} (<= 1e-4); "
                  f"u- vs t-parameterised k=0 {cross[0.0]:.1e}, k=0.01 {cross[0.01]:.1e} (<= 1e-4)")
    assert ok


# 8 ---------------------------------------------------------------------------

def _trapz(y, t):
    return sum(0.5 * (y[i] + y[i + 1]) * (t[i + 1] - t[i]) for i in range(len(t) - 1))


def test_criterion_8_control(report):
    t0 = time.perf_counter()
    cases = []
    t = np.linspace(0.0, 2.0, 401)
    pa = ModelParams(beta1=1.5, beta2=2.0, c1=0.5, c2=1.0, U=2.0, L=-1.0)
    cases.append((pa, np.full_like(t, 0.8), np.zeros_like(t)))
    pb = ModelParams(beta1=1.0, beta2=1.0, c1=1.0, c2=2.0, U=5.0, L=-3.0)
    cases.append((pb, t ** 2, 2 * t))
    pc = ModelParams(beta1=0.5, beta2=2.0, c1=1.0, c2=1.0, U=1.0, L=-2.0)
    cases.append((pc, 0.2 * np.cos(3 * t), -0.6 * np.sin(3 * t)))
    quad_err = 0.0
    for p, x1, d1 in cases:
        ev = evaluate_path(t, x1, d1, np.sin(t), p)
        R = _trapz(d1 * d1, t)
        M = max(p.c2 * p.beta2 * a - p.c1 * p.beta1 * p.U * b + p.beta2 * p.L for a, b in zip(d1, x1))
        Pi = _trapz(p.c1 * p.U * p.beta1 / p.beta2 * x1 - p.c2 * d1, t)
        quad_err = max(quad_err, abs(ev.regularity - R), abs(ev.profit_constraint_margin - M),
                       abs(ev.profit_path[-1, 1] - Pi))
        if ev.feasible != (R <= p.U and M <= 0):
            quad_err = math.inf
    # monotonicity in U on a fixed 41-point grid
    prob = ControlProblem()
    init = default_initial_state(prob.params)
    evals = [evaluate_strategy(prob, k, init) for k in strategy_grid(prob, 41)]
    Us = (2.0, 1.0, 0.8, 0.6, 0.5, 0.45, 0.4, 0.3)
    sets = [{e.strategy_param for e in evals if reevaluate(e, prob.params.replace(U=U)).feasible}
            for U in Us]
    monotone = all(b <= a for a, b in zip(sets, sets[1:]))
    # bit reproducibility
    r1 = search_strategies(prob, init, budget=41, seed=13)
    r2 = search_strategies(prob, init, budget=41, seed=13)
    repro = repr(r1.rows()) == repr(r2.rows())
    elapsed = time.perf_counter() - t0
    ok = quad_err <= 1e-12 and monotone and repro and elapsed < 30
    report(8, ok, f"3 synthetic paths, max |evaluator - trapezoid oracle| {quad_err:.1e}; "
                  f"feasible counts for U={Us}: {[len(s) for s in sets]} (nested: {monotone}); "
                  f"seeded search reproducible: {repro}; {elapsed:.1f} s (< 30 s)")
    assert ok


# 9 ---------------------------------------------------------------------------

def test_criterion_9_sensitivity_witness(report):
    res = passage_split(-0.5, 1e-6)
    ok = set(res.branches) == {"explosive", "returning"} and res.separation > 0.1
    report(9, ok, f"offsets +-1e-6 at E: branches {res.branches}, separation {res.separation:.3f} "
                  f"at arc length 1 (> 0.1)")
    assert ok
