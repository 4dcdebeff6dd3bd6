import math

import numpy as np
import pytest
from scipy.optimize import brentq

from equitydyn.io import read_csv
from equitydyn.phase import (POLE_GUARD, BranchError, PoleError, Regime, always_detour,
                             crossing_slope, curve_derivative, cycle_points, eval_curve, features,
                             never_detour, passage_split, phase_curve, random_policy,
                             sample_curve, signed_curve, slope_field, trace_cycle,
                             write_curve_csv, write_features_json)

from oracles import log_u_ode, log_u_pv, separatrices

FAMILY = (-0.5, 0.0, 0.5, 1.0, 2.0, 5.0)


@pytest.mark.parametrize("C1", FAMILY)
def test_normalisation(C1):
    assert eval_curve(phase_curve(C1, 1.0), 1.0) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("C1", FAMILY)
def test_agrees_with_integrated_slope_field(C1):
    curve = phase_curve(C1, 1.0)
    roots = separatrices(C1)
    vs = np.linspace(-4.0, 4.0, 500)
    vs = vs[[min([abs(v - r) for r in roots] or [1.0]) > 1e-3 for v in vs]]
    ln_ref = log_u_ode(C1, 1.0, vs)
    same = np.isfinite(ln_ref)
    u_ref = np.exp(ln_ref[same])
    u = eval_curve(curve, vs[same])
    assert np.all(np.abs(u - u_ref) <= 1e-4 * (1 + np.abs(u_ref)))


@pytest.mark.parametrize("C1", (-0.5, 0.0, 0.5))
def test_other_bands_by_principal_value(C1):
    # continuation across a simple root is the principal-value integral
    curve = phase_curve(C1, 1.0)
    rm, rp = separatrices(C1) if C1 != 0 else (-2.0, 0.0)
    for v in (rm - 1.5, rm - 0.3, 0.5 * (rm + rp), rp - 0.05):
        if C1 == 0 and v > -2:
            continue
        u_ref = math.exp(log_u_pv(C1, 1.0, v))
        assert abs(eval_curve(curve, v) - u_ref) <= 1e-4 * (1 + u_ref)


def test_minus_half_crossing():
    F0 = eval_curve(phase_curve(-0.5, 1.0), 0.0)
    assert F0 == pytest.approx(0.4, abs=0.02)


def test_unit_tangency_value():
    assert eval_curve(phase_curve(1.0, 1.0), -1.0) == 0.0


def test_pole_guard():
    curve = phase_curve(0.5, 1.0)
    rp = -1 + math.sqrt(0.5)
    with pytest.raises(PoleError):
        eval_curve(curve, rp)
    with pytest.raises(PoleError):
        eval_curve(curve, rp + 0.5 * POLE_GUARD)
    near = eval_curve(curve, rp + np.array([1e-4, 1e-6, 1e-8]))
    assert np.all(np.diff(near) > 0)
    assert sample_curve(curve, [rp, 0.0]).shape == (1, 3)


def test_separatrix_start_rejected():
    with pytest.raises(ValueError):
        phase_curve(-0.5, -1 + math.sqrt(1.5))


def test_upper_root_kind_depends_on_sign_of_c1():
    # C1 < 0: F -> 0 at r+ (contact); 0 < C1 < 1: F -> inf (pole)
    d = np.array([1e-3, 1e-6, 1e-9, 1e-12])
    c_neg = phase_curve(-0.5, 1.0)
    F = eval_curve(c_neg, -1 + math.sqrt(1.5) + d)
    assert np.all(np.diff(F) < 0) and F[-1] < 0.01
    c_pos = phase_curve(0.5, 1.0)
    F = eval_curve(c_pos, -1 + math.sqrt(0.5) + d[:3])
    assert np.all(np.diff(F) > 0)
    assert features(c_neg).pole_kind == "contact"
    assert features(c_pos).pole_kind == "divergent"


@pytest.mark.parametrize("C1", (-0.5, 0.5))
def test_pole_and_tangency_by_root_finding(C1):
    curve = phase_curve(C1, 1.0)
    s = math.sqrt(1 - C1)
    rm, rp = -1 - s, -1 + s
    # signed F changes sign through both separatrices
    g = lambda v: signed_curve(curve, v)
    tang = brentq(g, rm - 0.3, rm + 0.3, xtol=1e-13, maxiter=500)
    assert tang == pytest.approx(rm, abs=1e-6)
    if C1 > 0:
        def h(v):
            try:
                return 1.0 / signed_curve(curve, v)
            except PoleError:  # inside the guard band 1/F is zero to working precision
                return 0.0
        pole = brentq(h, rp - 0.1, rp + 0.1, xtol=1e-13, maxiter=500)
    else:
        pole = brentq(g, rp - 0.1, rp + 0.1, xtol=1e-13, maxiter=500)
    assert pole == pytest.approx(rp, abs=1e-6)


def test_features_minus_half():
    f = features(phase_curve(-0.5, 1.0))
    s = math.sqrt(6) / 2
    assert f.pole == pytest.approx(-1 + s, abs=1e-12)
    assert f.tangency == pytest.approx(-1 - s, abs=1e-12)
    assert f.bifurcation_points["B"] == pytest.approx((0.0, -1 - s))
    assert f.bifurcation_points["E"] == pytest.approx((0.0, -1 + s))
    assert f.bifurcation_points["C"][0] == pytest.approx(-0.4, abs=0.02)
    assert f.bifurcation_points["D"][0] == pytest.approx(0.4, abs=0.02)
    assert f.sign_flip_interval == pytest.approx((-1 - s, -1 + s))
    assert not f.disconnected


def test_features_two_and_one():
    f2 = features(phase_curve(2.0, 1.0))
    assert f2.pole is None and f2.tangency is None and f2.disconnected
    f1 = features(phase_curve(1.0, 1.0))
    assert f1.pole is None
    assert f1.tangency == -1.0


def test_regimes_and_c5():
    assert phase_curve(2.0).regime is Regime.GT_1 and phase_curve(2.0).C5 is None
    assert phase_curve(1.0).regime is Regime.EQ_1
    assert phase_curve(0.0).regime is Regime.EQ_0
    c = phase_curve(-0.5)
    assert c.regime is Regime.LT_1
    assert c.C5 == pytest.approx(1 / math.sqrt(1.5))


@pytest.mark.parametrize("C1", FAMILY)
def test_mirror_symmetry(C1):
    curve = phase_curve(C1, 1.0)
    rows = sample_curve(curve, np.linspace(-3.9, 3.9, 77))
    np.testing.assert_array_equal(rows[:, 1], -rows[:, 2])


@pytest.mark.parametrize("C1", FAMILY)
def test_unbounded_beyond_roots(C1):
    curve = phase_curve(C1, 1.0)
    r = separatrices(C1)
    lo = min(r) if r else -1.0
    hi = max(r) if r else -1.0
    up = np.linspace(max(hi, 0.0) + 0.5, 200.0, 400)
    down = np.linspace(min(lo, -2.0) - 0.5, -200.0, 400)
    for vs in (up, down):
        F = eval_curve(curve, vs)
        assert np.all(np.diff(F) > 0)
    assert eval_curve(curve, 1e4) > 1e6
    assert eval_curve(curve, -1e4) > 1e6


@pytest.mark.parametrize("C1", (-0.5, 0.5, 1.0, 2.0, 5.0))
def test_perpendicular_crossing(C1):
    curve = phase_curve(C1, 1.0)
    assert crossing_slope(curve).infinite
    # numeric: dv/du = 1 / (dF/dv) at v -> 0
    for v in (1e-8, -1e-8):
        dudv = curve_derivative(curve, v)
        assert abs(1.0 / dudv) > 1e6


def test_zero_regime_finite_slope():
    curve = phase_curve(0.0, 1.0)
    for u in (0.5, 1.0):
        sl = crossing_slope(curve, u)
        assert not sl.infinite
        assert sl.value == pytest.approx(1.0 / u)
        assert sl.value == pytest.approx(slope_field(0.0, u, 1e-12), rel=1e-9)
    # finite difference along the curve at the D crossing
    F0 = eval_curve(curve, 0.0)
    h = 1e-6
    num = 2 * h / (eval_curve(curve, h) - eval_curve(curve, -h))
    assert num == pytest.approx(crossing_slope(curve).value, rel=1e-6)
    assert num == pytest.approx(1.0 / F0, rel=1e-6)


def test_disconnected_components_above_one():
    for C1 in (2.0, 5.0, 1.0 + 1e-6 + 0.5):
        curve = phase_curve(C1, 1.0)
        vs = np.concatenate([np.linspace(-50, 50, 20001), -1 + np.linspace(-1e-3, 1e-3, 2001)])
        assert eval_curve(curve, vs).min() > 1e-6


def test_cycles():
    curve = phase_curve(-0.5, 1.0)
    assert trace_cycle(curve, never_detour).word == "BCEDB"
    tr = trace_cycle(curve, always_detour)
    assert tr.word == "BCGEDFB"
    assert tr.closed


def test_cycle_points_g_f():
    curve = phase_curve(-0.5, 1.0)
    pts = cycle_points(curve)
    assert pts["G"][0] == pytest.approx(-pts["D"][0])
    assert pts["F"][0] == pytest.approx(pts["D"][0])
    assert eval_curve(curve, pts["G"][1]) == pytest.approx(pts["D"][0], rel=1e-10)
    assert eval_curve(curve, pts["F"][1]) == pytest.approx(pts["D"][0], rel=1e-10)
    assert pts["G"][1] > -1 + math.sqrt(1.5)
    assert pts["F"][1] < -1 - math.sqrt(1.5)


def test_explosion_flags():
    curve = phase_curve(-0.5, 1.0)
    explode_at_e = lambda label, opts: "explode" if label == "E" else opts[0]
    tr = trace_cycle(curve, explode_at_e)
    assert tr.explosion == "+inf"
    assert tr.labels == ["B", "C", "E"]
    explode_at_b = lambda label, opts: "explode" if label == "B" else opts[0]
    assert trace_cycle(curve, explode_at_b).explosion == "-inf"


def test_unreachable_branch():
    with pytest.raises(BranchError):
        trace_cycle(phase_curve(-0.5, 1.0), lambda label, opts: "F")


def test_cycles_need_negative_c1():
    with pytest.raises(ValueError):
        trace_cycle(phase_curve(0.5, 1.0))


def test_random_policy_reproducible():
    curve = phase_curve(-0.5, 1.0)
    a = [trace_cycle(curve, random_policy(3), start="B").word for _ in range(2)]
    assert a[0] == a[1]
    words = {trace_cycle(curve, random_policy(s)).word for s in range(40)}
    assert words <= {"BCEDB", "BCGEDB", "BCEDFB", "BCGEDFB"}
    assert len(words) == 4


def test_passage_split():
    res = passage_split(-0.5, 1e-6)
    assert set(res.branches) == {"explosive", "returning"}
    assert res.separation > 0.1


def test_passage_split_not_shrinking():
    seps = [passage_split(-0.5, eps).separation for eps in (1e-4, 1e-6, 1e-8)]
    assert min(seps) > 0.5 * max(seps)


def test_curve_csv_and_features_json(tmp_path):
    curve = phase_curve(-0.5, 1.0)
    write_curve_csv(tmp_path / "c.csv", curve, [1.0, 2.0])
    header, rows = read_csv(tmp_path / "c.csv")
    assert header == ["v", "u_plus", "u_minus"]
    assert rows[0] == ["1", "1", "-1"]
    write_features_json(tmp_path / "f.json", curve)
    import json
    doc = json.loads((tmp_path / "f.json").read_text())
    assert set(doc["bifurcation_points"]) == {"B", "C", "D", "E"}
    tr = trace_cycle(curve)
    tr.to_csv(tmp_path / "cyc.csv")
    header, rows = read_csv(tmp_path / "cyc.csv")
    assert header == ["label", "u", "v"]
    assert [r[0] for r in rows if r[0]] == list("BCEDB")
