"""Compiled reduced-dynamics integrator used by the ensemble runner.

Integrates u' = v, v' = (C1 + v(v+2)) / (2u) with a Dormand-Prince 5(4)
pair and fills a uniform sample grid from the dense output.  Passages
through u = 0 at contact roots are bridged with the curve invariant, and
v = 0 crossings optionally jump to the other band (see montecarlo).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# regime codes
GT_1, EQ_1, LT_1, EQ_0 = 0, 1, 2, 3

# termination codes
HORIZON, SINGULARITY, BLOW_UP, NO_DRAWS, STEP_FAIL = 0, 1, 2, 3, 4

_a21 = 1 / 5
_a31, _a32 = 3 / 40, 9 / 40
_a41, _a42, _a43 = 44 / 45, -56 / 15, 32 / 9
_a51, _a52, _a53, _a54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_a61, _a62, _a63, _a64, _a65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_b1, _b3, _b4, _b5, _b6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_e1, _e3, _e4, _e5, _e6, _e7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                                22 / 525, -1 / 40)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@njit(cache=True)
def log_shape(C1, reg, v):
    if reg == GT_1:
        c = math.sqrt(C1 - 1.0)
        return math.log(v * v + 2 * v + C1) - (2.0 / c) * math.atan((v + 1.0) / c)
    if reg == EQ_1:
        w = v + 1.0
        if w == 0.0:
            return -math.inf
        return 2.0 * math.log(abs(w)) - 2.0 * v / w
    if reg == EQ_0:
        return 2.0 * math.log(abs(v + 2.0))
    s = math.sqrt(1.0 - C1)
    C5 = 1.0 / s
    lp = abs(v + 1.0 + s)
    lm = abs(v + 1.0 - s)
    if lm == 0.0:
        return -math.inf if C5 < 1.0 else math.inf
    if lp == 0.0:
        return -math.inf
    return (1.0 + C5) * math.log(lp) + (1.0 - C5) * math.log(lm)


@njit(cache=True)
def _accel(C1, u, v):
    return (C1 + v * (v + 2.0)) / (2.0 * u)


@njit(cache=True)
def explosive(C1, reg, u, v):
    """True when the continuation from (u, v) runs to |v| -> inf or into a divergent pole."""
    num = C1 + v * (v + 2.0)
    if num == 0.0:
        return False
    d = (1.0 if num > 0 else -1.0) * (1.0 if u > 0 else -1.0)
    if reg == GT_1:
        return True
    s = math.sqrt(max(1.0 - C1, 0.0))
    rm, rp = -1.0 - s, -1.0 + s
    pole_div = reg == LT_1 and C1 > 0.0
    if d > 0:
        if v > rp:
            return True
        if v > rm:  # heading up to rp
            return pole_div or (reg == EQ_1)
        return False
    if v < rm:
        return True
    if v < rp:
        return False
    # heading down to rp from above
    return pole_div or (reg == EQ_1)


@njit(cache=True)
def _near_contact(C1, reg, v, gate_w):
    """Contact root within gate_w of v (F -> 0 there), or nan."""
    if reg == GT_1:
        return math.nan
    s = math.sqrt(max(1.0 - C1, 0.0))
    rm, rp = -1.0 - s, -1.0 + s
    if reg == EQ_1:
        if v < rm and rm - v <= gate_w:
            return rm
        return math.nan
    if abs(v - rm) <= gate_w:
        return rm
    if reg == LT_1 and C1 < 0.0 and abs(v - rp) <= gate_w:
        return rp
    return math.nan


@njit(cache=True)
def _nearest_contact(C1, reg, v):
    s = math.sqrt(max(1.0 - C1, 0.0))
    rm, rp = -1.0 - s, -1.0 + s
    if reg == LT_1 and C1 < 0.0 and abs(v - rp) < abs(v - rm):
        return rp
    return rm


@njit(cache=True)
def _outer_band_point(C1, reg, target_log, upper):
    """v on the outer band (above r+ or below r-) with log_shape(v) = target_log."""
    s = math.sqrt(1.0 - C1)
    rm, rp = -1.0 - s, -1.0 + s
    if upper:
        lo, step = rp, 1.0
        hi = rp + step
        while log_shape(C1, reg, hi) < target_log:
            step *= 2.0
            hi = rp + step
    else:
        hi, step = rm, 1.0
        lo = rm - step
        while log_shape(C1, reg, lo) < target_log:
            step *= 2.0
            lo = rm - step
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        g = log_shape(C1, reg, mid) - target_log
        if (g < 0) == upper:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def _dense(y0, h, K, th):
    acc = 0.0
    for i in range(7):
        acc += K[i] * th * (_P[i, 0] + th * (_P[i, 1] + th * (_P[i, 2] + th * _P[i, 3])))
    return y0 + h * acc


@njit(cache=True, nogil=True)
def simulate(u0, v0, C1, reg, horizon, dt, rtol, atol, gate_u, gate_w,
             p_detour, p_explode, commit, blow_up, h_min, max_steps,
             draws, out_u, out_v, out_a, out_valid):
    """Fill the sample grid k*dt, k = 0..len(out_u)-1.

    Returns (n_filled, termination, draws_used, passages, detours, steps, t_end).
    """
    n_out = out_u.shape[0]
    for k in range(n_out):
        out_valid[k] = 0
    Ku = np.empty(7)
    Kv = np.empty(7)
    nd = 0
    passages = 0
    detours = 0
    steps = 0
    t = 0.0
    u = u0
    v = v0
    out_u[0] = u
    out_v[0] = v
    out_a[0] = _accel(C1, u, v)
    out_valid[0] = 1
    ks = 1
    detour_ok = reg == LT_1 and C1 < 0.0

    if commit and explosive(C1, reg, u, v):
        return ks, BLOW_UP, nd, passages, detours, steps, t

    # initial step (Hairer's heuristic, simplified)
    a0 = _accel(C1, u, v)
    sc_u = atol + rtol * abs(u)
    sc_v = atol + rtol * abs(v)
    d0 = math.sqrt(0.5 * ((u / sc_u) ** 2 + (v / sc_v) ** 2))
    d1 = math.sqrt(0.5 * ((v / sc_u) ** 2 + (a0 / sc_v) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, horizon, 0.1 * dt * 100)

    while t < horizon:
        if steps >= max_steps:
            return ks, STEP_FAIL, nd, passages, detours, steps, t
        h = min(h, horizon - t)
        if h < h_min * max(1.0, abs(t)):
            return ks, STEP_FAIL, nd, passages, detours, steps, t
        # stages
        Ku[0] = v
        Kv[0] = _accel(C1, u, v)
        uu = u + h * _a21 * Ku[0]
        vv = v + h * _a21 * Kv[0]
        Ku[1] = vv
        Kv[1] = _accel(C1, uu, vv)
        uu = u + h * (_a31 * Ku[0] + _a32 * Ku[1])
        vv = v + h * (_a31 * Kv[0] + _a32 * Kv[1])
        Ku[2] = vv
        Kv[2] = _accel(C1, uu, vv)
        uu = u + h * (_a41 * Ku[0] + _a42 * Ku[1] + _a43 * Ku[2])
        vv = v + h * (_a41 * Kv[0] + _a42 * Kv[1] + _a43 * Kv[2])
        Ku[3] = vv
        Kv[3] = _accel(C1, uu, vv)
        uu = u + h * (_a51 * Ku[0] + _a52 * Ku[1] + _a53 * Ku[2] + _a54 * Ku[3])
        vv = v + h * (_a51 * Kv[0] + _a52 * Kv[1] + _a53 * Kv[2] + _a54 * Kv[3])
        Ku[4] = vv
        Kv[4] = _accel(C1, uu, vv)
        uu = u + h * (_a61 * Ku[0] + _a62 * Ku[1] + _a63 * Ku[2] + _a64 * Ku[3] + _a65 * Ku[4])
        vv = v + h * (_a61 * Kv[0] + _a62 * Kv[1] + _a63 * Kv[2] + _a64 * Kv[3] + _a65 * Kv[4])
        Ku[5] = vv
        Kv[5] = _accel(C1, uu, vv)
        un = u + h * (_b1 * Ku[0] + _b3 * Ku[2] + _b4 * Ku[3] + _b5 * Ku[4] + _b6 * Ku[5])
        vn = v + h * (_b1 * Kv[0] + _b3 * Kv[2] + _b4 * Kv[3] + _b5 * Kv[4] + _b6 * Kv[5])
        Ku[6] = vn
        Kv[6] = _accel(C1, un, vn)
        eu = h * (_e1 * Ku[0] + _e3 * Ku[2] + _e4 * Ku[3] + _e5 * Ku[4] + _e6 * Ku[5] + _e7 * Ku[6])
        ev = h * (_e1 * Kv[0] + _e3 * Kv[2] + _e4 * Kv[3] + _e5 * Kv[4] + _e6 * Kv[5] + _e7 * Kv[6])
        su = atol + rtol * max(abs(u), abs(un))
        sv = atol + rtol * max(abs(v), abs(vn))
        err = math.sqrt(0.5 * ((eu / su) ** 2 + (ev / sv) ** 2))
        bad = not (math.isfinite(err) and math.isfinite(un) and math.isfinite(vn))
        if bad or (un > 0) != (u > 0):
            h *= 0.25
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        steps += 1
        tn = t + h

        # v = 0 crossing inside the step
        t_cut = tn
        jump = False
        if detour_ok and v != 0.0 and (v > 0) != (vn > 0):
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                vm = _dense(v, h, Kv, mid)
                if (vm > 0) == (v > 0):
                    lo = mid
                else:
                    hi = mid
            th = hi
            if nd >= draws.shape[0]:
                return ks, NO_DRAWS, nd, passages, detours, steps, t
            r = draws[nd]
            nd += 1
            if r < p_detour:
                jump = True
                t_cut = t + th * h
                uc = _dense(u, h, Ku, th)

        # fill samples up to t_cut
        while ks < n_out and ks * dt <= t_cut + 1e-12 * dt:
            th = (ks * dt - t) / h
            us = _dense(u, h, Ku, th)
            vs = _dense(v, h, Kv, th)
            out_u[ks] = us
            out_v[ks] = vs
            out_a[ks] = _accel(C1, us, vs)
            out_valid[ks] = 1
            ks += 1

        fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
        h_next = h * fac

        if jump:
            # same curve, same u, on the outer band on the non-explosive side
            vt = _outer_band_point(C1, reg, log_shape(C1, reg, 0.0), uc < 0)
            t = t_cut
            u = uc
            v = vt
            detours += 1
            h = h_next
            continue

        t = tn
        u = un
        v = vn

        if math.hypot(u, v) >= blow_up:
            return ks, BLOW_UP, nd, passages, detours, steps, t

        # gate ahead of a u = 0 passage
        if u * v < 0.0:
            c = math.nan
            if abs(u) <= gate_u:
                c = _nearest_contact(C1, reg, v)
            else:
                c = _near_contact(C1, reg, v, gate_w)
            if not math.isnan(c):
                w = abs(v - c)
                logK = math.log(abs(u)) - log_shape(C1, reg, v)
                u_new_sign = -1.0 if u > 0 else 1.0
                # candidate exits
                nside = 0
                cand_v = np.empty(2)
                cand_x = np.empty(2, dtype=np.bool_)
                for sgn in (1.0, -1.0):
                    if reg == EQ_1 and sgn > 0:
                        continue
                    vc = c + sgn * w
                    uc2 = u_new_sign * math.exp(logK + log_shape(C1, reg, vc))
                    cand_v[nside] = vc
                    cand_x[nside] = explosive(C1, reg, uc2, vc)
                    nside += 1
                pick = 0
                if nside == 2:
                    if cand_x[0] != cand_x[1]:
                        safe = 0 if not cand_x[0] else 1
                        if nd >= draws.shape[0]:
                            return ks, NO_DRAWS, nd, passages, detours, steps, t
                        r = draws[nd]
                        nd += 1
                        pick = (1 - safe) if r < p_explode else safe
                    else:
                        # keep the side of approach
                        pick = 0 if v > c else 1
                vx = cand_v[pick]
                ux = u_new_sign * math.exp(logK + log_shape(C1, reg, vx))
                tx = t + (abs(u) + abs(ux)) / abs(c)
                passages += 1
                # bridged samples: linear in (u, v), not used as data
                while ks < n_out and ks * dt < tx:
                    fr = (ks * dt - t) / (tx - t)
                    out_u[ks] = u + fr * (ux - u)
                    out_v[ks] = v + fr * (vx - v)
                    out_a[ks] = math.nan
                    out_valid[ks] = 0
                    ks += 1
                t = tx
                u = ux
                v = vx
                if commit and cand_x[pick]:
                    return ks, BLOW_UP, nd, passages, detours, steps, t
                h = min(h_next, max(abs(u), 1e-3))
                continue
        h = h_next
        if commit and explosive(C1, reg, u, v):
            return ks, BLOW_UP, nd, passages, detours, steps, t
    return ks, HORIZON, nd, passages, detours, steps, t
