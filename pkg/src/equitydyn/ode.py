"""Explicit Runge-Kutta integrators.

``dopri5`` is the Dormand-Prince 5(4) embedded pair with adaptive steps,
the usual fourth-order continuous extension for dense output and event
location on the interpolant.  ``rk4`` is the classical fixed-step scheme,
kept for runs that must be reproducible step-for-step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "Event",
    "OdeResult",
    "StepSizeUnderflow",
    "dopri5",
    "rk4",
]

RHS = Callable[[float, np.ndarray], np.ndarray]


class StepSizeUnderflow(ArithmeticError):
    """The step controller asked for a step below the configured minimum."""

    def __init__(self, t: float, h: float):
        super().__init__(f"step size underflow at t={t:.12g} (h={h:.3g})")
        self.t = t
        self.h = h


@dataclass
class Event:
    """Zero crossing of ``fn(t, y)`` to be located during integration.

    direction: +1 only rising crossings, -1 only falling ones, 0 both.
    """

    fn: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = True
    name: str = ""


@dataclass
class OdeResult:
    t: np.ndarray
    y: np.ndarray
    sample_t: np.ndarray
    sample_y: np.ndarray
    status: str  # "done" or "event"
    event: Optional[Event] = None
    t_event: Optional[float] = None
    y_event: Optional[np.ndarray] = None
    nfev: int = 0
    nsteps: int = 0
    nrejected: int = 0
    events_seen: list = field(default_factory=list)


# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([
    71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
])
# continuous extension: y(t + th*h) = y + h * K^T (P @ [th, th^2, th^3, th^4])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _rms_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(f, t0, y0, f0, direction, rtol, atol) -> float:
    # Hairer, Norsett & Wanner, II.4
    scale = atol + np.abs(y0) * rtol
    d0 = _rms_norm(y0 / scale)
    d1 = _rms_norm(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = _rms_norm((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


class _Dense:
    """Interpolant over one accepted step."""

    __slots__ = ("t0", "h", "y0", "Q")

    def __init__(self, t0: float, h: float, y0: np.ndarray, K: np.ndarray):
        self.t0 = t0
        self.h = h
        self.y0 = y0
        self.Q = K.T @ _P

    def __call__(self, t: float) -> np.ndarray:
        th = (t - self.t0) / self.h
        return self.y0 + self.h * (self.Q @ np.array([th, th * th, th ** 3, th ** 4]))


def _crossed(g0: float, g1: float, direction: int) -> bool:
    if direction >= 0 and g0 < 0.0 <= g1:
        return True
    if direction <= 0 and g0 > 0.0 >= g1:
        return True
    return False


def _locate(ev: Event, interp, ta: float, tb: float, ga: float, gb: float) -> float:
    if gb == 0.0:
        return tb
    return brentq(lambda s: ev.fn(s, interp(s)), ta, tb, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def dopri5(
    f: RHS,
    t0: float,
    y0: Sequence[float],
    t_end: float,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    t_eval: Optional[Sequence[float]] = None,
    events: Sequence[Event] = (),
    h0: Optional[float] = None,
    h_max: float = np.inf,
    h_min: float = 1e-14,
    max_steps: int = 1_000_000,
) -> OdeResult:
    """Integrate ``y' = f(t, y)`` forward from ``t0`` to ``t_end``.

    Non-finite stage values reject the step and shrink it; if the step falls
    below ``h_min`` (relative to ``|t|``) :class:`StepSizeUnderflow` is raised.
    Terminal events stop the integration at the located crossing; samples in
    ``t_eval`` are produced up to that point from the dense output.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    if not t_end > t:
        raise ValueError("t_end must exceed t0")
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)
    if t_eval is not None and np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")

    n = y.size
    K = np.empty((7, n))
    fy = np.asarray(f(t, y), dtype=float)
    nfev = 1
    if h0 is None:
        h = _initial_step(f, t, y, fy, 1.0, rtol, atol)
        nfev += 1
    else:
        h = float(h0)
    h = min(h, h_max, t_end - t)

    ts = [t]
    ys = [y.copy()]
    st: list[float] = []
    sy: list[np.ndarray] = []
    ie = 0
    if t_eval is not None:
        while ie < t_eval.size and t_eval[ie] < t:
            ie += 1
        if ie < t_eval.size and t_eval[ie] == t:
            st.append(t)
            sy.append(y.copy())
            ie += 1

    gvals = [ev.fn(t, y) for ev in events]
    nsteps = 0
    nrej = 0
    seen: list = []

    while t < t_end:
        if nsteps >= max_steps:
            raise RuntimeError(f"max_steps={max_steps} exceeded at t={t:.12g}")
        h = min(h, t_end - t)
        if h < h_min * max(1.0, abs(t)):
            raise StepSizeUnderflow(t, h)
        K[0] = fy
        ok = True
        for i in range(1, 7):
            yi = y + h * (np.dot(_A[i], K[:i]) if i > 1 else _A[1][0] * K[0])
            ki = np.asarray(f(t + _C[i] * h, yi), dtype=float)
            nfev += 1
            if not np.all(np.isfinite(ki)):
                ok = False
                break
            K[i] = ki
        if not ok:
            nrej += 1
            h *= 0.25
            continue
        y_new = y + h * (_B @ K)
        err = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = _rms_norm(err / scale)
        if not np.isfinite(en) or en > 1.0:
            nrej += 1
            fac = _MIN_FACTOR if not np.isfinite(en) else max(_MIN_FACTOR, _SAFETY * en ** -0.2)
            h *= fac
            continue

        t_new = t + h if t_end - (t + h) > 1e-15 * max(1.0, abs(t_end)) else t_end
        dense = _Dense(t, t_new - t, y, K.copy())
        nsteps += 1

        # events on this step
        hit = None
        for j, ev in enumerate(events):
            g_new = ev.fn(t_new, y_new)
            if _crossed(gvals[j], g_new, ev.direction):
                te = _locate(ev, dense, t, t_new, gvals[j], g_new)
                seen.append((ev, te))
                if ev.terminal and (hit is None or te < hit[1]):
                    hit = (ev, te)
            gvals[j] = g_new

        t_stop = t_new if hit is None else hit[1]
        if t_eval is not None:
            while ie < t_eval.size and t_eval[ie] <= t_stop:
                st.append(float(t_eval[ie]))
                sy.append(dense(t_eval[ie]))
                ie += 1

        if hit is not None:
            ye = dense(hit[1])
            ts.append(hit[1])
            ys.append(ye)
            return OdeResult(
                np.array(ts), np.array(ys), np.array(st), np.array(sy).reshape(-1, n),
                "event", hit[0], hit[1], ye, nfev, nsteps, nrej, seen,
            )

        t = t_new
        y = y_new
        fy = K[6].copy()  # FSAL; K is overwritten by rejected attempts
        ts.append(t)
        ys.append(y.copy())
        fac = _MAX_FACTOR if en == 0.0 else min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * en ** -0.2))
        h = min(h * fac, h_max)

    return OdeResult(
        np.array(ts), np.array(ys), np.array(st), np.array(sy).reshape(-1, n),
        "done", None, None, None, nfev, nsteps, nrej, seen,
    )


def rk4(
    f: RHS,
    t0: float,
    y0: Sequence[float],
    t_end: float,
    dt: float,
    *,
    t_eval: Optional[Sequence[float]] = None,
    events: Sequence[Event] = (),
) -> OdeResult:
    """Classical fourth-order Runge-Kutta on a uniform grid.

    Samples between grid points use cubic Hermite interpolation; events are
    located on the same interpolant.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(y0, dtype=float)
    n = y.size
    t = float(t0)
    nstep = int(np.ceil((t_end - t0) / dt - 1e-12))
    t_eval = None if t_eval is None else np.asarray(t_eval, dtype=float)
    ts = [t]
    ys = [y.copy()]
    st: list[float] = []
    sy: list[np.ndarray] = []
    ie = 0
    if t_eval is not None:
        while ie < t_eval.size and t_eval[ie] < t:
            ie += 1
    fy = np.asarray(f(t, y), dtype=float)
    gvals = [ev.fn(t, y) for ev in events]
    nfev = 1
    seen: list = []
    for k in range(nstep):
        t_new = t0 + (k + 1) * dt if k + 1 < nstep else float(t_end)
        h = t_new - t
        k1 = fy
        k2 = np.asarray(f(t + h / 2, y + h / 2 * k1), dtype=float)
        k3 = np.asarray(f(t + h / 2, y + h / 2 * k2), dtype=float)
        k4 = np.asarray(f(t + h, y + h * k3), dtype=float)
        y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        f_new = np.asarray(f(t_new, y_new), dtype=float)
        nfev += 4

        def interp(s, t=t, h=h, y=y, y_new=y_new, f0=fy, f1=f_new):
            th = (s - t) / h
            h00 = 2 * th ** 3 - 3 * th ** 2 + 1
            h10 = th ** 3 - 2 * th ** 2 + th
            h01 = -2 * th ** 3 + 3 * th ** 2
            h11 = th ** 3 - th ** 2
            return h00 * y + h10 * h * f0 + h01 * y_new + h11 * h * f1

        hit = None
        for j, ev in enumerate(events):
            g_new = ev.fn(t_new, y_new)
            if _crossed(gvals[j], g_new, ev.direction):
                te = _locate(ev, interp, t, t_new, gvals[j], g_new)
                seen.append((ev, te))
                if ev.terminal and (hit is None or te < hit[1]):
                    hit = (ev, te)
            gvals[j] = g_new
        t_stop = t_new if hit is None else hit[1]
        if t_eval is not None:
            while ie < t_eval.size and t_eval[ie] <= t_stop + 1e-12 * dt:
                st.append(float(t_eval[ie]))
                sy.append(interp(t_eval[ie]))
                ie += 1
        if hit is not None:
            ye = interp(hit[1])
            ts.append(hit[1])
            ys.append(ye)
            return OdeResult(
                np.array(ts), np.array(ys), np.array(st), np.array(sy).reshape(-1, n),
                "event", hit[0], hit[1], ye, nfev, k + 1, 0, seen,
            )
        t, y, fy = t_new, y_new, f_new
        ts.append(t)
        ys.append(y.copy())
    return OdeResult(
        np.array(ts), np.array(ys), np.array(st), np.array(sy).reshape(-1, n),
        "done", None, None, None, nfev, nstep, 0, seen,
    )
