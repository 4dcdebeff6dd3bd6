"""Forced dynamics: the market maker's input z acting on the price equation.

With z != 0 the matched ratio law still holds (z enters only x1'), and the
motion integral is no longer constant:

    d/dt [2 u a - v(v+2)] = 2 beta1 u z,     u = x4, v = x4', a = x4'' = beta1 x1.

In the phase plane, with w = dv/du and z = z~(u),

    2 u v w = C1 + v(v+2) + 2 beta1 * integral(u z~ / v du)

and differentiating once more gives, for z~(u) = k/u,

    dw/du = (v w (1 - u w) + k beta1) / (u v^2).

Time along a phase path follows from dt/du = 1/v.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import ode
from .core import (MarketState, ModelParams, SampledPath, Tolerances, Trajectory,
                   integrate)
from .io import write_csv

__all__ = [
    "ControlInput",
    "ForcedPhasePath",
    "ResidualReport",
    "c1_rate",
    "integrate_forced_full",
    "integrate_forced_phase",
    "phase_path_initial_state",
    "verify_master4",
]


@dataclass
class ControlInput:
    """An input z, given as z(t), as z~(u) with u = x4, or as a sampled path."""

    kind: str  # time_function | u_function | sampled_path
    payload: object
    k: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("time_function", "u_function", "sampled_path"):
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.kind == "sampled_path" and not isinstance(self.payload, SampledPath):
            self.payload = SampledPath(*self.payload)

    @classmethod
    def time_function(cls, f: Callable[[float], float]) -> "ControlInput":
        return cls("time_function", f)

    @classmethod
    def u_function(cls, f: Callable[[float], float]) -> "ControlInput":
        return cls("u_function", f)

    @classmethod
    def inverse_u(cls, k: float) -> "ControlInput":
        """z~(u) = k / u."""
        k = float(k)
        return cls("u_function", lambda u: k / u, k)

    @classmethod
    def sampled_path(cls, times: Sequence[float], values: Sequence[float]) -> "ControlInput":
        return cls("sampled_path", SampledPath(times, values))

    @classmethod
    def zero(cls) -> "ControlInput":
        return cls.inverse_u(0.0)

    @property
    def extrapolated(self) -> bool:
        return self.kind == "sampled_path" and self.payload.extrapolated

    def value(self, t: float, state) -> float:
        if self.kind == "time_function":
            return float(self.payload(t))
        if self.kind == "u_function":
            return float(self.payload(state[3]))
        return self.payload(t)

    def of_u(self, u):
        if self.kind != "u_function":
            raise TypeError("only u-functions can be evaluated along a phase path")
        return np.vectorize(lambda x: float(self.payload(x)))(u)


def integrate_forced_full(initial: MarketState, z: ControlInput, params: ModelParams,
                          horizon: float, tol: Tolerances = Tolerances(), *,
                          t_eval: Optional[Sequence[float]] = None,
                          check_matched: float = 1e-8) -> Trajectory:
    """Four-dimensional integration with the input on x1' only."""
    ratio = params.ratio
    if initial.x4 == 0 or abs(initial.x3 / initial.x4 - ratio) > check_matched * max(1.0, abs(ratio)):
        raise ValueError("initial state is not matched (beta2 x3 = beta1 x4)")
    return integrate(initial, z, params, horizon, tol, t_eval=t_eval)


def c1_rate(traj: Trajectory) -> np.ndarray:
    """Exact rate of change of the motion integral, 2 beta1 x4 z, at each sample."""
    z = traj.inputs if traj.inputs is not None else np.zeros(len(traj))
    return 2.0 * traj.params.beta1 * traj.x4 * z


@dataclass
class ForcedPhasePath:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: np.ndarray  # time elapsed since the start, from dt/du = 1/v
    k: float
    status: str  # completed | v_singular | u_singular

    def invariant(self) -> np.ndarray:
        """2 u v w - v(v+2); constant when k = 0."""
        return 2.0 * self.u * self.v * self.w - self.v * (self.v + 2.0)

    def x1(self, params: ModelParams) -> np.ndarray:
        return self.v * self.w / params.beta1

    def to_csv(self, path) -> None:
        write_csv(path, ["u", "v", "w"], np.column_stack([self.u, self.v, self.w]))


def integrate_forced_phase(u0: float, v0: float, w0: float, k: float, params: ModelParams,
                           u_end: float, tol: Tolerances = Tolerances(), *,
                           n_samples: int = 2001, v_floor: float = 1e-6) -> ForcedPhasePath:
    """Integrate dv/du = w, dw/du = (v w (1 - u w) + k beta1) / (u v^2) from u0 to u_end.

    Only valid on an arc where v keeps its sign; stops with ``v_singular``
    when |v| falls to ``v_floor`` and with ``u_singular`` at |u| = x4_floor.
    At a fold v ~ sqrt(u - u_fold), so a much smaller floor would need steps
    in u below double-precision resolution.
    """
    if u0 == 0 or v0 == 0:
        raise ValueError("u0 and v0 must be nonzero")
    if u_end == u0:
        raise ValueError("empty u-span")
    b1 = params.beta1
    sig = 1.0 if u_end > u0 else -1.0
    span = abs(u_end - u0)

    def f(s, y):
        u = u0 + sig * s
        v, w = y[0], y[1]
        dw = (v * w * (1.0 - u * w) + k * b1) / (u * v * v)
        return np.array([sig * w, sig * dw, sig / v])

    vside = math.copysign(1.0, v0)
    uside = math.copysign(1.0, u0)
    events = [
        ode.Event(lambda s, y: vside * y[0] - v_floor, direction=-1, name="v_singular"),
        ode.Event(lambda s, y: uside * (u0 + sig * s) - tol.x4_floor, direction=-1, name="u_singular"),
    ]
    grid = np.linspace(0.0, span, n_samples)
    res = ode.dopri5(f, 0.0, [v0, w0, 0.0], span, rtol=tol.rtol, atol=tol.atol, t_eval=grid,
                     events=events, h_min=tol.h_min, max_steps=tol.max_steps)
    s, y = res.sample_t, res.sample_y
    status = "completed"
    if res.status == "event":
        status = res.event.name
        if s.size == 0 or res.t_event > s[-1]:
            s = np.append(s, res.t_event)
            y = np.vstack([y, res.y_event])
    u = u0 + sig * s
    return ForcedPhasePath(u, y[:, 0], y[:, 1], y[:, 2], float(k), status)


def phase_path_initial_state(u0: float, v0: float, w0: float, params: ModelParams) -> MarketState:
    """Matched state with x4 = u0, x4' = v0 and dx4'/dx4 = w0."""
    return MarketState(v0 * w0 / params.beta1, v0 / params.beta2, params.ratio * u0, u0)


@dataclass
class ResidualReport:
    u: np.ndarray
    residual: np.ndarray
    integral: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def to_csv(self, path) -> None:
        write_csv(path, ["u", "residual"], np.column_stack([self.u, self.residual]))


def verify_master4(path: ForcedPhasePath, z_tilde: Callable, params: ModelParams,
                   C1: Optional[float] = None) -> ResidualReport:
    """Pointwise residual of the integro-differential phase equation along ``path``.

    The integral of 2 beta1 u z~(u) / v is accumulated by the trapezoid rule
    on the stored samples; C1 defaults to the value of the motion integral
    at the first sample.
    """
    u, v, w = path.u, path.v, path.w
    if np.any(np.abs(v) < 1e-12):
        raise ValueError("quadrature through v = 0")
    if C1 is None:
        C1 = 2.0 * u[0] * v[0] * w[0] - v[0] * (v[0] + 2.0)
    zt = z_tilde.of_u(u) if isinstance(z_tilde, ControlInput) else np.array([z_tilde(x) for x in u])
    g = 2.0 * params.beta1 * u * zt / v
    I = cumulative_trapezoid(g, u, initial=0.0)
    resid = w - (C1 + v * (v + 2.0) + I) / (2.0 * u * v)
    return ResidualReport(u, resid, I)
