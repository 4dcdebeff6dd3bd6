"""Reduction of the matched model to the second-order equation in u = x4.

On the matched manifold (beta2 * x3 = beta1 * x4) and with z = 0 the
quantity ``2 u u'' - u' (u' + 2)`` is conserved, so u obeys

    u'' = (C1 + u' (u' + 2)) / (2 u)

and price and volume are recovered as x1 = u'' / beta1, x2 = u' / beta2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ode
from .core import MarketState, ModelParams, SingularityError, Termination, Tolerances
from .io import write_csv

__all__ = [
    "MismatchError",
    "ReducedState",
    "ReducedTrajectory",
    "conserved_functional",
    "integrate_reduced",
    "master_acceleration",
    "recover",
    "reduce",
]


class MismatchError(ValueError):
    """State is off the matched manifold, where the reduction does not hold."""


@dataclass(frozen=True)
class ReducedState:
    u: float  # x4
    v: float  # x4' = beta2 * x2
    a: float  # x4'' = beta1 * x1


def conserved_functional(u, v, a):
    return 2.0 * u * a - v * (v + 2.0)


def master_acceleration(u, v, C1):
    return (C1 + v * (v + 2.0)) / (2.0 * u)


def reduce(state: MarketState, params: ModelParams, tol: float = 1e-8) -> ReducedState:
    if state.x4 == 0:
        raise SingularityError("x4 = 0")
    ratio = params.ratio
    if abs(state.x3 / state.x4 - ratio) > tol * max(1.0, abs(ratio)):
        raise MismatchError(
            f"x3/x4 = {state.x3 / state.x4:.12g} differs from beta1/beta2 = {ratio:.12g}"
        )
    return ReducedState(state.x4, params.beta2 * state.x2, params.beta1 * state.x1)


def recover(reduced: ReducedState, params: ModelParams) -> tuple[float, float]:
    if params.beta1 == 0:
        raise ValueError("x1 cannot be recovered when beta1 = 0")
    return reduced.a / params.beta1, reduced.v / params.beta2


@dataclass
class ReducedTrajectory:
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    C1: float
    termination: Termination

    def __len__(self):
        return len(self.t)

    def invariant(self) -> np.ndarray:
        return conserved_functional(self.u, self.v, self.a)

    def recover(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        if params.beta1 == 0:
            raise ValueError("x1 cannot be recovered when beta1 = 0")
        return self.a / params.beta1, self.v / params.beta2

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "u", "v", "a"], np.column_stack([self.t, self.u, self.v, self.a]))


def integrate_reduced(
    u0: float,
    v0: float,
    C1: float,
    horizon: float,
    tol: Tolerances = Tolerances(),
    *,
    t_eval: Optional[Sequence[float]] = None,
) -> ReducedTrajectory:
    """Integrate u' = v, v' = (C1 + v(v+2)) / (2u) over ``[0, horizon]``.

    Stops with ``singularity`` when |u| reaches ``tol.x4_floor`` and with
    ``blow_up`` when |(u, v)| reaches ``tol.blow_up``.
    """
    if u0 == 0 or abs(u0) < tol.x4_floor:
        raise SingularityError("u0 must be nonzero")
    if not horizon > 0:
        raise ValueError("horizon must be positive")

    def f(t, y):
        return np.array([y[1], (C1 + y[1] * (y[1] + 2.0)) / (2.0 * y[0])])

    side = math.copysign(1.0, u0)
    events = [
        ode.Event(lambda t, y: side * y[0] - tol.x4_floor, direction=-1, name="singularity"),
        ode.Event(lambda t, y: math.hypot(y[0], y[1]) - tol.blow_up, direction=1, name="blow_up"),
    ]
    res = ode.dopri5(f, 0.0, [u0, v0], horizon, rtol=tol.rtol, atol=tol.atol, t_eval=t_eval,
                     events=events, h_min=tol.h_min, max_steps=tol.max_steps)
    if res.status == "event":
        term = Termination.SINGULARITY if res.event.name == "singularity" else Termination.BLOW_UP
    else:
        term = Termination.HORIZON
    if t_eval is None:
        t, y = res.t, res.y
    else:
        t, y = res.sample_t, res.sample_y
        if res.status == "event" and (t.size == 0 or res.t_event > t[-1]):
            t = np.append(t, res.t_event)
            y = np.vstack([y, res.y_event])
    u, v = y[:, 0], y[:, 1]
    return ReducedTrajectory(t, u, v, master_acceleration(u, v, C1), float(C1), term)
