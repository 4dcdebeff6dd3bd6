"""State, parameters and time integration of the four-equation model.

    x1' = x1 / x4 + z
    x2' = x3 * x1 / x4
    x3' = beta1 * x2
    x4' = beta2 * x2

x1 is the price deviation, x2 the volume innovation, x3 and x4 are the
unobserved coupling slopes, z an exogenous input (the market maker's action).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import ode
from .ode import StepSizeUnderflow

__all__ = [
    "MarketState",
    "ModelParams",
    "SampledPath",
    "SingularityError",
    "StepSizeUnderflow",
    "Termination",
    "Tolerances",
    "Trajectory",
    "as_input",
    "integrate",
    "matched_initial_state",
    "motion_integral",
    "rhs",
]


class SingularityError(ArithmeticError):
    """|x4| fell below the singularity floor."""


@dataclass(frozen=True)
class MarketState:
    x1: float
    x2: float
    x3: float
    x4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "MarketState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class ModelParams:
    """Dynamics coefficients and the market maker's problem constants.

    ``c1`` weights volume in the profit rate, ``c2`` penalises trend,
    ``U`` caps the integrated squared price increments and ``L`` is the
    worst acceptable profit rate.
    """

    beta1: float = 1.0
    beta2: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    U: float = 1.0
    L: float = -1.0

    def __post_init__(self):
        if self.beta2 == 0:
            raise ValueError("beta2 must be nonzero")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if not self.U > 0:
            raise ValueError("U must be positive")

    @property
    def ratio(self) -> float:
        """beta1 / beta2, the x3/x4 ratio on the matched manifold."""
        return self.beta1 / self.beta2

    def replace(self, **changes) -> "ModelParams":
        d = asdict(self)
        d.update(changes)
        return ModelParams(**d)


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-9
    atol: float = 1e-12
    x4_floor: float = 1e-8
    blow_up: float = 1e12
    h_min: float = 1e-14
    max_steps: int = 2_000_000


class Termination(str, Enum):
    HORIZON = "horizon_reached"
    SINGULARITY = "singularity"
    BLOW_UP = "blow_up"


def rhs(state: Union[MarketState, Sequence[float]], z: float, params: ModelParams,
        floor: float = Tolerances.x4_floor) -> np.ndarray:
    """Right-hand side of the model at ``state`` under input ``z``."""
    x1, x2, x3, x4 = state.as_array() if isinstance(state, MarketState) else state
    if abs(x4) < floor:
        raise SingularityError(f"|x4|={abs(x4):.3g} below floor {floor:.3g}")
    r = x1 / x4
    return np.array([r + z, x3 * r, params.beta1 * x2, params.beta2 * x2])


def matched_initial_state(x1_0: float, x2_0: float, x4_0: float,
                          params: ModelParams) -> MarketState:
    """Initial state on the manifold beta2 * x3 = beta1 * x4."""
    if x4_0 == 0:
        raise ValueError("x4_0 must be nonzero")
    return MarketState(float(x1_0), float(x2_0), params.ratio * x4_0, float(x4_0))


def motion_integral(state: Union[MarketState, Sequence[float]], params: ModelParams) -> float:
    """2 x4 x4'' - x4' (x4' + 2), with x4'' = beta2 * x2' taken from the rhs."""
    x1, x2, x3, x4 = state.as_array() if isinstance(state, MarketState) else state
    v = params.beta2 * x2
    a = params.beta2 * x3 * x1 / x4
    return 2.0 * x4 * a - v * (v + 2.0)


class SampledPath:
    """Piecewise-linear input path; held at the end values outside the samples."""

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        t = np.asarray(times, dtype=float)
        z = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != z.shape or t.size < 1:
            raise ValueError("times and values must be 1-d and of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(z))):
            raise ValueError("sampled path must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        self.times = t
        self.values = z
        self.extrapolated = False

    def __call__(self, t: float) -> float:
        if t > self.times[-1] or t < self.times[0]:
            self.extrapolated = True
        return float(np.interp(t, self.times, self.values))


InputLike = Union[None, float, Callable[[float], float], SampledPath, object]


def as_input(z: InputLike) -> Callable[[float, np.ndarray], float]:
    """Normalise an input spec to a ``(t, state_array) -> z`` callable.

    Accepts None (zero input), a constant, a function of time, a
    :class:`SampledPath`, or any object with a ``value(t, state)`` method
    (state feedback, e.g. ``forcing.ControlInput``).
    """
    if z is None:
        return lambda t, y: 0.0
    if isinstance(z, (int, float)):
        c = float(z)
        return lambda t, y: c
    if hasattr(z, "value"):
        return z.value
    if callable(z):
        return lambda t, y: float(z(t))
    raise TypeError(f"unsupported input {z!r}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 4)
    inputs: Optional[np.ndarray]
    termination: Termination
    params: ModelParams = field(default_factory=ModelParams)
    tolerances: Tolerances = field(default_factory=Tolerances)
    method: str = "dopri5"

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def x1(self):
        return self.states[:, 0]

    @property
    def x2(self):
        return self.states[:, 1]

    @property
    def x3(self):
        return self.states[:, 2]

    @property
    def x4(self):
        return self.states[:, 3]

    def state(self, i: int) -> MarketState:
        return MarketState.from_array(self.states[i])

    def derivatives(self) -> np.ndarray:
        """Right-hand side at every sample (uses the recorded inputs)."""
        z = self.inputs if self.inputs is not None else np.zeros(len(self))
        return np.array([
            rhs(s, zi, self.params, floor=0.0) for s, zi in zip(self.states, z)
        ]).reshape(-1, 4)

    def motion_integral(self) -> np.ndarray:
        return np.array([motion_integral(s, self.params) for s in self.states])

    def conservation_drift(self) -> tuple[float, float]:
        """Maximum drift of the motion integral: (relative to |C1|, relative to term size).

        The second form divides by max(|C1|, |2 x4 x4''|, |x4'(x4'+2)|) at each
        sample, the scale at which the two terms cancel.
        """
        x = self.states
        v = self.params.beta2 * x[:, 1]
        a = self.params.beta2 * x[:, 2] * x[:, 0] / x[:, 3]
        C = 2.0 * x[:, 3] * a - v * (v + 2.0)
        d = np.abs(C - C[0])
        scale = np.maximum.reduce([np.full(d.shape, abs(C[0])), np.abs(2.0 * x[:, 3] * a),
                                   np.abs(v * (v + 2.0))])
        rel = float(d.max() / abs(C[0])) if C[0] != 0 else float(d.max())
        return rel, float(np.max(d / np.where(scale > 0, scale, 1.0)))

    def to_csv(self, path) -> None:
        from .io import write_csv
        z = self.inputs if self.inputs is not None else np.zeros(len(self))
        write_csv(path, ["t", "x1", "x2", "x3", "x4", "z"],
                  np.column_stack([self.times, self.states, z]))

    def to_json(self) -> str:
        from .io import fmt
        doc = {
            "params": asdict(self.params),
            "termination": self.termination.value,
            "tolerances": asdict(self.tolerances),
            "method": self.method,
            "n_samples": len(self),
            "t_final": fmt(self.times[-1]),
            "final_state": [fmt(x) for x in self.states[-1]],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def integrate(
    initial: Union[MarketState, Sequence[float]],
    z: InputLike,
    params: ModelParams,
    horizon: float,
    tol: Tolerances = Tolerances(),
    *,
    t_eval: Optional[Sequence[float]] = None,
    method: str = "dopri5",
    dt: Optional[float] = None,
) -> Trajectory:
    """Integrate the model from ``initial`` over ``[0, horizon]``.

    Integration stops early (with the matching termination label) when
    |x4| reaches the singularity floor or the state norm reaches the blow-up
    threshold; the terminal state is appended to the samples.  With
    ``t_eval=None`` the accepted steps are returned.
    """
    y0 = initial.as_array() if isinstance(initial, MarketState) else np.asarray(initial, float)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if abs(y0[3]) < tol.x4_floor:
        raise SingularityError("initial |x4| below floor")
    zf = as_input(z)
    b1, b2 = params.beta1, params.beta2

    def f(t, y):
        r = y[0] / y[3]
        return np.array([r + zf(t, y), y[2] * r, b1 * y[1], b2 * y[1]])

    side = math.copysign(1.0, y0[3])
    events = [
        ode.Event(lambda t, y: side * y[3] - tol.x4_floor, direction=-1, name="singularity"),
        ode.Event(lambda t, y: float(np.linalg.norm(y)) - tol.blow_up, direction=1, name="blow_up"),
    ]
    if method == "dopri5":
        try:
            res = ode.dopri5(f, 0.0, y0, horizon, rtol=tol.rtol, atol=tol.atol, t_eval=t_eval,
                             events=events, h_min=tol.h_min, max_steps=tol.max_steps)
        except StepSizeUnderflow as exc:
            raise StepSizeUnderflow(exc.t, exc.h) from None
    elif method == "rk4":
        if dt is None:
            raise ValueError("rk4 needs dt")
        res = ode.rk4(f, 0.0, y0, horizon, dt, t_eval=t_eval, events=events)
    else:
        raise ValueError(f"unknown method {method!r}")

    if res.status == "event":
        term = Termination.SINGULARITY if res.event.name == "singularity" else Termination.BLOW_UP
    else:
        term = Termination.HORIZON

    if t_eval is None:
        times, states = res.t, res.y
    else:
        times, states = res.sample_t, res.sample_y
        if res.status == "event" and (times.size == 0 or res.t_event > times[-1]):
            times = np.append(times, res.t_event)
            states = np.vstack([states, res.y_event])
    inputs = np.array([zf(t, y) for t, y in zip(times, states)])
    return Trajectory(np.asarray(times, float), np.asarray(states, float), inputs, term,
                      params, tol, method)
