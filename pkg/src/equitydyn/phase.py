"""Closed-form phase curves of the reduced dynamics and their geometry.

Along a homogeneous trajectory the phase-plane slope is

    dv/du = (C1 + v (v + 2)) / (2 u v),

which separates into d log|u| = 2v dv / (v^2 + 2v + C1).  The curve through
(u, v) = (1, v0) is |u| = F(v) with

    C1 > 1:        F = C2 (v^2 + 2v + C1) exp(-h(v)),
                   h = 2/sqrt(C1-1) * arctan((v+1)/sqrt(C1-1))
    C1 = 1:        F = C4 (v + 1)^2 exp(-2v/(v+1))
    C1 < 1, != 0:  F = C3 l+^(1+C5) l-^(1-C5),  C5 = (1-C1)^(-1/2),
                   l+ = |v + 1 + 1/C5|, l- = |v + 1 - 1/C5|
    C1 = 0:        F = C (v + 2)^2

with the constant fixed by F(v0) = 1.  The roots r+- = -1 +- sqrt(1-C1) of
v^2 + 2v + C1 are horizontal separatrices: F -> 0 at r- (tangency with the
u = 0 axis); at r+ the curve diverges when 0 < C1 < 1 and touches u = 0
when C1 < 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import ode
from .io import write_csv, write_json

__all__ = [
    "BranchError",
    "CrossingSlope",
    "CycleTrace",
    "PhaseCurve",
    "PhaseFeatures",
    "PoleError",
    "Regime",
    "always_detour",
    "crossing_slope",
    "cycle_points",
    "eval_curve",
    "features",
    "log_shape",
    "never_detour",
    "passage_split",
    "phase_curve",
    "random_policy",
    "roots",
    "sample_curve",
    "signed_curve",
    "slope_field",
    "trace_cycle",
]

POLE_GUARD = 1e-9
_EXACT = 1e-12


class PoleError(ValueError):
    """Evaluation inside the guard band of a divergent pole."""


class BranchError(ValueError):
    """A branch policy chose a continuation that is not available."""


class Regime(str, Enum):
    GT_1 = "C1_gt_1"
    EQ_1 = "C1_eq_1"
    LT_1 = "C1_lt_1"  # C1 < 1 and C1 != 0
    EQ_0 = "C1_eq_0"


def regime_of(C1: float) -> Regime:
    if abs(C1 - 1.0) <= _EXACT:
        return Regime.EQ_1
    if abs(C1) <= _EXACT:
        return Regime.EQ_0
    return Regime.GT_1 if C1 > 1 else Regime.LT_1


def roots(C1: float) -> Optional[tuple[float, float]]:
    """(r-, r+), the roots of v^2 + 2v + C1, or None when C1 > 1."""
    if C1 > 1 + _EXACT:
        return None
    s = math.sqrt(max(1.0 - C1, 0.0))
    return -1.0 - s, -1.0 + s


def slope_field(C1, u, v):
    return (C1 + v * (v + 2.0)) / (2.0 * u * v)


def log_shape(C1: float, v):
    """log of the unnormalised curve shape (``-inf`` where the curve touches u = 0)."""
    v = np.asarray(v, dtype=float)
    reg = regime_of(C1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if reg is Regime.GT_1:
            c = math.sqrt(C1 - 1.0)
            return np.log(v * v + 2 * v + C1) - (2.0 / c) * np.arctan((v + 1.0) / c)
        if reg is Regime.EQ_1:
            w = v + 1.0
            out = 2.0 * np.log(np.abs(w)) - 2.0 * v / w
            # both factors vanish/blow up at v = -1; the limit from below is 0
            return np.where(w == 0.0, -np.inf, out)
        if reg is Regime.EQ_0:
            return 2.0 * np.log(np.abs(v + 2.0))
        s = math.sqrt(1.0 - C1)
        C5 = 1.0 / s
        lp = np.abs(v + 1.0 + s)
        lm = np.abs(v + 1.0 - s)
        return (1.0 + C5) * np.log(lp) + (1.0 - C5) * np.log(lm)


@dataclass(frozen=True)
class PhaseCurve:
    C1: float
    v0: float
    regime: Regime
    norm_constant: float  # C2, C3, C4 or the C1 = 0 constant
    log_norm: float
    C5: Optional[float] = None

    @property
    def roots(self):
        return roots(self.C1)

    @property
    def has_divergent_pole(self) -> bool:
        return self.regime is Regime.LT_1 and self.C1 > 0


def phase_curve(C1: float, v0: float = 1.0) -> PhaseCurve:
    reg = regime_of(C1)
    if reg is Regime.EQ_1:
        C1 = 1.0
    elif reg is Regime.EQ_0:
        C1 = 0.0
    lg = float(log_shape(C1, v0))
    if not math.isfinite(lg):
        raise ValueError(f"v0={v0} lies on a separatrix of the C1={C1} family")
    C5 = (1.0 - C1) ** -0.5 if reg in (Regime.LT_1, Regime.EQ_0) else None
    return PhaseCurve(float(C1), float(v0), reg, math.exp(-lg), -lg, C5)


def _check_pole(curve: PhaseCurve, v: np.ndarray) -> None:
    if curve.has_divergent_pole:
        rp = curve.roots[1]
        if np.any(np.abs(v - rp) < POLE_GUARD):
            raise PoleError(f"v within {POLE_GUARD:g} of the pole at {rp:.12g}")


def eval_curve(curve: PhaseCurve, v):
    """|u| on the curve at ``v`` (scalar or array)."""
    va = np.asarray(v, dtype=float)
    _check_pole(curve, va)
    with np.errstate(over="ignore"):
        out = np.exp(curve.log_norm + log_shape(curve.C1, va))
    return float(out) if np.ndim(v) == 0 else out


def signed_curve(curve: PhaseCurve, v):
    """F(v) with the sign flipped across each root where the shape vanishes or diverges.

    Changes sign at the tangency and the pole, so both can be bracketed.
    """
    va = np.asarray(v, dtype=float)
    F = eval_curve(curve, va)
    r = curve.roots
    if curve.regime is Regime.LT_1:
        sgn = np.sign(va - r[0]) * np.sign(va - r[1])
    elif curve.regime is Regime.EQ_0:
        sgn = np.sign(va + 2.0)
    elif curve.regime is Regime.EQ_1:
        sgn = np.sign(va + 1.0)
    else:
        sgn = np.ones_like(va)
    out = sgn * F
    return float(out) if np.ndim(v) == 0 else out


def curve_derivative(curve: PhaseCurve, v):
    """dF/dv = F * 2v / (v^2 + 2v + C1)."""
    v = np.asarray(v, dtype=float)
    F = eval_curve(curve, v)
    if curve.regime is Regime.EQ_0:
        return F * 2.0 / (v + 2.0)
    return F * 2.0 * v / (v * v + 2 * v + curve.C1)


def sample_curve(curve: PhaseCurve, vs: Sequence[float]) -> np.ndarray:
    """Rows (v, u_plus, u_minus); points inside the pole guard band are skipped."""
    vs = np.asarray(vs, dtype=float)
    if curve.has_divergent_pole:
        vs = vs[np.abs(vs - curve.roots[1]) >= POLE_GUARD]
    F = eval_curve(curve, vs)
    return np.column_stack([vs, F, -F])


def write_curve_csv(path, curve: PhaseCurve, vs) -> None:
    write_csv(path, ["v", "u_plus", "u_minus"], sample_curve(curve, vs))


@dataclass
class PhaseFeatures:
    pole: Optional[float]
    pole_kind: Optional[str]  # "divergent" (F -> inf) or "contact" (F -> 0)
    tangency: Optional[float]
    v_axis_crossings: tuple
    bifurcation_points: dict
    sign_flip_interval: Optional[tuple]
    disconnected: bool

    def to_dict(self) -> dict:
        return {
            "pole": self.pole,
            "pole_kind": self.pole_kind,
            "tangency": self.tangency,
            "v_axis_crossings": list(self.v_axis_crossings),
            "bifurcation_points": {k: list(p) for k, p in self.bifurcation_points.items()},
            "sign_flip_interval": None if self.sign_flip_interval is None else list(self.sign_flip_interval),
            "disconnected": self.disconnected,
        }


def features(curve: PhaseCurve) -> PhaseFeatures:
    C1 = curve.C1
    reg = curve.regime
    r = curve.roots
    pole = kind = tangency = interval = None
    if reg is Regime.LT_1:
        pole = r[1]
        kind = "divergent" if C1 > 0 else "contact"
        tangency = r[0]
        interval = (r[0], r[1])
    elif reg in (Regime.EQ_0, Regime.EQ_1):
        tangency = r[0]
    F0 = eval_curve(curve, 0.0)
    crossings = (-F0, F0) if math.isfinite(F0) and F0 > 0 else ()
    pts = {}
    if tangency is not None:
        pts["B"] = (0.0, tangency)
    if crossings:
        pts["C"] = (-F0, 0.0)
        pts["D"] = (F0, 0.0)
    if pole is not None:
        pts["E"] = (0.0, pole)
    return PhaseFeatures(pole, kind, tangency, crossings, pts, interval, reg is Regime.GT_1)


def write_features_json(path, curve: PhaseCurve) -> None:
    doc = {"C1": curve.C1, "v0": curve.v0, "regime": curve.regime.value,
           "norm_constant": curve.norm_constant, "C5": curve.C5}
    doc.update(features(curve).to_dict())
    write_json(path, doc)


@dataclass(frozen=True)
class CrossingSlope:
    infinite: bool
    value: Optional[float] = None


def crossing_slope(curve: PhaseCurve, u: Optional[float] = None) -> CrossingSlope:
    """Slope dv/du where the curve meets v = 0 (at ``u``, default the D crossing)."""
    if curve.regime is not Regime.EQ_0:
        return CrossingSlope(True)
    if u is None:
        u = eval_curve(curve, 0.0)
    # C1 = 0: the slope field reduces to (v + 2) / (2u)
    return CrossingSlope(False, 1.0 / u)


# ---------------------------------------------------------------------------
# cycles of the C1 < 0 diagram

_OPTIONS = {
    "B": ("C", "explode"),
    "C": ("E", "G"),
    "D": ("B", "F"),
    "E": ("D", "explode"),
    "F": ("B",),
    "G": ("E",),
}

Policy = Callable[[str, tuple], str]


def never_detour(label: str, options: tuple) -> str:
    return options[0]


def always_detour(label: str, options: tuple) -> str:
    if label in ("C", "D"):
        return options[1]
    return options[0]


def random_policy(seed: int, p_detour: float = 0.5, p_explode: float = 0.0) -> Policy:
    rng = np.random.default_rng(seed)

    def policy(label: str, options: tuple) -> str:
        if len(options) == 1:
            return options[0]
        p = p_detour if label in ("C", "D") else p_explode
        return options[1] if rng.random() < p else options[0]

    return policy


@dataclass
class CycleTrace:
    labels: list
    explosion: Optional[str]  # "+inf" / "-inf"
    points: dict
    samples: list = field(default_factory=list)  # (label, u, v)

    @property
    def word(self) -> str:
        return "".join(self.labels)

    @property
    def closed(self) -> bool:
        return self.explosion is None and len(self.labels) > 1 and self.labels[0] == self.labels[-1]

    def to_csv(self, path) -> None:
        write_csv(path, ["label", "u", "v"], self.samples)


def _side_point(curve: PhaseCurve, target: float, lower: bool) -> float:
    """v on the outer component (above r+ or below r-) where F(v) = target."""
    rm, rp = curve.roots
    g = lambda v: eval_curve(curve, v) - target
    if lower:
        a, b = rm - 1.0, rm
        while g(a) < 0:
            a = rm - 2 * (rm - a)
        return brentq(g, a, b, xtol=1e-14)
    a, b = rp, rp + 1.0
    while g(b) < 0:
        b = rp + 2 * (b - rp)
    return brentq(g, a, b, xtol=1e-14)


def cycle_points(curve: PhaseCurve) -> dict:
    """Labelled points B, C, D, E, F, G of a C1 < 0 diagram.

    G (second quadrant) and F (fourth quadrant) sit on the outer components
    at the u-coordinates of C and D respectively.
    """
    if not (curve.regime is Regime.LT_1 and curve.C1 < 0):
        raise ValueError("cycles are defined for C1 < 0 diagrams")
    feats = features(curve)
    pts = dict(feats.bifurcation_points)
    uD = pts["D"][0]
    pts["G"] = (-uD, _side_point(curve, uD, lower=False))
    pts["F"] = (uD, _side_point(curve, uD, lower=True))
    return pts


def _arc(curve, sign, v_from, v_to, n):
    vs = np.linspace(v_from, v_to, n)
    return [(sign * eval_curve(curve, v), v) for v in vs]


def trace_cycle(curve: PhaseCurve, branch_policy: Policy = never_detour, start: str = "B",
                n_samples: int = 50, max_transitions: int = 1000) -> CycleTrace:
    """Walk the C1 < 0 diagram from ``start`` following u' = v.

    At every labelled point with a choice the policy receives the label and
    the available continuations and returns one of them.  The walk ends when
    ``start`` recurs or an explosive branch is taken.
    """
    pts = cycle_points(curve)
    if start not in _OPTIONS:
        raise ValueError(f"unknown start label {start!r}")
    rm, rp = curve.roots
    vG, vF = pts["G"][1], pts["F"][1]
    big = max(10.0, abs(vG), abs(vF)) * 4

    def edge(a, b):
        if (a, b) == ("B", "C"):
            return _arc(curve, -1, rm, 0.0, n_samples)
        if (a, b) == ("C", "E"):
            return _arc(curve, -1, 0.0, rp, n_samples)
        if (a, b) == ("G", "E"):
            return _arc(curve, -1, vG, rp, n_samples)
        if (a, b) == ("E", "D"):
            return _arc(curve, 1, rp, 0.0, n_samples)
        if (a, b) == ("D", "B"):
            return _arc(curve, 1, 0.0, rm, n_samples)
        if (a, b) == ("F", "B"):
            return _arc(curve, 1, vF, rm, n_samples)
        if (a, b) == ("E", "explode"):
            return _arc(curve, 1, rp, big, n_samples)
        if (a, b) == ("B", "explode"):
            return _arc(curve, -1, rm, -big, n_samples)
        return [pts[a], pts[b]]  # detour jump C->G, D->F

    labels = [start]
    samples = [(start, *pts[start])]
    here = start
    for _ in range(max_transitions):
        options = _OPTIONS[here]
        choice = branch_policy(here, options) if len(options) > 1 else options[0]
        if choice not in options:
            raise BranchError(f"{choice!r} is not reachable from {here} (options {options})")
        path = edge(here, choice)
        samples.extend(("", u, v) for u, v in path[1:-1])
        if choice == "explode":
            samples.append(("", *path[-1]))
            return CycleTrace(labels, "+inf" if here == "E" else "-inf", pts, samples)
        labels.append(choice)
        samples.append((choice, *pts[choice]))
        here = choice
        if here == start:
            break
    return CycleTrace(labels, None, pts, samples)


# ---------------------------------------------------------------------------
# sensitivity at the E passage


@dataclass
class PassageSplit:
    end_points: tuple  # ((u, v), (u, v)) at the requested arc length
    branches: tuple  # "explosive" / "returning" for the +eps and -eps runs
    separation: float


def passage_split(C1: float, eps: float, u_start: float = 0.01, arc_length: float = 1.0,
                  rtol: float = 1e-11, atol: float = 1e-14) -> PassageSplit:
    """Follow two trajectories leaving u = 0 at v = r+ +- eps.

    Both start at ``u_start`` > 0 just past the contact point E.  Each is
    integrated until it has covered ``arc_length`` in the (u, v) plane; the
    returned separation is the distance between the two end points.
    """
    r = roots(C1)
    if r is None or C1 >= 0:
        raise ValueError("the E passage exists for C1 < 0")
    rp = r[1]

    def f(t, y):
        a = (C1 + y[1] * (y[1] + 2.0)) / (2.0 * y[0])
        return np.array([y[1], a, math.hypot(y[1], a)])

    ends, branches = [], []
    for sgn in (1.0, -1.0):
        ev = ode.Event(lambda t, y: y[2] - arc_length, direction=1, name="arc")
        res = ode.dopri5(f, 0.0, [u_start, rp + sgn * eps, 0.0], 1e6, rtol=rtol, atol=atol,
                         events=[ev])
        u, v = res.y[-1, 0], res.y[-1, 1]
        ends.append((u, v))
        branches.append("explosive" if (u > 0 and v > rp) else "returning")
    sep = math.hypot(ends[0][0] - ends[1][0], ends[0][1] - ends[1][1])
    return PassageSplit(tuple(ends), tuple(branches), sep)
