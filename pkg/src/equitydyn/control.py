"""The market maker's problem: minimise |corr(z, x1)| subject to

    integral(x1'^2 dt) <= U                              (price regularity)
    c2 beta2 x1' - c1 beta1 U x1 + beta2 L <= 0  for all t  (profit rate >= L)

with profit rate Pi' = c1 U (beta1/beta2) x1 - c2 x1'.  Strategies are drawn
from a one-parameter family, by default z~(u) = k/u.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .core import MarketState, ModelParams, Tolerances, matched_initial_state
from .forcing import ControlInput, integrate_forced_full
from .io import write_csv, write_json
from .montecarlo import DegenerateSeriesError, correlation

__all__ = [
    "ControlProblem",
    "SearchResult",
    "StrategyEvaluation",
    "default_initial_state",
    "evaluate_path",
    "evaluate_strategy",
    "reevaluate",
    "search_strategies",
    "strategy_grid",
]


def default_initial_state(params: ModelParams) -> MarketState:
    """x4 = 1, x4' = 0.5 with motion integral -0.5 (a smooth, growing branch)."""
    u, v, C1 = 1.0, 0.5, -0.5
    a = (C1 + v * (v + 2.0)) / (2.0 * u)
    return matched_initial_state(a / params.beta1, v / params.beta2, u, params)


@dataclass
class ControlProblem:
    params: ModelParams = field(default_factory=ModelParams)
    k_range: tuple = (-0.1, 0.1)
    horizon: float = 5.0
    sample_dt: float = 0.01
    tol: Tolerances = field(default_factory=Tolerances)
    family: Callable[[float], ControlInput] = ControlInput.inverse_u
    threads: int = 1

    def __post_init__(self):
        lo, hi = self.k_range
        if lo > hi:
            raise ValueError("k_range must be ordered")
        if not lo <= 0.0 <= hi:
            raise ValueError("the strategy family must contain the zero strategy")
        if not (self.horizon > 0 and self.sample_dt > 0):
            raise ValueError("horizon and sample_dt must be positive")

    def times(self) -> np.ndarray:
        n = int(math.floor(self.horizon / self.sample_dt + 1e-9))
        return np.arange(n + 1) * self.sample_dt


@dataclass
class StrategyEvaluation:
    objective: Optional[float]  # None when z has zero variance
    regularity: float
    profit_constraint_margin: float
    feasible: bool
    profit_path: Optional[np.ndarray] = None  # (n, 2): t, Pi(t)
    strategy_param: Optional[float] = None
    termination: str = "horizon_reached"
    violations: dict = field(default_factory=dict)
    series: Optional[tuple] = None  # (t, x1, x1dot, z), kept for re-evaluation

    @property
    def objective_defined(self) -> bool:
        return self.objective is not None

    def row(self) -> tuple:
        return (self.strategy_param, self.objective, self.regularity,
                self.profit_constraint_margin, self.feasible)


def evaluate_path(times: Sequence[float], x1: Sequence[float], x1dot: Sequence[float],
                  z: Sequence[float], params: ModelParams) -> StrategyEvaluation:
    """Objective and constraints of a sampled price path (x1' given, never differenced)."""
    t = np.asarray(times, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    d1 = np.asarray(x1dot, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (t.shape == x1.shape == d1.shape == z.shape) or t.size < 2:
        raise ValueError("series must share one length >= 2")
    b1, b2, c1, c2, U, L = (params.beta1, params.beta2, params.c1, params.c2, params.U, params.L)
    regularity = float(trapezoid(d1 * d1, t))
    margin = float(np.max(c2 * b2 * d1 - c1 * b1 * U * x1 + b2 * L))
    rate = c1 * U * (b1 / b2) * x1 - c2 * d1
    profit = np.column_stack([t, cumulative_trapezoid(rate, t, initial=0.0)])
    try:
        objective = abs(correlation(z, x1))
    except DegenerateSeriesError:
        objective = None
    violations = {}
    if regularity > U:
        violations["regularity"] = regularity - U
    if margin > 0:
        violations["profit_rate"] = margin
    return StrategyEvaluation(objective, regularity, margin, not violations, profit,
                              violations=violations, series=(t, x1, d1, z))


def reevaluate(ev: StrategyEvaluation, params: ModelParams) -> StrategyEvaluation:
    """Same sampled run under different constraint constants."""
    out = evaluate_path(*ev.series, params)
    out.strategy_param = ev.strategy_param
    out.termination = ev.termination
    return out


def evaluate_strategy(problem: ControlProblem, strategy, initial: MarketState) -> StrategyEvaluation:
    """Integrate under ``strategy`` (a ControlInput or a family parameter k) and evaluate."""
    k = None
    if not isinstance(strategy, ControlInput):
        k = float(strategy)
        strategy = problem.family(k)
    elif strategy.k is not None:
        k = strategy.k
    times = problem.times()
    tr = integrate_forced_full(initial, strategy, problem.params, float(times[-1]), problem.tol,
                               t_eval=times)
    x1dot = tr.derivatives()[:, 0]
    ev = evaluate_path(tr.times, tr.x1, x1dot, tr.inputs, problem.params)
    ev.strategy_param = k
    ev.termination = tr.termination.value
    return ev


@dataclass
class SearchResult:
    feasible: list
    infeasible: list

    @property
    def best(self) -> Optional[StrategyEvaluation]:
        return self.feasible[0] if self.feasible else None

    @property
    def empty(self) -> bool:
        return not self.feasible

    def rows(self) -> list:
        return [e.row() for e in self.feasible + self.infeasible]

    def write(self, out_dir, config: Optional[dict] = None) -> None:
        from pathlib import Path
        out = Path(out_dir)
        write_csv(out / "strategies.csv",
                  ["strategy_param", "objective", "regularity", "margin", "feasible"], self.rows())
        b = self.best
        doc = {
            "n_evaluated": len(self.feasible) + len(self.infeasible),
            "n_feasible": len(self.feasible),
            "feasible_set_empty": self.empty,
            "best": None if b is None else {
                "strategy_param": b.strategy_param, "objective": b.objective,
                "objective_defined": b.objective_defined, "regularity": b.regularity,
                "margin": b.profit_constraint_margin},
            "infeasible": [{"strategy_param": e.strategy_param, "violations": e.violations}
                           for e in self.infeasible],
        }
        if config is not None:
            doc["config"] = config
        write_json(out / "control_summary.json", doc)


def _rank_key(ev: StrategyEvaluation):
    # defined objectives first, ascending; ties broken by parameter
    return (ev.objective is None, ev.objective if ev.objective is not None else 0.0,
            ev.strategy_param if ev.strategy_param is not None else 0.0)


def strategy_grid(problem: ControlProblem, n: int) -> np.ndarray:
    """n evenly spaced family parameters, always including k = 0."""
    lo, hi = problem.k_range
    if n <= 1 or lo == hi:
        return np.array([0.0])
    g = np.linspace(lo, hi, n)
    g[np.argmin(np.abs(g))] = 0.0
    return g


def search_strategies(problem: ControlProblem, initial: MarketState, budget: int = 41,
                      seed: int = 0, refine_fraction: float = 0.2) -> SearchResult:
    """Grid over the family plus seeded refinement around the best feasible point.

    Deterministic given ``seed``; an empty feasible set is reported, not raised.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lo, hi = problem.k_range
    n_ref = int(budget * refine_fraction) if lo < hi else 0
    grid = strategy_grid(problem, budget - n_ref)

    def run(ks):
        if problem.threads > 1:
            with ThreadPoolExecutor(max_workers=problem.threads) as pool:
                return list(pool.map(lambda k: evaluate_strategy(problem, k, initial), ks))
        return [evaluate_strategy(problem, k, initial) for k in ks]

    evals = run(grid)
    feas = [e for e in evals if e.feasible]
    if n_ref and feas:
        best = min(feas, key=_rank_key)
        width = (hi - lo) / max(len(grid) - 1, 1)
        rng = np.random.default_rng(seed)
        ks = np.clip(best.strategy_param + rng.uniform(-width, width, n_ref), lo, hi)
        seen = {e.strategy_param for e in evals}
        ks = [k for k in dict.fromkeys(ks.tolist()) if k not in seen]
        evals += run(ks)
    feasible = sorted((e for e in evals if e.feasible), key=_rank_key)
    infeasible = sorted((e for e in evals if not e.feasible), key=lambda e: e.strategy_param)
    return SearchResult(feasible, infeasible)
