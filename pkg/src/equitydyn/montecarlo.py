"""Ensembles of reduced runs and the price/volume correlation statistic.

Each run draws an initial point (u0, v0), integrates the reduced dynamics
with seeded branch choices at the bifurcation passages, recovers
x1 = a / beta1 and x2 = v / beta2 on a uniform grid and records
|corr(x1, x2)|.

Branch choices:
  * at a v = 0 crossing of the C1 < 0 oval (points C and D) the run jumps,
    with probability ``p_detour``, to the same-curve point at equal u on
    the outer band (C -> G, D -> F);
  * at a u = 0 passage (points B and E) the run takes the explosive side
    with probability ``p_explode``.

Time scale: the dynamics are invariant under (u, t) -> (lam u, lam t), so a
run on a large-|u| curve is a slowed-down copy of one on a small-|u|
curve.  With ``time_scale="curve"`` (default) every run is mapped onto the
reference curve through (1, ``reference_v0``) before integration, which
measures ``horizon`` and ``sample_dt`` in that curve's own time.
``time_scale="absolute"`` integrates the sampled u0 unchanged.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .core import ModelParams, Termination
from .io import write_csv, write_json
from .phase import Regime, log_shape, regime_of, roots

__all__ = [
    "DegenerateSeriesError",
    "EnsembleConfig",
    "EnsembleError",
    "EnsembleResult",
    "FixedSampler",
    "RunRecord",
    "UniformSampler",
    "correlation",
    "run_ensemble",
    "simulate_run",
]

PAPER_BOUND = 0.8

_REG = {Regime.GT_1: _kernel.GT_1, Regime.EQ_1: _kernel.EQ_1,
        Regime.LT_1: _kernel.LT_1, Regime.EQ_0: _kernel.EQ_0}
_TERM = {_kernel.HORIZON: Termination.HORIZON.value,
         _kernel.SINGULARITY: Termination.SINGULARITY.value,
         _kernel.BLOW_UP: Termination.BLOW_UP.value,
         _kernel.STEP_FAIL: "step_failure"}


class DegenerateSeriesError(ValueError):
    """Correlation requested for a series with zero variance."""


class EnsembleError(RuntimeError):
    """Too few usable runs in an ensemble."""


def correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson sample correlation of two aligned series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("series must be 1-d, of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    # relative test: rounding leaves ~eps-level residue in a constant series
    if sxx <= (1e-13 * np.abs(x).max()) ** 2 * x.size or syy <= (1e-13 * np.abs(y).max()) ** 2 * y.size:
        raise DegenerateSeriesError("zero-variance series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class UniformSampler:
    """u0 uniform on ``u_range`` with a random sign, v0 uniform on ``v_range``.

    v0 is redrawn while it lies within ``exclusion`` of a separatrix
    -1 +- sqrt(1 - C1).
    """

    u_range: tuple = (0.2, 2.0)
    v_range: tuple = (-3.0, 1.0)
    exclusion: float = 1e-3
    both_signs: bool = True

    def sample(self, rng: np.random.Generator, C1: float) -> tuple[float, float]:
        u = rng.uniform(*self.u_range)
        if self.both_signs and rng.random() < 0.5:
            u = -u
        r = roots(C1)
        for _ in range(10_000):
            v = rng.uniform(*self.v_range)
            if r is None or min(abs(v - r[0]), abs(v - r[1])) >= self.exclusion:
                return float(u), float(v)
        raise ValueError("sampler cannot avoid the separatrix band")


@dataclass(frozen=True)
class FixedSampler:
    """Every run starts at the same (u0, v0)."""

    u0: float = 1.0
    v0: float = 1.0

    def sample(self, rng: np.random.Generator, C1: float) -> tuple[float, float]:
        return float(self.u0), float(self.v0)


@dataclass
class EnsembleConfig:
    n_runs: int = 1000
    C1: float = -0.5
    params: ModelParams = field(default_factory=ModelParams)
    sampler: object = field(default_factory=UniformSampler)
    horizon: float = 50.0
    sample_dt: float = 0.01
    seed: int = 0
    p_detour: float = 0.5
    p_explode: float = 0.0
    time_scale: str = "curve"
    reference_v0: float = 1.0
    min_samples: int = 50
    min_valid_runs: int = 1
    explosion: str = "commit"  # stop on entering an explosive band, or "integrate" to the threshold
    rtol: float = 1e-9
    atol: float = 1e-12
    gate_u: float = 1e-4
    gate_w: float = 1e-6
    blow_up: float = 1e12
    h_min: float = 1e-14
    max_steps: int = 2_000_000
    keep_series: bool = False
    threads: int = 1

    def __post_init__(self):
        if int(self.n_runs) < 1:
            raise ValueError("n_runs must be >= 1")
        if not (self.sample_dt > 0 and self.horizon > 0):
            raise ValueError("horizon and sample_dt must be positive")
        if not (0 <= self.p_detour <= 1 and 0 <= self.p_explode <= 1):
            raise ValueError("branch probabilities must lie in [0, 1]")
        if self.time_scale not in ("curve", "absolute"):
            raise ValueError("time_scale must be 'curve' or 'absolute'")
        if self.explosion not in ("commit", "integrate"):
            raise ValueError("explosion must be 'commit' or 'integrate'")
        if self.params.beta1 == 0:
            raise ValueError("beta1 = 0 leaves x1 unrecoverable")
        if self.min_samples < 2:
            raise ValueError("min_samples must be >= 2")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    run: int
    u0: float  # as sampled
    v0: float
    u_start: float  # after time scaling
    termination: str
    abs_rho: Optional[float]
    excluded: Optional[str]  # None, "too_short" or "degenerate"
    n_valid: int
    passages: int
    detours: int
    t: Optional[np.ndarray] = None
    x1: Optional[np.ndarray] = None
    x2: Optional[np.ndarray] = None


def simulate_run(config: EnsembleConfig, run: int, keep_series: bool = True) -> RunRecord:
    """One ensemble member; depends only on (config, seed, run)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(run)]))
    C1 = float(config.C1)
    u0, v0 = config.sampler.sample(rng, C1)
    reg = regime_of(C1)
    if config.time_scale == "curve":
        ref = float(log_shape(C1, config.reference_v0))
        u_start = math.copysign(math.exp(float(log_shape(C1, v0)) - ref), u0)
    else:
        u_start = u0

    n_out = int(math.floor(config.horizon / config.sample_dt + 1e-9)) + 1
    U = np.empty(n_out)
    V = np.empty(n_out)
    A = np.empty(n_out)
    valid = np.empty(n_out, dtype=np.uint8)
    draws = rng.random(256)
    while True:
        n, code, nd, passages, detours, steps, t_end = _kernel.simulate(
            u_start, v0, C1, _REG[reg], float(config.horizon), float(config.sample_dt),
            config.rtol, config.atol, config.gate_u, config.gate_w,
            config.p_detour, config.p_explode, config.explosion == "commit",
            config.blow_up, config.h_min, config.max_steps, draws, U, V, A, valid)
        if code != _kernel.NO_DRAWS:
            break
        draws = np.concatenate([draws, rng.random(draws.size)])

    mask = valid[:n].astype(bool)
    t = np.arange(n)[mask] * config.sample_dt
    x1 = A[:n][mask] / config.params.beta1
    x2 = V[:n][mask] / config.params.beta2
    rho = None
    excluded = None
    if mask.sum() < config.min_samples:
        excluded = "too_short"
    else:
        try:
            rho = abs(correlation(x1, x2))
        except DegenerateSeriesError:
            excluded = "degenerate"
    rec = RunRecord(run, u0, v0, u_start, _TERM[code], rho, excluded, int(mask.sum()),
                    int(passages), int(detours))
    if keep_series:
        rec.t, rec.x1, rec.x2 = t, x1, x2
    return rec


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    records: list

    @property
    def completed(self) -> list:
        return [r for r in self.records if r.excluded is None]

    @property
    def correlations(self) -> np.ndarray:
        return np.array([r.abs_rho for r in self.completed])

    @property
    def run_terminations(self) -> list:
        return [r.termination for r in self.records]

    @property
    def excluded(self) -> list:
        return [(r.run, r.excluded) for r in self.records if r.excluded is not None]

    @property
    def per_run_series(self) -> dict:
        return {r.run: (r.t, r.x1, r.x2) for r in self.completed if r.t is not None}

    def histogram(self, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.correlations, bins=bins, range=(0.0, 1.0))[::-1]

    def summary(self) -> dict:
        rho = self.correlations
        terms: dict = {}
        for r in self.records:
            terms[r.termination] = terms.get(r.termination, 0) + 1
        stat = (lambda f: float(f(rho))) if rho.size else (lambda f: None)
        return {
            "n_runs": len(self.records),
            "completed": len(rho),
            "excluded": len(self.records) - len(rho),
            "terminations": terms,
            "abs_rho_max": stat(np.max),
            "abs_rho_p99": stat(lambda r: np.percentile(r, 99)),
            "abs_rho_mean": stat(np.mean),
            "reference_bound": PAPER_BOUND,
            "fraction_below_reference_bound": stat(lambda r: np.mean(r < PAPER_BOUND)),
        }

    def write(self, out_dir, bins: int = 20, series: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        edges, counts = self.histogram(bins)
        write_csv(out / "histogram.csv", ["bin_left", "bin_right", "count"],
                  zip(edges[:-1], edges[1:], counts))
        write_csv(out / "correlations.csv", ["run", "abs_rho", "termination"],
                  ((r.run, r.abs_rho, r.termination) for r in self.records))
        write_csv(out / "runs.csv",
                  ["run", "u0", "v0", "u_start", "termination", "excluded", "n_valid", "passages", "detours"],
                  ((r.run, r.u0, r.v0, r.u_start, r.termination, r.excluded or "", r.n_valid,
                    r.passages, r.detours) for r in self.records))
        write_json(out / "summary.json", self.summary())
        if series:
            sdir = out / "series"
            sdir.mkdir(exist_ok=True)
            for run, (t, x1, x2) in self.per_run_series.items():
                np.save(sdir / f"run_{run:05d}.npy", np.vstack([t, x1, x2]))


def run_ensemble(config: EnsembleConfig) -> EnsembleResult:
    """Run all members; results are ordered by run index whatever ``threads`` is."""
    idx = range(int(config.n_runs))
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(lambda i: simulate_run(config, i, config.keep_series), idx))
    else:
        records = [simulate_run(config, i, config.keep_series) for i in idx]
    res = EnsembleResult(config, records)
    if len(res.completed) < config.min_valid_runs:
        raise EnsembleError(
            f"only {len(res.completed)} usable runs out of {config.n_runs} (need {config.min_valid_runs})")
    return res
