"""Power-law tail exponents of per-run distributions.

Left tail: Pr(x < a) ~ a^lambda, fitted as a straight line of log F(a)
against log a over the lowest ``fit_fraction`` of the samples, where F is
the empirical CDF i/n.  The tail values enter the log as

  * a            when the tail is all positive (lambda > 0, tail at 0+),
  * |a|          when the tail is all negative (lambda < 0, tail at -inf),
  * a - min(x)   when the tail straddles zero (displacement from the edge;
                 the edge point itself is dropped).

Right tail: fit of the left tail of -x, i.e. log of the survival fraction
against log of the mirrored magnitude.  Hence right(-X) == left(X) exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .io import write_csv, write_json

__all__ = [
    "ExponentEnsembleStats",
    "TailFit",
    "exponent_stats",
    "fit_ensemble_tails",
    "fit_tail",
    "load_series",
]

MIN_SAMPLES = 100
MIN_POINTS = 10


@dataclass(frozen=True)
class TailFit:
    lambda_: float
    side: str
    fit_fraction: float
    r_squared: float
    n_points: int
    method: str = "ols"
    mode: str = "positive"  # positive | negative | displacement

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_, "side": self.side, "fit_fraction": self.fit_fraction,
                "r_squared": self.r_squared, "n_points": self.n_points, "method": self.method,
                "mode": self.mode}


def _left_points(x: np.ndarray, fit_fraction: float):
    """log-magnitude, log-CDF and mode for the left tail of sorted x."""
    n = x.size
    k = max(MIN_POINTS, int(math.floor(fit_fraction * n)))
    tail = x[:k]
    F = np.arange(1, k + 1) / n
    if tail[0] > 0:
        return np.log(tail), np.log(F), "positive"
    if tail[-1] < 0:
        return np.log(-tail), np.log(F), "negative"
    # straddles zero: displacement from the sample minimum
    d = tail - x[0]
    keep = d > 0
    if keep.sum() < MIN_POINTS:
        raise ValueError("too few distinct values in the tail")
    return np.log(d[keep]), np.log(F[keep]), "displacement"


def fit_tail(samples: Sequence[float], side: str = "left", fit_fraction: float = 0.1,
             method: str = "ols") -> TailFit:
    """Fit the power-law exponent of one tail of ``samples``.

    ``method="ols"`` is the least-squares slope of the log-log empirical
    CDF; ``method="mle"`` is the Hill estimator on the same tail points
    (same sign convention), reported with the OLS r^2.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if not 0 < fit_fraction <= 0.5:
        raise ValueError("fit_fraction must lie in (0, 0.5]")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if method not in ("ols", "mle"):
        raise ValueError("method must be 'ols' or 'mle'")
    xs = np.sort(-x if side == "right" else x)
    X, Y, mode = _left_points(xs, fit_fraction)
    if np.ptp(X) == 0:
        raise ValueError("tail has a single distinct value")
    slope, intercept, r, _, _ = stats.linregress(X, Y)
    r2 = min(1.0, max(0.0, r * r))
    lam = float(slope)
    if method == "mle":
        # Hill estimator on the magnitude that grows into the tail
        m = np.exp(-X) if mode != "negative" else np.exp(X)
        m = np.sort(m)[::-1]
        k = m.size - 1
        alpha = k / float(np.sum(np.log(m[:k] / m[k])))
        lam = -alpha if mode == "negative" else alpha
    return TailFit(lam, side, float(fit_fraction), float(r2), int(X.size), method, mode)


@dataclass
class ExponentEnsembleStats:
    mean: float
    std: float
    skewness: float
    normal_probability_plot: np.ndarray  # (n, 2): theoretical, sample
    degenerate: bool = False
    n: int = 0

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "skewness": self.skewness,
                "degenerate": self.degenerate, "n": self.n}


def exponent_stats(lambdas: Sequence[float]) -> ExponentEnsembleStats:
    lam = np.asarray(lambdas, dtype=float)
    if lam.size < 30:
        raise ValueError("need at least 30 exponents")
    n = lam.size
    q = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    plot = np.column_stack([q, np.sort(lam)])
    sd = float(lam.std(ddof=1))
    degenerate = sd == 0.0 or np.ptp(lam) == 0.0
    skew = 0.0 if degenerate else float(stats.skew(lam))
    return ExponentEnsembleStats(float(lam.mean()), 0.0 if degenerate else sd, skew, plot,
                                 bool(degenerate), int(n))


def load_series(ensemble_dir) -> dict:
    """Per-run (t, x1, x2) arrays saved by an ensemble run."""
    sdir = Path(ensemble_dir) / "series"
    if not sdir.is_dir():
        raise FileNotFoundError(f"no series directory in {ensemble_dir}")
    out = {}
    for p in sorted(sdir.glob("run_*.npy")):
        a = np.load(p)
        out[int(p.stem.split("_")[1])] = (a[0], a[1], a[2])
    return out


def fit_ensemble_tails(series: dict, side: str = "left", fit_fraction: float = 0.1,
                       method: str = "ols", variables: Iterable[str] = ("x1", "x2")) -> list:
    """Rows (run, variable, side, lambda, r2, n_points); runs too short to fit are skipped."""
    rows = []
    col = {"x1": 1, "x2": 2}
    for run in sorted(series):
        data = series[run]
        for var in variables:
            x = data[col[var]]
            if len(x) < MIN_SAMPLES:
                continue
            try:
                f = fit_tail(x, side, fit_fraction, method)
            except ValueError:
                continue
            rows.append((run, var, side, f.lambda_, f.r_squared, f.n_points))
    return rows


def write_tail_outputs(out_dir, rows: list) -> dict:
    """Fit table, per-variable stats JSON and normal-plot CSVs."""
    out = Path(out_dir)
    write_csv(out / "tail_fits.csv", ["run", "variable", "side", "lambda", "r2", "n_points"], rows)
    doc = {}
    for var in sorted({r[1] for r in rows}):
        lam = [r[3] for r in rows if r[1] == var]
        if len(lam) < 30:
            continue
        st = exponent_stats(lam)
        d = st.to_dict()
        d["max_abs_lambda"] = float(np.max(np.abs(lam)))
        doc[var] = d
        write_csv(out / f"normal_plot_{var}.csv", ["theoretical", "sample"], st.normal_probability_plot)
    write_json(out / "tail_stats.json", doc)
    return doc
