"""Least-squares fit of the occupancy recursion ``O' = k Q + beta O + lambda``.

The design matrix has columns ``[q, o, 1]``. Samples whose next occupancy
sits on the [0, 1] clamp carry no information about the linear law and are
dropped before fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateDataError

COLUMNS = ("q", "o", "1")
RANK_TOL = 1e-10
REPORT_KEYS = ("k", "beta", "lambda", "rmse", "n")


@dataclass(frozen=True)
class RegressionSample:
    q: float
    o: float
    o_next: float

    def __post_init__(self):
        for name in ("q", "o", "o_next"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (0.0 <= self.o <= 1.0 and 0.0 <= self.o_next <= 1.0):
            raise ValueError("occupancies must lie in [0, 1]")

    @property
    def clamped(self) -> bool:
        return self.o_next <= 0.0 or self.o_next >= 1.0


@dataclass(frozen=True)
class FitResult:
    k: float
    beta: float
    lam: float
    rmse: float
    n: int
    excluded: int = 0

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a fit needs at least 3 samples")
        if not self.rmse >= 0:
            raise ValueError("rmse must be >= 0")


def _rank_check(X: np.ndarray) -> None:
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size and diag[0] > 0 else 1.0
    weak = [COLUMNS[piv[i]] for i in range(X.shape[1]) if diag[i] <= RANK_TOL * scale]
    if weak:
        raise DegenerateDataError(
            f"design matrix [q, o, 1] is rank deficient; collinear column(s): {', '.join(weak)}",
            tuple(weak),
        )


def fit_occupancy_params(samples) -> FitResult:
    samples = list(samples)
    kept = [s for s in samples if not s.clamped]
    excluded = len(samples) - len(kept)
    if len(kept) < 3:
        raise DegenerateDataError(
            f"need at least 3 unclamped samples, got {len(kept)} ({excluded} clamped)", COLUMNS
        )
    X = np.array([[s.q, s.o, 1.0] for s in kept])
    y = np.array([s.o_next for s in kept])
    _rank_check(X)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    rmse = float(np.sqrt(np.mean(resid**2)))
    return FitResult(
        k=float(coef[0]), beta=float(coef[1]), lam=float(coef[2]), rmse=rmse, n=len(kept), excluded=excluded
    )


def fit_report(fit: FitResult) -> dict:
    """Plain record of the fit, keyed the same way as a scenario pair table."""
    return {"k": fit.k, "beta": fit.beta, "lambda": fit.lam, "rmse": fit.rmse, "n": fit.n}


def fit_from_report(record: dict) -> FitResult:
    return FitResult(
        k=float(record["k"]),
        beta=float(record["beta"]),
        lam=float(record["lambda"]),
        rmse=float(record["rmse"]),
        n=int(record["n"]),
    )


def samples_from_trace(trace, pair: int) -> list[RegressionSample]:
    """Consecutive ``(Q_t, O_t, O_t+1)`` triples for one pair of a trace.

    Uses the true (pre-noise, pre-attack) occupancy, so the fit sees the
    plant law rather than the sensor.
    """
    q = np.asarray(trace.pair("q", pair), dtype=float)
    o = np.asarray(trace.pair("o_true", pair), dtype=float)
    return [RegressionSample(float(q[i]), float(o[i]), float(o[i + 1])) for i in range(len(q) - 1)]
