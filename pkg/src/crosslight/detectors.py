"""Attack detectors and the mitigation law.

Two detectors are provided:

* a residual monitor on a two-state approximate occupancy model,
  ``E dw/dt = (A' + G C') w - G y``, ``r = C' w - y``, integrated with
  forward Euler at the plant step;
* a threshold detector on per-cycle occupancy changes, trained offline on
  benign data.

On detection the green time is split in proportion to the (trusted) arrival
intensities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DetectorStateError, NotHurwitzError, NumericFault, TrainingError
from .model import SECONDS_PER_HOUR

log = logging.getLogger(__name__)

HURWITZ_GAIN_BOUND = 0.4


@dataclass(frozen=True)
class ApproxModel:
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    B: np.ndarray = field(default_factory=lambda: 3.0 * np.eye(2))
    C: np.ndarray = field(default_factory=lambda: 2.5 * np.eye(2))
    D: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    dt: float = 1.0


def input_approx(I, dt, S, z):
    """Net vehicles entering minus leaving over one step, per channel.

    ``I`` and ``S`` in veh/h, ``dt`` and ``z`` in seconds.
    """
    I, S, z = (np.asarray(v, dtype=float) for v in (I, S, z))
    if np.any(I < 0) or np.any(S < 0) or np.any(z < 0) or dt < 0:
        raise ValueError("input_approx expects nonnegative inputs")
    return I / SECONDS_PER_HOUR * dt - S / SECONDS_PER_HOUR * z


def approx_step(model: ApproxModel, O, u, p=(0.0, 0.0)):
    """``O' = A' O + B' dt u + p``, clamped to [0, 1]."""
    nxt = model.A @ np.asarray(O, float) + model.B @ (model.dt * np.asarray(u, float)) + np.asarray(p, float)
    if not np.all(np.isfinite(nxt)):
        raise NumericFault("approx_step", nxt)
    return np.clip(nxt, 0.0, 1.0)


def approx_observe(model: ApproxModel, O, u, nu=(0.0, 0.0)):
    """``y = C' O + D' dt u + nu``."""
    return model.C @ np.asarray(O, float) + model.D @ (model.dt * np.asarray(u, float)) + np.asarray(nu, float)


def monitor_gain(g: float, model: ApproxModel | None = None) -> np.ndarray:
    """Output-injection gain ``G = -g I``; rejects gains that are not Hurwitz."""
    model = model or ApproxModel()
    G = -g * np.eye(2)
    eig = np.linalg.eigvals(model.A + G @ model.C)
    if np.any(eig.real >= 0):
        raise NotHurwitzError(
            f"A' + G C' has eigenvalues {eig.real.tolist()} for g={g}; need g > {HURWITZ_GAIN_BOUND}",
            "detector.g",
        )
    return G


@dataclass
class MonitorState:
    omega: np.ndarray
    G: np.ndarray
    model: ApproxModel = field(default_factory=ApproxModel)
    residual: np.ndarray = field(default_factory=lambda: np.zeros(2))
    E: float = 1.0

    @classmethod
    def create(cls, g: float = 1.0, omega0=(0.0, 0.0), model: ApproxModel | None = None):
        model = model or ApproxModel()
        return cls(omega=np.array(omega0, dtype=float), G=monitor_gain(g, model), model=model)

    _checked_dt: float | None = field(default=None, repr=False)

    @property
    def closed_loop(self) -> np.ndarray:
        return self.model.A + self.G @ self.model.C

    def check_step(self, dt: float):
        if dt == self._checked_dt:
            return
        # forward Euler on a scalar-multiple-of-identity system is stable iff dt*|eig| < 2
        rate = float(np.max(np.abs(np.linalg.eigvals(self.closed_loop))))
        if dt * rate >= 2.0:
            raise ConfigError(f"monitor step dt={dt} unstable for closed-loop rate {rate}", "dt_s")
        self._checked_dt = dt


def monitor_step(m: MonitorState, y, dt: float):
    """Residual of the current sample, then one explicit Euler step.

    ``r = C' w - y`` uses the state before the update, so for a plant that
    follows the approximate model the estimation error obeys
    ``e <- (I + dt (A' + G C')) e`` exactly.
    """
    m.check_step(dt)
    y = np.asarray(y, dtype=float)
    m.residual = m.model.C @ m.omega - y
    if not np.all(np.isfinite(m.residual)):
        raise NumericFault("monitor residual", m.residual)
    m.omega = m.omega + dt / m.E * ((m.model.A + m.G @ m.model.C) @ m.omega - m.G @ y)
    return m, m.residual


def residual_decision(r_series, tol: float, window: int = 3) -> bool:
    """True once ``|r|`` stays above ``tol`` for ``window`` consecutive samples."""
    return first_alarm_index(r_series, tol, window) is not None


def first_alarm_index(r_series, tol: float, window: int = 3):
    run = 0
    for i, r in enumerate(r_series):
        run = run + 1 if abs(r) > tol else 0
        if run >= window:
            return i
    return None


class ResidualAlarm:
    """Streaming form of :func:`residual_decision`."""

    def __init__(self, tol: float, window: int = 3):
        self.tol = tol
        self.window = window
        self._run = 0

    def update(self, r_norm: float) -> bool:
        self._run = self._run + 1 if r_norm > self.tol else 0
        return self._run >= self.window


def calibrate_tolerance(benign_residuals, factor: float = 1.5) -> float:
    benign = np.abs(np.asarray(benign_residuals, dtype=float))
    if benign.size == 0:
        raise TrainingError("no benign residuals to calibrate on")
    return factor * float(benign.max())


@dataclass
class ThresholdDetectorState:
    thrsh: float = -math.inf
    trained: bool = False
    zeta: float = math.nan


def threshold_train(benign_delta_O, kappa: float = 3.0) -> float:
    """``min(dO) - kappa * sd(dO)`` over a benign per-cycle series."""
    x = np.asarray(benign_delta_O, dtype=float)
    if x.size < 2:
        raise TrainingError(f"need at least 2 benign samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise TrainingError("benign series contains non-finite values")
    return float(x.min() - kappa * x.std(ddof=1))


def threshold_detect(delta_O: float, thrsh) -> bool:
    if isinstance(thrsh, ThresholdDetectorState):
        if not thrsh.trained:
            raise DetectorStateError("threshold detector used before training")
        thrsh = thrsh.thrsh
    if thrsh is None:
        raise DetectorStateError("threshold detector used before training")
    return delta_O < thrsh


def mitigate(T_c: float, intensities) -> tuple[float, ...]:
    """Split the cycle in proportion to arrival intensity."""
    I = [float(v) for v in intensities]
    total = sum(I)
    if total <= 0:
        log.warning("all intensities zero; falling back to equal split")
        return tuple(T_c / len(I) for _ in I)
    zeta = T_c / total
    z = [zeta * v for v in I]
    # put the rounding residue on the last pair so the sum is exactly T_c
    z[-1] = T_c - math.fsum(z[:-1])
    return tuple(z)
