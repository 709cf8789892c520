"""Intersection plant and green-time controller.

Two non-conflicting arm pairs share one signal cycle. Each pair is represented
by its dominant arm and carries a queue ``Q`` (vehicles) and a loop-detector
occupancy ``O`` (fraction in [0, 1]).

Per-arm recursions, rates in veh/h converted to veh/s::

    Q[t+1] = delta*Q[t] - (delta*S + (1-delta)*I) * g / 3600 + I * dt / 3600
    O[t+1] = k*Q[t] + beta*O[t] + lam

where ``g`` is the number of green seconds the pair receives inside the step.
The two-pair form stacks these into ``x = [Q1, Q2, O1, O2]`` with
``x' = A x + B g + F + p``.

Green times are adapted once per cycle with ``z <- z * (1 + f * dO)`` and the
pair budget ``z1 + z2 <= Tc``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericFault, PreconditionError

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class ArmState:
    queue_len: float
    occupancy: float
    intensity: float  # veh/h
    saturation_flow: float  # veh/h
    delta: int = 1
    k: float = 0.0
    beta: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.saturation_flow <= 0:
            raise PreconditionError(f"saturation_flow must be > 0, got {self.saturation_flow}")
        if self.intensity < 0:
            raise PreconditionError(f"intensity must be >= 0, got {self.intensity}")
        if self.delta not in (0, 1):
            raise PreconditionError(f"delta must be 0 or 1, got {self.delta}")
        if self.queue_len < 0:
            raise PreconditionError(f"queue_len must be >= 0, got {self.queue_len}")
        if not 0.0 <= self.occupancy <= 1.0:
            raise PreconditionError(f"occupancy must lie in [0, 1], got {self.occupancy}")


@dataclass(frozen=True)
class ControlState:
    green: tuple[float, float]
    cycle_time: float
    f: float = 0.7
    min_green: float = 0.0

    def __post_init__(self):
        z1, z2 = self.green
        if self.min_green < 0:
            raise ConfigError("min_green must be >= 0", "min_green_s")
        if z1 < self.min_green or z2 < self.min_green:
            raise ConfigError(f"green times {self.green} below min_green {self.min_green}", "green")
        if z1 + z2 > self.cycle_time * (1 + 1e-12):
            raise ConfigError(f"green times {self.green} exceed cycle time {self.cycle_time}", "green")


@dataclass(frozen=True)
class IntersectionState:
    arms: tuple[ArmState, ArmState]
    step: int = 0
    dt: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if len(self.arms) != 2:
            raise PreconditionError("an intersection has exactly two arm pairs")
        if not self.dt > 0:
            raise PreconditionError(f"dt must be > 0, got {self.dt}")

    @property
    def sim_time(self) -> float:
        # integer step counter keeps sim_time an exact multiple of dt
        return self.step * self.dt

    def vector(self) -> np.ndarray:
        a, b = self.arms
        return np.array([a.queue_len, b.queue_len, a.occupancy, b.occupancy])


@dataclass(frozen=True)
class Observation:
    dispatched: tuple[float, float]
    occupancy_meas: tuple[float, float]
    meas_noise: tuple[float, float] = (0.0, 0.0)
    dispatched_signed: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class NoiseConfig:
    process_power_frac: float = 0.0
    meas_power_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.process_power_frac < 0 or self.meas_power_frac < 0:
            raise ConfigError("noise power fractions must be >= 0", "noise")


@dataclass(frozen=True)
class StepInfo:
    """Book-keeping for one plant step, per pair."""

    green: tuple[float, float]
    arrivals: tuple[float, float]
    departures: tuple[float, float]
    queue_correction: tuple[float, float]
    process_noise: np.ndarray = field(default_factory=lambda: np.zeros(4))
    queue_clamped: tuple[bool, bool] = (False, False)
    occupancy_clamped: tuple[bool, bool] = (False, False)


def _check_nonneg(**values):
    for name, v in values.items():
        if v < 0:
            raise PreconditionError(f"{name} must be >= 0, got {v}")


def queue_step_scalar(Q, delta, S, I, z, dt):
    """One step of the queue recursion for a single arm.

    ``z`` is the green time (s) active during the step and ``dt`` the step
    length (s); ``S`` and ``I`` are in veh/h. The result is floored at zero.
    """
    _check_nonneg(Q=Q, S=S, I=I, z=z, dt=dt)
    if delta not in (0, 1):
        raise PreconditionError(f"delta must be 0 or 1, got {delta}")
    service = (delta * S + (1 - delta) * I) / SECONDS_PER_HOUR
    raw = delta * Q - service * z + I / SECONDS_PER_HOUR * dt
    return max(0.0, raw)


def occupancy_step_scalar(Q, O, k, beta, lam):
    """One step of the occupancy recursion, clamped to [0, 1]."""
    if not 0.0 <= O <= 1.0:
        raise PreconditionError(f"occupancy must lie in [0, 1], got {O}")
    return min(1.0, max(0.0, k * Q + beta * O + lam))


def update_delta(arm: ArmState, cycle_mean_intensity: float) -> int:
    """Saturation switch for the next cycle: 0 below saturation flow, else 1."""
    return 0 if cycle_mean_intensity < arm.saturation_flow else 1


def green_in_step(controls: ControlState, phase: float, dt: float) -> tuple[float, float]:
    """Green seconds each pair receives in ``[phase, phase + dt)``.

    Within a cycle pair 0 is green on ``[0, z1)`` and pair 1 on
    ``[z1, z1 + z2)``; the rest of the cycle is slack (all red).
    """
    z1, z2 = controls.green
    lo, hi = phase, phase + dt
    g1 = max(0.0, min(hi, z1) - max(lo, 0.0))
    g2 = max(0.0, min(hi, z1 + z2) - max(lo, z1))
    return g1, g2


def system_matrices(state: IntersectionState, arrivals=None):
    """Return ``(A, B, F)`` of the two-pair plant for the current state.

    ``arrivals`` defaults to the fluid value ``I * dt / 3600`` per pair.
    """
    a, b = state.arms
    dt = state.dt
    if arrivals is None:
        arrivals = (a.intensity * dt / SECONDS_PER_HOUR, b.intensity * dt / SECONDS_PER_HOUR)
    A = np.array(
        [
            [a.delta, 0.0, 0.0, 0.0],
            [0.0, b.delta, 0.0, 0.0],
            [a.k, 0.0, a.beta, 0.0],
            [0.0, b.k, 0.0, b.beta],
        ],
        dtype=float,
    )
    B = np.zeros((4, 2))
    B[0, 0] = -(a.delta * a.saturation_flow + (1 - a.delta) * a.intensity) / SECONDS_PER_HOUR
    B[1, 1] = -(b.delta * b.saturation_flow + (1 - b.delta) * b.intensity) / SECONDS_PER_HOUR
    F = np.array([arrivals[0], arrivals[1], a.lam, b.lam], dtype=float)
    return A, B, F


def output_matrices(prev: IntersectionState, arrivals):
    """``(C, H)`` of the observation equation; ``alpha`` couples the two pairs."""
    alpha = prev.alpha
    C = np.array(
        [
            [0.0, -alpha, 0.0, 0.0],
            [alpha, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    q1, q2 = prev.arms[0].queue_len, prev.arms[1].queue_len
    H = -C @ np.array([q1 + arrivals[0], q2 + arrivals[1], 0.0, 0.0])
    return C, H


def step_dynamics(
    state: IntersectionState,
    controls: ControlState,
    arrivals=None,
    process_noise=None,
) -> tuple[IntersectionState, StepInfo]:
    """Advance the plant by one step of length ``state.dt``.

    The green each pair gets inside the step is derived from ``controls`` and
    the position of ``state.sim_time`` in the cycle.
    """
    dt = state.dt
    steps_per_cycle = round(controls.cycle_time / dt)
    phase = (state.step % steps_per_cycle) * dt
    g = green_in_step(controls, phase, dt)
    A, B, F = system_matrices(state, arrivals)
    p = np.zeros(4) if process_noise is None else np.asarray(process_noise, dtype=float)
    x = state.vector()

    x_next = A @ x + B @ np.asarray(g) + F + p
    if not np.all(np.isfinite(x_next)):
        bad = int(np.flatnonzero(~np.isfinite(x_next))[0])
        raise NumericFault(("Q1", "Q2", "O1", "O2")[bad], float(x_next[bad]))

    q_raw = x_next[:2]
    q = np.maximum(q_raw, 0.0)
    o = np.clip(x_next[2:], 0.0, 1.0)
    correction = q - q_raw
    # model-dispatched vehicles: everything the recursion removes, before clamping
    departures = x[:2] - A[:2, :2] @ x[:2] - B[:2] @ np.asarray(g)

    arms = tuple(
        replace(arm, queue_len=float(q[i]), occupancy=float(o[i]))
        for i, arm in enumerate(state.arms)
    )
    info = StepInfo(
        green=g,
        arrivals=(float(F[0]), float(F[1])),
        departures=(float(departures[0]), float(departures[1])),
        queue_correction=(float(correction[0]), float(correction[1])),
        process_noise=p,
        queue_clamped=(bool(q_raw[0] < 0), bool(q_raw[1] < 0)),
        occupancy_clamped=tuple(bool(v < 0 or v > 1) for v in x_next[2:]),
    )
    return replace(state, arms=arms, step=state.step + 1), info


def observe(
    prev: IntersectionState,
    nxt: IntersectionState,
    arrivals,
    meas_noise=(0.0, 0.0),
) -> Observation:
    """Sensor outputs after a step.

    Dispatched vehicles are ``Y = Q[t] - Q[t+1] + arrivals`` (positive when the
    queue is served); the literal signed ``dQ + arrivals`` is kept alongside.
    The C/H rows add the left-turn cross terms, which vanish for alpha = 0.
    """
    C, H = output_matrices(prev, arrivals)
    x_next = nxt.vector()
    m = C @ x_next + H
    dq = [nxt.arms[i].queue_len - prev.arms[i].queue_len for i in range(2)]
    y = tuple(float(-dq[i] + arrivals[i] + m[i]) for i in range(2))
    y_signed = tuple(float(dq[i] + arrivals[i]) for i in range(2))
    occ = tuple(float(min(1.0, max(0.0, m[2 + i] + meas_noise[i]))) for i in range(2))
    return Observation(
        dispatched=y,
        occupancy_meas=occ,
        meas_noise=(float(meas_noise[0]), float(meas_noise[1])),
        dispatched_signed=y_signed,
    )


def enforce_cycle_budget(z1, z2, T_c, min_green=0.0):
    """Keep ``z1 + z2 <= T_c`` by proportional rescaling, then re-floor."""
    if 2 * min_green > T_c:
        raise ConfigError(
            f"2 * min_green ({2 * min_green}) exceeds cycle time ({T_c})", "min_green_s"
        )
    if z1 < 0 or z2 < 0:
        raise PreconditionError(f"green times must be >= 0, got ({z1}, {z2})")
    total = z1 + z2
    if total <= T_c:
        return z1, z2
    z1, z2 = z1 * T_c / total, z2 * T_c / total
    if z1 < min_green:
        z1, z2 = min_green, T_c - min_green
    elif z2 < min_green:
        z1, z2 = T_c - min_green, min_green
    return z1, z2


def control_update(controls: ControlState, delta_O) -> ControlState:
    """Multiplicative green-time update from the per-pair occupancy change."""
    if not all(math.isfinite(d) for d in delta_O):
        raise NumericFault("delta_O", tuple(delta_O))
    z = [
        max(controls.min_green, zi * (1.0 + controls.f * d))
        for zi, d in zip(controls.green, delta_O)
    ]
    z1, z2 = enforce_cycle_budget(z[0], z[1], controls.cycle_time, controls.min_green)
    return replace(controls, green=(z1, z2))
