"""Scenario loop, noise calibration, metrics and parameter sweeps.

Per step: arrivals -> plant step -> observation (+ measurement noise) ->
attacker record/inject -> residual monitor. Per cycle boundary: occupancy
change, threshold test, green-time update or mitigation, saturation switch.

Random streams are split from the scenario seed with
``SeedSequence(seed, spawn_key=(stream, pair))``; see :data:`STREAMS`.
Every draw for a run is made up front so toggling one noise source never
shifts another.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import ReplayAttackState
from .config import DetectorConfig, MitigationConfig, NoiseSettings, ScenarioConfig
from .detectors import (
    ApproxModel,
    MonitorState,
    ResidualAlarm,
    approx_observe,
    calibrate_tolerance,
    input_approx,
    mitigate,
    monitor_step,
    threshold_detect,
    threshold_train,
)
from .errors import CalibrationError, CrosslightError, SimulationAbort
from .model import (
    SECONDS_PER_HOUR,
    ArmState,
    ControlState,
    IntersectionState,
    control_update,
    observe,
    step_dynamics,
    update_delta,
)

log = logging.getLogger(__name__)

STREAMS = {"arrivals": 0, "process": 1, "measurement": 2, "training": 3}

STEP_COLUMNS = (
    "t",
    "q1", "q2",
    "o_true1", "o_true2",
    "o_meas1", "o_meas2",
    "o_rep1", "o_rep2",
    "z1", "z2",
    "g1", "g2",
    "y1", "y2",
    "y_signed1", "y_signed2",
    "u1", "u2",
    "r1", "r2", "r_norm",
    "delta1", "delta2",
    "arrivals1", "arrivals2",
    "departures1", "departures2",
    "qcorr1", "qcorr2",
    "pnoise_q1", "pnoise_q2", "pnoise_o1", "pnoise_o2",
    "mnoise1", "mnoise2",
    "qclamp1", "qclamp2", "oclamp1", "oclamp2",
    "attack_active",
    "residual_alarm",
    "threshold_alarm",
    "mitigating",
    "boundary",
    "d_o1", "d_o2",
)


def stream_rng(seed: int, stream: str, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[stream], sub)))


def derived_seed(seed: int, stream: str) -> int:
    """Integer seed for a child scenario (e.g. the benign training run)."""
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def poisson_arrivals(I, dt, rng: np.random.Generator, size=None):
    """Vehicle count(s) arriving in ``dt`` seconds at ``I`` veh/h."""
    if I < 0 or not dt > 0:
        raise ValueError("poisson_arrivals expects I >= 0 and dt > 0")
    return rng.poisson(I * dt / SECONDS_PER_HOUR, size=size)


def calibrate_noise(reference, power_frac: float) -> float:
    """Noise sd whose power is ``power_frac`` of the reference's mean square."""
    ref = np.asarray(reference, dtype=float)
    if ref.size == 0:
        raise CalibrationError("empty reference signal")
    if power_frac < 0:
        raise CalibrationError("power fraction must be >= 0")
    if power_frac == 0:
        return 0.0
    ms = float(np.mean(ref**2))
    if ms == 0.0:
        raise CalibrationError("reference signal has zero power")
    return math.sqrt(power_frac * ms)


@dataclass
class Draws:
    """Pre-drawn randomness for one run; shape ``(n_steps, ...)``."""

    arrivals: np.ndarray  # (n, 2)
    process: np.ndarray  # (n, 4) standard normal
    measurement: np.ndarray  # (n, 2) standard normal

    @classmethod
    def for_config(cls, cfg: ScenarioConfig, n_steps: int | None = None) -> "Draws":
        n = cfg.n_steps if n_steps is None else n_steps
        if cfg.arrival_mode == "poisson":
            arrivals = np.column_stack(
                [
                    poisson_arrivals(p.intensity_vph, cfg.dt_s, stream_rng(cfg.seed, "arrivals", i), n)
                    for i, p in enumerate(cfg.pairs)
                ]
            ).astype(float)
        else:
            arrivals = np.tile(
                [p.intensity_vph * cfg.dt_s / SECONDS_PER_HOUR for p in cfg.pairs], (n, 1)
            )
        process = stream_rng(cfg.seed, "process").standard_normal((n, 4))
        measurement = stream_rng(cfg.seed, "measurement").standard_normal((n, 2))
        return cls(arrivals, process, measurement)


@dataclass
class TraceLog:
    """Per-step time series. ``columns`` follows :data:`STEP_COLUMNS`."""

    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def pair(self, name: str, index: int) -> np.ndarray:
        return self.columns[f"{name}{index + 1}"]

    def boundary_rows(self) -> np.ndarray:
        return np.flatnonzero(self.columns["boundary"] > 0)

    def delta_o(self, index: int) -> np.ndarray:
        """Per-cycle occupancy changes seen by the controller."""
        return self.pair("d_o", index)[self.boundary_rows()]

    def cycle_mean(self, name: str, steps_per_cycle: int) -> np.ndarray:
        x = self.columns[name]
        return x.reshape(-1, steps_per_cycle).mean(axis=1)

    def equals(self, other: "TraceLog") -> bool:
        if list(self.columns) != list(other.columns):
            return False
        return all(
            np.array_equal(self.columns[k], other.columns[k], equal_nan=True) for k in self.columns
        )


@dataclass
class MetricsReport:
    detection_latency_s: float | None = None
    false_positive_rate: float = 0.0
    peak_queue: float = 0.0
    steady_state_queue: float = 0.0
    green_time_at_end: float = 0.0
    occupancy_saturation_time: float | None = None
    detected: bool = False
    first_alarm_s: float | None = None
    benign_cycles: int = 0
    false_alarm_cycles: int = 0
    queue_at_detection: float | None = None
    post_detection_peak_queue: float | None = None
    min_green_time_s: float | None = None
    end_queue: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


@dataclass
class ScenarioResult:
    trace: TraceLog
    metrics: MetricsReport
    tolerance: float | None = None
    thresholds: tuple[float, float] | None = None
    noise_sd: dict = field(default_factory=dict)

    def __iter__(self):
        # allows ``trace, metrics = run_scenario(cfg)``
        return iter((self.trace, self.metrics))


def benign_version(cfg: ScenarioConfig) -> ScenarioConfig:
    return cfg.replace(
        attack=dataclasses.replace(cfg.attack, enabled=False),
        detector=DetectorConfig(),
        mitigation=MitigationConfig(),
    )


def _noise_sd(cfg: ScenarioConfig, draws: Draws) -> dict:
    n = cfg.noise
    sd = {"process": np.zeros(4), "measurement": np.zeros(2)}
    if n.process_power_frac == 0 and n.meas_power_frac == 0:
        return sd
    n_cal = max(1, round(cfg.calibration_end_s / cfg.dt_s))
    pilot_cfg = benign_version(cfg).replace(noise=NoiseSettings())
    pilot = _simulate(pilot_cfg, draws, n_steps=n_cal)
    cols = ("q1", "q2", "o_true1", "o_true2")
    if n.process_power_frac > 0:
        sd["process"] = np.array([calibrate_noise(pilot[c], n.process_power_frac) for c in cols])
    if n.meas_power_frac > 0:
        sd["measurement"] = np.array(
            [calibrate_noise(pilot[c], n.meas_power_frac) for c in cols[2:]]
        )
    return sd


def train_thresholds(cfg: ScenarioConfig) -> tuple[tuple[float, float], list[np.ndarray]]:
    """Train per-pair thresholds on a benign run with an independent seed.

    The training run lasts ``warmup_cycles + train_cycles`` cycles; the
    occupancy changes of the last ``train_cycles`` boundaries are used.
    """
    d = cfg.detector
    n_cycles = cfg.warmup_cycles + d.train_cycles
    horizon = n_cycles * cfg.cycle_time_s
    train_cfg = benign_version(cfg).replace(
        seed=derived_seed(cfg.seed, "training"),
        horizon_s=horizon,
        noise=dataclasses.replace(cfg.noise, calibration_s=min(cfg.calibration_end_s, horizon)),
    )
    trace = run_scenario(train_cfg).trace
    series = [trace.delta_o(i)[cfg.warmup_cycles :] for i in range(2)]
    thr = tuple(threshold_train(s, d.kappa) for s in series)
    return thr, series


def run_scenario(cfg: ScenarioConfig, thresholds=None) -> ScenarioResult:
    """Run one scenario end to end and compute its metrics."""
    draws = Draws.for_config(cfg)
    sd = _noise_sd(cfg, draws)
    kind = cfg.detector.kind
    if kind in ("threshold", "both"):
        if thresholds is None:
            thresholds = cfg.detector.threshold
        if thresholds is None:
            thresholds, _ = train_thresholds(cfg)
    else:
        thresholds = None
    trace = _simulate(cfg, draws, noise_sd=sd, thresholds=thresholds)
    metrics = compute_metrics(trace, cfg)
    return ScenarioResult(trace, metrics, trace.meta.get("tolerance"), thresholds, sd)


def _initial_state(cfg: ScenarioConfig):
    arms = []
    for p in cfg.pairs:
        o0 = p.initial_occupancy
        if o0 is None:
            o0 = p.equilibrium_occupancy(p.initial_queue)
        arms.append(
            ArmState(
                queue_len=p.initial_queue,
                occupancy=o0,
                intensity=p.intensity_vph,
                saturation_flow=p.saturation_vph,
                delta=1,
                k=p.k,
                beta=p.beta,
                lam=p.lam,
            )
        )
    controls = ControlState(
        green=cfg.initial_greens(), cycle_time=cfg.cycle_time_s, f=cfg.f, min_green=cfg.min_green_s
    )
    expected = [p.intensity_vph * cfg.cycle_time_s / SECONDS_PER_HOUR for p in cfg.pairs]
    arms = [
        dataclasses.replace(a, delta=_saturation_switch(a, expected[i], controls.green[i]))
        for i, a in enumerate(arms)
    ]
    state = IntersectionState(arms=tuple(arms), step=0, dt=cfg.dt_s)
    return state, controls


def _saturation_switch(arm: ArmState, cycle_demand: float, green: float) -> int:
    """Saturation switch from the flow the next green must carry.

    ``cycle_demand`` is the vehicles waiting plus those expected during the
    cycle; spreading them over the green gives the required discharge flow,
    which is compared with the saturation flow.
    """
    demand = arm.queue_len + cycle_demand
    if demand <= 0:
        required = 0.0
    elif green <= 0:
        required = math.inf
    else:
        required = demand / green * SECONDS_PER_HOUR
    return update_delta(arm, required)


def _simulate(cfg, draws: Draws, noise_sd=None, thresholds=None, n_steps=None) -> TraceLog:
    n = cfg.n_steps if n_steps is None else n_steps
    spc = cfg.steps_per_cycle
    dt = cfg.dt_s
    sd_p = np.zeros(4) if noise_sd is None else noise_sd["process"]
    sd_m = np.zeros(2) if noise_sd is None else noise_sd["measurement"]

    state, controls = _initial_state(cfg)
    target = cfg.attack.target_pair
    attacker = None
    if cfg.attack.enabled:
        attacker = ReplayAttackState(start_time=cfg.attack.start_time_s, target_pair=target)

    kind = cfg.detector.kind
    approx = ApproxModel(dt=dt)
    monitor = None
    if kind in ("model_based", "both"):
        monitor = MonitorState.create(
            cfg.detector.g, omega0=[a.occupancy for a in state.arms], model=approx
        )
    cal_steps = cfg.detector.calibration_cycles * spc
    cal_residuals = []
    alarm = None
    tolerance = None
    use_threshold = kind in ("threshold", "both") and thresholds is not None
    intensities = [p.intensity_vph for p in cfg.pairs]
    saturation = [p.saturation_vph for p in cfg.pairs]

    o_state_ref = [a.occupancy for a in state.arms]
    o_rep_ref = list(o_state_ref)
    cycle_arrivals = [0.0, 0.0]
    mitigating = False
    pending_mitigation = False

    out = np.full((n, len(STEP_COLUMNS)), np.nan)
    col = {name: j for j, name in enumerate(STEP_COLUMNS)}

    for i in range(n):
        try:
            prev = state
            a = draws.arrivals[i]
            p = draws.process[i] * sd_p
            nu = draws.measurement[i] * sd_m
            z_now = controls.green
            deltas = (prev.arms[0].delta, prev.arms[1].delta)
            state, info = step_dynamics(prev, controls, arrivals=a, process_noise=p)
            obs = observe(prev, state, a, nu)
            t = state.sim_time

            o_meas = list(obs.occupancy_meas)
            o_rep = list(o_meas)
            active = False
            if attacker is not None:
                o_rep[target] = attacker.process(o_meas[target], t)
                active = attacker.active

            u = input_approx(intensities, dt, saturation, info.green)
            r = (math.nan, math.nan)
            r_norm = math.nan
            res_alarm = False
            if monitor is not None:
                y = approx_observe(approx, o_rep, u)
                _, r_vec = monitor_step(monitor, y, dt)
                r = (float(r_vec[0]), float(r_vec[1]))
                r_norm = float(np.hypot(*r_vec))
                if state.step < cal_steps:
                    cal_residuals.append(r_norm)
                else:
                    if alarm is None:
                        tolerance = calibrate_tolerance(cal_residuals, cfg.detector.tol_factor)
                        alarm = ResidualAlarm(tolerance, cfg.detector.window)
                    res_alarm = alarm.update(r_norm)
                    if res_alarm and cfg.mitigation.enabled and not mitigating:
                        pending_mitigation = True

            for j in range(2):
                cycle_arrivals[j] += a[j]

            row = out[i]
            row[col["t"]] = t
            for j in range(2):
                s = str(j + 1)
                arm = state.arms[j]
                row[col["q" + s]] = arm.queue_len
                row[col["o_true" + s]] = arm.occupancy
                row[col["o_meas" + s]] = o_meas[j]
                row[col["o_rep" + s]] = o_rep[j]
                row[col["z" + s]] = z_now[j]
                row[col["g" + s]] = info.green[j]
                row[col["y" + s]] = obs.dispatched[j]
                row[col["y_signed" + s]] = obs.dispatched_signed[j]
                row[col["u" + s]] = u[j]
                row[col["r" + s]] = r[j]
                row[col["delta" + s]] = deltas[j]
                row[col["arrivals" + s]] = info.arrivals[j]
                row[col["departures" + s]] = info.departures[j]
                row[col["qcorr" + s]] = info.queue_correction[j]
                row[col["pnoise_q" + s]] = p[j]
                row[col["pnoise_o" + s]] = p[2 + j]
                row[col["mnoise" + s]] = obs.meas_noise[j]
                row[col["qclamp" + s]] = info.queue_clamped[j]
                row[col["oclamp" + s]] = info.occupancy_clamped[j]
            row[col["r_norm"]] = r_norm
            row[col["attack_active"]] = active
            row[col["residual_alarm"]] = res_alarm
            row[col["threshold_alarm"]] = False
            row[col["mitigating"]] = mitigating
            row[col["boundary"]] = False

            if (i + 1) % spc == 0:
                m = (i + 1) // spc
                row[col["boundary"]] = True
                o_true = [arm.occupancy for arm in state.arms]
                ref = o_state_ref if cfg.delta_reference == "state" else o_rep_ref
                d_o = [o_rep[j] - ref[j] for j in range(2)]
                row[col["d_o1"]], row[col["d_o2"]] = d_o
                thr_alarm = False
                if use_threshold and m > cfg.warmup_cycles:
                    thr_alarm = any(threshold_detect(d_o[j], thresholds[j]) for j in range(2))
                row[col["threshold_alarm"]] = thr_alarm
                if thr_alarm and cfg.mitigation.enabled:
                    pending_mitigation = True
                if pending_mitigation:
                    mitigating = True
                    pending_mitigation = False
                if mitigating:
                    z = mitigate(cfg.cycle_time_s, intensities)
                    controls = dataclasses.replace(controls, green=(z[0], z[1]))
                else:
                    controls = control_update(controls, d_o)
                arms = tuple(
                    dataclasses.replace(
                        arm, delta=_saturation_switch(arm, cycle_arrivals[j], controls.green[j])
                    )
                    for j, arm in enumerate(state.arms)
                )
                state = dataclasses.replace(state, arms=arms)
                o_state_ref = o_true
                o_rep_ref = o_rep
                cycle_arrivals = [0.0, 0.0]
        except CrosslightError as exc:
            if isinstance(exc, SimulationAbort):
                raise
            raise SimulationAbort(i, _snapshot(state, controls), exc) from exc

    columns = {name: out[:, j].copy() for j, name in enumerate(STEP_COLUMNS)}
    meta = {
        "name": cfg.name,
        "seed": cfg.seed,
        "tolerance": tolerance,
        "thresholds": None if thresholds is None else list(thresholds),
        "noise_sd_measurement": list(map(float, sd_m)),
        "noise_sd_process": list(map(float, sd_p)),
        "ras": None if attacker is None else attacker.ras,
    }
    return TraceLog(columns, meta)


def _snapshot(state: IntersectionState, controls: ControlState) -> dict:
    return {
        "sim_time": state.sim_time,
        "arms": [dataclasses.asdict(a) for a in state.arms],
        "green": list(controls.green),
    }


def compute_metrics(trace: TraceLog, cfg: ScenarioConfig) -> MetricsReport:
    """Summary metrics for the target pair, derived from the trace alone."""
    target = cfg.attack.target_pair
    t = trace["t"]
    q = trace.pair("q", target)
    z = trace.pair("z", target)
    o = trace.pair("o_true", target)
    alarms = (trace["residual_alarm"] > 0) | (trace["threshold_alarm"] > 0)
    start = cfg.attack_start
    spc = cfg.steps_per_cycle
    n_cycles = len(t) // spc
    warm = cfg.warmup_cycles

    benign = 0
    false_cycles = 0
    for m in range(warm, n_cycles):
        end_t = t[(m + 1) * spc - 1]
        if end_t >= start:
            break
        benign += 1
        if alarms[m * spc : (m + 1) * spc].any():
            false_cycles += 1

    first_alarm = float(t[alarms][0]) if alarms.any() else None
    post = np.flatnonzero(alarms & (t >= start))
    detected = post.size > 0
    latency = float(t[post[0]] - start) if detected else None
    q_det = float(q[post[0]]) if detected else None
    post_peak = float(q[post[0] :].max()) if detected else None

    pre = (t > warm * cfg.cycle_time_s) & (t < start)
    steady = float(q[pre].mean()) if pre.any() else float(q.mean())
    sat = np.flatnonzero(o >= 1.0)
    reached = np.flatnonzero((z <= cfg.min_green_s + 1e-9) & (t >= start))
    return MetricsReport(
        detection_latency_s=latency,
        false_positive_rate=false_cycles / benign if benign else 0.0,
        peak_queue=float(q.max()),
        steady_state_queue=steady,
        green_time_at_end=float(z[-1]),
        occupancy_saturation_time=float(t[sat[0]]) if sat.size else None,
        detected=bool(detected),
        first_alarm_s=first_alarm,
        benign_cycles=benign,
        false_alarm_cycles=false_cycles,
        queue_at_detection=q_det,
        post_detection_peak_queue=post_peak,
        min_green_time_s=float(t[reached[0]]) if reached.size else None,
        end_queue=float(q[-1]),
    )


@dataclass
class SweepItem:
    index: int
    name: str
    seed: int
    status: str
    metrics: MetricsReport | None = None
    error: str | None = None
    params: dict = field(default_factory=dict)


def _sweep_worker(args) -> SweepItem:
    index, cfg, params = args
    try:
        metrics = run_scenario(cfg).metrics
        return SweepItem(index, cfg.name, cfg.seed, "ok", metrics, params=params)
    except Exception as exc:  # per-item failure must not abort the sweep
        return SweepItem(index, cfg.name, cfg.seed, "error", error=f"{type(exc).__name__}: {exc}", params=params)


def sweep(configs, parallelism: int = 1, params=None) -> list[SweepItem]:
    """Run independent scenarios; results come back in input order."""
    configs = list(configs)
    params = list(params) if params is not None else [{} for _ in configs]
    jobs = [(i, c, p) for i, (c, p) in enumerate(zip(configs, params))]
    if parallelism <= 1:
        return [_sweep_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_sweep_worker, jobs))
