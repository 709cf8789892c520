"""Scenario configuration: dataclasses, TOML loading, dotted overrides.

File grammar (TOML)::

    name = "fig1d"
    horizon_s = 1800
    dt_s = 1.0
    cycle_time_s = 60
    f = 0.7
    min_green_s = 2.0
    arrival_mode = "poisson"        # or "deterministic"
    delta_reference = "state"       # or "reported"
    warmup_cycles = 5
    seed = 1

    [[pairs]]                       # exactly two
    intensity_vph = 700
    saturation_vph = 1800
    k = 0.008
    beta = 0.8
    lambda = -0.46
    initial_queue = 70
    # initial_green, initial_occupancy: optional

    [noise]      process_power_frac, meas_power_frac, calibration_s
    [attack]     enabled, start_time_s, target_pair
    [detector]   kind, g, window, kappa, calibration_cycles, train_cycles,
                 tol_factor, threshold
    [mitigation] enabled

Unknown keys anywhere are errors.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigError, NotHurwitzError
from .model import enforce_cycle_budget

DEFAULT_DT_S = 1.0
DEFAULT_CYCLE_TIME_S = 60.0
DEFAULT_HORIZON_S = 1800.0
DEFAULT_MIN_GREEN_S = 0.0
DEFAULT_SATURATION_VPH = 1800.0
DEFAULT_F = 0.7
SEED_ENV_VAR = "CROSSLIGHT_SEED"

DETECTOR_KINDS = ("none", "model_based", "threshold", "both")
ARRIVAL_MODES = ("deterministic", "poisson")
DELTA_REFERENCES = ("state", "reported")


@dataclass(frozen=True)
class PairConfig:
    intensity_vph: float
    saturation_vph: float = DEFAULT_SATURATION_VPH
    k: float = 0.004
    beta: float = 0.8
    lam: float = -0.18
    initial_queue: float = 0.0
    initial_green: float | None = None
    initial_occupancy: float | None = None

    def balance_green(self, cycle_time: float) -> float:
        """Green time whose discharge capacity equals the arrival rate."""
        return cycle_time * self.intensity_vph / self.saturation_vph

    def equilibrium_occupancy(self, queue: float) -> float:
        if self.beta >= 1:
            return 0.0
        return min(1.0, max(0.0, (self.k * queue + self.lam) / (1.0 - self.beta)))


@dataclass(frozen=True)
class NoiseSettings:
    process_power_frac: float = 0.0
    meas_power_frac: float = 0.0
    calibration_s: float | None = None  # default: attack start, else horizon


@dataclass(frozen=True)
class AttackConfig:
    enabled: bool = False
    start_time_s: float = 420.0
    target_pair: int = 0


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "none"
    g: float = 1.0
    window: int = 3
    kappa: float = 3.0
    calibration_cycles: int = 7
    train_cycles: int = 20
    tol_factor: float = 1.5
    threshold: tuple[float, float] | None = None


@dataclass(frozen=True)
class MitigationConfig:
    enabled: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    pairs: tuple[PairConfig, PairConfig]
    name: str = "scenario"
    horizon_s: float = DEFAULT_HORIZON_S
    dt_s: float = DEFAULT_DT_S
    cycle_time_s: float = DEFAULT_CYCLE_TIME_S
    f: float = DEFAULT_F
    min_green_s: float = DEFAULT_MIN_GREEN_S
    arrival_mode: str = "poisson"
    delta_reference: str = "state"
    warmup_cycles: int = 5
    seed: int = 0
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    attack: AttackConfig = field(default_factory=AttackConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)

    @property
    def n_steps(self) -> int:
        return round(self.horizon_s / self.dt_s)

    @property
    def steps_per_cycle(self) -> int:
        return round(self.cycle_time_s / self.dt_s)

    @property
    def n_cycles(self) -> int:
        return round(self.horizon_s / self.cycle_time_s)

    @property
    def attack_start(self) -> float:
        return self.attack.start_time_s if self.attack.enabled else math.inf

    @property
    def calibration_end_s(self) -> float:
        if self.noise.calibration_s is not None:
            return self.noise.calibration_s
        return min(self.attack_start, self.horizon_s)

    def initial_greens(self) -> tuple[float, float]:
        z = [
            p.initial_green if p.initial_green is not None else p.balance_green(self.cycle_time_s)
            for p in self.pairs
        ]
        z = [max(self.min_green_s, v) for v in z]
        return enforce_cycle_budget(z[0], z[1], self.cycle_time_s, self.min_green_s)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides) -> "ScenarioConfig":
        data = to_dict(self)
        apply_overrides(data, overrides)
        return from_dict(data)


# TOML key <-> dataclass field renames
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}

_SECTIONS = {
    "noise": NoiseSettings,
    "attack": AttackConfig,
    "detector": DetectorConfig,
    "mitigation": MitigationConfig,
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table, got {type(data).__name__}", path)
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        fname = _KEY_TO_FIELD.get(key, key)
        kpath = f"{path}.{key}" if path else key
        if fname not in names or fname == "pairs" or fname in _SECTIONS:
            raise ConfigError("unknown key", kpath)
        kwargs[fname] = _coerce(names[fname], value, kpath)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc), path or "<root>") from None


def _coerce(f: dataclasses.Field, value, path: str):
    default = f.default
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        return None
    if "tuple" in kind:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError("expected a list of two numbers", path)
        return tuple(_number(v, path) for v in value)
    if kind.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if "float" in kind:
        return _number(value, path)
    return value if default is dataclasses.MISSING else type(default)(value)


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from parsed TOML."""
    data = dict(data)
    pairs_raw = data.pop("pairs", None)
    if not isinstance(pairs_raw, list) or len(pairs_raw) != 2:
        raise ConfigError("exactly two [[pairs]] tables are required", "pairs")
    pairs = tuple(_build(PairConfig, p, f"pairs.{i}") for i, p in enumerate(pairs_raw))
    sections = {name: _build(cls, data.pop(name, {}), name) for name, cls in _SECTIONS.items()}
    top = _build(_TopLevel, data, "")
    cfg = ScenarioConfig(pairs=pairs, **dataclasses.asdict(top), **sections)
    validate(cfg)
    return cfg


@dataclass(frozen=True)
class _TopLevel:
    name: str = "scenario"
    horizon_s: float = DEFAULT_HORIZON_S
    dt_s: float = DEFAULT_DT_S
    cycle_time_s: float = DEFAULT_CYCLE_TIME_S
    f: float = DEFAULT_F
    min_green_s: float = DEFAULT_MIN_GREEN_S
    arrival_mode: str = "poisson"
    delta_reference: str = "state"
    warmup_cycles: int = 5
    seed: int = 0


def to_dict(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`from_dict` (``None`` values are dropped)."""

    def table(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = list(v)
            out[_FIELD_TO_KEY.get(f.name, f.name)] = v
        return out

    data = {}
    for f in dataclasses.fields(_TopLevel):
        data[f.name] = getattr(cfg, f.name)
    data["pairs"] = [table(p) for p in cfg.pairs]
    for name in _SECTIONS:
        data[name] = table(getattr(cfg, name))
    return data


def _is_multiple(a: float, b: float) -> bool:
    ratio = a / b
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


def validate(cfg: ScenarioConfig) -> None:
    """Check every cross-field invariant; raise :class:`ConfigError` on failure."""
    if not cfg.dt_s > 0:
        raise ConfigError("must be > 0", "dt_s")
    if not cfg.cycle_time_s > 0:
        raise ConfigError("must be > 0", "cycle_time_s")
    if not _is_multiple(cfg.cycle_time_s, cfg.dt_s):
        raise ConfigError("cycle time must be an integer multiple of dt_s", "cycle_time_s")
    if not _is_multiple(cfg.horizon_s, cfg.cycle_time_s):
        raise ConfigError("horizon must be an integer multiple of cycle_time_s", "horizon_s")
    if cfg.f < 0:
        raise ConfigError("must be >= 0", "f")
    if cfg.min_green_s < 0:
        raise ConfigError("must be >= 0", "min_green_s")
    enforce_cycle_budget(0.0, 0.0, cfg.cycle_time_s, cfg.min_green_s)
    if cfg.arrival_mode not in ARRIVAL_MODES:
        raise ConfigError(f"must be one of {ARRIVAL_MODES}", "arrival_mode")
    if cfg.delta_reference not in DELTA_REFERENCES:
        raise ConfigError(f"must be one of {DELTA_REFERENCES}", "delta_reference")
    if cfg.warmup_cycles < 0:
        raise ConfigError("must be >= 0", "warmup_cycles")
    for i, p in enumerate(cfg.pairs):
        path = f"pairs.{i}"
        if p.intensity_vph < 0:
            raise ConfigError("must be >= 0", f"{path}.intensity_vph")
        if not p.saturation_vph > 0:
            raise ConfigError("must be > 0", f"{path}.saturation_vph")
        if p.initial_queue < 0:
            raise ConfigError("must be >= 0", f"{path}.initial_queue")
        if p.initial_occupancy is not None and not 0 <= p.initial_occupancy <= 1:
            raise ConfigError("must lie in [0, 1]", f"{path}.initial_occupancy")
        if p.initial_green is not None and p.initial_green < 0:
            raise ConfigError("must be >= 0", f"{path}.initial_green")
        for name in ("k", "beta", "lam"):
            if not math.isfinite(getattr(p, name)):
                raise ConfigError("must be finite", f"{path}.{_FIELD_TO_KEY.get(name, name)}")
    n = cfg.noise
    for name in ("process_power_frac", "meas_power_frac"):
        if getattr(n, name) < 0:
            raise ConfigError("must be >= 0", f"noise.{name}")
    if n.calibration_s is not None and not 0 < n.calibration_s <= cfg.horizon_s:
        raise ConfigError("must lie in (0, horizon_s]", "noise.calibration_s")
    a = cfg.attack
    if a.target_pair not in (0, 1):
        raise ConfigError("must be 0 or 1", "attack.target_pair")
    if a.start_time_s < 0:
        raise ConfigError("must be >= 0", "attack.start_time_s")
    d = cfg.detector
    if d.kind not in DETECTOR_KINDS:
        raise ConfigError(f"must be one of {DETECTOR_KINDS}", "detector.kind")
    if d.window < 1:
        raise ConfigError("must be >= 1", "detector.window")
    if d.kappa < 0:
        raise ConfigError("must be >= 0", "detector.kappa")
    if d.train_cycles < 2:
        raise ConfigError("must be >= 2", "detector.train_cycles")
    if d.calibration_cycles < 1:
        raise ConfigError("must be >= 1", "detector.calibration_cycles")
    if d.tol_factor <= 0:
        raise ConfigError("must be > 0", "detector.tol_factor")
    if d.kind in ("model_based", "both"):
        from .detectors import MonitorState

        try:
            MonitorState.create(d.g).check_step(cfg.dt_s)
        except NotHurwitzError:
            raise
        except ConfigError as exc:
            raise ConfigError(str(exc), "detector.g") from None
        window = d.calibration_cycles * cfg.cycle_time_s
        if window > cfg.horizon_s:
            raise ConfigError("calibration window longer than horizon", "detector.calibration_cycles")
        if a.enabled and a.start_time_s < window:
            raise ConfigError(
                f"residual calibration window ({window} s) overlaps the attack start", "detector.calibration_cycles"
            )


def parse_value(text: str) -> Any:
    """Parse an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings (or ``(key, value)`` pairs) in place."""
    for item in overrides or ():
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE", item)
            key, raw = item.split("=", 1)
            value = parse_value(raw.strip())
        else:
            key, value = item
        parts = key.strip().split(".")
        node = data
        for depth, part in enumerate(parts[:-1]):
            here = ".".join(parts[: depth + 1])
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise ConfigError("bad list index", here) from None
            elif isinstance(node, dict) and part in node:
                node = node[part]
            elif isinstance(node, dict) and part in _SECTIONS:
                node = node.setdefault(part, {})
            else:
                raise ConfigError("unknown key", here)
        leaf = parts[-1]
        if isinstance(node, list):
            raise ConfigError("cannot override a whole list entry", key)
        node[leaf] = value
    return data


PARAM_KEYS = ("k", "beta", "lambda")


def apply_params(data: dict, params: dict) -> dict:
    """Copy fitted ``k, beta, lambda`` from a parameters record into ``data``.

    ``params`` has the shape written by ``fit-params``: ``{"pairs": [rec, rec]}``.
    """
    recs = params.get("pairs")
    if not isinstance(recs, list) or len(recs) != len(data.get("pairs", [])):
        raise ConfigError("parameters file must list one record per pair", "pairs")
    for i, rec in enumerate(recs):
        for key in PARAM_KEYS:
            if key not in rec:
                raise ConfigError("missing fitted value", f"pairs.{i}.{key}")
            data["pairs"][i][key] = rec[key]
    return data


def load_dict(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("file not found", str(path)) from None
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc}", str(path)) from None
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}", str(path)) from None


def parse_config(path, overrides=(), seed: int | None = None, env=None, params=None) -> ScenarioConfig:
    """Load, override and validate a scenario file.

    Fitted ``params`` are merged first, then ``overrides``. Precedence for
    the seed: explicit ``seed`` argument, then the ``CROSSLIGHT_SEED``
    environment variable, then the file.
    """
    data = load_dict(path)
    if params is not None:
        apply_params(data, params)
    apply_overrides(data, overrides)
    env = os.environ if env is None else env
    if seed is None and env.get(SEED_ENV_VAR):
        try:
            seed = int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"not an integer: {env[SEED_ENV_VAR]!r}", SEED_ENV_VAR) from None
    if seed is not None:
        data["seed"] = seed
    return from_dict(data)


def shipped_scenarios() -> dict[str, Path]:
    """Example scenario files bundled with the package."""
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.toml"))}
