"""Scenario configuration: JSON document -> validated dataclasses.

Every field has a default, so ``{}`` is a complete config reproducing the
default operating point.  The JSON schema is ``CONFIG_SCHEMA`` (also written
to ``docs/config.schema.json``).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import jsonschema
import numpy as np

from .linksim import BACKENDS, BackgroundConfig, ChannelState, SourceConfig
from .steering import HandMotionParams, MotionSegment, TrackingLoopConfig

SCENARIOS = ("fig4", "fig5", "finite-key", "steering", "custom")

# ~1e6 detections/s out of 0.07 * 250 MHz emitted photons on the static bench
STATIC_TRANSMISSION = 0.057


class ConfigError(ValueError):
    pass


def _fig5_script() -> tuple[MotionSegment, ...]:
    # up, down, left, right, then an axial turn
    return (
        MotionSegment(5.0, 6.0, tilt_y=1.5),
        MotionSegment(6.5, 8.0, tilt_y=-3.0),
        MotionSegment(8.5, 9.5, tilt_y=1.5),
        MotionSegment(10.0, 11.0, tilt_x=-1.5),
        MotionSegment(11.5, 13.0, tilt_x=3.0),
        MotionSegment(13.5, 14.5, tilt_x=-1.5),
        MotionSegment(15.0, 18.0, axial=60.0),
    )


@dataclass(frozen=True)
class Fig5Settings:
    duration: float = 20.0
    sample_length: float = 0.004
    sample_interval: float = 0.1
    lock_time: float = 4.0
    min_counts: int = 100
    segments: tuple[MotionSegment, ...] = field(default_factory=_fig5_script)


@dataclass(frozen=True)
class SteeringSettings:
    duration: float = 60.0
    windows: tuple[float, ...] = (0.042, 0.1, 0.3)
    ccdf_max_angle: float = 0.5
    ccdf_points: int = 101
    coverage_offsets: tuple[float, ...] = tuple(np.round(np.arange(-6.0, 6.01, 0.25), 2))
    coverage_duration: float = 1.0
    coverage_settle: float = 0.2


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "custom"
    seed: int = 0
    output_dir: str = "out"
    backend: str = "aggregated"
    workers: int = 1
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: ChannelState = field(default_factory=ChannelState)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    motion: HandMotionParams = field(default_factory=HandMotionParams)
    loop: TrackingLoopConfig = field(default_factory=TrackingLoopConfig)
    sigma: float = 5.0
    n_starts: int = 32
    static_transmission: float = STATIC_TRANSMISSION
    block_duration: float = 0.5
    angles: tuple[float, ...] = tuple(float(a) for a in range(0, 360, 10))
    finite_key_runs: int = 14
    fig5: Fig5Settings = field(default_factory=Fig5Settings)
    steering: SteeringSettings = field(default_factory=SteeringSettings)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.scenario == "fig4" and (min(self.angles) < 0 or max(self.angles) >= 360 or len(self.angles) < 2):
            raise ConfigError("fig4 angle sweep must lie in [0, 360) with at least two points")
        if self.finite_key_runs < 1:
            raise ConfigError("finite_key_runs must be >= 1")
        if self.block_duration <= 0 or self.sigma <= 0 or self.workers < 1:
            raise ConfigError("block_duration, sigma and workers must be positive")

    def fingerprint(self) -> str:
        """Hash of every setting that can change results (not workers/output_dir)."""
        d = to_dict(self)
        d.pop("workers")
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _num(minimum=None, exclusive=False):
    s = {"type": "number"}
    if minimum is not None:
        s["exclusiveMinimum" if exclusive else "minimum"] = minimum
    return s


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_SEGMENT = _obj({k: _num() for k in ("start", "end", "tilt_x", "tilt_y", "axial")}) | {"required": ["start", "end"]}

CONFIG_SCHEMA = _obj(
    {
        "scenario": {"enum": list(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "backend": {"enum": list(BACKENDS)},
        "workers": {"type": "integer", "minimum": 1},
        "source": _obj(
            {
                "mean_photon_number": _num(0, True),
                "repetition_rate": _num(0, True),
                "pattern_seed": {"type": "integer", "minimum": 0},
                "power_imbalance": {"type": "array", "items": _num(0, True), "minItems": 6, "maxItems": 6},
            }
        ),
        "channel": _obj(
            {
                "axial_angle": _num(),
                "birefringence_retardance": _num(),
                "birefringence_axis": _num(),
                "transmission": {"type": "number", "minimum": 0, "maximum": 1},
                "duration": _num(0, True),
                "intrinsic_error_rate": {"type": "number", "minimum": 0, "maximum": 0.5},
                "linear_error_rate": {"type": "number", "minimum": 0, "maximum": 0.5},
            }
        ),
        "background": _obj({k: _num(0) for k in ("dark_rate", "ambient_rate", "beacon_rate")}),
        "motion": _obj(
            {
                **{
                    k: _num(0)
                    for k in (
                        "mean_reversion",
                        "volatility",
                        "drift_amplitude",
                        "drift_period",
                        "jerk_rate",
                        "jerk_size",
                        "jerk_duration",
                        "axial_volatility",
                    )
                },
                "dt": _num(0, True),
                "seed": {"type": "integer", "minimum": 0},
                "segments": {"type": "array", "items": _SEGMENT},
            }
        ),
        "loop": _obj(
            {
                "period": _num(0, True),
                "latency": _num(0),
                "mirror_time_constant": _num(0),
                "psd_noise": _num(0),
                "mirror_range": _num(0, True),
                "gain": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "rx_coupling": _num(0),
                "lock_time": _num(0),
                "seed": {"type": "integer", "minimum": 0},
            }
        ),
        "sigma": _num(0, True),
        "n_starts": {"type": "integer", "minimum": 1},
        "static_transmission": {"type": "number", "minimum": 0, "maximum": 1},
        "block_duration": _num(0, True),
        "angles": {"type": "array", "items": _num(), "minItems": 1},
        "finite_key_runs": {"type": "integer", "minimum": 1},
        "fig5": _obj(
            {
                "duration": _num(0, True),
                "sample_length": _num(0, True),
                "sample_interval": _num(0, True),
                "lock_time": _num(0),
                "min_counts": {"type": "integer", "minimum": 0},
                "segments": {"type": "array", "items": _SEGMENT},
            }
        ),
        "steering": _obj(
            {
                "duration": _num(0, True),
                "windows": {"type": "array", "items": _num(0, True), "minItems": 1},
                "ccdf_max_angle": _num(0, True),
                "ccdf_points": {"type": "integer", "minimum": 2},
                "coverage_offsets": {"type": "array", "items": _num()},
                "coverage_duration": _num(0, True),
                "coverage_settle": _num(0),
            }
        ),
    }
)


def _build(cls, data: dict | None):
    data = dict(data or {})
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if f.name == "segments":
            v = tuple(MotionSegment(**s) for s in v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid at {'/'.join(map(str, exc.path)) or '<root>'}: {exc.message}") from None
    try:
        top = {k: v for k, v in data.items() if k not in _NESTED}
        nested = {k: _build(cls, data.get(k)) for k, cls in _NESTED.items()}
        if "angles" in top:
            top["angles"] = tuple(float(a) for a in top["angles"])
        return ScenarioConfig(**top, **nested)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


_NESTED = {
    "source": SourceConfig,
    "channel": ChannelState,
    "background": BackgroundConfig,
    "motion": HandMotionParams,
    "loop": TrackingLoopConfig,
    "fig5": Fig5Settings,
    "steering": SteeringSettings,
}


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(data)


def to_dict(cfg: ScenarioConfig) -> dict:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v

    return clean(asdict(cfg))


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
