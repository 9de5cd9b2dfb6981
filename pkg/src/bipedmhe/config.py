"""Benchmark scenario configuration.

Scenario files are flat INI text with [scenario], [gait], and [noise]
sections; every key must name a known field, and values are parsed with the
field's type.  The single scenario seed drives all random streams.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import RobotModel, default_model, load_robot_model
from .sim import GaitParams, NoiseConfig

KNOWN_ESTIMATORS = ("mhe", "mhe_nc", "dkf", "mbo")


class ConfigError(ValueError):
    """Malformed scenario file or invalid field value."""


@dataclass
class ScenarioConfig:
    model_path: str = ""
    duration: float = 10.0
    seed: int = 0
    out_dir: str = "bench_out"
    estimators: tuple = KNOWN_ESTIMATORS
    window_size: int = 8
    imu_hz: int = 200
    vo_hz: int = 50
    gait: GaitParams = field(default_factory=GaitParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ConfigError("duration must be positive")
        if self.window_size < 1:
            raise ConfigError("window_size must be at least 1")
        if self.imu_hz <= 0 or self.vo_hz <= 0:
            raise ConfigError("rates must be positive")
        self.estimators = tuple(self.estimators)
        unknown = [e for e in self.estimators if e not in KNOWN_ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; expected a "
                              f"subset of {KNOWN_ESTIMATORS}")
        if not self.estimators:
            raise ConfigError("estimator list is empty")

    def resolve_model(self) -> RobotModel:
        if self.model_path:
            return load_robot_model(self.model_path)
        return default_model()


_SCENARIO_KEYS = {
    "model": str,
    "duration": float,
    "seed": int,
    "out": str,
    "estimators": str,
    "window_size": int,
    "imu_hz": int,
    "vo_hz": int,
}


def _section_overrides(parser, section, template):
    """Typed key=value overrides for a dataclass section."""
    if section not in parser:
        return {}
    fields = {f.name: f.type for f in dataclasses.fields(template)}
    out = {}
    for key, raw in parser[section].items():
        if key not in fields or (section == "noise" and key == "seed"):
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        caster = int if fields[key] in ("int", int) else float
        try:
            out[key] = caster(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw}") \
                from exc
    return out


def load_scenario(path) -> ScenarioConfig:
    """Parse a scenario file; unknown sections or keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    for section in parser.sections():
        if section not in ("scenario", "gait", "noise"):
            raise ConfigError(f"unknown section [{section}]")

    kwargs = {}
    if "scenario" in parser:
        for key, raw in parser["scenario"].items():
            if key not in _SCENARIO_KEYS:
                raise ConfigError(f"unknown key '{key}' in [scenario]")
            caster = _SCENARIO_KEYS[key]
            try:
                value = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for scenario.{key}: {raw}") \
                    from exc
            if key == "model":
                kwargs["model_path"] = value
            elif key == "out":
                kwargs["out_dir"] = value
            elif key == "estimators":
                kwargs["estimators"] = tuple(
                    name.strip() for name in value.split(",") if name.strip())
            else:
                kwargs[key] = value

    gait_kw = _section_overrides(parser, "gait", GaitParams)
    noise_kw = _section_overrides(parser, "noise", NoiseConfig)
    try:
        kwargs["gait"] = GaitParams(**gait_kw)
        kwargs["noise"] = NoiseConfig(**noise_kw)
        return ScenarioConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def save_scenario(config: ScenarioConfig, path) -> Path:
    """Write a scenario file that load_scenario reads back equivalently."""
    lines = ["[scenario]",
             f"model = {config.model_path}",
             f"duration = {config.duration!r}",
             f"seed = {config.seed}",
             f"out = {config.out_dir}",
             f"estimators = {','.join(config.estimators)}",
             f"window_size = {config.window_size}",
             f"imu_hz = {config.imu_hz}",
             f"vo_hz = {config.vo_hz}",
             "",
             "[gait]"]
    for f in dataclasses.fields(GaitParams):
        lines.append(f"{f.name} = {getattr(config.gait, f.name)!r}")
    lines += ["", "[noise]"]
    for f in dataclasses.fields(NoiseConfig):
        if f.name == "seed":
            continue
        lines.append(f"{f.name} = {getattr(config.noise, f.name)!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
