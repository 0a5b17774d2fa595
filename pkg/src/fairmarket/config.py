"""Experiment configuration: JSON files, built-in scenarios, validation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .sim import POLICIES, SimConfig

# The three (slots, refresh period) settings of the reference experiments.
SETTINGS = {
    "s1": {"m_slots": 10, "dual_refresh_epochs": 50},
    "s2": {"m_slots": 20, "dual_refresh_epochs": 50},
    "s3": {"m_slots": 20, "dual_refresh_epochs": 20},
}
SCENARIOS = {}
for _key, _overrides in SETTINGS.items():
    SCENARIOS[f"table1-{_key}"] = {"simulation": dict(_overrides), "experiment": {"replicates": 1}}
    SCENARIOS[f"bootstrap-{_key}"] = {"simulation": dict(_overrides), "experiment": {"replicates": 100}}

_TYPES = {"int": (int,), "float": (int, float), "str": (str,), "bool": (bool,)}


@dataclass(frozen=True)
class ExperimentSpec:
    sim: SimConfig = field(default_factory=SimConfig)
    methods: tuple = POLICIES
    replicates: int = 1
    out_dir: str = "results"
    scenario: str = "custom"
    write_logs: bool | None = None   # None: logs only for single-replicate runs
    strict: bool = False             # fail when a solve stays infeasible after the retry

    def validate(self) -> ExperimentSpec:
        self.sim.validate()
        if not self.methods:
            raise ConfigError("experiment.methods", "need at least one method")
        for i, m in enumerate(self.methods):
            if m not in POLICIES:
                raise ConfigError(f"experiment.methods[{i}]", f"unknown method {m!r}; choose from {POLICIES}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("experiment.methods", "methods must be distinct")
        if self.replicates < 1:
            raise ConfigError("experiment.replicates", "must be >= 1")
        return self

    @property
    def logs_enabled(self) -> bool:
        return self.replicates == 1 if self.write_logs is None else self.write_logs

    def replace(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)


def _check_type(path: str, value, annotation: str):
    options = [a.strip() for a in annotation.split("|")]
    if value is None:
        if "None" in options:
            return None
        raise ConfigError(path, "must not be null")
    for opt in options:
        kinds = _TYPES.get(opt)
        if kinds is None:
            continue
        if isinstance(value, bool) and opt != "bool":
            continue
        if isinstance(value, kinds):
            return float(value) if opt == "float" else value
    wanted = " or ".join(o for o in options if o != "None")
    raise ConfigError(path, f"expected {wanted}, got {type(value).__name__}")


def _section(data, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be an object")
    return sec


def sim_config_from_dict(values: dict, base: SimConfig | None = None, prefix: str = "simulation") -> SimConfig:
    base = base or SimConfig()
    known = {f.name: f for f in dataclasses.fields(SimConfig)}
    changes = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
        changes[key] = _check_type(f"{prefix}.{key}", value, known[key].type)
    config = base.replace(**changes)
    try:
        return config.validate()
    except ConfigError as exc:
        raise ConfigError(f"{prefix}.{exc.field}", exc.message) from None


def merge(base: dict, override: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def spec_from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a JSON object")
    for key in data:
        if key not in ("simulation", "experiment"):
            raise ConfigError(key, "unknown section; expected 'simulation' or 'experiment'")
    sim = sim_config_from_dict(_section(data, "simulation"))
    exp = _section(data, "experiment")
    kinds = {"methods": "list", "replicates": "int", "out_dir": "str", "scenario": "str",
             "write_logs": "bool | None", "strict": "bool"}
    changes = {}
    for key, value in exp.items():
        if key not in kinds:
            raise ConfigError(f"experiment.{key}", "unknown field")
        if key == "methods":
            if isinstance(value, str) or not isinstance(value, list):
                raise ConfigError("experiment.methods", "expected a list of method names")
            changes[key] = tuple(value)
        else:
            changes[key] = _check_type(f"experiment.{key}", value, kinds[key])
    return ExperimentSpec(sim=sim, **changes).validate()


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None


def scenario_dict(name: str) -> dict:
    try:
        return merge(SCENARIOS[name], {"experiment": {"scenario": name}})
    except KeyError:
        raise ConfigError("scenario", f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def defaults_dict() -> dict:
    """Complete configuration with every field at its default value."""
    spec = ExperimentSpec()
    return {
        "simulation": dataclasses.asdict(spec.sim),
        "experiment": {"methods": list(spec.methods), "replicates": spec.replicates,
                       "out_dir": spec.out_dir, "scenario": spec.scenario,
                       "write_logs": spec.write_logs, "strict": spec.strict},
    }
