"""Experiment configuration: dataclasses plus strict JSON (de)serialisation.

Unknown keys are rejected and every validation error names the dotted key
path that caused it, e.g. ``fl.attack.mode``.
"""
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .aggregation import AgrRule
from .attacks import AttackConfig
from .errors import ConfigError, ThreatModelError

SCENARIOS = ("cross_device", "cross_silo")

# Client/round counts per deployment scenario.
SCENARIO_DEFAULTS = {
    "cross_device": {"n_clients": 200, "clients_per_round": 20},
    "cross_silo": {"n_clients": 20, "clients_per_round": 20},
}


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "quantity"
    alpha: float = 1.0
    pnr: float = 1.0
    k: int = 1


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logistic"
    hidden_dim: int = 8


@dataclass(frozen=True)
class BootstrapConfig:
    """Server-side pre-training data and schedule.

    Without ``path`` the server set is synthetic, drawn like the client data
    but centred at ``center_shift`` instead of the task's own offset. With
    ``path`` it is read from a CSV laid out like the main data source.
    """

    epochs: int = 20
    lr: float = 0.1
    batch_size: int = 32
    n_pos: int = 200
    n_neg: int = 200
    center_shift: float = 0.5
    path: Optional[str] = None


@dataclass(frozen=True)
class FLConfig:
    scenario: str = "cross_device"
    n_clients: int = 200
    clients_per_round: int = 20
    max_rounds: int = 500
    local_epochs: int = 2
    batch_size: int = 5
    client_lr: float = 0.3
    server_lr: float = 1.0
    agr: AgrRule = field(default_factory=AgrRule)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    patience: int = 10
    seed: int = 0
    eval_every: int = 1
    stop_at_convergence: bool = False
    bootstrap: Optional[BootstrapConfig] = None

    def __post_init__(self):
        validate_fl(self)

    @classmethod
    def for_scenario(cls, scenario="cross_device", **overrides):
        base = dict(SCENARIO_DEFAULTS[scenario])
        base.update(overrides)
        return cls(scenario=scenario, **base)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    # synthetic
    n_pos: int = 500
    n_neg: int = 500
    n_test_pos: int = 100
    n_test_neg: int = 100
    input_dim: int = 16
    class_separation: float = 1.0
    noise_std: float = 1.0
    center_shift: float = 1.0
    attribute_domain: Optional[int] = None
    data_seed: int = 0
    # csv
    path: Optional[str] = None
    label_column: str = "label"
    text_column: Optional[str] = None
    feature_columns: Optional[list] = None
    attribute_column: Optional[str] = None
    hash_dim: int = 256
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError("must be 'synthetic' or 'csv'", "source")
        if self.source == "csv":
            if not self.path:
                raise ConfigError("csv source needs a path", "path")
            if (self.text_column is None) == (self.feature_columns is None):
                raise ConfigError("give exactly one of text_column or feature_columns", "text_column")


@dataclass(frozen=True)
class ExperimentFile:
    name: str = "experiment"
    description: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fl: FLConfig = field(default_factory=FLConfig)


def validate_fl(cfg):
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; expected one of {SCENARIOS}", "scenario")
    if cfg.n_clients < 1:
        raise ConfigError("must be >= 1", "n_clients")
    if not 1 <= cfg.clients_per_round <= cfg.n_clients:
        raise ConfigError("must lie in [1, n_clients]", "clients_per_round")
    if cfg.scenario == "cross_silo" and cfg.clients_per_round != cfg.n_clients:
        raise ConfigError("cross_silo selects every client each round", "clients_per_round")
    for key in ("max_rounds",):
        if getattr(cfg, key) < 0:
            raise ConfigError("must be >= 0", key)
    for key in ("local_epochs", "batch_size", "patience", "eval_every"):
        if getattr(cfg, key) < 1:
            raise ConfigError("must be >= 1", key)
    if not cfg.client_lr >= 0:
        raise ConfigError("must be >= 0", "client_lr")
    if cfg.scenario == "cross_silo" and cfg.attack.mode == "model_poison":
        raise ThreatModelError(
            "model poisoning is only considered for cross_device FL; cross_silo "
            "participants are trusted organisations",
            "attack.mode",
        )


# ---------------------------------------------------------------------------
# dict <-> dataclass

_NESTED = {
    (ExperimentFile, "data"): DataConfig,
    (ExperimentFile, "model"): ModelConfig,
    (ExperimentFile, "fl"): FLConfig,
    (FLConfig, "agr"): AgrRule,
    (FLConfig, "partition"): PartitionConfig,
    (FLConfig, "attack"): AttackConfig,
    (FLConfig, "bootstrap"): BootstrapConfig,
}

_NUMERIC = (int, float)


def _check_type(value, f, path):
    hint = str(f.type)
    if value is None:
        if "Optional" in hint:
            return value
        raise ConfigError("may not be null", path)
    if "bool" in hint:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
    elif "int" in hint and "float" not in hint:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
    elif "float" in hint:
        if isinstance(value, bool) or not isinstance(value, _NUMERIC):
            raise ConfigError(f"expected a number, got {value!r}", path)
        value = float(value)
    elif "str" in hint:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
    elif "list" in hint:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
    return value


def from_dict(cls, obj, path=""):
    if not isinstance(obj, dict):
        raise ConfigError(f"expected an object, got {type(obj).__name__}", path or None)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(fields))
    if unknown:
        key = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError("unknown key", key)
    kwargs = {}
    for name, value in obj.items():
        key = f"{path}.{name}" if path else name
        sub = _NESTED.get((cls, name))
        if sub is not None and value is not None:
            kwargs[name] = from_dict(sub, value, key)
        else:
            kwargs[name] = _check_type(value, fields[name], key)
    if cls is FLConfig:
        scenario = kwargs.get("scenario", "cross_device")
        if scenario in SCENARIO_DEFAULTS:
            for k, v in SCENARIO_DEFAULTS[scenario].items():
                kwargs.setdefault(k, v)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.key is not None and path:
            raise type(exc)(str(exc).split(": ", 1)[-1], f"{path}.{exc.key}") from None
        raise


def to_dict(obj):
    """Plain-JSON view with every default materialised."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def load_experiment(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON ({exc})") from None
    return from_dict(ExperimentFile, obj)


def dumps(obj):
    return json.dumps(to_dict(obj), indent=2, sort_keys=True) + "\n"


def set_path(obj, dotted, value):
    """Return a copy of nested dict ``obj`` with ``dotted`` key set to ``value``."""
    out = json.loads(json.dumps(obj))
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        node = nxt
    node[parts[-1]] = value
    return out
