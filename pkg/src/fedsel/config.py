"""Experiment configuration: dataclasses plus TOML/JSON loading with field-level errors."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError
from .nn import ACTIVATIONS, MlpArch, SgdConfig
from .selection import MEAN_MODES, STRATEGIES

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class DataConfig:
    class_count: int = 10
    per_class: int = 100
    eval_per_class: int = 20
    dims: int = 16
    sep: float = 3.0
    noise: float = 1.0
    seed: Optional[int] = None  # defaults to the experiment seed


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "shards"
    shards_per_client: int = 1
    zeta: float = 0.2
    max_draws: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 20
    clients_per_round: int = 5
    rounds: int = 150
    hidden: Tuple[int, ...] = (32,)
    activation: str = "relu"
    sgd: SgdConfig = field(default_factory=SgdConfig)
    local_epochs: int = 20
    batch_size: int = 64
    strategy: str = "gpcb"
    pow_d_candidates: int = 10
    rho: float = 1.0
    alpha_schedule: str = "linear"
    gp_source: str = "momentum"
    mean_mode: str = "per_pull"
    acc_eq_eps: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.num_clients < 1:
            raise ConfigError("must be >= 1", "num_clients")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError(
                f"must lie in [1, num_clients={self.num_clients}], got {self.clients_per_round}",
                "clients_per_round",
            )
        if self.rounds < 1:
            raise ConfigError("must be >= 1", "rounds")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"must be one of {ACTIVATIONS}", "activation")
        if self.local_epochs < 1:
            raise ConfigError("must be >= 1", "local_epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"must be one of {STRATEGIES}", "strategy")
        if self.strategy == "pow_d" and not (
            self.clients_per_round <= self.pow_d_candidates <= self.num_clients
        ):
            raise ConfigError("must lie in [clients_per_round, num_clients]", "pow_d_candidates")
        if self.rho < 0:
            raise ConfigError("must be >= 0", "rho")
        if self.alpha_schedule not in ("linear", "constant"):
            raise ConfigError("must be 'linear' or 'constant'", "alpha_schedule")
        if self.gp_source not in ("momentum", "last_grad"):
            raise ConfigError("must be 'momentum' or 'last_grad'", "gp_source")
        if self.mean_mode not in MEAN_MODES:
            raise ConfigError(f"must be one of {MEAN_MODES}", "mean_mode")
        if self.acc_eq_eps < 0:
            raise ConfigError("must be >= 0", "acc_eq_eps")
        if self.checkpoint_every < 0:
            raise ConfigError("must be >= 0", "checkpoint_every")
        if self.partition.scheme not in ("shards", "dirichlet"):
            raise ConfigError("must be 'shards' or 'dirichlet'", "partition.scheme")

    @property
    def arch(self) -> MlpArch:
        return MlpArch((self.data.dims, *self.hidden, self.data.class_count), self.activation)

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; independent of key order in the source file."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_NESTED = {"sgd": SgdConfig, "data": DataConfig, "partition": PartitionConfig}


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", name)
        return value
    if isinstance(default, int) and default is not None:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", name)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", name)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", name)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"expected a list of integers, got {value!r}", name)
        return tuple(value)
    return value


def _build(cls, raw, prefix=""):
    if not isinstance(raw, dict):
        raise ConfigError(f"expected a table, got {type(raw).__name__}", prefix.rstrip(".") or None)
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", prefix.rstrip(".") or None)
    kwargs = {}
    for key, value in raw.items():
        name = prefix + key
        if key in _NESTED and cls is ExperimentConfig:
            kwargs[key] = _build(_NESTED[key], value, name + ".")
            continue
        default = getattr(defaults, key)
        if default is None:  # optional integer
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"expected an integer, got {value!r}", name)
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(name, value, default)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.field is not None and prefix and not exc.field.startswith(prefix):
            raise ConfigError(str(exc).split(": ", 1)[-1], prefix + exc.field) from None
        raise


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, raw)


def load_config(path) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw)
