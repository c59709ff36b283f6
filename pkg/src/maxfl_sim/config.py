"""TOML experiment configuration: parsing, defaults, validation, round-trip."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import ConfigError, WeightMode
from .data import PartitionSpec, Scheme
from .models import ModelKind, ModelSpec
from .server import AggregatorSpec, AlgorithmKind, ByzantineSpec, ParticipationMode, ParticipationPolicy


@dataclass(frozen=True)
class SourceConfig:
    """Where the labeled pool comes from."""

    kind: str = "synthetic"  # "synthetic" or "idx"
    samples_per_client: int = 200
    n_features: int = 20
    n_labels: int = 10
    cluster_sep: float = 4.0
    noise: float = 1.0
    group_size: int = 1
    group_sep: float = 0.0
    images: str = ""
    labels: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx"):
            raise ConfigError(f"data.source.kind: expected 'synthetic' or 'idx', got {self.kind!r}")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ConfigError("data.source: idx input needs both 'images' and 'labels' paths")
        if self.samples_per_client < 1 or self.n_features < 1 or self.n_labels < 1:
            raise ConfigError("data.source: samples_per_client, n_features and n_labels must be >= 1")
        if self.cluster_sep < 0 or self.noise < 0 or self.group_sep < 0:
            raise ConfigError("data.source: cluster_sep, group_sep and noise must be >= 0")
        if self.group_size < 1:
            raise ConfigError("data.source: group_size must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.SOFTMAX_REGRESSION
    hidden: tuple[int, ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError:
            raise ConfigError(f"model.kind: unknown model {self.kind!r}") from None
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ConfigError("model.hidden: layer sizes must be >= 1")

    def build(self, n_inputs: int, n_labels: int) -> ModelSpec:
        if self.kind is ModelKind.SCALAR_QUADRATIC:
            return ModelSpec.scalar_quadratic(self.offset)
        if self.kind is ModelKind.LINEAR_REGRESSION:
            return ModelSpec.linear_regression(n_inputs)
        if self.kind is ModelKind.SOFTMAX_REGRESSION:
            return ModelSpec.softmax_regression(n_inputs, n_labels)
        return ModelSpec.mlp((n_inputs, *self.hidden, n_labels))


@dataclass(frozen=True)
class ByzantineConfig:
    fraction: float = 0.0
    loss_inflation: float = 10.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"byzantine.fraction must lie in [0, 1], got {self.fraction}")
        if self.noise_sigma < 0:
            raise ConfigError("byzantine.noise_sigma must be >= 0")

    @property
    def spec(self) -> ByzantineSpec:
        return ByzantineSpec(self.loss_inflation, self.noise_sigma)


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: AggregatorSpec
    data: PartitionSpec
    source: SourceConfig = field(default_factory=SourceConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    M: int = 50
    m: int = 5
    T: int = 100
    warmup_steps: int = 100
    participation: ParticipationPolicy = field(default_factory=ParticipationPolicy)
    byzantine: ByzantineConfig = field(default_factory=ByzantineConfig)
    M_unseen: int = 0
    fine_tune_steps: int = 0
    seeds: tuple[int, ...] = (0,)
    eval_interval: int = 1
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not 1 <= self.m <= self.M:
            raise ConfigError(f"need 1 <= m <= M, got m={self.m}, M={self.M}")
        if self.data.n_clients != self.M:
            raise ConfigError(f"data.n_clients={self.data.n_clients} disagrees with M={self.M}")
        if not (self.algorithm.eta_l > 0 and self.algorithm.eta_g > 0):
            raise ConfigError("eta_l and eta_g must be > 0")
        if self.algorithm.b is not None and self.algorithm.b < 1:
            raise ConfigError("b must be >= 1")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.M_unseen < 0 or self.fine_tune_steps < 0:
            raise ConfigError("M_unseen and fine_tune_steps must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.data.scheme is Scheme.MEAN_ESTIMATION:
            if len(self.data.theta) != self.M:
                raise ConfigError(f"data.theta needs M={self.M} entries, got {len(self.data.theta)}")
            if self.model.kind is not ModelKind.SCALAR_QUADRATIC:
                raise ConfigError("mean_estimation data requires model.kind = 'scalar_quadratic'")
            if self.M_unseen:
                raise ConfigError("unseen clients are not supported for mean_estimation data")
        elif self.model.kind in (ModelKind.SCALAR_QUADRATIC, ModelKind.LINEAR_REGRESSION):
            raise ConfigError(f"model.kind={self.model.kind.value!r} cannot fit labeled data")

    def to_dict(self) -> dict:
        """Nested plain-data view that ``from_dict`` accepts unchanged."""
        agg, data = self.algorithm, self.data
        out = {
            "M": self.M, "m": self.m, "T": self.T,
            "tau": agg.tau, "eta_l": agg.eta_l, "eta_g": agg.eta_g, "epsilon": agg.epsilon,
            "b": 0 if agg.b is None else agg.b,
            "warmup_steps": self.warmup_steps, "weight_mode": agg.mode.value,
            "fine_tune_steps": self.fine_tune_steps, "seeds": list(self.seeds),
            "eval_interval": self.eval_interval, "output_dir": self.output_dir,
            "algorithm": {"kind": agg.kind.value, "mu": agg.mu, "q": agg.q, "lr": agg.lr, "alpha": agg.alpha},
            "data": {k: v for k, v in asdict(data).items() if k != "n_clients"},
            "model": {"kind": self.model.kind.value, "hidden": list(self.model.hidden),
                      "offset": self.model.offset},
            "participation": {"mode": self.participation.mode.value,
                              "mandatory_rounds": self.participation.mandatory_rounds},
            "byzantine": asdict(self.byzantine),
            "unseen": {"M_unseen": self.M_unseen},
        }
        out["data"]["scheme"] = data.scheme.value
        out["data"]["theta"] = list(data.theta)
        out["data"]["source"] = asdict(self.source)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(raw)


_TOP = {"M", "m", "T", "tau", "eta_l", "eta_g", "epsilon", "b", "warmup_steps", "weight_mode",
        "fine_tune_steps", "seeds", "eval_interval", "output_dir",
        "algorithm", "data", "model", "participation", "byzantine", "unseen"}
_ALGORITHM = {"kind", "mu", "q", "lr", "alpha"}
_DATA = {f.name for f in fields(PartitionSpec)} - {"n_clients"} | {"source"}
_SOURCE = {f.name for f in fields(SourceConfig)}
_MODEL = {"kind", "hidden", "offset"}
_PARTICIPATION = {"mode", "mandatory_rounds"}
_BYZANTINE = {f.name for f in fields(ByzantineConfig)}
_UNSEEN = {"M_unseen"}


def _table(raw: dict, key: str, allowed: set[str], prefix: str = "") -> dict:
    sub = raw.get(key, {})
    name = f"{prefix}{key}"
    if not isinstance(sub, dict):
        raise ConfigError(f"{name}: expected a table")
    _reject_unknown(sub, allowed, f"{name}.")
    return dict(sub)


def _reject_unknown(raw: dict, allowed: set[str], prefix: str = "") -> None:
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key {prefix}{k!r}")


def _typed(value, kind, key: str):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


_TOP_TYPES = {"M": int, "m": int, "T": int, "tau": int, "eta_l": float, "eta_g": float,
              "epsilon": float, "b": int, "warmup_steps": int, "weight_mode": str,
              "fine_tune_steps": int, "eval_interval": int, "output_dir": str}


def _build(raw: dict) -> ExperimentConfig:
    _reject_unknown(raw, _TOP)
    for key in ("algorithm", "data"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    top = {k: _typed(raw[k], t, k) for k, t in _TOP_TYPES.items() if k in raw}
    alg = _table(raw, "algorithm", _ALGORITHM)
    if "kind" not in alg:
        raise ConfigError("missing required key 'algorithm.kind'")
    data = _table(raw, "data", _DATA)
    if "scheme" not in data:
        raise ConfigError("missing required key 'data.scheme'")
    source = _table(data, "source", _SOURCE, "data.")
    data.pop("source", None)
    model = _table(raw, "model", _MODEL)
    part = _table(raw, "participation", _PARTICIPATION)
    byz = _table(raw, "byzantine", _BYZANTINE)
    unseen = _table(raw, "unseen", _UNSEEN)

    M = top.get("M", 50)
    T = top.get("T", 100)
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError(f"seeds: expected a list of integers, got {seeds!r}")

    def enum_value(enum_cls, value, key):
        try:
            return enum_cls(value)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            raise ConfigError(f"{key}: {value!r} is not one of {allowed}") from None

    b = top.get("b", 32)
    try:
        algorithm = AggregatorSpec(
            kind=enum_value(AlgorithmKind, alg["kind"], "algorithm.kind"),
            mode=enum_value(WeightMode, top.get("weight_mode", WeightMode.SIGMOID_DERIVATIVE.value),
                            "weight_mode"),
            eta_g=top.get("eta_g", 1.0), epsilon=top.get("epsilon", 0.01),
            mu=_typed(alg.get("mu", 0.0), float, "algorithm.mu"),
            q=_typed(alg.get("q", 0.0), float, "algorithm.q"),
            lr=_typed(alg.get("lr", 0.01), float, "algorithm.lr"),
            alpha=_typed(alg.get("alpha", 0.01), float, "algorithm.alpha"),
            tau=top.get("tau", 10), eta_l=top.get("eta_l", 0.01),
            b=None if b == 0 else b,
        )
        data["scheme"] = enum_value(Scheme, data["scheme"], "data.scheme")
        partition = PartitionSpec(n_clients=M, **data)
        mode = enum_value(ParticipationMode, part.get("mode", ParticipationMode.APPEAL_BASED.value),
                          "participation.mode")
        policy = ParticipationPolicy(
            mode, _typed(part.get("mandatory_rounds", ParticipationPolicy.default_mandatory(T)), int,
                         "participation.mandatory_rounds"))
        return ExperimentConfig(
            algorithm=algorithm, data=partition,
            source=SourceConfig(**source),
            model=ModelConfig(**model),
            M=M, m=top.get("m", 5), T=T,
            warmup_steps=top.get("warmup_steps", 100),
            participation=policy,
            byzantine=ByzantineConfig(**{k: _typed(v, float, f"byzantine.{k}") for k, v in byz.items()}),
            M_unseen=_typed(unseen.get("M_unseen", 0), int, "unseen.M_unseen"),
            fine_tune_steps=top.get("fine_tune_steps", 0),
            seeds=tuple(seeds),
            eval_interval=top.get("eval_interval", 1),
            output_dir=top.get("output_dir", "runs/experiment"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(path) -> ExperimentConfig:
    """Read and validate an FL experiment config; raises ConfigError or OSError."""
    return _build(load_toml(path))


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)


@dataclass(frozen=True)
class MeanEstConfig:
    gamma2: float = 1.0
    gamma_G_max: float = math.sqrt(20.0)
    grid_points: int = 21
    trials: int = 10000
    seed: int = 0
    estimators: tuple[str, ...] = ("fedavg_mean", "maxfl_minimum", "relu_surrogate")
    output_dir: str = "runs/meanest"

    def __post_init__(self):
        if not self.gamma2 > 0:
            raise ConfigError("meanest.gamma2 must be > 0")
        if self.grid_points < 2:
            raise ConfigError("meanest.grid_points must be >= 2 so both endpoints appear")
        if not self.gamma_G_max > 0:
            raise ConfigError("meanest.gamma_G_max must be > 0")
        if self.trials < 1:
            raise ConfigError("meanest.trials must be >= 1")
        from .meanest import Estimator

        for e in self.estimators:
            try:
                Estimator(e)
            except ValueError:
                raise ConfigError(f"meanest.estimators: unknown estimator {e!r}") from None

    @property
    def grid(self) -> list[float]:
        step = self.gamma_G_max / (self.grid_points - 1)
        return [i * step for i in range(self.grid_points - 1)] + [self.gamma_G_max]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return {"meanest": d}


_MEANEST_TYPES = {"gamma2": float, "gamma_G_max": float, "grid_points": int, "trials": int,
                  "seed": int, "output_dir": str}


def meanest_from_dict(raw: dict) -> MeanEstConfig:
    _reject_unknown(raw, {"meanest"})
    if "meanest" not in raw:
        raise ConfigError("missing required key 'meanest'")
    sub = _table(raw, "meanest", set(_MEANEST_TYPES) | {"estimators"})
    kw = {k: _typed(sub[k], t, f"meanest.{k}") for k, t in _MEANEST_TYPES.items() if k in sub}
    if "estimators" in sub:
        ests = sub["estimators"]
        if not isinstance(ests, list) or not ests:
            raise ConfigError("meanest.estimators: expected a non-empty list")
        kw["estimators"] = tuple(ests)
    return MeanEstConfig(**kw)


def parse_meanest_config(path) -> MeanEstConfig:
    return meanest_from_dict(load_toml(path))


def is_meanest_config(raw: dict) -> bool:
    return "meanest" in raw
