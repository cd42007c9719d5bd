"""Scenario configuration: defaults, JSON load/save, dB conversion, overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams
from .energy import BatteryLimits, HarvestParams, PowerParams
from .world import KinematicLimits, NodeLayout


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one data-collection scenario.

    Defaults are the reference system parameters; any field can be overridden
    via a JSON config file or CLI `--override` flags.
    """

    n_sns: int = 20
    area_side: float = 200.0
    dc_position: tuple = (0.0, 160.0)
    sn_positions: tuple | None = None  # explicit ((x, y), ...); None = sample uniformly
    horizon: int = 100                 # slots per episode
    slot_seconds: float = 0.5
    sched_window: float = 0.25         # slot time reserved for sensor scheduling
    altitude: float = 100.0
    arrival_rate: float = 0.1          # per-slot packet arrival probability
    packet_bits: int = 10240
    aoi_weight: float = 1.0
    energy_weight: float = 10.0
    initial_energy: float | None = None  # None = full battery
    v_max: float = 20.0
    turn_max: float = math.pi / 3.0
    channel: ChannelParams = field(default_factory=ChannelParams)
    power: PowerParams = field(default_factory=PowerParams)
    harvest: HarvestParams = field(default_factory=HarvestParams)
    battery: BatteryLimits = field(default_factory=BatteryLimits)

    def __post_init__(self):
        if self.n_sns < 1:
            raise ValueError("need at least one sensor node")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one slot")
        if not 0 < self.sched_window < self.slot_seconds:
            raise ValueError("sched_window must lie strictly inside the slot")

    @property
    def kinematic_limits(self) -> KinematicLimits:
        return KinematicLimits(v_max=self.v_max, turn_max=self.turn_max,
                               slot_seconds=self.slot_seconds)

    def make_layout(self, rng: np.random.Generator) -> NodeLayout:
        """Build the node layout, sampling SN positions when not pinned."""
        if self.sn_positions is not None:
            sns = np.asarray(self.sn_positions, dtype=float)
            if sns.shape[0] != self.n_sns:
                raise ValueError("sn_positions length disagrees with n_sns")
        else:
            sns = rng.uniform(0.0, self.area_side, size=(self.n_sns, 2))
        return NodeLayout(sn_positions=sns, dc_position=np.asarray(self.dc_position),
                          area_side=self.area_side)


@dataclass(frozen=True)
class TrainingConfig:
    """Trust-region training hyperparameters."""

    episodes: int = 30000
    rollout_capacity: int = 2048   # transitions accumulated before an update
    minibatch: int = 64            # critic regression minibatch
    max_kl: float = 0.01
    gae_lambda: float = 0.95
    discount: float = 0.99
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_steps: int = 10
    backtrack_coef: float = 0.5
    critic_lr: float = 1e-4
    critic_epochs: int = 10
    joint_heads: bool = False      # single factored update instead of two sequential ones
    checkpoint_every: int = 0      # episodes between checkpoints; 0 = final only

    def __post_init__(self):
        if self.max_kl <= 0:
            raise ValueError("max_kl must be positive")
        if not (0.0 <= self.gae_lambda <= 1.0 and 0.0 <= self.discount <= 1.0):
            raise ValueError("gae_lambda and discount must lie in [0, 1]")


@dataclass(frozen=True)
class MetaTrainingConfig:
    """Meta-training hyperparameters (inner REINFORCE, outer trust region)."""

    meta_iters: int = 10000
    tasks_per_iter: int = 15
    trajs_per_task: int = 5
    inner_lr: float = 0.1
    inner_steps: int = 1
    sn_count_min: int = 12
    sn_count_max: int = 20
    per_task_critic: bool = False

    def __post_init__(self):
        if self.tasks_per_iter < 1 or self.trajs_per_task < 1:
            raise ValueError("tasks_per_iter and trajs_per_task must be >= 1")
        if self.inner_lr < 0:
            raise ValueError("inner_lr cannot be negative")
        if not 1 <= self.sn_count_min <= self.sn_count_max:
            raise ValueError("need 1 <= sn_count_min <= sn_count_max")


@dataclass(frozen=True)
class RunConfig:
    """Scenario plus training knobs, as loaded from one config file."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    meta: MetaTrainingConfig = field(default_factory=MetaTrainingConfig)


_DB_KEYS = {
    "beta0_db": ("beta0", db_to_linear),
    "noise_power_dbm": ("noise_power", dbm_to_watts),
    "snr_threshold_db": ("snr_threshold", db_to_linear),
    "sn_tx_power_dbm": ("sn_tx_power", dbm_to_watts),
    "uav_tx_power_dbm": ("uav_tx_power", dbm_to_watts),
}


def _channel_from_dict(data: dict) -> ChannelParams:
    data = dict(data)
    for db_key, (lin_key, conv) in _DB_KEYS.items():
        if db_key in data:
            data[lin_key] = conv(data.pop(db_key))
    return ChannelParams(**data)


def _build(cls, data, overrides=None):
    kwargs = dict(data)
    if overrides:
        kwargs.update(overrides)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a (possibly partial) nested dict."""
    scen = dict(data.get("scenario", {}))
    nested = {}
    if "channel" in scen:
        nested["channel"] = _channel_from_dict(scen.pop("channel"))
    for key, cls in (("power", PowerParams), ("harvest", HarvestParams),
                     ("battery", BatteryLimits)):
        if key in scen:
            nested[key] = _build(cls, scen.pop(key))
    if scen.get("sn_positions") is not None:
        scen["sn_positions"] = tuple(tuple(p) for p in scen["sn_positions"])
    if "dc_position" in scen:
        scen["dc_position"] = tuple(scen["dc_position"])
    return RunConfig(
        scenario=ScenarioConfig(**scen, **nested),
        training=_build(TrainingConfig, data.get("training", {})),
        meta=_build(MetaTrainingConfig, data.get("meta", {})),
    )


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _coerce(text: str):
    for parse in (int, float):
        try:
            return parse(text)
        except ValueError:
            pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("null", "none"):
        return None
    return text


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `section.key=value` (or `section.sub.key=value`) override strings."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        dotted, _, raw = item.partition("=")
        keys = dotted.split(".")
        node = data
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise KeyError(f"unknown override section {dotted!r}")
            node = node[key]
        if keys[-1] not in node:
            raise KeyError(f"unknown override key {dotted!r}")
        node[keys[-1]] = _coerce(raw) if not raw.startswith("[") else json.loads(raw)
    return config_from_dict(data)


def config_hash(cfg: RunConfig) -> str:
    """Stable hash of the full configuration, for run manifests."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
