"""JSON run configuration with Table-2/3 defaults baked in.

A config file is a JSON object with optional sections::

    {"env": {"id": "spread", "n_agents": 3},
     "trainer": {...TrainerConfig fields...},
     "fusion": {"algo": "soco", "strength": 0.0, "gating": "learned",
                "clip": "tanh", "temperature": 1.0},
     "bc": {"steps": 5000, "batch_size": 256, "lr": 0.001, "hidden": 128},
     "demos": {"m": 100000},
     "layout": {...ObservationLayout.to_dict()...},
     "paths": {"expert": ..., "demos": ..., "solo": ..., "out_dir": ...},
     "seeds": [0, 1, 2]}

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .decomp import ObservationLayout, spread_layout
from .marl import ConfigError, TrainerConfig

_FUSION_KEYS = {"algo", "strength", "gating", "clip", "temperature"}
_TRAINER_SECTION_SKIP = {"env", "n_agents", "algo", "strength", "gating", "clip", "gumbel_temperature", "seed"}


@dataclass
class BcConfig:
    steps: int = 5000
    batch_size: int = 256
    lr: float = 1e-3
    hidden: int = 128
    seed: int = 0


@dataclass
class DemoConfig:
    m: int = 100_000
    seed: int = 0


@dataclass
class Paths:
    expert: str = "expert.ckpt"
    demos: str = "demos.bin"
    solo: str = "solo.ckpt"
    out_dir: str = "runs"


@dataclass
class RunConfig:
    env_id: str = "spread"
    n_agents: int = 3
    trainer: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=lambda: {"algo": "soco"})
    bc: BcConfig = field(default_factory=BcConfig)
    demos: DemoConfig = field(default_factory=DemoConfig)
    layout: dict | None = None
    paths: Paths = field(default_factory=Paths)
    seeds: list[int] = field(default_factory=lambda: [0])

    def trainer_config(self, seed: int | None = None) -> TrainerConfig:
        fz = self.fusion
        try:
            cfg = self._build(fz, seed)
        except TypeError as e:
            raise ConfigError(f"bad trainer section: {e}") from None
        return cfg.validate()

    def _build(self, fz: dict, seed: int | None) -> TrainerConfig:
        return TrainerConfig(
            env=self.env_id,
            n_agents=self.n_agents,
            algo=fz.get("algo", "soco"),
            strength=float(fz.get("strength", 0.0)),
            gating=fz.get("gating", "learned"),
            clip=fz.get("clip", "tanh"),
            gumbel_temperature=float(fz.get("temperature", 1.0)),
            seed=self.seeds[0] if seed is None else seed,
            **self.trainer,
        )

    def observation_layout(self) -> ObservationLayout:
        if self.layout is not None:
            return ObservationLayout.from_dict(self.layout)
        return spread_layout(self.n_agents)

    def validate(self) -> "RunConfig":
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.bc.steps < 0 or self.bc.batch_size < 1 or self.bc.lr <= 0 or self.bc.hidden < 1:
            raise ConfigError("invalid bc section")
        if self.demos.m < 0:
            raise ConfigError("demos.m must be >= 0")
        for s in self.seeds:
            self.trainer_config(s)
        if self.fusion.get("algo", "soco") == "soco":
            lay = self.observation_layout()
            from .envs import obs_width

            if self.env_id == "spread" and lay.obs_width != obs_width(self.n_agents, self.n_agents):
                raise ConfigError("layout width does not match the environment observation")
        return self

    def to_dict(self) -> dict:
        return {
            "env": {"id": self.env_id, "n_agents": self.n_agents},
            "trainer": dict(self.trainer),
            "fusion": dict(self.fusion),
            "bc": asdict(self.bc),
            "demos": asdict(self.demos),
            "layout": self.layout,
            "paths": asdict(self.paths),
            "seeds": list(self.seeds),
        }


def _section(d: dict, cls, name: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {name!r} section: {e}") from None


def parse_config(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"env", "trainer", "fusion", "bc", "demos", "layout", "paths", "seeds"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    rc = RunConfig()
    env = d.get("env", {})
    bad_env = set(env) - {"id", "n_agents"}
    if bad_env:
        raise ConfigError(f"unknown keys in 'env': {sorted(bad_env)}")
    rc.env_id = env.get("id", rc.env_id)
    rc.n_agents = int(env.get("n_agents", 1 if rc.env_id == "solonav" else rc.n_agents))
    trainer = d.get("trainer", {})
    known = {f.name for f in fields(TrainerConfig)} - _TRAINER_SECTION_SKIP
    bad = set(trainer) - known
    if bad:
        raise ConfigError(f"unknown keys in 'trainer': {sorted(bad)}")
    rc.trainer = dict(trainer)
    fusion = d.get("fusion", {"algo": "soco"})
    bad = set(fusion) - _FUSION_KEYS
    if bad:
        raise ConfigError(f"unknown keys in 'fusion': {sorted(bad)}")
    rc.fusion = {"algo": "soco", **fusion}
    rc.bc = _section(d.get("bc", {}), BcConfig, "bc")
    rc.demos = _section(d.get("demos", {}), DemoConfig, "demos")
    rc.paths = _section(d.get("paths", {}), Paths, "paths")
    rc.layout = d.get("layout")
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    rc.seeds = seeds
    return rc.validate()


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return parse_config(data)
