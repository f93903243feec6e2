"""Pipeline configuration: an INI file parsed into typed sections.

Strict parsing — unknown sections or keys are diagnostics, not silent noise.
A stable hash of the parsed configuration is embedded in stage artifacts so
reruns can detect stale outputs.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field

from .denoiser import DenoiserConfig
from .errors import ContractError
from .evaluate import EvalConfig
from .gridworld import COLORS, FAMILIES, OBJECT_TYPES
from .ppo import PpoConfig


@dataclass
class ConfigError(Exception):
    """Config parse/validation failure, with the offending field."""

    message: str

    def __str__(self):
        return self.message


@dataclass
class TaskFilterConfig:
    families: tuple = tuple(FAMILIES)
    types: tuple = tuple(OBJECT_TYPES)
    colors: tuple = ("red", "green", "blue")


@dataclass
class BcConfig:
    per_task: int = 50
    threshold: float = 0.85
    demo_episodes: int = 300
    epochs: int = 200


@dataclass
class DiffusionTrainConfig:
    T: int = 1000
    vlb_lambda: float = 0.001
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    width: int = 128
    depth: int = 2
    heads: int = 4
    sample_stride: int = 1


@dataclass
class PipelineConfig:
    seed: int = 0
    artifacts: str = "artifacts"
    tasks: TaskFilterConfig = field(default_factory=TaskFilterConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    diffusion: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    embeddings_file: str = ""  # optional external embedding table

    def config_hash(self) -> str:
        blob = json.dumps(_as_plain(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _as_plain(cfg: PipelineConfig) -> dict:
    out = {}
    for key, value in asdict(cfg).items():
        if key == "artifacts":
            # storage location does not affect artifact contents
            continue
        out[key] = value
    return out


_SCHEMA: dict[str, dict[str, type]] = {
    "pipeline": {"seed": int, "artifacts": str, "embeddings_file": str},
    "tasks": {"families": str, "types": str, "colors": str},
    "ppo": {
        "gamma": float,
        "gae_lambda": float,
        "clip_ratio": float,
        "epochs_per_update": int,
        "minibatch_size": int,
        "rollout_length": int,
        "parallel_envs": int,
        "entropy_coef": float,
        "entropy_coef_final": float,
        "entropy_anneal_steps": int,
        "value_coef": float,
        "learning_rate": float,
        "total_step_budget": int,
        "target_mean_reward": float,
        "eval_episodes": int,
        "eval_every_updates": int,
    },
    "bc": {"per_task": int, "threshold": float, "demo_episodes": int, "epochs": int},
    "diffusion": {
        "T": int,
        "vlb_lambda": float,
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "width": int,
        "depth": int,
        "heads": int,
        "sample_stride": int,
    },
    "eval": {"runs_per_task": int, "mos_sizes": str, "seed": int},
}


def _parse_list(raw: str, allowed: tuple, what: str) -> tuple:
    items = tuple(tok.strip() for tok in raw.split(",") if tok.strip())
    for item in items:
        if item not in allowed:
            raise ConfigError(f"{what}: unknown value {item!r} (allowed: {allowed})")
    if not items:
        raise ConfigError(f"{what}: empty list")
    return items


def validate_config(path) -> PipelineConfig:
    """Parse and validate an INI config; raises ConfigError with the field."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive ([diffusion] T)
    try:
        read = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kind = _SCHEMA[section][key]
            if kind is not str:
                try:
                    value = kind(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}"
                    ) from exc
            else:
                value = raw
            _assign(cfg, section, key, value)

    _validate(cfg)
    return cfg


def _assign(cfg: PipelineConfig, section: str, key: str, value):
    if section == "pipeline":
        setattr(cfg, key, value)
    elif section == "tasks":
        allowed = {
            "families": tuple(FAMILIES),
            "types": tuple(OBJECT_TYPES),
            "colors": tuple(COLORS),
        }[key]
        setattr(cfg.tasks, key, _parse_list(value, allowed, f"[tasks] {key}"))
    elif section == "ppo":
        setattr(cfg.ppo, key, value)
    elif section == "bc":
        setattr(cfg.bc, key, value)
    elif section == "diffusion":
        setattr(cfg.diffusion, key, value)
    elif section == "eval":
        if key == "mos_sizes":
            try:
                sizes = tuple(int(tok) for tok in value.split(",") if tok.strip())
            except ValueError as exc:
                raise ConfigError(f"[eval] mos_sizes: bad integer in {value!r}") from exc
            cfg.eval.mos_sizes = sizes
        else:
            setattr(cfg.eval, key, value)


def _validate(cfg: PipelineConfig):
    if not cfg.artifacts:
        raise ConfigError("[pipeline] artifacts: path must be non-empty")
    for name, value in (
        ("[bc] threshold", cfg.bc.threshold),
        ("[ppo] target_mean_reward", cfg.ppo.target_mean_reward),
    ):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name}: must be in [0,1], got {value}")
    if cfg.diffusion.T < 1:
        raise ConfigError(f"[diffusion] T: must be >= 1, got {cfg.diffusion.T}")
    if cfg.diffusion.width % cfg.diffusion.heads != 0:
        raise ConfigError(
            f"[diffusion] width {cfg.diffusion.width} not divisible by heads "
            f"{cfg.diffusion.heads}"
        )
    if any(m < 1 for m in cfg.eval.mos_sizes):
        raise ConfigError("[eval] mos_sizes: every size must be >= 1")
    if cfg.bc.per_task < 1:
        raise ConfigError(f"[bc] per_task: must be >= 1, got {cfg.bc.per_task}")
    try:
        PpoConfig(**{k: getattr(cfg.ppo, k) for k in vars(cfg.ppo)})
    except ValueError as exc:
        raise ConfigError(f"[ppo]: {exc}") from exc


def denoiser_config(cfg: PipelineConfig, cond_len: int) -> DenoiserConfig:
    return DenoiserConfig(
        width=cfg.diffusion.width,
        depth=cfg.diffusion.depth,
        heads=cfg.diffusion.heads,
        cond_len=cond_len,
    )


def ensure(condition: bool, message: str):
    if not condition:
        raise ContractError(message)
