"""Flat ``key = value`` experiment configuration.

Precedence is command line (``--set``) over config file over defaults.
Unknown keys are rejected so typos cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..agent import PolicyConfig
from ..envmodel import EnvModelConfig
from ..lookahead import LookaheadConfig
from ..trainer import RewardSpec, TrainConfig


class ConfigError(ValueError):
    pass


def _doc(text: str, default):
    return field(default=default, metadata={"doc": text})


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = _doc("global seed for worlds, initialisation and sampling", 0)
    # worlds and splits
    node_count: int = _doc("nodes per world", 24)
    landmark_vocab: int = _doc("distinct landmark labels per world", 12)
    train_worlds: int = _doc("training worlds", 10)
    seen_worlds: int = _doc("training worlds reused for val_seen", 3)
    unseen_worlds: int = _doc("held-out worlds for val_unseen", 3)
    train_tasks_per_world: int = _doc("training tasks per world", 30)
    eval_tasks_per_world: int = _doc("evaluation tasks per world", 30)
    min_path_len: int = _doc("minimum edges on a task path", 3)
    max_path_len: int = _doc("maximum edges on a task path", 6)
    max_tokens: int = _doc("instruction length cap including <end>", 40)
    start_heading: str = _doc("'aligned' (face the first edge) or 'random'", "aligned")
    # policy
    word_embed: int = _doc("word embedding width", 32)
    hidden: int = _doc("encoder and decoder LSTM width", 64)
    feature_dim: int = _doc("observation feature width", 64)
    action_embed: int = _doc("policy action embedding width", 32)
    mask_stop_at_start: bool = _doc("forbid Stop at the first step", False)
    # environment model
    env_action_embed: int = _doc("environment-model action embedding width", 32)
    env_proj: int = _doc("environment-model projection width", 512)
    env_transition_hidden: tuple = _doc("transition MLP hidden widths", (256, 512))
    env_reward_hidden: int = _doc("reward MLP hidden width", 256)
    env_use_language: bool = _doc("feed a pooled instruction vector to the environment model", False)
    # look-ahead
    depth: int = _doc("imagined steps per branch", 2)
    encoder_hidden: int = _doc("trajectory encoder width", 32)
    predictor_hidden: tuple = _doc("action predictor hidden widths", (64, 32))
    predictor_dropout: bool = _doc("apply dropout to the action predictor's hidden layers", False)
    # rewards
    reward: str = _doc("gd | succ | disc | disc-succ", "disc-succ")
    gamma: float = _doc("discount factor", 0.95)
    # training
    batch_size: int = _doc("episodes per policy update", 16)
    max_episode_len: int = _doc("action cap per episode", 20)
    iterations: int = _doc("policy updates", 1000)
    lr_policy: float = _doc("policy Adam learning rate", 1e-3)
    lr_envmodel: float = _doc("environment-model Adam learning rate", 3e-3)
    envmodel_iterations: int = _doc("environment-model updates", 500)
    envmodel_batch_size: int = _doc("teacher episodes per environment-model update", 64)
    envmodel_weight_decay: float = _doc("environment-model L2 weight decay", 0.0)
    clip_norm: float = _doc("global gradient-norm clip", 5.0)
    weight_decay: float = _doc("policy L2 weight decay", 0.0005)
    dropout: float = _doc("dropout ratio during training", 0.5)
    p_human: float = _doc("randomised-teacher demonstration probability", 0.95)
    w_floor: float = _doc("lower bound of the supervised-loss weight", 0.15)
    schedule_T: float = _doc("supervised-weight decay temperature (0: iterations / 5)", 1000.0)
    reward_baseline: bool = _doc("subtract a running-mean baseline from returns", True)
    rl_per_step: bool = _doc("average the policy-gradient term over steps instead of episodes", True)
    lookahead_aux_weight: float = _doc("supervised weight on the look-ahead policy head", 2.0)
    success_threshold: float = _doc("navigation-error threshold for success (strict)", 3.0)
    checkpoint_every: int = _doc("iterations between resumable training-state saves", 100)

    def __post_init__(self):
        try:
            self.train_config()
            self.policy_config()
            self.env_config()
            self.lookahead_config()
            self.reward_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.start_heading not in ("aligned", "random"):
            raise ConfigError("start_heading must be 'aligned' or 'random'")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    # -- typed views ----------------------------------------------------------------
    def train_config(self) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names})

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(word_embed=self.word_embed, hidden=self.hidden, feature_dim=self.feature_dim,
                            action_embed=self.action_embed, dropout=self.dropout,
                            mask_stop_at_start=self.mask_stop_at_start)

    def env_config(self) -> EnvModelConfig:
        return EnvModelConfig(feature_dim=self.feature_dim, action_embed=self.env_action_embed,
                              proj=self.env_proj, transition_hidden=tuple(self.env_transition_hidden),
                              reward_hidden=self.env_reward_hidden, use_language=self.env_use_language)

    def lookahead_config(self) -> LookaheadConfig:
        return LookaheadConfig(depth=self.depth, encoder_hidden=self.encoder_hidden,
                               predictor_hidden=tuple(self.predictor_hidden),
                               predictor_dropout=self.predictor_dropout)

    def reward_spec(self) -> RewardSpec:
        return RewardSpec(self.reward, self.gamma)

    def dataset_kwargs(self) -> dict:
        keys = ("train_worlds", "seen_worlds", "unseen_worlds", "train_tasks_per_world",
                "eval_tasks_per_world", "node_count", "landmark_vocab", "min_path_len", "max_path_len",
                "max_tokens", "start_heading")
        return {k: getattr(self, k) for k in keys}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- text form -----------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"# {f.metadata['doc']}")
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


_TYPES = typing.get_type_hints(ExperimentConfig)


def parse_value(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind, raw = _TYPES[key], raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(lines) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load_config(path=None, overrides=(), base: dict | None = None) -> ExperimentConfig:
    values = dict(base or {})
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines()))
    values.update(parse_pairs(overrides))
    return ExperimentConfig(**values)
