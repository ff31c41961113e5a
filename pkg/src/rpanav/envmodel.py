"""Learned environment model: (state feature, action) -> (next feature, reward)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Embedding, Linear, ParameterStore, Value
from .world import NUM_ACTIONS, VOCAB

REWARD_LOSS_WEIGHT = 0.001


@dataclass(frozen=True)
class EnvModelConfig:
    feature_dim: int = 64
    action_embed: int = 32
    proj: int = 512
    transition_hidden: tuple[int, ...] = (256, 512)
    reward_hidden: int = 256
    use_language: bool = False
    language_embed: int = 16
    vocab_size: int = len(VOCAB)

    def __post_init__(self):
        widths = (self.feature_dim, self.action_embed, self.proj, self.reward_hidden,
                  *self.transition_hidden)
        if min(widths) < 1:
            raise ValueError("all environment-model widths must be >= 1")

    @classmethod
    def full_scale(cls, **kw) -> "EnvModelConfig":
        return cls(**{**dict(feature_dim=2048, action_embed=256, proj=512,
                             transition_hidden=(256, 512), reward_hidden=256), **kw})


@dataclass
class Prediction:
    next_state: Value  # (B, F), entries in (0, 1)
    reward: Value      # (B,)


class EnvironmentModel:
    """Projection, sigmoid transition MLP and linear reward MLP.

    ``prediction_count`` counts predicted rows, so one call on a batch of N
    (state, action) pairs adds N.
    """

    def __init__(self, store: ParameterStore, config: EnvModelConfig, rng: np.random.Generator):
        self.config = cfg = config
        self.store = store
        self.action_embed = Embedding(store, "envmodel.action_embed", NUM_ACTIONS, cfg.action_embed, rng)
        n_in = cfg.feature_dim + cfg.action_embed
        if cfg.use_language:
            self.word_embed = Embedding(store, "envmodel.word_embed", cfg.vocab_size, cfg.language_embed, rng)
            n_in += cfg.language_embed
        self.proj = Linear(store, "envmodel.proj", n_in, cfg.proj, rng)
        widths = (cfg.proj, *cfg.transition_hidden, cfg.feature_dim)
        self.transition = [Linear(store, f"envmodel.transition{k}", a, b, rng)
                           for k, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.reward1 = Linear(store, "envmodel.reward1", cfg.proj, cfg.reward_hidden, rng)
        self.reward2 = Linear(store, "envmodel.reward2", cfg.reward_hidden, 1, rng)
        self.prediction_count = 0

    @staticmethod
    def new(config: EnvModelConfig, seed: int) -> "EnvironmentModel":
        return EnvironmentModel(ParameterStore("envmodel"), config, np.random.default_rng(seed))

    def pooled_instruction(self, tokens: np.ndarray, mask: np.ndarray) -> Value:
        """Mean of word embeddings over non-padding tokens (bag of words)."""
        emb = self.word_embed(tokens)
        weights = mask / mask.sum(axis=1, keepdims=True)
        return ad.vsum(emb * Value(weights[:, :, None]), axis=1)

    def predict(self, state, action, language: Value | None = None) -> Prediction:
        s = state if isinstance(state, Value) else Value(np.asarray(state, dtype=np.float64))
        a = np.asarray(action, dtype=np.int64).reshape(-1)
        if s.ndim != 2 or s.shape[1] != self.config.feature_dim:
            raise ad.ShapeError(f"predict: state shape {s.shape}, expected (B, {self.config.feature_dim})")
        if a.shape[0] != s.shape[0]:
            raise ad.ShapeError(f"predict: {a.shape[0]} actions for {s.shape[0]} states")
        parts = [s, self.action_embed(a)]
        if self.config.use_language:
            if language is None:
                raise ValueError("predict: this model expects a pooled instruction vector")
            parts.append(language)
        z = ad.relu(self.proj(ad.concat(parts, axis=1)))
        x = z
        for k, layer in enumerate(self.transition):
            x = layer(x)
            x = ad.sigmoid(x) if k == len(self.transition) - 1 else ad.relu(x)
        r = self.reward2(ad.relu(self.reward1(z)))
        self.prediction_count += s.shape[0]
        return Prediction(next_state=x, reward=ad.reshape(r, (s.shape[0],)))

    def predict_arrays(self, state: np.ndarray, action: np.ndarray, language: Value | None = None
                       ) -> tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            p = self.predict(state, action, language)
        return p.next_state.data, p.reward.data


def env_model_losses(pred: Prediction, next_states, rewards) -> tuple[Value, Value]:
    """Mean squared errors of the predicted next state and reward."""
    ns = np.asarray(next_states, dtype=np.float64)
    rw = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if ns.shape[0] == 0:
        raise ValueError("env_model_losses: empty batch")
    return ad.mse(pred.next_state, ns), ad.mse(pred.reward, rw)


def combined_loss(l_transition: Value, l_reward: Value) -> Value:
    return l_transition + ad.scale(l_reward, REWARD_LOSS_WEIGHT)
