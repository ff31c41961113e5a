"""Model-free path: instruction encoder, attention LSTM policy, baselines."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import LSTM, Embedding, Linear, ParameterStore, Value
from .world import NUM_ACTIONS, PAD_ID, VOCAB, Action

START_ACTION = NUM_ACTIONS  # extra embedding row for "no action yet"


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = len(VOCAB)
    word_embed: int = 32
    hidden: int = 64
    feature_dim: int = 64
    action_embed: int = 32
    dropout: float = 0.5
    mask_stop_at_start: bool = False
    context_in_output: bool = True

    @classmethod
    def full_scale(cls, **kw) -> "PolicyConfig":
        return cls(**{**dict(word_embed=256, hidden=512, feature_dim=2048, action_embed=32), **kw})


@dataclass
class EncodedInstruction:
    word_features: Value  # (B, L, H)
    mask: np.ndarray      # (B, L) bool, False on padding

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def tile(self, reps: int) -> "EncodedInstruction":
        """Constant copy repeated ``reps`` times along the batch (block-major)."""
        w = self.word_features.data
        return EncodedInstruction(Value(np.tile(w, (reps, 1, 1))), np.tile(self.mask, (reps, 1)))


@dataclass
class PolicyState:
    h: Value
    c: Value
    prev_action: np.ndarray
    t: int = 0

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"h": self.h.data.copy(), "c": self.c.data.copy(),
                "prev_action": self.prev_action.copy(), "t": np.array(self.t)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "PolicyState":
        return cls(Value(arrays["h"].copy()), Value(arrays["c"].copy()),
                   arrays["prev_action"].copy(), int(arrays["t"]))

    def detached(self) -> "PolicyState":
        return replace(self, h=self.h.detach(), c=self.c.detach())


@dataclass
class PolicyOutput:
    feature: Value          # [h_t ; c_t], (B, 2H)
    logits: Value           # (B, 6)
    attention: np.ndarray   # (B, L)

    @property
    def probs(self) -> np.ndarray:
        return ad.softmax(self.logits).data

    def log_probs(self) -> Value:
        return ad.log_softmax(self.logits)


def pad_instructions(instructions, vocab_size: int = len(VOCAB)) -> tuple[np.ndarray, np.ndarray]:
    if not instructions or any(len(x) == 0 for x in instructions):
        raise ValueError("instructions must be non-empty token sequences")
    L = max(len(x) for x in instructions)
    tokens = np.full((len(instructions), L), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(instructions), L), dtype=bool)
    for i, x in enumerate(instructions):
        arr = np.asarray(x, dtype=np.int64)
        if arr.min() < 0 or arr.max() >= vocab_size:
            raise ValueError(f"out-of-vocabulary token id in instruction {i}")
        tokens[i, :len(arr)] = arr
        mask[i, :len(arr)] = True
    return tokens, mask


def attend(h_prev: Value, words: Value, mask: np.ndarray | None = None) -> tuple[Value, Value]:
    """Dot-product attention of the previous hidden state over word features."""
    B, L, H = words.shape
    if h_prev.shape != (B, H):
        raise ad.ShapeError(f"attend: hidden {h_prev.shape} vs word features {words.shape}")
    scores = ad.vsum(words * ad.reshape(h_prev, (B, 1, H)), axis=2)
    alpha = ad.softmax(scores, mask)
    context = ad.vsum(words * ad.reshape(alpha, (B, L, 1)), axis=1)
    return context, alpha


class RecurrentPolicy:
    """Language encoder plus attention LSTM decoder.

    Parameters live in ``store`` under the ``encoder.`` and ``policy.``
    prefixes.  The projection head is used when the policy acts on its own
    (or as the look-ahead policy); the fused agent consumes ``feature``.
    """

    def __init__(self, store: ParameterStore, config: PolicyConfig, rng: np.random.Generator):
        self.config = cfg = config
        self.store = store
        self.word_embed = Embedding(store, "encoder.embed", cfg.vocab_size, cfg.word_embed, rng)
        self.encoder_lstm = LSTM(store, "encoder.lstm", cfg.word_embed, cfg.hidden, rng)
        self.encoder_proj = Linear(store, "encoder.proj", cfg.hidden, cfg.hidden, rng)
        self.action_embed = Embedding(store, "policy.action_embed", NUM_ACTIONS + 1, cfg.action_embed, rng)
        self.decoder = LSTM(store, "policy.decoder", cfg.hidden + cfg.feature_dim + cfg.action_embed,
                            cfg.hidden, rng)
        self.head1 = Linear(store, "policy.head1", 2 * cfg.hidden, cfg.hidden, rng)
        self.head2 = Linear(store, "policy.head2", cfg.hidden, NUM_ACTIONS, rng)

    @property
    def feature_size(self) -> int:
        return 2 * self.config.hidden

    def encode(self, instructions) -> EncodedInstruction:
        tokens, mask = pad_instructions(instructions, self.config.vocab_size)
        B, L = tokens.shape
        emb = self.word_embed(tokens)  # (B, L, E)
        h, c = self.encoder_lstm.zero_state(B)
        outs = []
        for t in range(L):
            h, c = self.encoder_lstm.step(emb[:, t, :], h, c)
            outs.append(h)
        hs = ad.stack(outs, axis=1)
        return EncodedInstruction(ad.tanh(self.encoder_proj(hs)), mask)

    def initial_state(self, batch: int) -> PolicyState:
        h, c = self.decoder.zero_state(batch)
        return PolicyState(h, c, np.full(batch, START_ACTION, dtype=np.int64), 0)

    def decode_step(self, state: PolicyState, encoded: EncodedInstruction, observation,
                    *, train: bool = False, rng: np.random.Generator | None = None
                    ) -> tuple[PolicyOutput, PolicyState]:
        cfg = self.config
        obs = observation if isinstance(observation, Value) else Value(np.asarray(observation, dtype=np.float64))
        if obs.ndim != 2 or obs.shape != (state.h.shape[0], cfg.feature_dim):
            raise ad.ShapeError(f"decode_step: observation {obs.shape} does not match "
                                f"({state.h.shape[0]}, {cfg.feature_dim})")
        context, alpha = attend(state.h, encoded.word_features, encoded.mask)
        x = ad.concat([context, obs, self.action_embed(state.prev_action)], axis=1)
        h, c = self.decoder.step(x, state.h, state.c)
        h_out = ad.dropout(h, cfg.dropout, rng, train)
        ctx_out = context if cfg.context_in_output else Value(np.zeros(context.shape))
        feature = ad.concat([h_out, ctx_out], axis=1)
        logits = self.head2(ad.tanh(self.head1(feature)))
        if cfg.mask_stop_at_start and state.t == 0:
            block = np.zeros((1, NUM_ACTIONS))
            block[0, Action.STOP] = -1e9
            logits = logits + block
        new_state = PolicyState(h, c, state.prev_action, state.t + 1)
        return PolicyOutput(feature, logits, alpha.data), new_state

    def advance(self, state: PolicyState, actions: np.ndarray) -> PolicyState:
        """Record the action actually taken so the next step embeds it."""
        return replace(state, prev_action=np.asarray(actions, dtype=np.int64))


class RandomAgent:
    """Uniform over the six actions, reproducible from its seed."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def act(self, state=None) -> Action:
        return Action(int(self.rng.integers(NUM_ACTIONS)))

    def act_batch(self, n: int) -> np.ndarray:
        return self.rng.integers(NUM_ACTIONS, size=n)


def baseline_random(rng: np.random.Generator) -> Action:
    return Action(int(rng.integers(NUM_ACTIONS)))
