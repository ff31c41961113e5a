"""Model-based path: imagined rollouts, trajectory encoder and action predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .agent import EncodedInstruction, PolicyOutput, PolicyState, RecurrentPolicy
from .autodiff import LSTM, Linear, ParameterStore, Value
from .envmodel import EnvironmentModel
from .world import MOVE_ACTIONS, NUM_ACTIONS

PredictFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
ChooseFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LookaheadConfig:
    depth: int = 2
    branches: tuple[int, ...] = tuple(int(a) for a in MOVE_ACTIONS)
    encoder_hidden: int = 32
    predictor_hidden: tuple[int, int] = (64, 32)
    predictor_dropout: bool = False   # apply the training dropout ratio to the predictor's hidden layers

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("look-ahead depth must be >= 1")
        if list(self.branches) != sorted(set(self.branches)):
            raise ValueError("branches must be distinct and in ascending action order")

    @property
    def num_branches(self) -> int:
        return len(self.branches)

    @classmethod
    def full_scale(cls, **kw) -> "LookaheadConfig":
        return cls(**{**dict(encoder_hidden=256, predictor_hidden=(512, 256)), **kw})


@dataclass
class RolloutEncoding:
    tau: Value   # (N, encoder_hidden)
    action: int


def rollout(state: np.ndarray, first_action, predict: PredictFn, choose: ChooseFn, depth: int
            ) -> tuple[np.ndarray, np.ndarray]:
    """Imagine ``depth`` steps from ``state`` (rows are independent).

    Step one takes ``first_action``; each later action is ``choose(k, s', a)``
    given the previously predicted state.  Only ``predict`` produces states
    and rewards.  Returns states (depth, N, F) and rewards (depth, N).
    """
    if depth < 1:
        raise ValueError("rollout depth must be >= 1")
    s = np.asarray(state, dtype=np.float64)
    a = np.broadcast_to(np.asarray(first_action, dtype=np.int64), (s.shape[0],)).copy()
    states, rewards = [], []
    for k in range(depth):
        s, r = predict(s, a)
        states.append(s)
        rewards.append(np.asarray(r).reshape(-1))
        if k + 1 < depth:
            a = np.asarray(choose(k, s, a), dtype=np.int64)
    return np.stack(states), np.stack(rewards)


def greedy_policy_chooser(policy: RecurrentPolicy, state: PolicyState, encoded: EncodedInstruction
                          ) -> ChooseFn:
    """Argmax of the recurrent policy, carried forward from ``state``.

    The chooser keeps its own copy of the recurrent state and recomputes
    attention at every imagined step.  It runs without a tape and without
    dropout, so nothing flows back into the policy.
    """
    box = {"state": state.detached()}

    def choose(k, predicted_state, taken):
        with ad.no_grad():
            st = policy.advance(box["state"], taken)
            out, st = policy.decode_step(st, encoded, predicted_state, train=False)
        box["state"] = st
        return np.argmax(out.logits.data, axis=1)

    return choose


class TrajectoryEncoder:
    def __init__(self, store: ParameterStore, feature_dim: int, hidden: int, rng: np.random.Generator):
        self.lstm = LSTM(store, "lookahead.encoder", feature_dim + 1, hidden, rng)

    def __call__(self, states: np.ndarray, rewards: np.ndarray) -> Value:
        """Final hidden state after reading (s', r') pairs in order."""
        if len(states) == 0:
            raise ValueError("cannot encode an empty rollout")
        h, c = self.lstm.zero_state(states.shape[1])
        for s, r in zip(states, rewards):
            x = Value(np.concatenate([s, r[:, None]], axis=1))
            h, c = self.lstm.step(x, h, c)
        return h


class ActionPredictor:
    def __init__(self, store: ParameterStore, model_free_dim: int, config: LookaheadConfig,
                 rng: np.random.Generator):
        p1, p2 = config.predictor_hidden
        self.config = config
        self.n_in = model_free_dim + config.num_branches * config.encoder_hidden
        self.l1 = Linear(store, "predictor.l1", self.n_in, p1, rng)
        self.l2 = Linear(store, "predictor.l2", p1, p2, rng)
        self.l3 = Linear(store, "predictor.l3", p2, NUM_ACTIONS, rng)

    def __call__(self, feature: Value, encodings: list[RolloutEncoding], *, dropout: float = 0.0,
                 train: bool = False, rng: np.random.Generator | None = None) -> Value:
        """Action logits from the model-free feature and the per-branch encodings."""
        cfg = self.config
        if [e.action for e in encodings] != list(cfg.branches):
            raise ValueError(f"expected one encoding per branch in order {cfg.branches}, "
                             f"got {[e.action for e in encodings]}")
        x = ad.concat([feature] + [e.tau for e in encodings], axis=1)
        if x.shape[1] != self.n_in:
            raise ad.ShapeError(f"predictor: input width {x.shape[1]} != {self.n_in}")
        x = ad.dropout(ad.relu(self.l1(x)), dropout, rng, train)
        x = ad.dropout(ad.relu(self.l2(x)), dropout, rng, train)
        return self.l3(x)


def predict_action(predictor: ActionPredictor, feature: Value, encodings: list[RolloutEncoding]) -> np.ndarray:
    """6-way distribution (evaluation mode)."""
    return ad.softmax(predictor(feature, encodings)).data


class LookaheadModule:
    """J per-action rollouts through a frozen environment model, encoded."""

    def __init__(self, store: ParameterStore, policy: RecurrentPolicy, config: LookaheadConfig,
                 rng: np.random.Generator):
        self.config = config
        self.policy = policy
        self.encoder = TrajectoryEncoder(store, policy.config.feature_dim, config.encoder_hidden, rng)
        self.predictor = ActionPredictor(store, policy.feature_size, config, rng)

    def imagine(self, observation: np.ndarray, state_after: PolicyState, encoded: EncodedInstruction,
                env_model: EnvironmentModel) -> tuple[np.ndarray, np.ndarray]:
        """All branches at once; returns states (depth, J*B, F), rewards (depth, J*B).

        Row ``j * B + b`` is branch ``config.branches[j]`` of episode ``b``.
        """
        J = self.config.num_branches
        B = observation.shape[0]
        obs = np.tile(observation, (J, 1))
        first = np.repeat(np.asarray(self.config.branches, dtype=np.int64), B)
        tiled = PolicyState(Value(np.tile(state_after.h.data, (J, 1))),
                            Value(np.tile(state_after.c.data, (J, 1))),
                            np.tile(state_after.prev_action, J), state_after.t)
        choose = greedy_policy_chooser(self.policy, tiled, encoded.tile(J))
        return rollout(obs, first, env_model.predict_arrays, choose, self.config.depth)

    def encode(self, states: np.ndarray, rewards: np.ndarray, batch: int) -> list[RolloutEncoding]:
        tau = self.encoder(states, rewards)
        return [RolloutEncoding(tau[j * batch:(j + 1) * batch], a)
                for j, a in enumerate(self.config.branches)]

    def decide(self, out: PolicyOutput, observation: np.ndarray, state_after: PolicyState,
               encoded: EncodedInstruction, env_model: EnvironmentModel, *, dropout: float = 0.0,
               train: bool = False, rng: np.random.Generator | None = None) -> Value:
        states, rewards = self.imagine(observation, state_after, encoded, env_model)
        encodings = self.encode(states, rewards, observation.shape[0])
        if not self.config.predictor_dropout:
            dropout = 0.0
        return self.predictor(out.feature, encodings, dropout=dropout, train=train, rng=rng)
