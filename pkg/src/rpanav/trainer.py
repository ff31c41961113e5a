"""Environment-model pretraining, policy training and evaluation loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import world as W
from .agent import PolicyConfig, RecurrentPolicy
from .autodiff import AdamState, ParameterStore, Value, adam_step, clip_global_norm
from .autodiff import checkpoint as ckpt
from .envmodel import EnvironmentModel, EnvModelConfig, combined_loss, env_model_losses
from .lookahead import LookaheadConfig, LookaheadModule
from .world import Action, Dataset, Pose, Task, WorldGraph

MODES = ("xe", "sf", "mfrl", "rpa")


class TrainingError(RuntimeError):
    pass


# -- rewards -------------------------------------------------------------------
class RewardVariant(str, Enum):
    GLOBAL_DISTANCE = "gd"
    SUCCESS = "succ"
    DISCOUNTED = "disc"
    DISCOUNTED_SUCCESS = "disc-succ"


@dataclass(frozen=True)
class RewardSpec:
    variant: RewardVariant = RewardVariant.DISCOUNTED_SUCCESS
    gamma: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "variant", RewardVariant(self.variant))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


def immediate_reward(world: WorldGraph, pose: Pose, next_pose: Pose, target: int) -> float:
    """Reduction in shortest-path distance to the target."""
    return (W.distance_to_target(world, pose.node, target)
            - W.distance_to_target(world, next_pose.node, target))


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def returns_for(rewards: Sequence[float], success: bool, spec: RewardSpec,
                start_distance: float | None = None, final_distance: float | None = None) -> np.ndarray:
    """Per-step credit R(s_t, a_t) under one of the four reward definitions."""
    rewards = np.asarray(rewards, dtype=np.float64)
    T = len(rewards)
    v = RewardVariant(spec.variant)
    if v is RewardVariant.GLOBAL_DISTANCE:
        total = rewards.sum() if start_distance is None else start_distance - final_distance
        return np.full(T, total)
    if v is RewardVariant.SUCCESS:
        return np.full(T, 1.0 if success else 0.0)
    if v is RewardVariant.DISCOUNTED:
        return discounted_returns(rewards, spec.gamma)
    if v is RewardVariant.DISCOUNTED_SUCCESS:
        bonus = rewards.copy()
        if T and success:
            bonus[-1] += 1.0
        return discounted_returns(bonus, spec.gamma)
    raise ValueError(f"unknown reward variant {spec.variant!r}")


# -- episodes ---------------------------------------------------------------------
@dataclass
class Episode:
    task: Task
    poses: list[Pose]
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    next_states: list[np.ndarray] = field(default_factory=list)
    gold_actions: list[int] = field(default_factory=list)
    took_demo: list[bool] = field(default_factory=list)
    ended: bool = False
    success: bool = False
    distances: list[float] = field(default_factory=list)

    @property
    def final_pose(self) -> Pose:
        return self.poses[-1]

    def __len__(self) -> int:
        return len(self.actions)


def assign_rewards(episode: Episode, spec: RewardSpec) -> np.ndarray:
    start = episode.distances[0] if episode.distances else None
    final = episode.distances[-1] if episode.distances else None
    return returns_for(episode.rewards, episode.success, spec, start, final)


def teacher_rollout(world: WorldGraph, task: Task, p_human: float, seed, *, max_len: int = 20,
                    feature_dim: int = 64, success_threshold: float = 3.0) -> Episode:
    """Randomised teacher: shortest-path action with probability ``p_human``, else uniform.

    The teacher action is recomputed from the current pose so the agent
    recovers after random deviations.  True next features and rewards are
    recorded for environment-model training.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pose = task.start
    ep = Episode(task=task, poses=[pose], distances=[W.distance_to_target(world, pose.node, task.target)])
    for _ in range(max_len):
        gold = int(W.teacher_action(world, pose, task.target))
        human = bool(rng.random() < p_human)
        a = gold if human else int(rng.integers(W.NUM_ACTIONS))
        nxt = W.step(world, pose, a)
        ep.states.append(W.observe(world, pose, feature_dim))
        ep.next_states.append(W.observe(world, nxt, feature_dim))
        ep.actions.append(a)
        ep.gold_actions.append(gold)
        ep.took_demo.append(human)
        ep.rewards.append(immediate_reward(world, pose, nxt, task.target))
        ep.poses.append(nxt)
        ep.distances.append(W.distance_to_target(world, nxt.node, task.target))
        pose = nxt
        if a == Action.STOP:
            ep.ended = True
            break
    ep.success = ep.distances[-1] < success_threshold
    return ep


# -- losses and schedule ------------------------------------------------------------
def mixed_loss(logp_taken: Value, logp_gold: Value, returns: np.ndarray, mask: np.ndarray,
               w_sl: float, baseline: float = 0.0, per_step: bool = False) -> Value:
    """``-w * J_sl - (1 - w) * J_rl`` over a (T, B) block of steps.

    ``J_sl`` is the mean log-likelihood of the teacher action over active
    steps; ``J_rl`` is the per-episode sum of ``log pi(a_t) * R_t`` averaged
    over the batch, with returns held constant.  ``per_step`` divides
    ``J_rl`` by the number of active steps instead, which puts both terms on
    the same scale.
    """
    if not 0.0 <= w_sl <= 1.0:
        raise ValueError(f"w_sl must lie in [0, 1], got {w_sl}")
    mask = np.asarray(mask, dtype=np.float64)
    n_active = max(mask.sum(), 1.0)
    batch = mask.shape[1] if mask.ndim == 2 else 1
    j_sl = ad.vsum(logp_gold * Value(mask / n_active))
    denom = n_active if per_step else batch
    j_rl = ad.vsum(logp_taken * Value(mask * (np.asarray(returns) - baseline) / denom))
    return ad.scale(j_sl, -w_sl) + ad.scale(j_rl, -(1.0 - w_sl))


def schedule_w(iteration: int, T: float, w_floor: float = 0.15) -> float:
    """Supervised-loss weight, decaying from 1 towards ``w_floor``."""
    if T <= 0:
        raise ValueError("schedule temperature must be positive")
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return max(w_floor, 0.1 + 0.9 * math.exp(-iteration / T))


# -- configuration --------------------------------------------------------------------
@dataclass
class TrainConfig:
    batch_size: int = 16
    max_episode_len: int = 20
    iterations: int = 3000
    lr_policy: float = 1e-3
    lr_envmodel: float = 3e-3
    envmodel_iterations: int = 500
    envmodel_batch_size: int = 64
    envmodel_weight_decay: float = 0.0
    clip_norm: float = 5.0
    weight_decay: float = 0.0005
    dropout: float = 0.5
    p_human: float = 0.95
    w_floor: float = 0.15
    schedule_T: float = 0.0  # 0 -> iterations / 5
    reward_baseline: bool = False
    rl_per_step: bool = False
    lookahead_aux_weight: float = 2.0
    success_threshold: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_episode_len", "iterations", "lr_policy", "lr_envmodel",
                     "envmodel_iterations", "envmodel_batch_size", "clip_norm", "success_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("p_human", "dropout", "w_floor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.weight_decay < 0 or self.envmodel_weight_decay < 0 or self.schedule_T < 0 or self.lookahead_aux_weight < 0:
            raise ValueError("weight_decay, schedule_T and lookahead_aux_weight must be >= 0")

    @property
    def temperature(self) -> float:
        return self.schedule_T if self.schedule_T > 0 else max(self.iterations / 5.0, 1.0)


def iteration_rng(seed: int, iteration: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, iteration])


def episode_rng(seed: int, iteration: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, iteration, index])


# -- environment-model pretraining ------------------------------------------------------
@dataclass
class EnvTrainResult:
    model: EnvironmentModel
    log: list[dict]


def envmodel_batch(dataset: Dataset, config: TrainConfig, iteration: int, feature_dim: int):
    rng = iteration_rng(config.seed, iteration, stream=1)
    train = dataset.tasks["train"]
    n = config.envmodel_batch_size
    idx = rng.choice(len(train), size=n, replace=len(train) < n)
    s, a, s1, r = [], [], [], []
    for b, i in enumerate(idx):
        task = train[int(i)]
        ep = teacher_rollout(dataset.world_of(task), task, config.p_human,
                             episode_rng(config.seed, iteration, b, stream=1),
                             max_len=config.max_episode_len, feature_dim=feature_dim,
                             success_threshold=config.success_threshold)
        s += ep.states
        a += ep.actions
        s1 += ep.next_states
        r += ep.rewards
    return np.array(s), np.array(a), np.array(s1), np.array(r)


def pretrain_envmodel(dataset: Dataset, config: TrainConfig, env_config: EnvModelConfig,
                      model: EnvironmentModel | None = None, *, start_iteration: int = 0,
                      adam: AdamState | None = None,
                      on_iteration: Callable[[int, EnvironmentModel, AdamState, dict], None] | None = None
                      ) -> EnvTrainResult:
    """Fit the environment model on randomised-teacher transitions."""
    if env_config.use_language:
        raise TrainingError("language-conditioned environment models are trained via pretrain_envmodel_language")
    model = model or EnvironmentModel.new(env_config, config.seed)
    adam = adam or AdamState.for_store(model.store, lr=config.lr_envmodel,
                                      weight_decay=config.envmodel_weight_decay)
    log = []
    for it in range(start_iteration, config.envmodel_iterations):
        s, a, s1, r = envmodel_batch(dataset, config, it, env_config.feature_dim)
        model.store.zero_grad()
        l_t, l_r = env_model_losses(model.predict(s, a), s1, r)
        loss = combined_loss(l_t, l_r)
        loss.backward()
        clip_global_norm(model.store, config.clip_norm)
        adam_step(model.store, adam)
        rec = {"iteration": it, "loss": loss.item(), "l_transition": l_t.item(), "l_reward": l_r.item(),
               "transitions": int(len(a))}
        log.append(rec)
        if on_iteration:
            on_iteration(it, model, adam, rec)
    return EnvTrainResult(model, log)


# -- agents -------------------------------------------------------------------------
class NavAgent:
    """Recurrent policy, optionally fused with the look-ahead module."""

    def __init__(self, mode: str, policy_config: PolicyConfig, lookahead_config: LookaheadConfig | None = None,
                 seed: int = 0, env_model: EnvironmentModel | None = None):
        if mode not in MODES:
            raise TrainingError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "rpa" and env_model is None:
            raise TrainingError("rpa mode requires a pretrained environment model")
        self.mode = mode
        rng = np.random.default_rng([seed, 99])
        self.store = ParameterStore("rpa" if mode == "rpa" else "policy")
        self.policy = RecurrentPolicy(self.store, policy_config, rng)
        self.lookahead = None
        if mode == "rpa":
            self.lookahead = LookaheadModule(self.store, self.policy, lookahead_config or LookaheadConfig(), rng)
        self.env_model = env_model


@dataclass
class BatchResult:
    episodes: list[Episode]
    logp_taken: Value | None
    logp_gold: Value | None
    aux_logp_gold: Value | None
    mask: np.ndarray


def run_batch(agent: NavAgent, dataset: Dataset, tasks: Sequence[Task], *, action_mode: str,
              max_len: int, dropout: float = 0.0, train: bool = False,
              rng: np.random.Generator | None = None, row_rngs: Sequence[np.random.Generator] | None = None,
              success_threshold: float = 3.0) -> BatchResult:
    """Roll out a batch of episodes in the real environment.

    ``action_mode`` is ``teacher`` (follow the shortest-path action),
    ``sample`` (draw from the model's distribution) or ``greedy``.
    """
    policy, B = agent.policy, len(tasks)
    F = policy.config.feature_dim
    worlds = [dataset.world_of(t) for t in tasks]
    poses = [t.start for t in tasks]
    episodes = [Episode(task=t, poses=[t.start], distances=[W.distance_to_target(w, t.start.node, t.target)])
                for t, w in zip(tasks, worlds)]
    active = np.ones(B, dtype=bool)
    encoded = policy.encode([t.instruction for t in tasks])
    state = policy.initial_state(B)
    taken_rows, gold_rows, aux_rows, masks = [], [], [], []
    cfg = policy.config
    for _ in range(max_len):
        obs = np.stack([w.observation_table(F)[p.node, p.heading, p.elevation] for w, p in zip(worlds, poses)])
        gold = np.array([int(W.teacher_action(w, p, t.target)) for w, p, t in zip(worlds, poses, tasks)])
        policy.config = PolicyConfig(**{**cfg.__dict__, "dropout": dropout})
        try:
            out, after = policy.decode_step(state, encoded, obs, train=train, rng=rng)
        finally:
            policy.config = cfg
        if agent.lookahead is not None:
            logits = agent.lookahead.decide(out, obs, after, encoded, agent.env_model, dropout=dropout,
                                            train=train, rng=rng)
            aux_rows.append(ad.pick(ad.log_softmax(out.logits), gold))
        else:
            logits = out.logits
        logp = ad.log_softmax(logits)
        if action_mode == "teacher":
            actions = gold.copy()
        elif action_mode == "greedy":
            actions = np.argmax(logits.data, axis=1)
        elif action_mode == "sample":
            probs = np.exp(logp.data)
            actions = np.array([_sample(probs[b], (row_rngs or [rng] * B)[b]) for b in range(B)])
        else:
            raise ValueError(f"unknown action mode {action_mode!r}")
        taken_rows.append(ad.pick(logp, actions))
        gold_rows.append(ad.pick(logp, gold))
        masks.append(active.copy())
        for b in np.nonzero(active)[0]:
            w, p, t, ep = worlds[b], poses[b], tasks[b], episodes[b]
            a = int(actions[b])
            nxt = W.step(w, p, a)
            ep.states.append(obs[b])
            ep.actions.append(a)
            ep.gold_actions.append(int(gold[b]))
            ep.log_probs.append(float(logp.data[b, a]))
            ep.rewards.append(immediate_reward(w, p, nxt, t.target))
            ep.poses.append(nxt)
            ep.distances.append(W.distance_to_target(w, nxt.node, t.target))
            poses[b] = nxt
            if a == Action.STOP:
                ep.ended = True
                active[b] = False
        if not active.any():
            break
        state = policy.advance(after, actions)
    for ep in episodes:
        ep.success = ep.distances[-1] < success_threshold
    stack = (lambda rows: ad.stack(rows, axis=0)) if taken_rows else (lambda rows: None)
    return BatchResult(episodes, stack(taken_rows), stack(gold_rows),
                       stack(aux_rows) if aux_rows else None, np.array(masks))


def _sample(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(p) - 1))


def batch_returns(episodes: Sequence[Episode], spec: RewardSpec, T: int) -> np.ndarray:
    out = np.zeros((T, len(episodes)))
    for b, ep in enumerate(episodes):
        r = assign_rewards(ep, spec)
        out[:len(r), b] = r
    return out


@dataclass
class PolicyTrainResult:
    agent: NavAgent
    log: list[dict]
    adam: AdamState


def train_policy(dataset: Dataset, mode: str, config: TrainConfig, policy_config: PolicyConfig,
                 lookahead_config: LookaheadConfig | None = None, env_model: EnvironmentModel | None = None,
                 reward: RewardSpec = RewardSpec(), *, agent: NavAgent | None = None,
                 adam: AdamState | None = None, start_iteration: int = 0, baseline: float = 0.0,
                 on_iteration: Callable[[int, NavAgent, AdamState, dict], None] | None = None
                 ) -> PolicyTrainResult:
    """Train in one of the modes: ``xe`` (teacher forcing), ``sf`` (student
    forcing), ``mfrl`` (mixed supervised + REINFORCE) or ``rpa`` (mixed loss
    through the look-ahead action predictor; environment model frozen).

    ``baseline`` seeds the running-mean reward baseline when resuming; each
    log record carries its value after that iteration.
    """
    if mode not in MODES:
        raise TrainingError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "rpa" and env_model is None:
        raise TrainingError("rpa mode needs a pretrained environment model (run the envmodel phase first)")
    agent = agent or NavAgent(mode, policy_config, lookahead_config, config.seed, env_model)
    store = agent.store
    adam = adam or AdamState.for_store(store, lr=config.lr_policy, weight_decay=config.weight_decay)
    train_tasks = dataset.tasks["train"]
    log: list[dict] = []
    for it in range(start_iteration, config.iterations):
        rng = iteration_rng(config.seed, it)
        idx = rng.choice(len(train_tasks), size=config.batch_size, replace=len(train_tasks) < config.batch_size)
        tasks = [train_tasks[int(i)] for i in idx]
        row_rngs = [episode_rng(config.seed, it, b) for b in range(len(tasks))]
        action_mode = "teacher" if mode == "xe" else "sample"
        res = run_batch(agent, dataset, tasks, action_mode=action_mode, max_len=config.max_episode_len,
                        dropout=config.dropout, train=True, rng=rng, row_rngs=row_rngs,
                        success_threshold=config.success_threshold)
        T = res.mask.shape[0]
        if mode in ("xe", "sf"):
            w = 1.0
        else:
            w = schedule_w(it, config.temperature, config.w_floor)
        returns = batch_returns(res.episodes, reward, T)
        loss = mixed_loss(res.logp_taken, res.logp_gold, returns, res.mask, w,
                          baseline if config.reward_baseline else 0.0, config.rl_per_step)
        if res.aux_logp_gold is not None and config.lookahead_aux_weight > 0:
            n = max(res.mask.sum(), 1.0)
            loss = loss + ad.scale(ad.vsum(res.aux_logp_gold * Value(res.mask / n)), -config.lookahead_aux_weight)
        store.zero_grad()
        loss.backward()
        norm = clip_global_norm(store, config.clip_norm)
        adam_step(store, adam)
        if config.reward_baseline:
            valid = returns[res.mask]
            if valid.size:
                baseline = 0.9 * baseline + 0.1 * float(valid.mean())
        rec = {"iteration": it, "loss": loss.item(), "w_sl": w, "grad_norm": norm,
               "train_SR": 100.0 * float(np.mean([ep.success for ep in res.episodes])),
               "steps": int(T), "baseline": baseline}
        log.append(rec)
        if on_iteration:
            on_iteration(it, agent, adam, rec)
    return PolicyTrainResult(agent, log, adam)


# -- evaluation -------------------------------------------------------------------------
def evaluate_trajectories(dataset: Dataset, tasks: Sequence[Task], trajectories: Sequence[Sequence[Pose]],
                          success_threshold: float = 3.0) -> list[W.Metrics]:
    return [W.evaluate_trajectory(dataset.world_of(t), t, traj, success_threshold)
            for t, traj in zip(tasks, trajectories)]


def shortest_trajectories(dataset: Dataset, tasks: Sequence[Task]) -> list[list[Pose]]:
    out = []
    for t in tasks:
        w, pose = dataset.world_of(t), t.start
        traj = [pose]
        for a in t.demonstration:
            pose = W.step(w, pose, a)
            traj.append(pose)
        out.append(traj)
    return out


def random_trajectories(dataset: Dataset, tasks: Sequence[Task], seed: int, max_len: int = 20) -> list[list[Pose]]:
    out = []
    for k, t in enumerate(tasks):
        rng = np.random.default_rng([seed, 7, k])
        w, pose = dataset.world_of(t), t.start
        traj = [pose]
        for _ in range(max_len):
            a = int(rng.integers(W.NUM_ACTIONS))
            pose = W.step(w, pose, a)
            traj.append(pose)
            if a == Action.STOP:
                break
        out.append(traj)
    return out


def agent_trajectories(agent: NavAgent, dataset: Dataset, tasks: Sequence[Task], max_len: int = 20,
                       batch_size: int = 64) -> list[list[Pose]]:
    out = []
    with ad.no_grad():
        for lo in range(0, len(tasks), batch_size):
            res = run_batch(agent, dataset, tasks[lo:lo + batch_size], action_mode="greedy", max_len=max_len)
            out += [ep.poses for ep in res.episodes]
    return out


def evaluate(model, dataset: Dataset, split: str, *, max_len: int = 20, success_threshold: float = 3.0,
             seed: int = 0) -> tuple[dict[str, float], list[W.Metrics]]:
    """Aggregate TL / NE / SR / OSR for ``model`` on one split.

    ``model`` is a :class:`NavAgent` (greedy decoding) or one of the strings
    ``"shortest"`` and ``"random"``.
    """
    tasks = dataset.tasks.get(split) or []
    if not tasks:
        raise TrainingError(f"split {split!r} is empty")
    if model == "shortest":
        trajs = shortest_trajectories(dataset, tasks)
    elif model == "random":
        trajs = random_trajectories(dataset, tasks, seed, max_len)
    else:
        trajs = agent_trajectories(model, dataset, tasks, max_len)
    metrics = evaluate_trajectories(dataset, tasks, trajs, success_threshold)
    return W.aggregate(metrics), metrics


# -- checkpoint helpers ------------------------------------------------------------------
def save_agent(path, agent: NavAgent) -> None:
    ckpt.save(path, agent.store)


def load_agent(path, mode: str, policy_config: PolicyConfig, lookahead_config: LookaheadConfig | None = None,
               env_model: EnvironmentModel | None = None) -> NavAgent:
    agent = NavAgent(mode, policy_config, lookahead_config, 0, env_model)
    ckpt.load_into(path, agent.store)
    return agent


def load_envmodel(path, config: EnvModelConfig) -> EnvironmentModel:
    model = EnvironmentModel.new(config, 0)
    ckpt.load_into(path, model.store)
    return model


# -- sanity problem ----------------------------------------------------------------------
def reinforce_bandit(seed: int, updates: int = 2000, lr: float = 0.05, rewards=(1.0, 0.0),
                     target: float = 0.95) -> tuple[int | None, float]:
    """Plain REINFORCE on a stateless two-armed bandit.

    Returns the first update after which the optimal arm's probability is at
    least ``target`` (``None`` if never) and the final probability.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore("bandit")
    logits = store.add("logits", np.zeros(2))
    adam = AdamState.for_store(store, lr=lr)
    best = int(np.argmax(rewards))
    reached = None
    for k in range(updates):
        logp = ad.log_softmax(ad.reshape(logits, (1, 2)))
        a = _sample(np.exp(logp.data[0]), rng)
        taken = ad.pick(logp, np.array([a]))
        loss = mixed_loss(taken, taken, np.array([[rewards[a]]]), np.ones((1, 1), bool), 0.0)
        store.zero_grad()
        loss.backward()
        adam_step(store, adam)
        p = float(np.exp(ad.log_softmax(Value(logits.data)).data[best]))
        if reached is None and p >= target:
            reached = k + 1
    return reached, p
