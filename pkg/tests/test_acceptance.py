"""Acceptance gate: nine end-to-end criteria, one PASS/FAIL line each.

Criteria 7 to 9 share one set of desk-scale pipeline runs (five seeds), so
the whole module takes most of an hour on a single core.  Lines are printed
as each criterion finishes and repeated in the terminal summary.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from rpanav import autodiff as ad
from rpanav import trainer as T
from rpanav import world as W
from rpanav.agent import PolicyConfig, RecurrentPolicy
from rpanav.autodiff import ParameterStore, Value
from rpanav.autodiff.gradcheck import check_gradients
from rpanav.envmodel import EnvironmentModel, EnvModelConfig, env_model_losses
from rpanav.harness import cli
from rpanav.harness.config import ExperimentConfig
from rpanav.lookahead import (ActionPredictor, LookaheadConfig, LookaheadModule, RolloutEncoding,
                              TrajectoryEncoder)

from test_autodiff import PRIMITIVES

SEEDS = (0, 1, 2, 3, 4)
REPORT: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number} {title}: {'PASS' if passed else 'FAIL'} | {detail}"
    REPORT.append(line)
    print(line, flush=True)


# -- 1 ------------------------------------------------------------------------------------
def policy_case(rng):
    pol = RecurrentPolicy(ParameterStore("p"), PolicyConfig(word_embed=3, hidden=3, feature_dim=4, action_embed=2),
                          rng)
    obs = Value(rng.random((2, 4)), requires_grad=True)

    def f():
        enc = pol.encode([[5, 6, 2], [7, 2]])
        out, state = pol.decode_step(pol.initial_state(2), enc, obs)
        out, _ = pol.decode_step(pol.advance(state, np.array([4, 1])), enc, obs)
        return ad.nll(out.log_probs(), np.array([1, 3]))

    return f, [p for _, p in pol.store.items()] + [obs]


def envmodel_case(rng):
    env = EnvironmentModel.new(EnvModelConfig(feature_dim=5, action_embed=3, proj=6, transition_hidden=(4, 5),
                                              reward_hidden=3), int(rng.integers(1 << 30)))
    s = Value(rng.random((3, 5)), requires_grad=True)
    nxt, rew = rng.random((3, 5)), rng.normal(size=3)

    def f():
        l_t, l_r = env_model_losses(env.predict(s, np.array([0, 4, 5])), nxt, rew)
        return l_t + l_r

    return f, [p for _, p in env.store.items()] + [s]


def encoder_case(rng):
    enc = TrajectoryEncoder(ParameterStore("e"), 3, 4, rng)
    states, rewards = rng.random((2, 2, 3)), rng.normal(size=(2, 2))
    return (lambda: ad.vsum(ad.tanh(enc(states, rewards)))), [enc.lstm.w_x, enc.lstm.w_h, enc.lstm.bias]


def predictor_case(rng):
    cfg = LookaheadConfig(encoder_hidden=3, predictor_hidden=(7, 5))
    store = ParameterStore("a")
    pred = ActionPredictor(store, 6, cfg, rng)
    feat = Value(rng.normal(size=(2, 6)), requires_grad=True)
    taus = [Value(rng.normal(size=(2, 3)), requires_grad=True) for _ in cfg.branches]
    encs = [RolloutEncoding(t, a) for t, a in zip(taus, cfg.branches)]
    return (lambda: ad.nll(ad.log_softmax(pred(feat, encs)), np.array([1, 4]))), \
        [feat, *taus, *(p for _, p in store.items())]


COMPOSED = {"policy": policy_case, "envmodel": envmodel_case, "trajectory_encoder": encoder_case,
            "action_predictor": predictor_case}


def relu_margin(f) -> float:
    """Smallest |input| seen by any ReLU while evaluating ``f``."""
    seen = [np.inf]
    orig = ad.relu

    def spy(x):
        seen[0] = min(seen[0], float(np.abs(x.data).min()))
        return orig(x)

    ad.relu = spy
    try:
        f()
    finally:
        ad.relu = orig
    return seen[0]


def away_from_kinks(build, seed, margin=0.02):
    """Redraw until no ReLU input lies within ``margin`` of its kink.

    A central difference with step 1e-3 that straddles a kink measures the
    average of two slopes, not the derivative; the margin keeps every
    perturbed pre-activation on one side.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        f, inputs = build(rng)
        if relu_margin(f) > margin:
            return f, inputs
    raise RuntimeError("no kink-free draw found")


def test_1_gradient_integrity():
    t0 = time.perf_counter()
    errors = {}
    for name, build in sorted(PRIMITIVES.items()):
        f, inputs = build(np.random.default_rng(sum(map(ord, name))))
        errors[name] = check_gradients(f, inputs, step=1e-3)
    for name, build in COMPOSED.items():
        f, inputs = away_from_kinks(build, sum(map(ord, name)))
        errors[name] = check_gradients(f, inputs, step=1e-3)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    passed = errors[worst] < 1e-4 and elapsed < 60
    report(1, "gradient integrity", passed,
           f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert passed


# -- 2 ------------------------------------------------------------------------------------
def test_2_reward_algebra():
    t0 = time.perf_counter()
    ds = W.build_dataset(5, train_worlds=4, seen_worlds=1, unseen_worlds=1, train_tasks_per_world=10,
                         eval_tasks_per_world=2)
    rng = np.random.default_rng(0)
    tasks = ds.tasks["train"]
    recursion_ok = telescope_ok = True
    worst_tel = 0.0
    for k in range(1000):
        task = tasks[k % len(tasks)]
        gamma = float(rng.uniform(0.05, 0.99))
        ep = T.teacher_rollout(ds.world_of(task), task, float(rng.uniform(0, 1)), rng)
        r = np.asarray(ep.rewards)
        R = T.assign_rewards(ep, T.RewardSpec("disc", gamma))
        recursion_ok &= R[-1] == r[-1] and all(R[t] == r[t] + gamma * R[t + 1] for t in range(len(r) - 1))
        gap = abs(math.fsum(r) - (ep.distances[0] - ep.distances[-1]))
        worst_tel = max(worst_tel, gap)
        telescope_ok &= gap <= 1e-9
    elapsed = time.perf_counter() - t0
    passed = recursion_ok and telescope_ok and elapsed < 10
    report(2, "reward algebra", passed,
           f"1000 episodes, recursion bit-exact={recursion_ok}, worst telescoping gap {worst_tel:.1e}, "
           f"{elapsed:.1f}s (< 10s)")
    assert passed


# -- 3 ------------------------------------------------------------------------------------
def brute_force_metrics(world, target, nodes, threshold):
    """Floyd-Warshall distances over Euclidean edge lengths; no shared code with the package."""
    n = len(world.positions)
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b in world.edges:
        length = math.hypot(*(world.positions[a] - world.positions[b]))
        d[a, b] = d[b, a] = min(d[a, b], length)
    for k, i, j in itertools.product(range(n), repeat=3):
        if d[i, k] + d[k, j] < d[i, j]:
            d[i, j] = d[i, k] + d[k, j]
    tl = sum(math.hypot(*(world.positions[a] - world.positions[b])) for a, b in zip(nodes, nodes[1:]) if a != b)
    ne = d[nodes[-1], target]
    return tl, ne, ne < threshold, min(d[v, target] for v in nodes) < threshold


def test_3_metric_oracle():
    ds = W.build_dataset(6, train_worlds=3, seen_worlds=1, unseen_worlds=1, node_count=10,
                         train_tasks_per_world=10, eval_tasks_per_world=2)
    rng = np.random.default_rng(1)
    mismatches, worst = 0, 0.0
    for k in range(100):
        task = ds.tasks["train"][k % len(ds.tasks["train"])]
        world = ds.world_of(task)
        poses = [task.start]
        for _ in range(int(rng.integers(0, 25))):
            poses.append(W.step(world, poses[-1], int(rng.integers(W.NUM_ACTIONS))))
        m = W.evaluate_trajectory(world, task, poses, 3.0)
        tl, ne, sr, osr = brute_force_metrics(world, task.target, [p.node for p in poses], 3.0)
        # success flags must agree exactly; distances may differ by summation-order round-off only
        dev = max(abs(m.trajectory_length - tl), abs(m.nav_error - ne))
        worst = max(worst, dev)
        mismatches += not (m.success == sr and m.oracle_success == osr and dev <= 1e-12)

    line = W.WorldGraph(seed=0, positions=np.array([[0.0, 0.0], [0.0, 1.5], [0.0, 3.0]]), edges=((0, 1), (1, 2)),
                        labels=(0, 1, 2))
    task = W.Task("b", line.graph_hash, (2,), W.Pose(0, 0, 1), 2, (0, 0, 5), (0, 1, 2))
    at_threshold = W.evaluate_trajectory(line, task, [W.Pose(0, 0, 1)], 3.0)
    inside = W.evaluate_trajectory(line, task, [W.Pose(0, 0, 1), W.Pose(1, 0, 1)], 3.0)
    boundary_ok = (at_threshold.nav_error == 3.0 and not at_threshold.success and not at_threshold.oracle_success
                   and inside.success)
    passed = mismatches == 0 and boundary_ok
    report(3, "metric oracle", passed,
           f"100 random trajectories, {mismatches} mismatches vs brute force (SR/OSR exact, TL/NE max diff "
           f"{worst:.1e}); error == 3.0 counts as failure: "
           f"{boundary_ok}")
    assert passed


# -- 4 ------------------------------------------------------------------------------------
def test_4_reinforce_sanity():
    t0 = time.perf_counter()
    reached = [T.reinforce_bandit(seed, updates=2000)[0] for seed in range(5)]
    elapsed = time.perf_counter() - t0
    passed = all(r is not None for r in reached) and elapsed < 30
    report(4, "REINFORCE sanity", passed,
           f"updates to reach p>=0.95 per seed {reached} (<= 2000), {elapsed:.1f}s (< 30s)")
    assert passed


# -- 5 ------------------------------------------------------------------------------------
def smoothed(values, end, window=10):
    return float(np.mean(values[end - window:end]))


def test_5_envmodel_learning():
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    ds = W.build_dataset(cfg.seed, **cfg.dataset_kwargs())
    tcfg = T.TrainConfig(**{**cfg.train_config().__dict__, "envmodel_iterations": 500})
    res = T.pretrain_envmodel(ds, tcfg, cfg.env_config())
    elapsed = time.perf_counter() - t0
    l_t = [r["l_transition"] for r in res.log]
    l_r = [r["l_reward"] for r in res.log]
    ratio = smoothed(l_t, 500) / smoothed(l_t, 10)
    var_r, var_t = float(np.var(l_r)), float(np.var(l_t))
    passed = ratio < 0.2 and var_r >= var_t and elapsed < 300
    report(5, "env-model learning", passed,
           f"smoothed transition loss ratio at 500 = {ratio:.3f} (< 0.2); reward-loss var {var_r:.2e} >= "
           f"transition-loss var {var_t:.2e}: {var_r >= var_t}; {elapsed:.0f}s (< 300s)")
    assert passed


# -- 6 ------------------------------------------------------------------------------------
def test_6_imagination_purity(monkeypatch):
    cfg = ExperimentConfig(iterations=20)
    ds = W.build_dataset(cfg.seed, **cfg.dataset_kwargs())
    tcfg = cfg.train_config()
    env = T.pretrain_envmodel(ds, T.TrainConfig(**{**tcfg.__dict__, "envmodel_iterations": 20}),
                              cfg.env_config()).model
    before = {n: p.data.copy() for n, p in env.store.items()}

    inside = [False]
    counts = {"imagined": 0, "real": 0, "imagine_calls": 0}
    for name in ("step", "observe"):
        orig = getattr(W, name)

        def counted(*a, _orig=orig, **k):
            counts["imagined" if inside[0] else "real"] += 1
            return _orig(*a, **k)
        monkeypatch.setattr(W, name, counted)
    orig_imagine = LookaheadModule.imagine

    def imagine(self, *a, **k):
        inside[0] = True
        counts["imagine_calls"] += 1
        try:
            return orig_imagine(self, *a, **k)
        finally:
            inside[0] = False
    monkeypatch.setattr(LookaheadModule, "imagine", imagine)

    T.train_policy(ds, "rpa", tcfg, cfg.policy_config(), cfg.lookahead_config(), env, cfg.reward_spec())
    identical = all(np.array_equal(before[n], p.data) and before[n].tobytes() == p.data.tobytes()
                    for n, p in env.store.items())
    passed = counts["imagined"] == 0 and counts["imagine_calls"] > 0 and counts["real"] > 0 and identical
    report(6, "imagination purity", passed,
           f"{counts['imagine_calls']} imagination calls, real step/observe calls inside them "
           f"{counts['imagined']} (outside {counts['real']}); env-model parameters bit-identical: {identical}")
    assert passed


# -- shared desk runs for 7, 8, 9 ----------------------------------------------------------
def full_pipeline(out: Path, seed: int) -> cli.Experiment:
    exp = cli.Experiment(out, ExperimentConfig(seed=seed))
    cli.cmd_generate(exp)
    cli.cmd_train_envmodel(exp)
    for mode in ("xe", "mfrl", "rpa"):
        cli.cmd_train_policy(exp, mode)
    cli.cmd_ablate_rewards(exp)
    cli.cmd_evaluate(exp)
    return exp


def timings(exp: cli.Experiment) -> dict[str, float]:
    steps = json.loads((exp.out / "manifest.json").read_text())["steps"]
    return {k: sum(v["timings_s"].values()) for k, v in steps.items()}


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        runs[seed] = full_pipeline(root / f"seed{seed}", seed)
        print(f"desk pipeline seed {seed}: {time.perf_counter() - t0:.0f}s", flush=True)
    return runs


def sr_table(exp, name="results.csv", key="model"):
    return {(r[key], r["split"]): r["SR"] for r in cli.read_csv(exp.results_dir / name)}


@pytest.mark.slow
def test_7_directional_replication(desk_runs):
    tables = {s: sr_table(e) for s, e in desk_runs.items()}
    mean = {(m, sp): float(np.mean([t[(m, sp)] for t in tables.values()]))
            for m in ("xe", "mfrl", "rpa") for sp in cli.EVAL_SPLITS}
    gap_wins = sum((t[("rpa", "val_unseen")] - t[("xe", "val_unseen")])
                   >= (t[("rpa", "val_seen")] - t[("xe", "val_seen")]) for t in tables.values())
    runtime = sum(v for e in desk_runs.values() for k, v in timings(e).items()
                  if k in ("train-envmodel", "train-policy:xe", "train-policy:mfrl", "train-policy:rpa"))
    c1 = mean[("rpa", "val_unseen")] >= mean[("mfrl", "val_unseen")]
    c2 = mean[("rpa", "val_unseen")] > mean[("xe", "val_unseen")]
    c3 = gap_wins > len(SEEDS) / 2
    passed = c1 and c2 and c3 and runtime < 1800
    per_seed = "; ".join(f"s{s} xe/mfrl/rpa seen {t[('xe', 'val_seen')]:.0f}/{t[('mfrl', 'val_seen')]:.0f}/"
                         f"{t[('rpa', 'val_seen')]:.0f} unseen {t[('xe', 'val_unseen')]:.0f}/"
                         f"{t[('mfrl', 'val_unseen')]:.0f}/{t[('rpa', 'val_unseen')]:.0f}"
                         for s, t in tables.items())
    report(7, "directional replication", passed,
           f"mean unseen SR rpa {mean[('rpa', 'val_unseen')]:.1f} vs mfrl {mean[('mfrl', 'val_unseen')]:.1f} "
           f"(>=: {c1}) vs xe {mean[('xe', 'val_unseen')]:.1f} (>: {c2}); unseen gap >= seen gap in "
           f"{gap_wins}/{len(SEEDS)} seeds; training {runtime:.0f}s (< 1800s) [{per_seed}]")
    assert passed


@pytest.mark.slow
def test_8_reward_ablation(desk_runs):
    wins = 0
    rows = []
    complete = True
    for seed, exp in desk_runs.items():
        t = sr_table(exp, "rewards.csv", "reward")
        complete &= all((exp.policy_dir(cli.run_name("mfrl", r)) / "policy.ckpt").exists() for r in cli.REWARDS)
        seen = {r: t[(r, "val_seen")] for r in cli.REWARDS}
        wins += min(seen["disc"], seen["disc-succ"]) >= max(seen["gd"], seen["succ"])
        rows.append(f"s{seed} " + "/".join(f"{seen[r]:.0f}" for r in cli.REWARDS))
    runtime = sum(v for e in desk_runs.values() for k, v in timings(e).items()
                  if k.startswith("train-policy:mfrl"))
    passed = complete and wins > len(SEEDS) / 2 and runtime < 1800
    report(8, "reward ablation", passed,
           f"all variants trained and CSV written: {complete}; discounted >= both non-discounted on seen SR in "
           f"{wins}/{len(SEEDS)} seeds; training {runtime:.0f}s (< 1800s) [seen SR gd/succ/disc/disc-succ: "
           f"{'; '.join(rows)}]")
    assert passed


@pytest.mark.slow
def test_9_determinism(desk_runs, tmp_path):
    first = desk_runs[SEEDS[0]]
    second = full_pipeline(tmp_path / "again", SEEDS[0])
    files = sorted(p.relative_to(first.out) for p in first.out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    diffs = [str(f) for f in files if (first.out / f).read_bytes() != (second.out / f).read_bytes()]
    extra = {p.relative_to(second.out) for p in second.out.rglob("*") if p.is_file()} - set(files)
    extra.discard(Path("manifest.json"))
    kinds = {s: sum(str(f).endswith(s) for f in files) for s in (".jsonl", ".ckpt", ".csv")}
    passed = not diffs and not extra and all(kinds.values())
    report(9, "determinism", passed,
           f"{len(files)} files compared ({kinds['.jsonl']} logs/data, {kinds['.ckpt']} checkpoints, "
           f"{kinds['.csv']} CSVs); differing: {diffs or 'none'}; unexpected: {sorted(map(str, extra)) or 'none'}")
    assert passed
