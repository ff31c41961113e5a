"""Command line for generating worlds, training agents and evaluating them."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .. import __version__
from .. import trainer as T
from .. import world as W
from ..autodiff import checkpoint as ckpt
from ..autodiff import kernels
from ..envmodel import EnvironmentModel
from .config import ConfigError, ExperimentConfig, load_config, parse_pairs

MODES = ("xe", "sf", "mfrl", "rpa")
REWARDS = tuple(v.value for v in T.RewardVariant)
EVAL_SPLITS = ("val_seen", "val_unseen")
METRIC_COLUMNS = ("TL", "NE", "SR", "OSR")


class HarnessError(RuntimeError):
    pass


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fmt(x: float) -> str:
    return format(float(x), ".10g")


class Experiment:
    """Paths and shared state for one output directory."""

    def __init__(self, out: Path, config: ExperimentConfig):
        self.out = Path(out)
        self.config = config

    # -- layout ---------------------------------------------------------------------
    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def env_dir(self) -> Path:
        return self.out / "envmodel"

    def policy_dir(self, name: str) -> Path:
        return self.out / "policy" / name

    @property
    def results_dir(self) -> Path:
        return self.out / "results"

    # -- config --------------------------------------------------------------------
    @staticmethod
    def open(out, config_file=None, overrides=()) -> "Experiment":
        out = Path(out)
        base = {}
        snapshot = out / "config.txt"
        if snapshot.exists():
            base = parse_pairs(snapshot.read_text().splitlines())
        return Experiment(out, load_config(config_file, overrides, base))

    def write_config(self, path: Path, config: ExperimentConfig | None = None) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text((config or self.config).to_text())

    def run_config(self, run_dir: Path) -> ExperimentConfig:
        path = run_dir / "run.txt"
        if not path.exists():
            raise HarnessError(f"{run_dir} has no run.txt; was it produced by this tool?")
        return load_config(path)

    # -- manifest ------------------------------------------------------------------
    def record(self, step: str, artifacts: list[Path], timings: dict, config: ExperimentConfig) -> None:
        path = self.out / "manifest.json"
        manifest = json.loads(path.read_text()) if path.exists() else {}
        manifest.setdefault("tool", {"name": "rpanav", "version": __version__, "kernel_backend": kernels.BACKEND,
                                     "python": platform.python_version(), "numpy": np.__version__})
        manifest.setdefault("steps", {})[step] = {
            "config": config.to_dict(),
            "artifacts": {str(p.relative_to(self.out)): sha256(p) for p in sorted(artifacts)},
            "timings_s": {k: round(v, 3) for k, v in timings.items()},
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    # -- data ----------------------------------------------------------------------
    def data_files(self) -> list[Path]:
        return [self.data_dir / "worlds.jsonl"] + [self.data_dir / f"{s}.jsonl" for s in W.SPLITS]

    def load_dataset(self) -> W.Dataset:
        files = self.data_files()
        missing = [str(p) for p in files if not p.exists()]
        if missing:
            raise HarnessError(f"missing data files {missing}; run `rpanav generate` first")
        worlds = {}
        for rec in W.loads_records(files[0].read_text()):
            w = W.WorldGraph.from_record(rec)
            worlds[w.graph_hash] = w
        tasks = {s: [W.Task.from_record(r) for r in W.loads_records(p.read_text())]
                 for s, p in zip(W.SPLITS, files[1:])}
        return W.Dataset(worlds, tasks)


# -- commands --------------------------------------------------------------------------
def cmd_generate(exp: Experiment, overwrite: bool = False) -> list[Path]:
    files = exp.data_files()
    if any(p.exists() for p in files) and not overwrite:
        raise HarnessError(f"{exp.data_dir} already holds data; pass --overwrite to replace it")
    t0 = time.perf_counter()
    cfg = exp.config
    ds = W.build_dataset(cfg.seed, **cfg.dataset_kwargs())
    exp.data_dir.mkdir(parents=True, exist_ok=True)
    order = sorted(ds.worlds)
    files[0].write_text(W.dumps_records(ds.worlds[k].to_record() for k in order))
    for split, path in zip(W.SPLITS, files[1:]):
        path.write_text(W.dumps_records(t.to_record() for t in ds.tasks[split]))
    exp.write_config(exp.out / "config.txt")
    exp.record("generate", files, {"generate": time.perf_counter() - t0}, cfg)
    return files


def _write_log(path: Path, records: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    return [r for r in (json.loads(line) for line in path.read_text().splitlines() if line)
            if r["iteration"] < upto]


class _LogWriter:
    """Appends per-iteration records; saves a resumable state every ``every`` iterations."""

    def __init__(self, log_path: Path, state_path: Path, every: int, records: list[dict], save_state):
        self.log_path, self.state_path, self.every = log_path, state_path, every
        self.records = records
        self.save_state = save_state
        _write_log(log_path, records)
        self._fh = open(log_path, "a")

    def __call__(self, it, model, adam, rec):
        self.records.append(rec)
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if (it + 1) % self.every == 0:
            self._fh.flush()
            self.save_state(self.state_path, model, adam, it + 1)

    def close(self):
        self._fh.close()


def cmd_train_envmodel(exp: Experiment, resume: bool = False, stop_after: int | None = None) -> Path:
    ds = exp.load_dataset()
    cfg = exp.config
    d = exp.env_dir
    d.mkdir(parents=True, exist_ok=True)
    final, state, log = d / "envmodel.ckpt", d / "state.ckpt", d / "log.jsonl"
    if final.exists() and not resume:
        raise HarnessError(f"{final} exists; pass --resume to continue or remove the directory")
    env_cfg = cfg.env_config()
    model, adam, start = EnvironmentModel.new(env_cfg, cfg.seed), None, 0
    if resume and state.exists():
        adam, start = ckpt.load_training_state(state, model.store)
    exp.write_config(d / "run.txt")
    tcfg = cfg.train_config()
    if stop_after is not None:
        tcfg = T.TrainConfig(**{**tcfg.__dict__, "envmodel_iterations": min(stop_after, tcfg.envmodel_iterations)})
    writer = _LogWriter(log, state, cfg.checkpoint_every, _read_log(log, start),
                        lambda p, m, a, it: ckpt.save_training_state(p, m.store, a, it))
    t0 = time.perf_counter()
    try:
        T.pretrain_envmodel(ds, tcfg, env_cfg, model, start_iteration=start, adam=adam, on_iteration=writer)
    finally:
        writer.close()
    elapsed = time.perf_counter() - t0
    if stop_after is not None and stop_after < cfg.envmodel_iterations:
        return state
    ckpt.save(final, model.store)
    exp.record("train-envmodel", [final, log, d / "run.txt"], {"train": elapsed}, cfg)
    return final


def run_name(mode: str, reward: str, default_reward: str = "disc-succ") -> str:
    return mode if reward == default_reward else f"{mode}-{reward}"


def load_env_model(exp: Experiment) -> EnvironmentModel:
    path = exp.env_dir / "envmodel.ckpt"
    if not path.exists():
        raise HarnessError("rpa mode needs a pretrained environment model; run `rpanav train-envmodel` first")
    env_cfg = exp.run_config(exp.env_dir).env_config()
    return T.load_envmodel(path, env_cfg)


def cmd_train_policy(exp: Experiment, mode: str, reward: str | None = None, resume: bool = False,
                     stop_after: int | None = None) -> Path:
    if mode not in MODES:
        raise HarnessError(f"unknown mode {mode!r}; choose from {MODES}")
    cfg = exp.config if reward is None else exp.config.replace(reward=reward)
    env_model = load_env_model(exp) if mode == "rpa" else None
    ds = exp.load_dataset()
    d = exp.policy_dir(run_name(mode, cfg.reward))
    d.mkdir(parents=True, exist_ok=True)
    final, state, log = d / "policy.ckpt", d / "state.ckpt", d / "log.jsonl"
    if final.exists() and not resume:
        raise HarnessError(f"{final} exists; pass --resume to continue or remove the directory")
    agent = T.NavAgent(mode, cfg.policy_config(), cfg.lookahead_config(), cfg.seed, env_model)
    adam, start = None, 0
    if resume and state.exists():
        adam, start = ckpt.load_training_state(state, agent.store)
    exp.write_config(d / "run.txt", cfg)
    (d / "mode.txt").write_text(mode + "\n")
    tcfg = cfg.train_config()
    if stop_after is not None:
        tcfg = T.TrainConfig(**{**tcfg.__dict__, "iterations": min(stop_after, tcfg.iterations),
                                "schedule_T": tcfg.temperature})
    records = _read_log(log, start)
    baseline = records[-1].get("baseline", 0.0) if records else 0.0
    writer = _LogWriter(log, state, cfg.checkpoint_every, records,
                        lambda p, a, opt, it: ckpt.save_training_state(p, a.store, opt, it))
    t0 = time.perf_counter()
    try:
        T.train_policy(ds, mode, tcfg, cfg.policy_config(), cfg.lookahead_config(), env_model,
                       cfg.reward_spec(), agent=agent, adam=adam, start_iteration=start, baseline=baseline,
                       on_iteration=writer)
    finally:
        writer.close()
    elapsed = time.perf_counter() - t0
    if stop_after is not None and stop_after < cfg.iterations:
        return state
    T.save_agent(final, agent)
    exp.record(f"train-policy:{d.name}", [final, log, d / "run.txt"], {"train": elapsed}, cfg)
    return final


def load_policy(exp: Experiment, name: str) -> T.NavAgent:
    d = exp.policy_dir(name)
    path = d / "policy.ckpt"
    if not path.exists():
        raise HarnessError(f"no checkpoint for {name!r} at {path}; run `rpanav train-policy` first")
    cfg = exp.run_config(d)
    mode = (d / "mode.txt").read_text().strip()
    env = load_env_model(exp) if mode == "rpa" else None
    return T.load_agent(path, mode, cfg.policy_config(), cfg.lookahead_config(), env)


def trained_runs(exp: Experiment) -> list[str]:
    root = exp.out / "policy"
    return sorted(p.name for p in root.iterdir() if (p / "policy.ckpt").exists()) if root.exists() else []


def metric_rows(exp: Experiment, ds: W.Dataset, models: list[str]) -> list[dict]:
    cfg = exp.config
    rows = []
    for name in models:
        model = name if name in ("shortest", "random") else load_policy(exp, name)
        for split in EVAL_SPLITS:
            summary, _ = T.evaluate(model, ds, split, max_len=cfg.max_episode_len,
                                    success_threshold=cfg.success_threshold, seed=cfg.seed)
            rows.append({"model": name, "split": split, **summary})
    return rows


def write_csv(path: Path, rows: list[dict], first: str) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([first, "split", *METRIC_COLUMNS])
    for r in rows:
        w.writerow([r[first], r["split"], *(fmt(r[c]) for c in METRIC_COLUMNS)])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (float(v) if k in METRIC_COLUMNS else v) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def reward_rows(exp: Experiment, ds: W.Dataset) -> list[dict] | None:
    names = {r: run_name("mfrl", r) for r in REWARDS}
    if not all((exp.policy_dir(n) / "policy.ckpt").exists() for n in names.values()):
        return None
    rows = []
    for reward, name in names.items():
        for row in metric_rows(exp, ds, [name]):
            rows.append({"reward": reward, **{k: v for k, v in row.items() if k != "model"}})
    return rows


def cmd_evaluate(exp: Experiment, models: list[str] | None = None) -> list[Path]:
    ds = exp.load_dataset()
    t0 = time.perf_counter()
    names = models or ["shortest", "random", *trained_runs(exp)]
    out = [exp.results_dir / "results.csv"]
    write_csv(out[0], metric_rows(exp, ds, names), "model")
    rewards = reward_rows(exp, ds)
    if rewards is not None:
        out.append(exp.results_dir / "rewards.csv")
        write_csv(out[1], rewards, "reward")
    exp.record("evaluate", out, {"evaluate": time.perf_counter() - t0}, exp.config)
    return out


def cmd_ablate_rewards(exp: Experiment) -> Path:
    for reward in REWARDS:
        if not (exp.policy_dir(run_name("mfrl", reward)) / "policy.ckpt").exists():
            cmd_train_policy(exp, "mfrl", reward)
    ds = exp.load_dataset()
    rows = reward_rows(exp, ds)
    path = exp.results_dir / "rewards.csv"
    write_csv(path, rows, "reward")
    return path


def cmd_pipeline(exp: Experiment, modes=("xe", "mfrl", "rpa"), overwrite: bool = False) -> list[Path]:
    cmd_generate(exp, overwrite)
    if "rpa" in modes:
        cmd_train_envmodel(exp)
    for mode in modes:
        cmd_train_policy(exp, mode)
    return cmd_evaluate(exp)


# -- entry point ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpanav", description=__doc__)
    p.add_argument("--version", action="version", version=f"rpanav {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="experiment directory; all paths are relative to it")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")

    sp = sub.add_parser("generate", help="write world and task files")
    common(sp)
    sp.add_argument("--overwrite", action="store_true")
    sp = sub.add_parser("train-envmodel", help="pretrain the environment model")
    common(sp)
    sp.add_argument("--resume", action="store_true")
    sp = sub.add_parser("train-policy", help="train a policy in one mode")
    common(sp)
    sp.add_argument("--mode", required=True, choices=MODES)
    sp.add_argument("--reward", choices=REWARDS)
    sp.add_argument("--resume", action="store_true")
    sp = sub.add_parser("evaluate", help="write results.csv (and rewards.csv when available)")
    common(sp)
    sp.add_argument("--models", help="comma-separated run names (default: shortest, random, every trained run)")
    sp = sub.add_parser("ablate-rewards", help="train model-free RL with every reward variant and compare")
    common(sp)
    sp = sub.add_parser("pipeline", help="generate, pretrain, train xe/mfrl/rpa and evaluate")
    common(sp)
    sp.add_argument("--modes", default="xe,mfrl,rpa")
    sp.add_argument("--overwrite", action="store_true", help="replace existing data files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = Experiment.open(args.out, args.config, args.set)
        if args.command == "generate":
            done = cmd_generate(exp, args.overwrite)
        elif args.command == "train-envmodel":
            done = [cmd_train_envmodel(exp, args.resume)]
        elif args.command == "train-policy":
            done = [cmd_train_policy(exp, args.mode, args.reward, args.resume)]
        elif args.command == "evaluate":
            done = cmd_evaluate(exp, args.models.split(",") if args.models else None)
        elif args.command == "ablate-rewards":
            done = [cmd_ablate_rewards(exp)]
        else:
            done = cmd_pipeline(exp, tuple(m for m in args.modes.split(",") if m), args.overwrite)
    except (HarnessError, ConfigError, T.TrainingError, W.WorldError, ckpt.CheckpointError,
            OSError, ValueError) as exc:
        print(f"rpanav: error: {exc}", file=sys.stderr)
        return 1
    for path in done:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
