"""Synthetic navigation worlds.

A world is a connected graph whose nodes sit near the points of a square
lattice (jittered, so every edge points roughly along one of the compass
sectors).  The agent's pose is ``(node, heading, elevation)``; headings are
clockwise compass sectors with 0 = north.  Observations are fixed random
projections of what is visible from a pose, and instructions are rendered
from templates that mention the turns and landmarks along a shortest path.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1
OBS_SEED = 20180903


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    CAMERA_UP = 2
    CAMERA_DOWN = 3
    FORWARD = 4
    STOP = 5


NUM_ACTIONS = len(Action)
#: actions that get an imagined rollout (everything except Stop)
MOVE_ACTIONS = tuple(a for a in Action if a != Action.STOP)


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    node: int
    heading: int
    elevation: int


# -- vocabulary ---------------------------------------------------------------
LANDMARKS = ("kitchen", "sofa", "stairs", "door", "table", "lamp", "bed", "window",
             "plant", "piano", "sink", "mirror", "rug", "shelf", "painting", "chair")
_WORDS = ("turn", "left", "right", "around", "walk", "go", "head", "make", "a", "past",
          "to", "the", "forward", "continue", "and", "then", "stop", "wait", "there",
          "until", "you", "reach", "keep", "going", "straight", "face", "slightly",
          "along", "hallway", "room", "next", "into", "by", "step", "toward", "end",
          "once", "at")
PAD, UNK, END = "<pad>", "<unk>", "<end>"
VOCAB: tuple[str, ...] = (PAD, UNK, END) + _WORDS + LANDMARKS
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
PAD_ID = WORD_TO_ID[PAD]
END_ID = WORD_TO_ID[END]


def tokenize(words: Iterable[str]) -> tuple[int, ...]:
    return tuple(WORD_TO_ID[w] for w in words)


def detokenize(ids: Iterable[int]) -> str:
    return " ".join(VOCAB[i] for i in ids)


# -- world graph --------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class WorldGraph:
    seed: int
    positions: np.ndarray
    edges: tuple[tuple[int, int], ...]
    labels: tuple[int, ...]
    headings: int = 4
    elevations: int = 3
    landmark_vocab: int = 12
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.positions)
        if len(self.labels) != n:
            raise WorldError("one landmark label per node required")
        adj: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise WorldError(f"invalid edge ({a}, {b})")
            adj[a].append(b)
            adj[b].append(a)
        fwd = np.full((n, self.headings), -1, dtype=np.int64)
        sector_width = 2 * np.pi / self.headings
        for u in range(n):
            best = [np.inf] * self.headings
            for v in adj[u]:
                d = self.positions[v] - self.positions[u]
                bearing = np.arctan2(d[0], d[1]) % (2 * np.pi)  # clockwise from north
                h = int(np.round(bearing / sector_width)) % self.headings
                off = abs((bearing - h * sector_width + np.pi) % (2 * np.pi) - np.pi)
                if off < best[h]:
                    best[h] = off
                    fwd[u, h] = v
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))
        object.__setattr__(self, "forward_table", fwd)
        dist, nxt = _all_pairs(self.positions, self.adjacency)
        if np.isinf(dist).any():
            raise WorldError("world graph is not connected")
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "next_hop", nxt)

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.positions[a] - self.positions[b]))

    def sector_of(self, a: int, b: int) -> int:
        """Heading that points from node ``a`` towards neighbour ``b``."""
        hits = np.nonzero(self.forward_table[a] == b)[0]
        if len(hits) == 0:
            raise WorldError(f"node {b} is not reachable by Forward from node {a}")
        return int(hits[0])

    @property
    def graph_hash(self) -> str:
        if "hash" not in self._cache:
            blob = json.dumps({"positions": self.positions.tolist(), "edges": self.edges,
                               "labels": self.labels, "headings": self.headings,
                               "elevations": self.elevations}, sort_keys=True)
            self._cache["hash"] = hashlib.sha256(blob.encode()).hexdigest()[:16]
        return self._cache["hash"]

    def observation_table(self, feature_dim: int) -> np.ndarray:
        """All observations, indexed ``[node, heading, elevation]``."""
        key = ("obs", feature_dim)
        if key not in self._cache:
            self._cache[key] = _observation_table(self, feature_dim)
        return self._cache[key]

    def to_record(self) -> dict:
        return {"kind": "world", "version": FORMAT_VERSION, "id": self.graph_hash,
                "seed": self.seed, "headings": self.headings, "elevations": self.elevations,
                "landmark_vocab": self.landmark_vocab,
                "positions": self.positions.tolist(), "edges": [list(e) for e in self.edges],
                "labels": list(self.labels)}

    @classmethod
    def from_record(cls, rec: dict) -> "WorldGraph":
        if rec.get("kind") != "world" or rec.get("version") != FORMAT_VERSION:
            raise WorldError(f"unsupported world record (kind={rec.get('kind')}, version={rec.get('version')})")
        w = cls(seed=rec["seed"], positions=np.array(rec["positions"], dtype=np.float64),
                edges=tuple(tuple(e) for e in rec["edges"]), labels=tuple(rec["labels"]),
                headings=rec["headings"], elevations=rec["elevations"],
                landmark_vocab=rec["landmark_vocab"])
        if w.graph_hash != rec["id"]:
            raise WorldError("world record id does not match its contents")
        return w


def _all_pairs(positions: np.ndarray, adjacency) -> tuple[np.ndarray, np.ndarray]:
    """Dijkstra from every node; ``next_hop[u, t]`` is the first step from u towards t."""
    n = len(positions)
    dist = np.full((n, n), np.inf)
    for t in range(n):
        d = dist[t]
        d[t] = 0.0
        heap = [(0.0, t)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > d[u]:
                continue
            for v in adjacency[u]:
                nd = du + float(np.linalg.norm(positions[u] - positions[v]))
                if nd < d[v]:
                    d[v] = nd
                    heapq.heappush(heap, (nd, v))
    nxt = np.full((n, n), -1, dtype=np.int64)
    for u in range(n):
        for t in range(n):
            if u == t:
                continue
            best, arg = np.inf, -1
            for v in adjacency[u]:
                c = float(np.linalg.norm(positions[u] - positions[v])) + dist[v, t]
                if c < best - 1e-9:
                    best, arg = c, v
            nxt[u, t] = arg
    return dist, nxt


_DIRS = ((0, 1), (1, 0), (0, -1), (-1, 0))


def generate_world(seed: int, node_count: int, landmark_vocab: int = 12, *,
                   spacing: float = 2.5, jitter: float = 0.3, extra_edge_prob: float = 0.35,
                   headings: int = 4, elevations: int = 3) -> WorldGraph:
    """Grow a random connected lattice animal of ``node_count`` cells.

    Every new cell is attached to the cell it grew from, so the result is
    connected; lattice-adjacent cells that are not yet linked get an extra
    edge with probability ``extra_edge_prob``.
    """
    if node_count < 2:
        raise WorldError("node_count must be at least 2")
    if not 1 <= landmark_vocab <= len(LANDMARKS):
        raise WorldError(f"landmark_vocab must be in [1, {len(LANDMARKS)}]")
    if headings != 4:
        raise WorldError("lattice worlds support exactly 4 headings")
    if not 0 <= jitter < spacing * 0.3:
        raise WorldError("jitter too large for the lattice spacing")
    rng = np.random.default_rng(seed)
    cells = [(0, 0)]
    index = {(0, 0): 0}
    edges: set[tuple[int, int]] = set()
    while len(cells) < node_count:
        src = cells[int(rng.integers(len(cells)))]
        dx, dy = _DIRS[int(rng.integers(4))]
        cell = (src[0] + dx, src[1] + dy)
        if cell in index:
            continue
        index[cell] = len(cells)
        cells.append(cell)
        edges.add(tuple(sorted((index[src], index[cell]))))
    for (x, y), i in sorted(index.items(), key=lambda kv: kv[1]):
        for dx, dy in ((1, 0), (0, 1)):
            j = index.get((x + dx, y + dy))
            if j is not None:
                e = tuple(sorted((i, j)))
                if e not in edges and rng.random() < extra_edge_prob:
                    edges.add(e)
    pos = np.array(cells, dtype=np.float64) * spacing
    pos += rng.uniform(-jitter, jitter, size=pos.shape)
    labels = tuple(int(x) for x in rng.integers(landmark_vocab, size=node_count))
    return WorldGraph(seed=seed, positions=pos, edges=tuple(sorted(edges)), labels=labels,
                      headings=headings, elevations=elevations, landmark_vocab=landmark_vocab)


# -- dynamics ----------------------------------------------------------------
def step(world: WorldGraph, pose: Pose, action: int) -> Pose:
    """Apply one action.  Pure; Stop returns the pose unchanged."""
    a = Action(action)
    if a == Action.TURN_LEFT:
        return Pose(pose.node, (pose.heading - 1) % world.headings, pose.elevation)
    if a == Action.TURN_RIGHT:
        return Pose(pose.node, (pose.heading + 1) % world.headings, pose.elevation)
    if a == Action.CAMERA_UP:
        return Pose(pose.node, pose.heading, min(pose.elevation + 1, world.elevations - 1))
    if a == Action.CAMERA_DOWN:
        return Pose(pose.node, pose.heading, max(pose.elevation - 1, 0))
    if a == Action.FORWARD:
        nxt = int(world.forward_table[pose.node, pose.heading])
        return pose if nxt < 0 else Pose(nxt, pose.heading, pose.elevation)
    return pose


def validate_pose(world: WorldGraph, pose: Pose) -> None:
    if not (0 <= pose.node < world.num_nodes and 0 <= pose.heading < world.headings
            and 0 <= pose.elevation < world.elevations):
        raise WorldError(f"invalid pose {pose}")


def level(world: WorldGraph) -> int:
    return world.elevations // 2


# -- observations -------------------------------------------------------------
def _projection(feature_dim: int, world: WorldGraph) -> np.ndarray:
    L, H, E = world.landmark_vocab, world.headings, world.elevations
    d = L + H * (1 + L) + E + 1
    rng = np.random.default_rng([OBS_SEED, feature_dim, L, H, E])
    return rng.normal(0.0, 0.5, size=(d, feature_dim))


def _descriptor(world: WorldGraph, node: int, heading: int, elevation: int) -> np.ndarray:
    L, H, E = world.landmark_vocab, world.headings, world.elevations
    d = np.zeros(L + H * (1 + L) + E + 1)
    d[world.labels[node]] = 1.0
    for rel in range(H):
        nb = int(world.forward_table[node, (heading + rel) % H])
        if nb < 0:
            continue
        base = L + rel * (1 + L)
        d[base] = 1.0
        if elevation == E // 2:
            # only a level camera sees the neighbouring landmarks
            d[base + 1 + world.labels[nb]] = 1.0
    d[L + H * (1 + L) + elevation] = 1.0
    d[-1] = 1.0
    return d


def _observation_table(world: WorldGraph, feature_dim: int) -> np.ndarray:
    proj = _projection(feature_dim, world)
    n, H, E = world.num_nodes, world.headings, world.elevations
    out = np.empty((n, H, E, feature_dim))
    for v in range(n):
        for h in range(H):
            for e in range(E):
                z = _descriptor(world, v, h, e) @ proj
                out[v, h, e] = 0.5 * (np.tanh(0.5 * z) + 1.0)
    out.setflags(write=False)
    return out


def observe(world: WorldGraph, pose: Pose, feature_dim: int = 64) -> np.ndarray:
    """Feature vector in [0, 1]^F for ``pose``; identical inputs give identical output."""
    return world.observation_table(feature_dim)[pose.node, pose.heading, pose.elevation]


# -- distances and the shortest-path teacher -------------------------------------
def distance_to_target(world: WorldGraph, node: int, target: int) -> float:
    n = world.num_nodes
    if not (0 <= node < n and 0 <= target < n):
        raise WorldError(f"unknown node in distance query ({node}, {target})")
    d = world.dist[node, target]
    if not np.isfinite(d):
        raise WorldError(f"target {target} unreachable from {node}")
    return float(d)


def shortest_path(world: WorldGraph, start: int, target: int) -> list[int]:
    path = [start]
    while path[-1] != target:
        path.append(int(world.next_hop[path[-1], target]))
    return path


def teacher_action(world: WorldGraph, pose: Pose, target: int) -> Action:
    """Next action along the shortest path from ``pose`` (camera pitch ignored)."""
    if pose.node == target:
        return Action.STOP
    want = world.sector_of(pose.node, int(world.next_hop[pose.node, target]))
    if want == pose.heading:
        return Action.FORWARD
    diff = (want - pose.heading) % world.headings
    return Action.TURN_RIGHT if diff <= world.headings // 2 else Action.TURN_LEFT


def demonstration(world: WorldGraph, start: Pose, target: int, max_len: int = 1000) -> list[int]:
    actions, pose = [], start
    while len(actions) < max_len:
        a = teacher_action(world, pose, target)
        actions.append(int(a))
        if a == Action.STOP:
            return actions
        pose = step(world, pose, a)
    raise WorldError("teacher failed to reach the target")


# -- tasks ---------------------------------------------------------------------
@dataclass(frozen=True)
class Task:
    task_id: str
    world_id: str
    instruction: tuple[int, ...]
    start: Pose
    target: int
    demonstration: tuple[int, ...]
    path: tuple[int, ...]
    split: str = "train"
    template: int = 0

    def to_record(self) -> dict:
        return {"kind": "task", "version": FORMAT_VERSION, "id": self.task_id,
                "world": self.world_id, "instruction": list(self.instruction),
                "start": [self.start.node, self.start.heading, self.start.elevation],
                "target": self.target, "demonstration": list(self.demonstration),
                "path": list(self.path), "split": self.split, "template": self.template}

    @classmethod
    def from_record(cls, rec: dict) -> "Task":
        if rec.get("kind") != "task" or rec.get("version") != FORMAT_VERSION:
            raise WorldError(f"unsupported task record (kind={rec.get('kind')}, version={rec.get('version')})")
        return cls(task_id=rec["id"], world_id=rec["world"], instruction=tuple(rec["instruction"]),
                   start=Pose(*rec["start"]), target=rec["target"],
                   demonstration=tuple(rec["demonstration"]), path=tuple(rec["path"]),
                   split=rec["split"], template=rec["template"])


_TURN_WORD = {1: "right", -1: "left", 2: "around", -2: "around", 3: "left", -3: "right"}

# (turn phrase, pass-by phrase, arrive phrase, stop phrase); "{d}" / "{l}" are slots
TEMPLATES = (
    (("turn", "{d}"), ("walk", "past", "the", "{l}"), ("walk", "to", "the", "{l}"), ("and", "stop")),
    (("go", "{d}"), ("go", "forward", "past", "{l}"), ("go", "forward", "to", "{l}"),
     ("then", "stop", "there")),
    (("make", "a", "{d}", "turn"), ("continue", "past", "the", "{l}"), ("head", "to", "the", "{l}"),
     ("and", "wait", "there")),
)
NUM_TEMPLATES = len(TEMPLATES)


def render_instruction(world: WorldGraph, start: Pose, demo: Sequence[int], template: int) -> tuple[int, ...]:
    turn_p, pass_p, arrive_p, stop_p = TEMPLATES[template]
    words: list[str] = []
    pose, pending = start, 0
    forwards_left = sum(1 for a in demo if a == Action.FORWARD)

    def fill(phrase, **slots):
        return [slots.get(w[1:-1], w) if w.startswith("{") else w for w in phrase]

    for a in demo:
        if a == Action.TURN_LEFT:
            pending -= 1
        elif a == Action.TURN_RIGHT:
            pending += 1
        elif a == Action.FORWARD:
            if pending % world.headings:
                words += fill(turn_p, d=_TURN_WORD[pending])
            pending = 0
            pose = step(world, pose, a)
            forwards_left -= 1
            name = LANDMARKS[world.labels[pose.node]]
            words += fill(arrive_p if forwards_left == 0 else pass_p, l=name)
        elif a == Action.STOP:
            words += list(stop_p)
        if a != Action.FORWARD:
            pose = step(world, pose, a)
    return tokenize(words) + (END_ID,)


def _path_candidates(world: WorldGraph, min_len: int, max_len: int) -> list[tuple[int, int]]:
    out = []
    for s in range(world.num_nodes):
        for t in range(world.num_nodes):
            if s != t and min_len <= len(shortest_path(world, s, t)) - 1 <= max_len:
                out.append((s, t))
    return out


def make_task(world: WorldGraph, seed: int, min_path_len: int = 3, max_path_len: int = 6, *,
              template: int | None = None, max_tokens: int = 40, split: str = "train",
              start_heading: str = "aligned", task_id: str | None = None) -> Task:
    """Sample a start/target pair and render its instruction and demonstration."""
    return make_path_tasks(world, seed, min_path_len, max_path_len, templates=(template,),
                           max_tokens=max_tokens, split=split, start_heading=start_heading,
                           task_id=task_id)[0]


def make_path_tasks(world: WorldGraph, seed: int, min_path_len: int = 3, max_path_len: int = 6, *,
                    templates: Sequence[int | None] = tuple(range(NUM_TEMPLATES)),
                    max_tokens: int = 40, split: str = "train", start_heading: str = "aligned",
                    task_id: str | None = None,
                    exclude_pairs: frozenset[tuple[int, int]] | set = frozenset()) -> list[Task]:
    """One sampled path paired with one instruction per requested template."""
    if min_path_len < 1 or max_path_len < min_path_len:
        raise WorldError("need 1 <= min_path_len <= max_path_len")
    if start_heading not in ("aligned", "random"):
        raise WorldError(f"unknown start_heading mode {start_heading!r}")
    rng = np.random.default_rng(seed)
    cands = [c for c in _path_candidates(world, min_path_len, max_path_len) if c not in exclude_pairs]
    if not cands:
        raise WorldError(f"no shortest path with {min_path_len}..{max_path_len} edges")
    order = rng.permutation(len(cands))
    heading_draw = int(rng.integers(world.headings))
    chosen = [int(rng.integers(NUM_TEMPLATES)) if t is None else t for t in templates]
    for k in order:
        s, t = cands[k]
        path = shortest_path(world, s, t)
        h = world.sector_of(s, path[1]) if start_heading == "aligned" else heading_draw
        start = Pose(s, h, level(world))
        demo = demonstration(world, start, t)
        instrs = [render_instruction(world, start, demo, tpl) for tpl in chosen]
        if max(len(i) for i in instrs) > max_tokens:
            continue
        base = task_id or f"{world.graph_hash}-{seed}"
        return [Task(task_id=f"{base}-{tpl}", world_id=world.graph_hash, instruction=ins,
                     start=start, target=t, demonstration=tuple(demo), path=tuple(path),
                     split=split, template=tpl)
                for tpl, ins in zip(chosen, instrs)]
    raise WorldError(f"no path fits within {max_tokens} instruction tokens")


# -- metrics -------------------------------------------------------------------
@dataclass(frozen=True)
class Metrics:
    trajectory_length: float
    nav_error: float
    success: bool
    oracle_success: bool


def evaluate_trajectory(world: WorldGraph, task: Task, visited: Sequence[Pose],
                        success_threshold: float = 3.0) -> Metrics:
    if not visited:
        raise WorldError("empty trajectory")
    nodes = [p.node for p in visited]
    tl = sum(world.edge_length(a, b) for a, b in zip(nodes, nodes[1:]) if a != b)
    ne = distance_to_target(world, nodes[-1], task.target)
    closest = min(distance_to_target(world, v, task.target) for v in nodes)
    return Metrics(trajectory_length=tl, nav_error=ne, success=ne < success_threshold,
                   oracle_success=closest < success_threshold)


def aggregate(metrics: Sequence[Metrics]) -> dict[str, float]:
    """Mean TL / NE (graph units) and SR / OSR (percent)."""
    if not metrics:
        raise WorldError("cannot aggregate an empty metric list")
    n = len(metrics)
    return {"TL": sum(m.trajectory_length for m in metrics) / n,
            "NE": sum(m.nav_error for m in metrics) / n,
            "SR": 100.0 * sum(m.success for m in metrics) / n,
            "OSR": 100.0 * sum(m.oracle_success for m in metrics) / n}


# -- datasets -----------------------------------------------------------------
SPLITS = ("train", "val_seen", "val_unseen")


@dataclass
class Dataset:
    worlds: dict[str, WorldGraph]
    tasks: dict[str, list[Task]]

    def world_of(self, task: Task) -> WorldGraph:
        return self.worlds[task.world_id]

    def split_worlds(self, split: str) -> set[str]:
        return {t.world_id for t in self.tasks[split]}


def _tasks_for_world(world: WorldGraph, seed: int, count: int, split: str,
                     used: set[tuple[int, int]], **kw) -> list[Task]:
    """``count`` tasks on distinct start/target pairs not already in ``used``."""
    tasks: list[Task] = []
    k = 0
    while len(tasks) < count:
        sub = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        batch = make_path_tasks(world, sub, split=split, task_id=f"{split}-{world.graph_hash}-{k}",
                                exclude_pairs=used, **kw)
        used.add((batch[0].start.node, batch[0].target))
        tasks += batch
        k += 1
    return tasks[:count]


def build_dataset(seed: int, *, train_worlds: int = 10, seen_worlds: int = 3, unseen_worlds: int = 3,
                  train_tasks_per_world: int = 30, eval_tasks_per_world: int = 30,
                  node_count: int = 24, landmark_vocab: int = 12, min_path_len: int = 3,
                  max_path_len: int = 6, max_tokens: int = 40, start_heading: str = "aligned") -> Dataset:
    """Train / val-seen / val-unseen splits.

    Val-seen reuses the first ``seen_worlds`` training worlds with fresh
    tasks; val-unseen worlds come from a disjoint seed stream and are
    rejected if their graph hash collides with a training world.
    """
    if seen_worlds > train_worlds:
        raise WorldError("val-seen worlds must be a subset of the training worlds")
    kw = dict(min_path_len=min_path_len, max_path_len=max_path_len, max_tokens=max_tokens,
              start_heading=start_heading)
    worlds: dict[str, WorldGraph] = {}
    train_ids: list[str] = []
    k = 0
    while len(train_ids) < train_worlds:
        w = generate_world(int(np.random.SeedSequence([seed, 0, k]).generate_state(1)[0]), node_count, landmark_vocab)
        k += 1
        if w.graph_hash not in worlds:
            worlds[w.graph_hash] = w
            train_ids.append(w.graph_hash)
    unseen_ids: list[str] = []
    k = 0
    while len(unseen_ids) < unseen_worlds:
        w = generate_world(int(np.random.SeedSequence([seed, 1, k]).generate_state(1)[0]), node_count, landmark_vocab)
        k += 1
        if w.graph_hash not in worlds:
            worlds[w.graph_hash] = w
            unseen_ids.append(w.graph_hash)
    tasks: dict[str, list[Task]] = {s: [] for s in SPLITS}
    used: dict[str, set[tuple[int, int]]] = {wid: set() for wid in worlds}
    for i, wid in enumerate(train_ids):
        tasks["train"] += _tasks_for_world(worlds[wid], seed * 7919 + i, train_tasks_per_world,
                                           "train", used[wid], **kw)
    for i, wid in enumerate(train_ids[:seen_worlds]):
        tasks["val_seen"] += _tasks_for_world(worlds[wid], seed * 7919 + 100_003 + i,
                                              eval_tasks_per_world, "val_seen", used[wid], **kw)
    for i, wid in enumerate(unseen_ids):
        tasks["val_unseen"] += _tasks_for_world(worlds[wid], seed * 7919 + 200_003 + i,
                                                eval_tasks_per_world, "val_unseen", used[wid], **kw)
    return Dataset(worlds=worlds, tasks=tasks)


def dumps_records(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def loads_records(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
