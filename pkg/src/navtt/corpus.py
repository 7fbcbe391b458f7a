"""Dataset assembly: trimming rules, leakage-free splits, corpus layout.

A corpus on disk is a manifest.json plus one JSON Lines file per
trajectory (and optionally a frame directory per trajectory). The
manifest carries the split assignment and the goal-matched pair index
the study service samples from; the leakage rule is that no generator
(synthetic player or agent checkpoint) contributes to both the test
split and any other split.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .images import write_pgm, write_png
from .navsim.raycast import render_frame
from .policies.trajectory import (
    Trajectory,
    TrajectoryStep,
    load_trajectories,
    save_trajectories,
)

MANIFEST_VERSION = 1
IDLE_TRIM_WINDOW = 6
SPLITS = ("train", "val", "test")


class CorpusError(ValueError):
    pass


def _on_main_map(spec, position) -> bool:
    x, y = float(position[0]), float(position[1])
    return spec.is_walkable(x, y) and not spec.is_island_like(x, y)


def trim_start(traj: Trajectory, spec) -> Trajectory:
    """Drop everything before the first main-map step (the "landing").

    Trajectories that never leave the island (including deaths there) are
    rejected: they carry no usable navigation footage.
    """
    first = None
    for i, step in enumerate(traj.steps):
        if _on_main_map(spec, step.pose.position):
            first = i
            break
    if first is None:
        raise CorpusError(
            f"trajectory {traj.id!r} never enters the main map "
            f"(outcome {traj.outcome!r})")
    if first == 0:
        return traj
    steps = [TrajectoryStep(t=j, pose=s.pose.copy(), action=s.action,
                            reward=s.reward)
             for j, s in enumerate(traj.steps[first:])]
    spawn = traj.steps[first - 1].pose.copy() if first else traj.spawn_pose.copy()
    meta = dict(traj.meta)
    meta["trimmed_start"] = first
    return Trajectory(
        id=traj.id, source=traj.source, generator_id=traj.generator_id,
        goal_index=traj.goal_index, steps=steps, outcome=traj.outcome,
        spawn_pose=spawn, goal_xy=traj.goal_xy, map_name=traj.map_name,
        meta=meta,
    ).validate()


def trim_trailing_idle(traj: Trajectory, window: int = IDLE_TRIM_WINDOW) -> Trajectory:
    """Remove up to `window` trailing steps with zero positional
    displacement (end-of-episode pausing); never empties the trajectory."""
    if window < 0:
        raise CorpusError(f"window must be >= 0, got {window}")
    steps = list(traj.steps)
    removed = 0
    while removed < window and len(steps) > 1:
        prev = steps[-2].pose.position
        if np.array_equal(steps[-1].pose.position, prev):
            steps.pop()
            removed += 1
        else:
            break
    if removed == 0:
        return traj
    meta = dict(traj.meta)
    meta["trimmed_idle"] = removed
    return Trajectory(
        id=traj.id, source=traj.source, generator_id=traj.generator_id,
        goal_index=traj.goal_index,
        steps=[TrajectoryStep(t=s.t, pose=s.pose.copy(), action=s.action,
                              reward=s.reward) for s in steps],
        outcome=traj.outcome, spawn_pose=traj.spawn_pose.copy(),
        goal_xy=traj.goal_xy, map_name=traj.map_name, meta=meta,
    ).validate()


@dataclass
class SplitPolicy:
    """Per-source generator partition: {source: (n_train, n_test)} counts
    over distinct generator_ids. val is carved out of train-side
    trajectories (same generators; the leakage rule only separates test)."""
    generator_split: Dict[str, tuple]
    val_fraction: float = 0.2

    def to_json(self) -> dict:
        return {"generator_split": {k: list(v) for k, v in
                                    self.generator_split.items()},
                "val_fraction": self.val_fraction}

    @classmethod
    def from_json(cls, blob: dict):
        return cls(
            generator_split={k: tuple(v) for k, v in
                             blob["generator_split"].items()},
            val_fraction=float(blob["val_fraction"]),
        )


DEFAULT_SPLIT = SplitPolicy(generator_split={
    "human": (4, 3),
    "symbolic_agent": (1, 1),
    "hybrid_agent": (1, 1),
})


@dataclass
class ManifestEntry:
    trajectory_id: str
    source: str
    generator_id: str
    goal_index: int
    split: str
    n_steps: int
    outcome: str
    trajectory_path: str
    frames_path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id, "source": self.source,
            "generator_id": self.generator_id, "goal_index": self.goal_index,
            "split": self.split, "n_steps": self.n_steps,
            "outcome": self.outcome, "trajectory_path": self.trajectory_path,
            "frames_path": self.frames_path,
        }

    @classmethod
    def from_json(cls, blob: dict):
        return cls(**blob)


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    split_policy: SplitPolicy
    seed: int
    version: int = MANIFEST_VERSION
    goal_matched: Dict[int, Dict[str, list]] = field(default_factory=dict)

    def by_split(self, split: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def entry(self, trajectory_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.trajectory_id == trajectory_id:
                return e
        raise KeyError(trajectory_id)

    def validate(self):
        seen = set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise CorpusError(f"unknown split {e.split!r}")
            if e.trajectory_id in seen:
                raise CorpusError(f"duplicate entry {e.trajectory_id!r}")
            seen.add(e.trajectory_id)
        test = {e.generator_id for e in self.entries if e.split == "test"}
        rest = {e.generator_id for e in self.entries if e.split != "test"}
        leak = test & rest
        if leak:
            raise CorpusError(f"generators span test and train/val: {sorted(leak)}")
        return self

    def to_json(self) -> dict:
        return {
            "format_version": self.version,
            "seed": self.seed,
            "split_policy": self.split_policy.to_json(),
            "entries": [e.to_json() for e in self.entries],
            "goal_matched": {str(g): {s: list(ids) for s, ids in row.items()}
                             for g, row in self.goal_matched.items()},
        }

    @classmethod
    def from_json(cls, blob: dict):
        if blob.get("format_version") != MANIFEST_VERSION:
            raise CorpusError(
                f"unsupported manifest version {blob.get('format_version')!r}")
        return cls(
            entries=[ManifestEntry.from_json(e) for e in blob["entries"]],
            split_policy=SplitPolicy.from_json(blob["split_policy"]),
            seed=int(blob["seed"]),
            goal_matched={int(g): {s: list(ids) for s, ids in row.items()}
                          for g, row in blob.get("goal_matched", {}).items()},
        )


def _normalize_sets(trajectory_sets) -> List[Trajectory]:
    if isinstance(trajectory_sets, dict):
        flat = []
        for source in sorted(trajectory_sets):
            flat.extend(trajectory_sets[source])
        return flat
    return list(trajectory_sets)


def build_manifest(trajectory_sets: Union[dict, list],
                   policy: SplitPolicy = DEFAULT_SPLIT,
                   seed: int = 0) -> DatasetManifest:
    """Assign every trajectory to train/val/test with disjoint test
    generators, deterministically in (inputs, seed)."""
    trajectories = sorted(_normalize_sets(trajectory_sets), key=lambda t: t.id)
    ids = [t.id for t in trajectories]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate trajectory ids in input")
    rng = np.random.default_rng(seed)

    by_source: Dict[str, List[Trajectory]] = {}
    for t in trajectories:
        by_source.setdefault(t.source, []).append(t)
    missing = set(by_source) - set(policy.generator_split)
    if missing:
        raise CorpusError(f"split policy says nothing about sources {sorted(missing)}")

    split_of_generator: Dict[str, str] = {}
    for source in sorted(by_source):
        n_train, n_test = policy.generator_split[source]
        gens = sorted({t.generator_id for t in by_source[source]})
        if n_test > 0 and len(gens) < 2:
            raise CorpusError(
                f"source {source!r} has one generator; a held-out test "
                f"split would leak it")
        if n_train + n_test > len(gens):
            raise CorpusError(
                f"source {source!r} has {len(gens)} generators, policy "
                f"wants {n_train}+{n_test}")
        order = [gens[i] for i in rng.permutation(len(gens))]
        for g in order[:n_train]:
            split_of_generator[g] = "train"
        for g in order[n_train:n_train + n_test]:
            split_of_generator[g] = "test"
        # generators beyond the policy counts stay out of the manifest

    entries = []
    for t in trajectories:
        split = split_of_generator.get(t.generator_id)
        if split is None:
            continue
        if split == "train" and rng.random() < policy.val_fraction:
            split = "val"
        entries.append(ManifestEntry(
            trajectory_id=t.id, source=t.source, generator_id=t.generator_id,
            goal_index=int(t.goal_index), split=split, n_steps=len(t.steps),
            outcome=t.outcome,
            trajectory_path=f"trajectories/{t.id}.jsonl",
            frames_path=None,
        ))

    goal_matched: Dict[int, Dict[str, list]] = {}
    for e in entries:
        if e.split != "test":
            continue
        row = goal_matched.setdefault(e.goal_index, {})
        row.setdefault(e.source, []).append(e.trajectory_id)

    return DatasetManifest(entries=entries, split_policy=policy, seed=seed,
                           goal_matched=goal_matched).validate()


# ------------------------------------------------------------- disk layout


def write_corpus(root: str, manifest: DatasetManifest,
                 trajectories: List[Trajectory]):
    """Write manifest.json plus one JSONL per manifest entry under root."""
    by_id = {t.id: t for t in trajectories}
    os.makedirs(os.path.join(root, "trajectories"), exist_ok=True)
    for e in manifest.entries:
        if e.trajectory_id not in by_id:
            raise CorpusError(f"manifest references missing trajectory "
                              f"{e.trajectory_id!r}")
        save_trajectories([by_id[e.trajectory_id]],
                          os.path.join(root, e.trajectory_path))
    with open(os.path.join(root, "manifest.json"), "w") as fp:
        json.dump(manifest.to_json(), fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_manifest(root: str) -> DatasetManifest:
    with open(os.path.join(root, "manifest.json")) as fp:
        return DatasetManifest.from_json(json.load(fp)).validate()


def read_corpus(root: str):
    """(manifest, {trajectory_id: Trajectory}) for a corpus directory."""
    manifest = read_manifest(root)
    out = {}
    for e in manifest.entries:
        trajs = load_trajectories(os.path.join(root, e.trajectory_path))
        if len(trajs) != 1 or trajs[0].id != e.trajectory_id:
            raise CorpusError(f"corrupt trajectory file {e.trajectory_path!r}")
        out[e.trajectory_id] = trajs[0]
    return manifest, out


def write_frames(root: str, manifest: DatasetManifest, trajectories, spec,
                 stride: int = 1, fmt: str = "pgm", splits=("test",)):
    """Render per-trajectory frame directories (index.json + one image per
    sampled step) for the given splits; updates entries' frames_path."""
    if fmt not in ("pgm", "png"):
        raise CorpusError(f"unsupported frame format {fmt!r}")
    writer = write_pgm if fmt == "pgm" else write_png
    by_id = {t.id: t for t in trajectories}
    for e in manifest.entries:
        if e.split not in splits:
            continue
        traj = by_id[e.trajectory_id]
        rel = f"frames/{e.trajectory_id}"
        out_dir = os.path.join(root, rel)
        os.makedirs(out_dir, exist_ok=True)
        names = []
        goal = np.asarray(traj.goal_xy, dtype=np.float64)
        for step in traj.steps[::stride]:
            frame = render_frame(spec, step.pose, goal)
            name = f"frame_{step.t:05d}.{fmt}"
            writer(frame, os.path.join(out_dir, name))
            names.append(name)
        with open(os.path.join(out_dir, "index.json"), "w") as fp:
            json.dump({"trajectory_id": e.trajectory_id, "stride": stride,
                       "format": fmt, "frames": names}, fp, indent=2)
            fp.write("\n")
        e.frames_path = rel
    with open(os.path.join(root, "manifest.json"), "w") as fp:
        json.dump(manifest.to_json(), fp, indent=2, sort_keys=True)
        fp.write("\n")
