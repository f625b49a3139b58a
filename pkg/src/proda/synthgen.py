"""Synthetic scene-graph videos with planted action motifs.

Each action class is a motif: a (subject class, object class) pair that
carries the motif's *active* relation during the action segment and an
*idle* relation otherwise. Active relation types are unique per motif, so
actions are recoverable from relations alone; :func:`decode_video` does
exactly that and serves as the solvability oracle at zero noise.

Distractor nodes are often *decoys*: the object of an absent motif, linked
to the subject by its idle relation in every frame. Decoys make object
presence uninformative, so the label can only be read from which frames
carry an active relation.

Relation type layout: ``0 .. C-1`` are the active types (type c belongs to
action c), ``C .. C+num_idle-1`` are idle types. Object class 0 is padding,
class 1 is the shared subject ("person").
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ssg import SceneGraphSequence, VideoAnnotation, write_dataset

log = logging.getLogger(__name__)

PERSON = 1


@dataclass(frozen=True)
class ActionMotif:
    action: int
    subject_class: int
    object_class: int
    active_relation: int
    idle_relation: int
    min_duration: int
    max_duration: int

    def __post_init__(self):
        if self.active_relation == self.idle_relation:
            raise ValueError(f"motif {self.action}: active and idle relation must differ")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError(f"motif {self.action}: bad duration range "
                             f"[{self.min_duration}, {self.max_duration}]")


@dataclass
class GenConfig:
    num_classes: int = 6
    num_frames: int = 8
    max_nodes: int = 6
    feature_dim: int = 32
    num_object_classes: int = 12
    num_idle_relations: int = 2
    max_labels: int = 3
    min_duration: int = 2
    max_duration: int = 4
    max_distractors: int = 3
    distractor_edges: int = 2
    decoy_rate: float = 0.8
    relation_noise: float = 0.05
    seed: int = 0
    motifs: list[ActionMotif] = field(default_factory=list)

    def __post_init__(self):
        if not self.motifs:
            self.motifs = default_motifs(self)
        self.validate()

    @property
    def num_relation_types(self) -> int:
        return self.num_classes + self.num_idle_relations

    def validate(self) -> None:
        if not 1 <= self.max_labels <= self.num_classes:
            raise ValueError(f"max_labels={self.max_labels} must lie in [1, C={self.num_classes}]")
        if self.max_duration > self.num_frames:
            raise ValueError("max_duration exceeds the number of frames")
        if len(self.motifs) != self.num_classes:
            raise ValueError(f"{len(self.motifs)} motifs for {self.num_classes} classes")
        if self.num_object_classes < 2 + self.num_classes:
            raise ValueError("object vocabulary too small: need padding, subject and one object per motif")
        if self.slots_needed() > self.max_nodes:
            raise ValueError(f"max_nodes={self.max_nodes} cannot host {self.max_labels} concurrent "
                             f"motifs (needs {self.slots_needed()} slots)")
        if not 0.0 <= self.relation_noise <= 1.0:
            raise ValueError("relation_noise must lie in [0, 1]")
        if not 0.0 <= self.decoy_rate <= 1.0:
            raise ValueError("decoy_rate must lie in [0, 1]")

    def slots_needed(self) -> int:
        # worst case: distinct subjects, one object per action, at least one distractor
        subjects = len({m.subject_class for m in self.motifs})
        return min(subjects, self.max_labels) + self.max_labels


def default_motifs(cfg: GenConfig) -> list[ActionMotif]:
    lo, hi = cfg.min_duration, cfg.max_duration
    return [ActionMotif(action=c, subject_class=PERSON, object_class=2 + c, active_relation=c,
                        idle_relation=cfg.num_classes + c % cfg.num_idle_relations,
                        min_duration=lo, max_duration=hi)
            for c in range(cfg.num_classes)]


def generate_video(cfg: GenConfig, rng: np.random.Generator,
                   video_id: str = "v0") -> tuple[SceneGraphSequence, VideoAnnotation]:
    n, m, C = cfg.num_frames, cfg.max_nodes, cfg.num_classes
    num_labels = int(rng.integers(1, cfg.max_labels + 1))
    actions = np.sort(rng.choice(C, size=num_labels, replace=False))

    node_class = np.zeros((n, m), dtype=np.int64)
    slot_of: dict[int, int] = {}
    pairs = []
    next_slot = 0
    for a in actions:
        motif = cfg.motifs[a]
        if motif.subject_class not in slot_of:
            if next_slot >= m:
                raise ValueError("insufficient node slots for the sampled actions")
            slot_of[motif.subject_class] = next_slot
            node_class[:, next_slot] = motif.subject_class
            next_slot += 1
        if next_slot >= m:
            raise ValueError("insufficient node slots for the sampled actions")
        obj = next_slot
        node_class[:, obj] = motif.object_class
        next_slot += 1
        pairs.append((motif, slot_of[motif.subject_class], obj))

    # distractors: decoys of absent motifs stay in view; other objects drift in and out
    absent = [c for c in range(C) if c not in set(actions.tolist())]
    decoys = []
    n_dis = int(rng.integers(1, cfg.max_distractors + 1)) if cfg.max_distractors else 0
    n_dis = min(n_dis, m - next_slot)
    for slot in range(next_slot, next_slot + n_dis):
        if absent and rng.random() < cfg.decoy_rate:
            motif = cfg.motifs[absent.pop(int(rng.integers(len(absent))))]
            if motif.subject_class in slot_of:
                node_class[:, slot] = motif.object_class
                decoys.append((motif, slot_of[motif.subject_class], slot))
                continue
        cls = int(rng.integers(2, cfg.num_object_classes))
        visible = rng.random(n) < 0.75
        if not visible.any():
            visible[rng.integers(n)] = True
        node_class[visible, slot] = cls
    node_mask = node_class != 0

    relations = []
    segments: dict[int, list[tuple[int, int]]] = {}
    for motif, subj, obj in pairs:
        dur = int(rng.integers(motif.min_duration, motif.max_duration + 1))
        start = int(rng.integers(0, n - dur + 1))
        end = start + dur - 1
        segments[motif.action] = [(start, end)]
        for i in range(n):
            rel = motif.active_relation if start <= i <= end else motif.idle_relation
            relations.append([i, subj, obj, rel])

    for motif, subj, obj in decoys:
        relations.extend([i, subj, obj, motif.idle_relation] for i in range(n))

    idle_types = np.arange(C, cfg.num_relation_types)
    for i in range(n):
        present = np.flatnonzero(node_mask[i])
        if present.size < 2:
            continue
        for _ in range(cfg.distractor_edges):
            src, dst = rng.choice(present, size=2, replace=False)
            relations.append([i, int(src), int(dst), int(rng.choice(idle_types))])

    relations = np.array(relations, dtype=np.int64).reshape(-1, 4)
    if cfg.relation_noise > 0 and relations.size:
        flip = rng.random(len(relations)) < cfg.relation_noise
        for r in np.flatnonzero(flip):
            old = relations[r, 3]
            new = int(rng.integers(0, cfg.num_relation_types - 1))
            relations[r, 3] = new if new < old else new + 1

    labels = np.zeros(C, dtype=np.int64)
    labels[actions] = 1
    seq = SceneGraphSequence(video_id, node_class, node_mask, relations,
                             cfg.num_relation_types, cfg.num_object_classes)
    return seq, VideoAnnotation(labels, segments)


def video_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, {"train": 0, "val": 1}.get(split, 2), index])


def generate_videos(cfg: GenConfig, count: int, split: str = "train"):
    return [generate_video(cfg, video_rng(cfg.seed, split, i), f"{split}-{i:05d}")
            for i in range(count)]


def label_marginals(videos) -> dict[int, int]:
    counts: Counter = Counter()
    for _, ann in videos:
        counts.update(np.flatnonzero(ann.labels).tolist())
    return dict(sorted(counts.items()))


def generate_dataset(cfg: GenConfig, n_train: int, n_val: int, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``train.jsonl`` and ``val.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    paths = []
    for split, count in (("train", n_train), ("val", n_val)):
        videos = generate_videos(cfg, count, split)
        log.info("%s: %d videos, label counts %s", split, count, label_marginals(videos))
        path = out_dir / f"{split}.jsonl"
        write_dataset(path, videos)
        paths.append(path)
    return paths[0], paths[1]


def decode_video(seq: SceneGraphSequence, cfg: GenConfig) -> tuple[np.ndarray, dict[int, list[tuple[int, int]]]]:
    """Rule-based decoder: an action is present wherever its active relation runs.

    Returns multi-hot labels and maximal runs of frames per detected action.
    """
    labels = np.zeros(cfg.num_classes, dtype=np.int64)
    segments: dict[int, list[tuple[int, int]]] = {}
    for motif in cfg.motifs:
        active = np.zeros(seq.num_frames, dtype=bool)
        for i, j, k, t in seq.relations:
            if (t == motif.active_relation and seq.node_class[i, j] == motif.subject_class
                    and seq.node_class[i, k] == motif.object_class):
                active[i] = True
        if active.any():
            labels[motif.action] = 1
            segments[motif.action] = _runs(active)
    return labels, segments


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def config_dict(cfg: GenConfig) -> dict:
    d = asdict(cfg)
    d.pop("motifs")
    return d
