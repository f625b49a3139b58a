"""Spatio-temporal scene graph data model and its line-delimited record format.

A video is ``N`` frames of at most ``M`` object slots. Slot ``(i, j)`` holds an
object class id (0 means padding, masked out). Relations are directed triples
``[frame, src, dst, type]`` between unmasked slots of the same frame.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .numerics import autograd as ag
from .numerics.autograd import Tensor

log = logging.getLogger(__name__)


class RecordError(ValueError):
    """Invalid scene-graph record. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")
        self.field = field
        self.message = message
        self.line = line


@dataclass(eq=False)
class SceneGraphSequence:
    video_id: str
    node_class: np.ndarray            # (N, M) int
    node_mask: np.ndarray             # (N, M) bool
    relations: np.ndarray             # (E, 4) int rows [frame, src, dst, type]
    num_relation_types: int
    num_object_classes: int

    def __post_init__(self):
        self.node_class = np.asarray(self.node_class, dtype=np.int64)
        self.node_mask = np.asarray(self.node_mask, dtype=bool)
        self.relations = np.asarray(self.relations, dtype=np.int64).reshape(-1, 4)
        if self.relations.size:
            # sorted + deduplicated so serialization is canonical
            self.relations = np.unique(self.relations, axis=0)

    @property
    def num_frames(self) -> int:
        return self.node_class.shape[0]

    @property
    def max_nodes(self) -> int:
        return self.node_class.shape[1]

    def validate(self) -> None:
        nc, mask = self.node_class, self.node_mask
        if nc.ndim != 2 or nc.shape != mask.shape:
            raise RecordError("node_class", f"shape {nc.shape} does not match node_mask {mask.shape}")
        for i, j in zip(*np.nonzero(~mask & (nc != 0))):
            raise RecordError(f"node_class[{i}][{j}]", "nonzero class on a masked slot")
        bad = mask & ((nc < 0) | (nc >= self.num_object_classes))
        for i, j in zip(*np.nonzero(bad)):
            raise RecordError(f"node_class[{i}][{j}]",
                              f"class {nc[i, j]} outside vocabulary of {self.num_object_classes}")
        for i in np.nonzero(~mask.any(axis=1))[0]:
            raise RecordError(f"node_mask[{i}]", "frame has no unmasked node")
        n, m = nc.shape
        for r, (i, j, k, t) in enumerate(self.relations):
            path = f"relations[{r}]"
            if not (0 <= i < n and 0 <= j < m and 0 <= k < m):
                raise RecordError(path, f"index ({i}, {j}, {k}) out of range for N={n}, M={m}")
            if not (0 <= t < self.num_relation_types):
                raise RecordError(path, f"relation type {t} outside [0, {self.num_relation_types})")
            if j == k:
                raise RecordError(path, "self-loop")
            if not (mask[i, j] and mask[i, k]):
                raise RecordError(path, "relation touches a masked node")

    def relation_tensor(self) -> np.ndarray:
        """Multi-hot relation indicator of shape (N, M, M, |R|)."""
        out = np.zeros((self.num_frames, self.max_nodes, self.max_nodes, self.num_relation_types))
        if self.relations.size:
            i, j, k, t = self.relations.T
            out[i, j, k, t] = 1.0
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneGraphSequence):
            return NotImplemented
        return (self.video_id == other.video_id
                and np.array_equal(self.node_class, other.node_class)
                and np.array_equal(self.node_mask, other.node_mask)
                and np.array_equal(self.relations, other.relations)
                and self.num_relation_types == other.num_relation_types
                and self.num_object_classes == other.num_object_classes)


@dataclass(eq=False)
class VideoAnnotation:
    labels: np.ndarray                                   # (C,) 0/1
    segments: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.segments = {int(c): [(int(s), int(e)) for s, e in segs]
                         for c, segs in sorted(self.segments.items())}

    @property
    def num_classes(self) -> int:
        return self.labels.shape[0]

    def validate(self, num_frames: int) -> None:
        if not np.isin(self.labels, (0, 1)).all():
            raise RecordError("labels", "entries must be 0 or 1")
        for c, segs in self.segments.items():
            if not (0 <= c < self.num_classes) or self.labels[c] != 1:
                raise RecordError(f"segments[{c}]", "segment for a class not labelled present")
            for s, e in segs:
                if not 0 <= s <= e < num_frames:
                    raise RecordError(f"segments[{c}]", f"interval [{s}, {e}] invalid for N={num_frames}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoAnnotation):
            return NotImplemented
        return np.array_equal(self.labels, other.labels) and self.segments == other.segments


@dataclass
class NodeFeatures:
    values: Tensor          # (N, M, D) or batched (B, N, M, D)
    mask: np.ndarray        # matching leading shape, bool


def serialize(seq: SceneGraphSequence, ann: VideoAnnotation) -> str:
    """One JSON object per video, no trailing newline."""
    seq.validate()
    ann.validate(seq.num_frames)
    record = {
        "video_id": seq.video_id,
        "N": seq.num_frames,
        "M": seq.max_nodes,
        "num_object_classes": seq.num_object_classes,
        "num_relation_types": seq.num_relation_types,
        "node_class": seq.node_class.tolist(),
        "node_mask": seq.node_mask.astype(int).tolist(),
        "relations": seq.relations.tolist(),
        "labels": ann.labels.tolist(),
        "segments": {str(c): [list(s) for s in segs] for c, segs in ann.segments.items()},
    }
    return json.dumps(record, separators=(",", ":"))


_REQUIRED = ("video_id", "N", "M", "node_class", "node_mask", "relations", "labels", "segments")


def deserialize(line: str, line_no: int | None = None) -> tuple[SceneGraphSequence, VideoAnnotation]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError("<record>", f"malformed JSON ({exc.msg})", line_no) from None
    for key in _REQUIRED:
        if key not in rec:
            raise RecordError(key, "missing key", line_no)
    try:
        n, m = int(rec["N"]), int(rec["M"])
        node_class = np.array(rec["node_class"], dtype=np.int64)
        if node_class.shape != (n, m):
            raise RecordError("node_class", f"shape {node_class.shape} != (N, M) = ({n}, {m})")
        node_mask = np.array(rec["node_mask"], dtype=np.int64)
        if node_mask.shape != (n, m) or not np.isin(node_mask, (0, 1)).all():
            raise RecordError("node_mask", f"expected an (N, M) = ({n}, {m}) array of 0/1")
        relations = np.array(rec["relations"], dtype=np.int64).reshape(-1, 4) if rec["relations"] \
            else np.zeros((0, 4), dtype=np.int64)
        n_rel = rec.get("num_relation_types")
        if n_rel is None:
            n_rel = int(relations[:, 3].max()) + 1 if relations.size else 1
        n_obj = rec.get("num_object_classes")
        if n_obj is None:
            n_obj = int(node_class.max()) + 1
        seq = SceneGraphSequence(str(rec["video_id"]), node_class, node_mask.astype(bool),
                                 relations, int(n_rel), int(n_obj))
        segments = {}
        for c, segs in rec["segments"].items():
            segments[int(c)] = [tuple(s) for s in segs]
        ann = VideoAnnotation(np.array(rec["labels"], dtype=np.int64), segments)
        seq.validate()
        ann.validate(n)
    except RecordError as exc:
        raise RecordError(exc.field, exc.message, line_no) from None
    except (TypeError, ValueError) as exc:
        raise RecordError("<record>", str(exc), line_no) from None
    return seq, ann


def write_dataset(path: str | Path, videos: Iterable[tuple[SceneGraphSequence, VideoAnnotation]]) -> int:
    from .numerics.checkpoint import atomic_write

    lines = [serialize(s, a) + "\n" for s, a in videos]
    atomic_write(path, "".join(lines))
    return len(lines)


def iter_dataset(path: str | Path) -> Iterator[tuple[SceneGraphSequence, VideoAnnotation]]:
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            if line.strip():
                yield deserialize(line, no)


def read_dataset(path: str | Path) -> list[tuple[SceneGraphSequence, VideoAnnotation]]:
    return list(iter_dataset(path))


def embed_nodes(seq: SceneGraphSequence, table) -> NodeFeatures:
    """Look up one feature row per object class; padding slots stay zero.

    ``table`` is an array or Tensor with one row per object class. Using a
    Tensor keeps the lookup differentiable.
    """
    seq.validate()
    table = table if isinstance(table, Tensor) else Tensor(table)
    if seq.node_class.max() >= table.shape[0]:
        raise RecordError("node_class", f"class id {seq.node_class.max()} has no embedding row")
    values = ag.embedding(table, seq.node_class) * seq.node_mask[..., None].astype(float)
    return NodeFeatures(values, seq.node_mask.copy())


@dataclass
class GraphBatch:
    """Arrays for ``B`` videos sharing N and M."""

    node_class: np.ndarray    # (B, N, M)
    node_mask: np.ndarray     # (B, N, M) bool
    relations: np.ndarray     # (B, N, M, M, R) multi-hot
    video_ids: list[str]


def batch_graphs(seqs: list[SceneGraphSequence]) -> GraphBatch:
    shapes = {s.node_class.shape for s in seqs}
    if len(shapes) != 1:
        raise RecordError("node_class", f"videos in a batch must share (N, M); got {sorted(shapes)}")
    n_rel = {s.num_relation_types for s in seqs}
    if len(n_rel) != 1:
        raise RecordError("num_relation_types", "videos in a batch disagree on |R|")
    return GraphBatch(
        node_class=np.stack([s.node_class for s in seqs]),
        node_mask=np.stack([s.node_mask for s in seqs]),
        relations=np.stack([s.relation_tensor() for s in seqs]),
        video_ids=[s.video_id for s in seqs],
    )
