"""Full model (encoder -> prompts -> VGPNN -> readouts -> heads) and training."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import objective as obj
from .action_spec import ActionSpecPair, build_pairs, pair_rng
from .dpm import PromptBank, SimplePrompt
from .numerics import autograd as ag
from .numerics import checkpoint as ckpt
from .numerics.autograd import NonFiniteError, Tensor
from .numerics.layers import Embedding, Linear, Module, SelfAttention
from .numerics.optim import RMSProp
from .ssg import NodeFeatures, SceneGraphSequence, VideoAnnotation
from .vgpnn import VGPNN, Readout

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 10
    stage2_epochs: int = 3
    batch_size: int = 8
    lr: float = 1e-3
    stage2_lr: float = 1e-3
    seed: int = 0
    K: int = 16
    T: int = 8
    layers: int = 2
    dim: int = 32
    edge_dim: int = 0            # 0 -> same as dim
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 0.5
    m1: float = 0.1
    m2: float = 0.01
    momentum: float = 0.9
    theta: float = 0.7
    prompt: str = "dpm"          # "dpm" or "simple"
    weight_fn: str = "softmax"   # DPM mixing weights: "softmax" or "sigmoid"
    reinit_heads: bool = False   # stage 2: fresh heads instead of fine-tuning
    link_identity_init: bool = True  # Link starts as the identity (zero value projection)

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.prompt not in ("dpm", "simple"):
            raise ValueError(f"prompt must be 'dpm' or 'simple', got {self.prompt!r}")

    @property
    def loss_weights(self) -> obj.LossWeights:
        return obj.LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4,
                               self.m1, self.m2)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


class NodeEncoder(Module):
    """Class embedding, then attention among a frame's nodes, then along each slot's track.

    Stand-in for a pretrained video encoder: it only sees object classes.
    """

    def __init__(self, num_object_classes: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.embedding = Embedding(num_object_classes, dim, rng)
        self.spatial = SelfAttention(dim, rng)
        self.temporal = SelfAttention(dim, rng)

    def forward(self, node_class: np.ndarray, node_mask: np.ndarray) -> Tensor:
        x = self.embedding(node_class) * node_mask[..., None].astype(ag.DTYPE)
        x = self.spatial(x, node_mask)                          # attend over M
        x = ag.swapaxes(x, 1, 2)                                 # (B, M, N, D)
        x = self.temporal(x, np.swapaxes(node_mask, 1, 2))       # attend over N
        return ag.swapaxes(x, 1, 2)


@dataclass
class DisentangleOutput:
    f_o: Tensor
    f_s: Tensor
    f_u: Tensor
    f_r: Tensor
    delta: Tensor
    a_s: Tensor
    a_u: Tensor
    a_t: Tensor
    a_m: Tensor
    frame_weights: Tensor       # SAP-branch readout s, (B, N)
    node_mask: np.ndarray


HEAD_PREFIXES = ("head_u.", "head_s.", "head_t.", "head_m.", "readout_m.")


class ProDAModel(Module):
    def __init__(self, num_classes: int, num_object_classes: int, num_relation_types: int,
                 num_frames: int, cfg: TrainConfig, seed: int | None = None):
        super().__init__()
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        d = cfg.dim
        de = cfg.edge_dim or d
        self.num_classes = num_classes
        self.dims = dict(num_classes=num_classes, num_object_classes=num_object_classes,
                         num_relation_types=num_relation_types, num_frames=num_frames)
        self.encoder = NodeEncoder(num_object_classes, d, rng)
        if cfg.prompt == "dpm":
            self.prompt = PromptBank(num_classes, d, cfg.T, rng, cfg.weight_fn)
        else:
            self.prompt = SimplePrompt(num_classes, d, rng)
        self.vgpnn = VGPNN(d, de, num_frames, num_relation_types, cfg.layers, rng, cfg.momentum,
                          link_identity_init=cfg.link_identity_init)
        self.fusion = obj.FusionNets(d, rng)
        self.readout_u = Readout(d, rng)
        self.readout_s = Readout(d, rng)
        self.readout_t = Readout(d, rng)
        self.readout_m = Readout(d, rng)
        self.head_u = Linear(d, num_classes + 1, rng)
        self.head_s = Linear(d, num_classes + 1, rng)
        self.head_t = Linear(d, num_classes + 1, rng)
        self.head_m = Linear(d, num_classes + 1, rng)

    def forward(self, node_class: np.ndarray, node_mask: np.ndarray, relations: np.ndarray,
                sap: np.ndarray, uap: np.ndarray, training: bool | None = None) -> DisentangleOutput:
        training = self.training if training is None else training
        b = node_class.shape[0]
        f_o = self.encoder(node_class, node_mask)
        feats = NodeFeatures(f_o, node_mask)
        p_s = self.prompt.apply(feats, Tensor(np.asarray(sap, dtype=ag.DTYPE)))
        p_u = self.prompt.apply(feats, Tensor(np.asarray(uap, dtype=ag.DTYPE)))
        stacked = ag.concat([p_s.values, p_u.values], axis=0)
        mask2 = np.concatenate([node_mask, node_mask], axis=0)
        edges = self.vgpnn.embed_edges(relations, node_mask)
        out = self.vgpnn(stacked, mask2, edges, training)
        f_s, f_u = out[:b], out[b:]
        f_r, delta = obj.reconstruct(f_u, f_s, self.fusion, node_mask)
        ro_s = self.readout_s(f_s, node_mask)
        a_s = self.head_s(ro_s.global_)
        a_u = self.head_u(self.readout_u(f_u, node_mask).global_)
        a_t = self.head_t(self.readout_t(f_r, node_mask).global_)
        a_m = self.head_m(self.readout_m(f_o, node_mask).global_)
        return DisentangleOutput(f_o, f_s, f_u, f_r, delta, a_s, a_u, a_t, a_m,
                                 ro_s.frame_weights, node_mask)

    def head_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith(HEAD_PREFIXES)]

    def backbone_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith(HEAD_PREFIXES)]


# -- data plumbing -----------------------------------------------------------

@dataclass
class VideoArrays:
    """Dense arrays for a list of videos sharing (N, M) and vocabularies."""

    node_class: np.ndarray      # (V, N, M)
    node_mask: np.ndarray       # (V, N, M)
    relations: np.ndarray       # (V, N, M, M, R)
    labels: np.ndarray          # (V, C)
    segments: list[dict[int, list[tuple[int, int]]]]
    video_ids: list[str]
    num_object_classes: int
    num_relation_types: int

    @classmethod
    def from_videos(cls, videos: list[tuple[SceneGraphSequence, VideoAnnotation]]) -> "VideoArrays":
        if not videos:
            raise ValueError("empty dataset")
        seqs = [s for s, _ in videos]
        if len({s.node_class.shape for s in seqs}) != 1:
            raise ValueError("all videos must share (N, M)")
        return cls(
            node_class=np.stack([s.node_class for s in seqs]),
            node_mask=np.stack([s.node_mask for s in seqs]),
            relations=np.stack([s.relation_tensor() for s in seqs]),
            labels=np.stack([a.labels for _, a in videos]),
            segments=[a.segments for _, a in videos],
            video_ids=[s.video_id for s in seqs],
            num_object_classes=max(s.num_object_classes for s in seqs),
            num_relation_types=max(s.num_relation_types for s in seqs),
        )

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def num_frames(self) -> int:
        return self.node_class.shape[1]

    def subset(self, idx) -> "VideoArrays":
        idx = np.asarray(idx)
        return VideoArrays(self.node_class[idx], self.node_mask[idx], self.relations[idx],
                           self.labels[idx], [self.segments[i] for i in idx],
                           [self.video_ids[i] for i in idx], self.num_object_classes,
                           self.num_relation_types)


def build_model(data: VideoArrays, cfg: TrainConfig) -> ProDAModel:
    return ProDAModel(data.num_classes, data.num_object_classes, data.num_relation_types,
                      data.num_frames, cfg)


def run_batch(model: ProDAModel, data: VideoArrays, idx: np.ndarray, pairs: list[ActionSpecPair],
              training: bool) -> DisentangleOutput:
    sap = np.stack([p.sap for p in pairs])
    uap = np.stack([p.uap for p in pairs])
    return model(data.node_class[idx], data.node_mask[idx], data.relations[idx], sap, uap,
                 training=training)


def epoch_samples(data: VideoArrays, cfg: TrainConfig, epoch: int) -> list[tuple[int, ActionSpecPair]]:
    """All 2L+1 pairs of every video, in a seeded shuffled order."""
    samples = []
    for vi in range(len(data)):
        for pair in build_pairs(data.labels[vi], cfg.K, pair_rng(cfg.seed, vi, epoch)):
            samples.append((vi, pair))
    order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(len(samples))
    return [samples[i] for i in order]


def _batches(samples, size):
    for start in range(0, len(samples), size):
        chunk = samples[start:start + size]
        yield np.array([vi for vi, _ in chunk]), [p for _, p in chunk]


def stage1_loss(model: ProDAModel, data: VideoArrays, idx, pairs, cfg: TrainConfig,
                training: bool = True) -> tuple[obj.LossBreakdown, DisentangleOutput]:
    out = run_batch(model, data, idx, pairs, training)
    y_s = np.stack([p.y_s for p in pairs])
    y_u = np.stack([p.y_u for p in pairs])
    y_t = obj.pad_video_targets(data.labels[idx])
    bd = obj.total_loss(out.a_u, out.a_s, out.a_t, y_u, y_s, y_t, out.f_u, out.f_s,
                        out.f_o, out.f_r, cfg.loss_weights, out.node_mask)
    return bd, out


def stage2_loss(model: ProDAModel, data: VideoArrays, idx, pairs) -> tuple[Tensor, dict]:
    out = run_batch(model, data, idx, pairs, training=False)
    y_t = obj.pad_video_targets(data.labels[idx])
    parts = {
        "l_bce_u": obj.bce_loss(out.a_u, np.stack([p.y_u for p in pairs])),
        "l_bce_s": obj.bce_loss(out.a_s, np.stack([p.y_s for p in pairs])),
        "l_bce_t": obj.bce_loss(out.a_t, y_t),
        "l_bce_m": obj.bce_loss(out.a_m, y_t),
    }
    total = parts["l_bce_u"] + parts["l_bce_s"] + parts["l_bce_t"] + parts["l_bce_m"]
    return total, {k: v.item() for k, v in parts.items()} | {"total": total.item()}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, op: str, last_good: Path | None):
        super().__init__(f"non-finite value in '{op}' during epoch {epoch}; "
                         f"last good checkpoint: {last_good}")
        self.last_good = last_good


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def _write_outputs(model: ProDAModel, out_dir: Path | None, name: str, cfg: TrainConfig,
                   history: list[dict]) -> Path | None:
    if out_dir is None:
        return None
    out_dir = Path(out_dir)
    path = out_dir / f"{name}.ckpt"
    ckpt.save(path, model.state_dict())
    manifest = {"config": asdict(cfg), "dims": model.dims, "epoch": len(history),
                "history": history}
    ckpt.atomic_write(out_dir / f"{name}.manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    ckpt.atomic_write(out_dir / f"{name}.metrics.jsonl",
                      "".join(json.dumps(h, sort_keys=True) + "\n" for h in history))
    return path


def _mean_records(records: list[dict]) -> dict:
    keys = records[0].keys()
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


def train_stage1(model: ProDAModel, data: VideoArrays, cfg: TrainConfig,
                 out_dir: str | Path | None = None) -> TrainResult:
    """End-to-end training on the Eq.-8 objective over all 2L+1 pairs per video."""
    for name, p in model.named_parameters():
        p.set_trainable(not name.startswith(("head_m.", "readout_m.")))
    model.train()
    opt = RMSProp(model.trainable_parameters(), lr=cfg.lr)
    result = TrainResult()
    last_good = model.state_dict()
    for epoch in range(cfg.epochs):
        records = []
        try:
            for idx, pairs in _batches(epoch_samples(data, cfg, epoch), cfg.batch_size):
                bd, _ = stage1_loss(model, data, idx, pairs, cfg, training=True)
                opt.zero_grad()
                bd.total.backward()
                opt.step()
                records.append(bd.as_dict())
        except NonFiniteError as exc:
            model.load_state_dict(last_good)
            raise TrainingDiverged(epoch, exc.op, result.checkpoint) from exc
        rec = {"stage": 1, "epoch": epoch, "batches": len(records)}
        rec.update(_mean_records(records))
        result.history.append(rec)
        log.info("stage1 epoch %d: %s", epoch, {k: round(v, 4) for k, v in rec.items()})
        last_good = model.state_dict()
        result.checkpoint = _write_outputs(model, out_dir, "stage1", cfg, result.history)
    return result


def freeze_backbone(model: ProDAModel) -> None:
    heads = {n for n, _ in model.head_parameters()}
    for name, p in model.named_parameters():
        p.set_trainable(name in heads)


def train_stage2(model: ProDAModel, data: VideoArrays, cfg: TrainConfig,
                 out_dir: str | Path | None = None) -> TrainResult:
    """Retrain only the four classifier heads (and the a_m readout) with BCE."""
    freeze_backbone(model)
    if cfg.reinit_heads:
        rng = np.random.default_rng([cfg.seed, 2])
        d = model.head_t.d_in
        for name in ("head_u", "head_s", "head_t", "head_m"):
            setattr(model, name, Linear(d, model.num_classes + 1, rng))
    model.eval()
    opt = RMSProp([p for _, p in model.head_parameters()], lr=cfg.stage2_lr)
    result = TrainResult()
    last_good = model.state_dict()
    for epoch in range(cfg.stage2_epochs):
        records = []
        try:
            for idx, pairs in _batches(epoch_samples(data, cfg, 1000 + epoch), cfg.batch_size):
                total, parts = stage2_loss(model, data, idx, pairs)
                opt.zero_grad()
                total.backward()
                opt.step()
                records.append(parts)
        except NonFiniteError as exc:
            model.load_state_dict(last_good)
            raise TrainingDiverged(epoch, exc.op, result.checkpoint) from exc
        rec = {"stage": 2, "epoch": epoch, "batches": len(records)}
        rec.update(_mean_records(records))
        result.history.append(rec)
        log.info("stage2 epoch %d: %s", epoch, {k: round(v, 4) for k, v in rec.items()})
        last_good = model.state_dict()
        result.checkpoint = _write_outputs(model, out_dir, "stage2", cfg, result.history)
    return result


def load_model(path: str | Path, cfg: TrainConfig | None = None) -> tuple[ProDAModel, TrainConfig]:
    """Rebuild a model from a checkpoint and its sidecar manifest."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".manifest.json").read_text())
    cfg = cfg or TrainConfig.from_dict(manifest["config"])
    model = ProDAModel(cfg=cfg, **manifest["dims"])
    model.load_state_dict(ckpt.load(path))
    return model, cfg


# -- verification ------------------------------------------------------------------

def tiny_problem(seed: int = 0) -> tuple[ProDAModel, VideoArrays, TrainConfig, np.ndarray, list[ActionSpecPair]]:
    """A 2-frame, 2-node, 3-class problem small enough for exhaustive finite differences.

    Margins are negative so both hinge terms sit strictly inside their linear
    region, away from the ReLU kink. The two frames hold different objects so
    frame weights matter; with identical frames their gradients vanish and
    the check only measures roundoff.
    """
    seqs = [
        SceneGraphSequence("tiny-0", np.array([[1, 2], [1, 3]]), np.ones((2, 2), dtype=bool),
                           np.array([[0, 0, 1, 0], [1, 1, 0, 1], [1, 0, 1, 2]]), 3, 4),
        SceneGraphSequence("tiny-1", np.array([[3, 2], [2, 1]]), np.ones((2, 2), dtype=bool),
                           np.array([[0, 1, 0, 2], [0, 0, 1, 1], [1, 0, 1, 0]]), 3, 4),
    ]
    anns = [VideoAnnotation(np.array([1, 0, 0]), {0: [(0, 1)]}),
            VideoAnnotation(np.array([0, 0, 1]), {2: [(1, 1)]})]
    data = VideoArrays.from_videos(list(zip(seqs, anns)))
    cfg = TrainConfig(K=1, T=2, layers=1, dim=4, seed=seed, m1=-0.5, m2=-0.5)
    model = build_model(data, cfg)
    # move every zero-initialized output layer off zero so its inputs' gradients are exercised
    rng = np.random.default_rng([seed, 5])
    for name, p in model.named_parameters():
        if not p.data.any():
            p.data = rng.normal(0.0, 0.1, size=p.data.shape)
    idx, pairs = [], []
    for v in range(len(data)):
        for p in build_pairs(data.labels[v], cfg.K, pair_rng(seed, v)):
            idx.append(v)
            pairs.append(p)
    return model, data, cfg, np.array(idx), pairs


def gradcheck_tiny(eps: float = 1e-5, tol: float = 1e-5, seed: int = 0, dtype=np.longdouble):
    """Central-difference check of the full objective (all stage-1 terms plus BCE on a_m).

    Runs in ``dtype``. In float64 the finite differences carry ~3e-11 of
    absolute roundoff, which exceeds 1e-5 relative error on the few gradient
    entries that happen to be below ~3e-6; extended precision removes that
    floor without changing any formula under test.
    """
    from .numerics.gradcheck import grad_check

    with ag.precision(dtype):
        model, data, cfg, idx, pairs = tiny_problem(seed)
        for p in model.parameters():
            p.data = np.asarray(p.data, dtype=dtype)
            p.set_trainable(True)
        model._load_buffers({n: np.asarray(b, dtype=dtype) for n, b in model.named_buffers()}, "")
        model.train()
        y_t = obj.pad_video_targets(data.labels[idx])

        def loss():
            bd, out = stage1_loss(model, data, idx, pairs, cfg, training=True)
            return bd.total + obj.bce_loss(out.a_m, y_t)

        return grad_check(loss, model, eps=eps, tol=tol)
