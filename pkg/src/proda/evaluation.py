"""Recognition mAP, SAP robustness sweeps and weakly supervised localization."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .action_spec import ActionSpecPair, build_pairs, make_pair, pair_rng
from .numerics import autograd as ag
from .objective import pad_video_targets

log = logging.getLogger(__name__)

THETAS = (0.2, 0.5, 0.7)
IOUS = (0.2, 0.5, 0.7)


# -- ranking metrics ----------------------------------------------------------

def average_precision(scores, targets) -> float:
    """Mean of precision at the rank of each positive; NaN if there are none.

    Ties in score keep the original order.
    """
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets)
    if scores.shape != targets.shape:
        raise ValueError(f"scores {scores.shape} and targets {targets.shape} differ in length")
    n_pos = int((targets > 0).sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = (targets[order] > 0).astype(float)
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float((precision * hits).sum() / n_pos)


def per_class_ap(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    scores, targets = np.asarray(scores), np.asarray(targets)
    return np.array([average_precision(scores[:, c], targets[:, c]) for c in range(scores.shape[1])])


def multilabel_map(scores: np.ndarray, targets: np.ndarray) -> float:
    """Macro mean of per-class AP over classes with at least one positive."""
    aps = per_class_ap(scores, targets)
    missing = np.flatnonzero(np.isnan(aps))
    if missing.size:
        log.info("mAP: classes %s have no positives and are skipped", missing.tolist())
    valid = aps[~np.isnan(aps)]
    return float(valid.mean()) if valid.size else float("nan")


# -- segments -----------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    score: float = 1.0

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end}]")


def localize(s, theta: float) -> list[Segment]:
    """Maximal runs of frames with ``s > theta``, scored by their mean weight."""
    s = np.asarray(s, dtype=float)
    on = s > theta
    segments, start = [], None
    for i, flag in enumerate(np.append(on, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            segments.append(Segment(start, i - 1, float(s[start:i].mean())))
            start = None
    return segments


def segment_iou(a, b) -> float:
    """IoU of inclusive frame intervals, counted in frames."""
    a0, a1 = (a.start, a.end) if isinstance(a, Segment) else a
    b0, b1 = (b.start, b.end) if isinstance(b, Segment) else b
    inter = max(0, min(a1, b1) - max(a0, b0) + 1)
    union = (a1 - a0 + 1) + (b1 - b0 + 1) - inter
    return inter / union


def localization_ap(preds: list[tuple[object, Segment]], gts: dict[object, list[tuple[int, int]]],
                    iou_threshold: float) -> float:
    """AP of ranked segment predictions for one class.

    ``preds`` holds (video key, segment); ``gts`` maps video key to its
    ground-truth intervals. Each prediction, in score order (ties by list
    order), claims the unmatched ground truth of its video with the highest
    IoU if that IoU reaches the threshold.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return float("nan")
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1].score)
    used = {k: np.zeros(len(v), dtype=bool) for k, v in gts.items()}
    tp = np.zeros(len(preds))
    for rank, i in enumerate(order):
        key, seg = preds[i]
        cands = gts.get(key, [])
        best, best_iou = -1, -1.0
        for g, gt in enumerate(cands):
            if used[key][g]:
                continue
            iou = segment_iou(seg, gt)
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            used[key][best] = True
            tp[rank] = 1.0
    precision = np.cumsum(tp) / np.arange(1, len(tp) + 1) if len(tp) else tp
    return float((precision * tp).sum() / n_gt)


def localization_map(preds_by_class: dict[int, list[tuple[object, Segment]]],
                     gts_by_class: dict[int, dict[object, list[tuple[int, int]]]],
                     iou_thresholds=IOUS) -> dict[float, float]:
    out = {}
    for thr in iou_thresholds:
        aps = [localization_ap(preds_by_class.get(c, []), gts, thr) for c, gts in sorted(gts_by_class.items())]
        aps = [a for a in aps if not np.isnan(a)]
        out[float(thr)] = float(np.mean(aps)) if aps else float("nan")
    return out


def frame_level_map(frame_scores: dict[int, list[np.ndarray]], frame_truth: dict[int, list[np.ndarray]]) -> float:
    """Per-frame AP variant: every frame of every queried video is one ranked item."""
    aps = []
    for c in sorted(frame_truth):
        s = np.concatenate(frame_scores[c])
        t = np.concatenate(frame_truth[c])
        ap = average_precision(s, t)
        if not np.isnan(ap):
            aps.append(ap)
    return float(np.mean(aps)) if aps else float("nan")


def frames_of(segments: list[tuple[int, int]], num_frames: int) -> np.ndarray:
    out = np.zeros(num_frames, dtype=int)
    for s, e in segments:
        out[s:e + 1] = 1
    return out


# -- model-driven protocols -------------------------------------------------------

@dataclass
class Predictions:
    a_s: np.ndarray
    a_u: np.ndarray
    a_t: np.ndarray
    a_m: np.ndarray
    frame_weights: np.ndarray


def predict(model, data, video_idx, pairs: list[ActionSpecPair], batch_size: int = 64) -> Predictions:
    """Eval-mode forward over (video, pair) samples; no graph is recorded."""
    video_idx = np.asarray(video_idx)
    chunks = {k: [] for k in ("a_s", "a_u", "a_t", "a_m", "frame_weights")}
    with ag.no_grad():
        for start in range(0, len(pairs), batch_size):
            idx = video_idx[start:start + batch_size]
            sub = pairs[start:start + batch_size]
            out = model(data.node_class[idx], data.node_mask[idx], data.relations[idx],
                        np.stack([p.sap for p in sub]), np.stack([p.uap for p in sub]), training=False)
            for k in chunks:
                chunks[k].append(getattr(out, k).data)
    return Predictions(**{k: np.concatenate(v) for k, v in chunks.items()})


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def all_pairs(data, K: int, seed: int, epoch: int = 0):
    idx, pairs = [], []
    for vi in range(len(data)):
        for p in build_pairs(data.labels[vi], K, pair_rng(seed, vi, epoch)):
            idx.append(vi)
            pairs.append(p)
    return np.array(idx), pairs


def blind_pairs(data, K: int, seed: int):
    """One label-agnostic SAP per video: K classes drawn uniformly at random."""
    C = data.num_classes
    pairs = []
    for vi in range(len(data)):
        rng = np.random.default_rng([seed, vi, 99])
        sap = np.zeros(C, dtype=np.int64)
        sap[rng.choice(C, size=K, replace=False)] = 1
        pairs.append(make_pair(sap, data.labels[vi], True))
    return np.arange(len(data)), pairs


def head_maps(model, data, K: int, seed: int) -> dict[str, float]:
    """mAP of every head on a dataset.

    a_s/a_u are scored on all 2L+1 constructed pairs against their C+1
    targets; a_t/a_m against the video labels, with a random K-hot SAP so the
    prompt carries no label information.
    """
    idx, pairs = all_pairs(data, K, seed, epoch=10_000)
    pred = predict(model, data, idx, pairs)
    res = {
        "a_s": multilabel_map(_sigmoid(pred.a_s), np.stack([p.y_s for p in pairs])),
        "a_u": multilabel_map(_sigmoid(pred.a_u), np.stack([p.y_u for p in pairs])),
    }
    bidx, bpairs = blind_pairs(data, K, seed)
    bpred = predict(model, data, bidx, bpairs)
    C = data.num_classes
    res["a_t"] = multilabel_map(_sigmoid(bpred.a_t[:, :C]), data.labels)
    res["a_m"] = multilabel_map(_sigmoid(bpred.a_m[:, :C]), data.labels)
    return res


def robustness_sweep(model, data, K: int, injected: bool, seed: int = 0,
                     repeats: int = 3) -> list[dict]:
    """a_s mAP grouped by ground-truth label count, for one SAP family.

    Each repeat redraws the SAPs; rows report mean and std over repeats.
    The final row (label_nums = "all") pools every video.
    """
    L = data.labels.sum(axis=1)
    groups = {int(n): np.flatnonzero(L == n) for n in np.unique(L)}
    groups_all = dict(groups)
    groups_all["all"] = np.arange(len(data))
    scores = {g: [] for g in groups_all}
    for rep in range(repeats):
        idx, pairs = all_pairs(data, K, seed, epoch=20_000 + rep)
        keep = np.array([p.distractor_injected == injected for p in pairs])
        idx = idx[keep]
        pairs = [p for p, k in zip(pairs, keep) if k]
        pred = _sigmoid(predict(model, data, idx, pairs).a_s)
        targets = np.stack([p.y_s for p in pairs])
        for g, members in groups_all.items():
            sel = np.isin(idx, members)
            if sel.any():
                scores[g].append(multilabel_map(pred[sel], targets[sel]))
    rows = []
    for g in groups_all:
        if not scores[g]:
            continue
        vals = np.array(scores[g])
        rows.append({"label_nums": g, "injected": injected, "videos": int(len(groups_all[g])),
                     "mean": float(vals.mean()), "std": float(vals.std())})
    return rows


def localization_queries(data, K: int, injected: bool, seed: int):
    """One SAP per (video, present action): the action alone, or padded with K-1 absent ones."""
    idx, pairs, keys = [], [], []
    C = data.num_classes
    for vi in range(len(data)):
        truth = data.labels[vi]
        absent = np.flatnonzero(truth == 0)
        rng = np.random.default_rng([seed, vi, 77])
        for c in np.flatnonzero(truth):
            sap = np.zeros(C, dtype=np.int64)
            sap[c] = 1
            if injected:
                sap[rng.choice(absent, size=K - 1, replace=False)] = 1
            idx.append(vi)
            pairs.append(make_pair(sap, truth, injected))
            keys.append((vi, int(c)))
    return np.array(idx), pairs, keys


@dataclass
class LocalizationResult:
    injected: bool
    grid: dict[float, dict[float, float]]          # theta -> iou -> mAP
    frame_map: float
    frame_weights: list[dict] = field(default_factory=list)


def normalize_weights(s: np.ndarray, mode: str = "none") -> np.ndarray:
    """``none`` keeps the sigmoid weights; ``max`` divides each row by its maximum."""
    if mode == "none":
        return s
    if mode == "max":
        top = s.max(axis=-1, keepdims=True)
        # an all-zero row has nothing to localize; keep it at zero
        return np.divide(s, top, out=np.zeros_like(s, dtype=float), where=top > 0)
    raise ValueError(f"unknown normalization {mode!r}")


def localization_grid(model, data, K: int, injected: bool, seed: int = 0,
                      thetas=THETAS, ious=IOUS, normalize: str = "none") -> LocalizationResult:
    idx, pairs, keys = localization_queries(data, K, injected, seed)
    s = normalize_weights(predict(model, data, idx, pairs).frame_weights, normalize)
    n = data.num_frames
    gts: dict[int, dict] = {}
    frame_scores: dict[int, list] = {}
    frame_truth: dict[int, list] = {}
    dumps = []
    for (vi, c), weights in zip(keys, s):
        gts.setdefault(c, {})[vi] = data.segments[vi].get(c, [])
        frame_scores.setdefault(c, []).append(weights)
        frame_truth.setdefault(c, []).append(frames_of(data.segments[vi].get(c, []), n))
        dumps.append({"video_id": data.video_ids[vi], "action": c,
                      "frame_weights": [round(float(w), 6) for w in weights],
                      "gt": [list(g) for g in data.segments[vi].get(c, [])]})
    grid = {}
    for theta in thetas:
        preds: dict[int, list] = {}
        for (vi, c), weights in zip(keys, s):
            for seg in localize(weights, theta):
                preds.setdefault(c, []).append((vi, seg))
        grid[float(theta)] = localization_map(preds, gts, ious)
    return LocalizationResult(injected, grid, frame_level_map(frame_scores, frame_truth), dumps)


# -- reports --------------------------------------------------------------------

@dataclass
class MetricsReport:
    head_map: dict[str, float] = field(default_factory=dict)
    robustness: list[dict] = field(default_factory=list)
    localization: list[LocalizationResult] = field(default_factory=list)

    def records(self) -> list[dict]:
        recs = []
        if self.head_map:
            recs.append({"kind": "head_map", **{k: round(v, 10) for k, v in self.head_map.items()}})
        for row in self.robustness:
            recs.append({"kind": "robustness", **row})
        for loc in self.localization:
            for theta, row in loc.grid.items():
                for iou, val in row.items():
                    recs.append({"kind": "localization", "injected": loc.injected, "theta": theta,
                                 "iou": iou, "map": round(val, 10)})
            recs.append({"kind": "frame_map", "injected": loc.injected, "map": round(loc.frame_map, 10)})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def to_table(self) -> str:
        lines = []
        if self.head_map:
            lines.append("head   mAP")
            for k, v in self.head_map.items():
                lines.append(f"{k:<6} {100 * v:6.2f}")
            lines.append("")
        for injected in (False, True):
            rows = [r for r in self.robustness if r["injected"] == injected]
            if rows:
                name = "distractor-injected" if injected else "non-distractor"
                lines.append(f"{name} SAP: a_s mAP by label count")
                lines.append(f"{'labels':>8} {'videos':>7} {'mAP':>14}")
                for r in rows:
                    lines.append(f"{str(r['label_nums']):>8} {r['videos']:>7} "
                                 f"{100 * r['mean']:7.2f} ±{100 * r['std']:4.1f}")
                lines.append("")
        for loc in self.localization:
            name = "distractor-injected" if loc.injected else "non-distractor"
            ious = sorted(next(iter(loc.grid.values())).keys())
            lines.append(f"{name} SAP: segment mAP (rows theta, columns IoU)")
            lines.append("theta " + " ".join(f"{i:>7.1f}" for i in ious) + "     avg")
            for theta, row in loc.grid.items():
                vals = [row[i] for i in ious]
                lines.append(f"{theta:5.1f} " + " ".join(f"{100 * v:7.2f}" for v in vals)
                             + f" {100 * np.mean(vals):7.2f}")
            lines.append(f"frame-level mAP {100 * loc.frame_map:.2f}")
            lines.append("")
        return "\n".join(lines)
