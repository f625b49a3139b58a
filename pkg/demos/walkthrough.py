"""Small end-to-end tour: generate videos, train briefly, query with action prompts.

Runs in about a minute on one core. Uses a reduced benchmark (150 videos,
3 epochs), so the numbers are rougher than the default CLI run.

    python demos/walkthrough.py
"""
import numpy as np
from scipy.special import expit

from proda import GenConfig, TrainConfig, VideoArrays, build_model, generate_videos, train_stage1, train_stage2
from proda import evaluation as ev
from proda.action_spec import make_pair
from proda.synthgen import decode_video


def show_video(seq, ann, cfg):
    print(f"video {seq.video_id}: labels {np.flatnonzero(ann.labels).tolist()}, segments {ann.segments}")
    labels, segments = decode_video(seq, cfg)
    print(f"  rule-based decoder reads: {np.flatnonzero(labels).tolist()} {segments}")


def main():
    gen = GenConfig(seed=1)
    train = VideoArrays.from_videos(generate_videos(gen, 150, "train"))
    val_videos = generate_videos(gen, 40, "val")
    val = VideoArrays.from_videos(val_videos)
    show_video(*val_videos[0], gen)

    cfg = TrainConfig(K=3, epochs=3, stage2_epochs=1, seed=1)
    model = build_model(train, cfg)
    for rec in train_stage1(model, train, cfg).history:
        print(f"stage 1 epoch {rec['epoch']}: loss {rec['total']:.3f}")
    train_stage2(model, train, cfg)

    maps = ev.head_maps(model, val, cfg.K, cfg.seed)
    print("head mAP:", {k: round(v, 3) for k, v in maps.items()})

    # ask the SAP branch about each action of one video, one at a time
    truth = val.labels[0]
    for c in range(val.num_classes):
        sap = np.eye(val.num_classes, dtype=np.int64)[c]
        pred = ev.predict(model, val, np.array([0]), [make_pair(sap, truth, False)])
        s = pred.frame_weights[0]
        mark = "present" if truth[c] else "absent "
        print(f"  action {c} ({mark}) p={expit(pred.a_s[0, c]):.2f}  s=" +
              " ".join(f"{w:.2f}" for w in s))


if __name__ == "__main__":
    main()
