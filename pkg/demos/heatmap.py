"""Text heatmap of frame weights from ``proda localize`` output.

    python demos/heatmap.py runs/default/frame_weights.jsonl [count]

Each row is one (video, action) query; ``#`` marks frames with s > 0.7,
``+`` frames above 0.5, and brackets show the ground-truth segment.
"""
import json
import sys


def row(rec, theta=0.7):
    s = rec["frame_weights"]
    gt = {i for a, b in rec["gt"] for i in range(a, b + 1)}
    cells = []
    for i, w in enumerate(s):
        ch = "#" if w > theta else "+" if w > 0.5 else "."
        cells.append(f"[{ch}]" if i in gt else f" {ch} ")
    return "".join(cells)


def main(path, count=20):
    with open(path) as fh:
        recs = [json.loads(line) for line in fh]
    for rec in recs[:count]:
        family = "inj" if rec["injected"] else "clean"
        print(f"{rec['video_id']:<10} a{rec['action']} {family:<5} {row(rec)}")


if __name__ == "__main__":
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else 20)
