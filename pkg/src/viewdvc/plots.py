"""Static figures: caption timelines and 2-D projections of converter embeddings."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EventAnnotation, EventPrediction, ViewLabel, detokenize

VIEW_STYLE = {
    int(ViewLabel.EXO): ("exo", "tab:blue", "o"),
    int(ViewLabel.EGO_LIKE): ("ego-like", "tab:green", "o"),
    int(ViewLabel.EGO): ("ego", "tab:red", "^"),
}
# no timestamps or versions in the files, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def pca_2d(X: np.ndarray) -> np.ndarray:
    """Projection onto the top two principal axes, signs fixed so that the
    largest-magnitude loading of each axis is positive."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    if Xc.shape[0] == 0:
        return np.zeros((0, 2))
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    axes = vt[:2]
    signs = np.sign(axes[np.arange(len(axes)), np.abs(axes).argmax(axis=1)])
    axes = axes * signs[:, None]
    Y = Xc @ axes.T
    if Y.shape[1] < 2:
        Y = np.pad(Y, ((0, 0), (0, 2 - Y.shape[1])))
    return Y


def projection_figure(labels: Sequence[int], X: np.ndarray, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    labels = np.asarray(labels)
    Y = pca_2d(X)
    coords = out_dir / "projection.tsv"
    with open(coords, "w") as fh:
        fh.write("view_label\tpc1\tpc2\n")
        for lab, (a, b) in zip(labels, Y):
            fh.write(f"{int(lab)}\t{a!r}\t{b!r}\n")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    for lab in sorted(np.unique(labels)):
        name, color, marker = VIEW_STYLE.get(int(lab), (str(lab), "gray", "x"))
        sel = labels == lab
        ax.scatter(Y[sel, 0], Y[sel, 1], s=6, c=color, marker=marker, label=name, alpha=0.6)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(loc="best")
    fig.tight_layout()
    png = out_dir / "projection.png"
    fig.savefig(png, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return [coords, png]


def timeline_figure(video_id: str, ref: EventAnnotation, preds: Sequence[EventPrediction], out_dir) -> list[Path]:
    """Ground-truth and predicted segments on two rows, captions beside each bar."""
    plt = _pyplot()
    rows = [("ground truth", [(s, detokenize(c)) for s, c in zip(ref.segments, ref.sentences)]),
            ("predicted", [(p.segment, detokenize(p.tokens)) for p in preds])]
    n_bars = max(1, sum(len(r[1]) for r in rows))
    fig, ax = plt.subplots(figsize=(10, 1.0 + 0.35 * n_bars))
    y = 0
    ticks = []
    for name, events in rows:
        ticks.append((y + max(len(events), 1) / 2 - 0.5, name))
        for seg, text in events:
            ax.barh(y, seg.end - seg.start, left=seg.start, height=0.7,
                    color="tab:orange" if name == "predicted" else "tab:blue")
            ax.text(seg.end + 0.01 * ref.duration, y, text, va="center", fontsize=7)
            y += 1
        y += 1 if not events else 0.5
    ax.set_yticks([t for t, _ in ticks], [n for _, n in ticks])
    ax.set_xlim(0, ref.duration * 1.35)
    ax.invert_yaxis()
    ax.set_xlabel("seconds")
    ax.set_title(video_id)
    fig.tight_layout()
    png = Path(out_dir) / f"timeline_{video_id}.png"
    fig.savefig(png, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return [png]
