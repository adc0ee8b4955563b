"""Evaluation metrics: DTW lip-sync, sample-set diversity, beat alignment.

All three are pure functions; absolute values depend on documented design
stand-ins (DTW step pattern, beat extraction), so trends rather than paper
table values are the comparable quantity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .io import KIND_HEAD, MotionSequence


DEFAULT_SIGMA = 3.0
BEAT_SMOOTHING_FRAMES = 5


@dataclass(frozen=True)
class BeatList:
    """Sorted beat timestamps in seconds."""

    times: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if any(t < 0 for t in ts):
            raise ValueError("beat times must be non-negative")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("beat times must be strictly increasing")
        object.__setattr__(self, "times", ts)

    def __len__(self) -> int:
        return len(self.times)


def _region_channels(seq: MotionSequence, region) -> np.ndarray:
    idx = np.asarray(list(region), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("region must select at least one channel")
    if idx.min() < 0 or idx.max() >= seq.channels:
        raise ValueError("region channel index out of range")
    return seq.data[:, idx]


def toy_lip_region(channels: int) -> list[int]:
    """Designated stand-in lip channels on toy data: the first 4 vertices."""
    return list(range(min(12, channels)))


def lip_sync_dtw(pred: MotionSequence, gt: MotionSequence, region) -> float:
    """Minimal cumulative per-frame L2 distance over monotone warping paths.

    Step pattern match/insert/delete; the total cost is normalized by the
    length of the (shortest) optimal path. Symmetric; zero for identical
    sequences.
    """
    if pred.channels != gt.channels:
        raise ValueError("sequences must have the same channel count")
    a = _region_channels(pred, region)
    b = _region_channels(gt, region)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise ValueError("sequences must be non-empty")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)

    cost = np.full((n, m), np.inf)
    length = np.zeros((n, m), dtype=np.int64)
    cost[0, 0] = d[0, 0]
    length[0, 0] = 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            candidates = []
            if i > 0 and j > 0:
                candidates.append((cost[i - 1, j - 1], length[i - 1, j - 1]))
            if i > 0:
                candidates.append((cost[i - 1, j], length[i - 1, j]))
            if j > 0:
                candidates.append((cost[i, j - 1], length[i, j - 1]))
            best_cost = min(c for c, _ in candidates)
            best_len = min(l for c, l in candidates if c == best_cost)
            cost[i, j] = best_cost + d[i, j]
            length[i, j] = best_len + 1
    return float(cost[n - 1, m - 1] / length[n - 1, m - 1])


def diversity(samples) -> float:
    """Mean pairwise flattened-L2 distance over all unordered sample pairs."""
    sams = list(samples)
    if len(sams) < 2:
        raise ValueError("diversity needs at least 2 samples")
    flats = []
    for s in sams:
        data = s.data if isinstance(s, MotionSequence) else np.asarray(s)
        flats.append(data.reshape(-1).astype(np.float64))
    shape0 = flats[0].shape
    if any(f.shape != shape0 for f in flats):
        raise ValueError("all samples must share one shape")
    total = 0.0
    pairs = 0
    for i in range(len(flats)):
        for j in range(i + 1, len(flats)):
            total += float(np.linalg.norm(flats[i] - flats[j]))
            pairs += 1
    return total / pairs


def angular_velocity(head: MotionSequence) -> np.ndarray:
    """Per-step axis-angle speed ||delta|| / dt, length N-1."""
    return np.linalg.norm(np.diff(head.data, axis=0), axis=1) * head.fps


def detect_beats(head: MotionSequence) -> BeatList:
    """Strict local minima of the smoothed angular-velocity magnitude.

    The velocity track is smoothed with a 5-frame moving average first;
    timestamps are the midpoints of the minimizing frame steps, in seconds.
    """
    if head.kind != KIND_HEAD:
        raise ValueError("beat detection expects a head sequence")
    if head.frames < 3:
        raise ValueError("need at least 3 frames")
    v = angular_velocity(head)
    half = BEAT_SMOOTHING_FRAMES // 2
    padded = np.pad(v, half, mode="edge")
    kernel = np.ones(BEAT_SMOOTHING_FRAMES) / BEAT_SMOOTHING_FRAMES
    smooth = np.convolve(padded, kernel, mode="valid")
    interior = (smooth[1:-1] < smooth[:-2]) & (smooth[1:-1] < smooth[2:])
    idx = np.flatnonzero(interior) + 1
    return BeatList(tuple((i + 0.5) / head.fps for i in idx))


def beat_align(pred: BeatList, gt: BeatList, sigma: float = DEFAULT_SIGMA) -> float:
    """Mean Gaussian-kernel proximity of ground-truth beats to predictions.

    Empty prediction lists score 0 by convention.
    """
    if len(gt) == 0:
        raise ValueError("ground-truth beat list must be non-empty")
    if len(pred) == 0:
        return 0.0
    pred_arr = np.asarray(pred.times)
    total = 0.0
    for tg in gt.times:
        dmin = float(np.min(np.abs(pred_arr - tg)))
        total += np.exp(-(dmin ** 2) / (2.0 * sigma ** 2))
    return float(total / len(gt))


@dataclass
class MetricReport:
    lip_sync: float | None = None
    div: float | None = None
    beat_align_score: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lip_sync": self.lip_sync, "div": self.div,
                "beat_align": self.beat_align_score, "metadata": self.metadata}

    def to_text(self) -> str:
        lines = []
        for key in ("lip_sync", "div", "beat_align"):
            value = self.to_dict()[key]
            if value is not None:
                lines.append(f"{key} {value:.8g}")
        for key, value in sorted(self.metadata.items()):
            lines.append(f"# {key} {value}")
        return "\n".join(lines) + "\n"

    def write(self, text_path=None, json_path=None) -> None:
        if text_path is not None:
            with open(text_path, "w") as f:
                f.write(self.to_text())
        if json_path is not None:
            with open(json_path, "w") as f:
                json.dump(self.to_dict(), f, indent=2)
