"""Synthetic desk-scale corpus with controllable audio-motion correlation.

Each corpus item couples band-limited pseudo-audio features with a facial
motion track (a per-subject affine readout of the smoothed features plus a
per-sequence stochastic residual, so the conditional distribution is
genuinely multimodal) and a head track with quasi-periodic nods phase-locked
to feature-energy peaks. Generation is pure in (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import AUDIO_DIM
from .io import KIND_FACE, KIND_HEAD, MotionSequence, read_sequence, write_sequence


@dataclass(frozen=True)
class SubjectStyle:
    amplitude: float = 1.0
    smoothing: int = 3        # extra moving-average half-width on the readout
    offset: float = 0.0


@dataclass(frozen=True)
class ToyCorpusSpec:
    num_sequences: int = 8
    length: int = 120
    vertices: int = 16                 # face channels = vertices * 3
    feature_dim: int = AUDIO_DIM
    fps: float = 30.0
    seed: int = 0
    noise_level: float = 0.1
    subjects: tuple[tuple[str, SubjectStyle], ...] = (("subj0", SubjectStyle()),)

    def __post_init__(self):
        if self.num_sequences < 1 or self.length < 2 or self.vertices < 1:
            raise ValueError("invalid corpus spec")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")

    @property
    def face_channels(self) -> int:
        return self.vertices * 3


@dataclass
class CorpusItem:
    subject: str
    features: np.ndarray          # (N, feature_dim) aligned per-frame features
    face: MotionSequence
    head: MotionSequence


@dataclass
class ToyCorpus:
    spec: ToyCorpusSpec
    items: list[CorpusItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def subjects(self) -> list[str]:
        return sorted({it.subject for it in self.items})


def _moving_average(x: np.ndarray, half_width: int) -> np.ndarray:
    """Centered moving average along axis 0, edge-padded."""
    if half_width < 1:
        return x
    w = 2 * half_width + 1
    padded = np.pad(x, ((half_width, half_width),) + ((0, 0),) * (x.ndim - 1),
                    mode="edge")
    kernel = np.ones(w) / w
    return np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="valid"),
                               0, padded)


def _band_limited_noise(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    raw = rng.standard_normal((n, dim))
    smooth = _moving_average(raw, 2)
    return smooth / smooth.std()


def _energy_peaks(features: np.ndarray) -> np.ndarray:
    """Frame indices of local maxima of the smoothed per-frame energy."""
    energy = _moving_average((features ** 2).mean(axis=1, keepdims=True), 3)[:, 0]
    interior = (energy[1:-1] > energy[:-2]) & (energy[1:-1] > energy[2:])
    return np.flatnonzero(interior) + 1


def gen_toy_corpus(spec: ToyCorpusSpec) -> ToyCorpus:
    rng = np.random.default_rng(spec.seed)
    subjects = dict(spec.subjects)
    c_face = spec.face_channels

    # per-subject affine readouts, fixed for the whole corpus
    readouts = {}
    for name in subjects:
        w_face = rng.standard_normal((spec.feature_dim, c_face)) / np.sqrt(spec.feature_dim)
        w_head = rng.standard_normal((spec.feature_dim, 3)) / np.sqrt(spec.feature_dim)
        residual_basis = rng.standard_normal((4, c_face)) / 2.0
        head_residual_basis = rng.standard_normal((2, 3))
        readouts[name] = (w_face, w_head, residual_basis, head_residual_basis)

    names = list(subjects)
    items: list[CorpusItem] = []
    for i in range(spec.num_sequences):
        name = names[i % len(names)]
        style = subjects[name]
        w_face, w_head, residual_basis, head_residual_basis = readouts[name]

        feats = _band_limited_noise(rng, spec.length, spec.feature_dim)
        smoothed = _moving_average(feats, style.smoothing)

        residual = _moving_average(rng.standard_normal((spec.length, 4)), 4) @ residual_basis
        face = style.amplitude * (smoothed @ w_face) + style.offset
        face = face + style.amplitude * spec.noise_level * residual

        head = 0.3 * style.amplitude * _moving_average(smoothed @ w_head, 4)
        nod = np.zeros(spec.length)
        t_axis = np.arange(spec.length)
        for peak in _energy_peaks(feats):
            nod += 0.2 * np.exp(-0.5 * ((t_axis - peak) / 3.0) ** 2)
        head[:, 0] += nod
        # per-sequence smooth residual: audio-independent head variability, so
        # the conditional distribution is multimodal (as for the face track)
        head_res = _moving_average(rng.standard_normal((spec.length, 2)), 6)
        head += style.amplitude * spec.noise_level * 6.0 * (head_res @ head_residual_basis)
        head += spec.noise_level * 0.1 * _moving_average(
            rng.standard_normal((spec.length, 3)), 3)

        items.append(CorpusItem(
            subject=name,
            features=feats.astype(np.float32),
            face=MotionSequence(face, fps=spec.fps, kind=KIND_FACE, subject=name),
            head=MotionSequence(head, fps=spec.fps, kind=KIND_HEAD, subject=name),
        ))
    return ToyCorpus(spec=spec, items=items)


def save_corpus(corpus: ToyCorpus, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, item in enumerate(corpus.items):
        write_sequence(root / f"seq{i:03d}_face.mseq", item.face)
        write_sequence(root / f"seq{i:03d}_head.mseq", item.head)
        np.save(root / f"seq{i:03d}_feat.npy", item.features)


def load_corpus(root) -> ToyCorpus:
    """Read back a saved corpus directory; spec metadata is not recoverable."""
    root = Path(root)
    items = []
    for face_path in sorted(root.glob("seq*_face.mseq")):
        stem = face_path.name[:-10]
        face = read_sequence(face_path)
        head = read_sequence(root / f"{stem}_head.mseq")
        feats = np.load(root / f"{stem}_feat.npy")
        items.append(CorpusItem(subject=face.subject, features=feats,
                                face=face, head=head))
    if not items:
        raise FileNotFoundError(f"no corpus sequences under {root}")
    n = items[0].face.frames
    spec = ToyCorpusSpec(num_sequences=len(items), length=n,
                         vertices=items[0].face.channels // 3,
                         feature_dim=items[0].features.shape[1],
                         fps=items[0].face.fps)
    return ToyCorpus(spec=spec, items=items)
