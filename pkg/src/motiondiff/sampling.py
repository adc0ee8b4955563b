"""DDPM sampling loops with CFG, sparse-guidance head editing, and masks.

Facial editing replaces the noisy working sample with q_sample(Y0, t) at
masked frames before each denoise; head editing follows the flagged
clean-signal injection scheme the head model was trained with. Both paths
end with a replacement at t=0 so masked output frames equal Y0 bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import AUDIO_DIM, MIN_FRAMES, STYLE_DIM, DenoiserModel, VariantError
from .diffusion import DiffusionSchedule, GuidanceConfig, cfg_combine, posterior_step, q_sample
from .io import KIND_FACE, KIND_HEAD, MotionSequence


class MaskError(ValueError):
    pass


@dataclass
class ImputationSpec:
    """Binary per-frame mask plus the values to impute where mask=1."""

    mask: np.ndarray                 # (N,) in {0,1}
    values: np.ndarray               # (N, C), finite wherever mask=1

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float32)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.mask.ndim != 1 or not np.all(np.isin(self.mask, (0.0, 1.0))):
            raise MaskError("mask must be a 1-D array of 0/1")
        if self.values.ndim != 2 or self.values.shape[0] != self.mask.size:
            raise MaskError("values must be (N, C) matching the mask length")
        if not np.all(np.isfinite(self.values[self.mask == 1.0])):
            raise MaskError("imputation values must be finite where mask=1")

    @property
    def weights(self) -> np.ndarray:
        return self.mask

    @classmethod
    def empty(cls, n: int, channels: int) -> "ImputationSpec":
        return cls(mask=np.zeros(n, np.float32),
                   values=np.zeros((n, channels), np.float32))


@dataclass
class SampleRequest:
    model: DenoiserModel
    length: int
    audio: np.ndarray | None = None          # (N, AUDIO_DIM); None = unconditional
    subject: str | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    seed: int = 0
    count: int = 1
    fps: float = 30.0

    def __post_init__(self):
        if self.length < MIN_FRAMES:
            raise ValueError(f"length must be >= {MIN_FRAMES}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.audio is not None and self.audio.shape != (self.length, AUDIO_DIM):
            raise ValueError(
                f"audio must be ({self.length}, {AUDIO_DIM}), got {self.audio.shape}")


# -- mask constructors ----------------------------------------------------------


def make_inbetween_mask(n: int, head_frac: float, tail_frac: float) -> np.ndarray:
    """Ones on the first ceil(head_frac*N) and last ceil(tail_frac*N) frames."""
    if head_frac < 0 or tail_frac < 0 or head_frac + tail_frac >= 1:
        raise MaskError("fractions must be non-negative and sum to < 1")
    mask = np.zeros(n, dtype=np.float32)
    n_head = math.ceil(head_frac * n)
    n_tail = math.ceil(tail_frac * n)
    if n_head:
        mask[:n_head] = 1.0
    if n_tail:
        mask[n - n_tail:] = 1.0
    return mask


def make_keyframe_mask(n: int, fps: float, rate_per_sec: float, seed: int = 0) -> np.ndarray:
    """floor(rate*N/fps) distinct keyframes, uniform without replacement."""
    if rate_per_sec < 0:
        raise MaskError("keyframe rate must be non-negative")
    count = int(rate_per_sec * n / fps)
    if count > n:
        raise MaskError(f"keyframe count {count} exceeds sequence length {n}")
    mask = np.zeros(n, dtype=np.float32)
    if count:
        rng = np.random.default_rng(seed)
        mask[rng.choice(n, size=count, replace=False)] = 1.0
    return mask


# -- internal helpers ------------------------------------------------------------


def _per_sample_rngs(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, i]) for i in range(count)]


def _audio_bcn(audio: np.ndarray | None, count: int, n: int) -> np.ndarray:
    if audio is None:
        return np.zeros((count, AUDIO_DIM, n), dtype=np.float32)
    return np.repeat(audio.T[None].astype(np.float32), count, axis=0)


def _predict(model: DenoiserModel, x, t: int, audio_b, style_b,
             guidance: GuidanceConfig, conditional: bool) -> np.ndarray:
    """x0 prediction with classifier-free guidance (audio zeroed for uncond)."""
    if model.config.variant == "facial":
        cond = model.forward(x, t, audio_b, style_b).data
    else:
        cond = model.forward(x, t, audio_b).data
    if not conditional or not guidance.enabled or guidance.scale == 1.0:
        return cond
    zero_audio = np.zeros_like(audio_b)
    if model.config.variant == "facial":
        uncond = model.forward(x, t, zero_audio, style_b).data
    else:
        uncond = model.forward(x, t, zero_audio).data
    return cfg_combine(uncond, cond, guidance)


# -- facial sampling and editing ---------------------------------------------------


def sample_facial(req: SampleRequest,
                  sched: DiffusionSchedule | None = None) -> list[MotionSequence]:
    """Draw req.count facial sequences by T reverse steps from white noise."""
    model = req.model
    if model.config.variant != "facial":
        raise VariantError("sample_facial requires a facial model")
    sched = sched or model.schedule()
    c = model.config.motion_channels
    n = req.length
    rngs = _per_sample_rngs(req.seed, req.count)
    conditional = req.audio is not None
    audio_b = _audio_bcn(req.audio, req.count, n)
    style = model.style_vector(req.subject)
    style_b = np.repeat(style[None], req.count, axis=0)

    x = np.stack([r.standard_normal((c, n)) for r in rngs]).astype(np.float32)
    for t in range(sched.T, 0, -1):
        pred = _predict(model, x, t, audio_b, style_b, req.guidance, conditional)
        noise = np.stack([r.standard_normal((c, n)) for r in rngs])
        x = posterior_step(x, pred, t, sched, noise).astype(np.float32)
    return [MotionSequence(x[i].T, fps=req.fps, kind=KIND_FACE,
                           subject=req.subject or "")
            for i in range(req.count)]


def edit_facial(model: DenoiserModel, base: MotionSequence, spec: ImputationSpec,
                audio: np.ndarray | None = None,
                guidance: GuidanceConfig | None = None, seed: int = 0,
                subject: str | None = None,
                sched: DiffusionSchedule | None = None,
                final_replace: bool = True) -> MotionSequence:
    """Regenerate the unmasked frames of a facial sequence.

    At every step t the working sample is overwritten with
    q_sample(Y0, t) at masked frames before denoising; with final_replace
    (default) masked output frames equal Y0 bit-exactly.
    """
    if model.config.variant != "facial":
        raise VariantError("edit_facial requires a facial model")
    n, c = base.data.shape
    if spec.mask.size != n or spec.values.shape != (n, c):
        raise MaskError("imputation spec does not match the base sequence shape")
    sched = sched or model.schedule()
    guidance = guidance or GuidanceConfig()
    rng = np.random.default_rng(seed)
    conditional = audio is not None
    audio_b = _audio_bcn(audio, 1, n)
    style_b = model.style_vector(subject or base.subject)[None]
    m = spec.mask[None, None, :]                      # broadcast over (B, C, N)
    y0 = spec.values.T[None].astype(np.float32)

    x = rng.standard_normal((1, c, n)).astype(np.float32)
    for t in range(sched.T, 0, -1):
        eps = rng.standard_normal(y0.shape).astype(np.float32)
        x = (1.0 - m) * x + m * q_sample(y0, t, eps, sched)
        pred = _predict(model, x, t, audio_b, style_b, guidance, conditional)
        noise = rng.standard_normal(x.shape)
        x = posterior_step(x, pred, t, sched, noise).astype(np.float32)
    if final_replace:
        x = (1.0 - m) * x + m * y0
    return MotionSequence(x[0].T, fps=base.fps, kind=KIND_FACE, subject=base.subject)


# -- head sampling (sparse guidance) -------------------------------------------------


def sample_head_sgdiff(model: DenoiserModel, audio: np.ndarray | None,
                       spec: ImputationSpec | None = None, seed: int = 0,
                       guidance: GuidanceConfig | None = None,
                       sched: DiffusionSchedule | None = None,
                       fps: float = 30.0,
                       length: int | None = None,
                       collect_flagged_errors: bool = False,
                       flagged_injection: bool = True):
    """Sparse-guidance head sampling.

    Before each denoise the flagged clean signal replaces the working sample
    at masked frames (flag channel 1 there, 0 elsewhere); the x0 prediction
    is re-masked with Y0 before the posterior step. Output frames at mask=1
    equal Y0 exactly.

    With collect_flagged_errors=True also returns the mean pre-replacement
    prediction MSE at flagged frames across all steps (the guidance-neglect
    statistic).

    flagged_injection=False switches to the plain imputation baseline:
    masked frames are overwritten with the *noised* clean signal
    q_sample(Y0, t) and the flag channel stays 0 — the scheme a model
    trained without sparse guidance expects.
    """
    if model.config.variant != "head":
        raise VariantError("sample_head_sgdiff requires a head model")
    if audio is not None:
        n = audio.shape[0]
    elif spec is not None:
        n = spec.mask.size
    elif length is not None:
        n = length
    else:
        raise ValueError("need audio, an imputation spec, or an explicit length")
    if spec is None:
        spec = ImputationSpec.empty(n, 3)
    if spec.mask.size != n or spec.values.shape[1] != 3:
        raise MaskError("imputation spec does not match the head sequence shape")
    sched = sched or model.schedule()
    guidance = guidance or GuidanceConfig(scale=1.0)
    rng = np.random.default_rng(seed)
    conditional = audio is not None
    audio_b = _audio_bcn(audio, 1, n)
    m1 = spec.mask[None, None, :]
    y0 = spec.values.T[None].astype(np.float32)
    y0_flag = np.concatenate([y0, np.ones((1, 1, n), np.float32)], axis=1)
    m4 = np.repeat(m1, 4, axis=1)

    y = rng.standard_normal((1, 3, n)).astype(np.float32)
    flagged_errors: list[float] = []
    has_flagged = bool(spec.mask.sum())
    for t in range(sched.T, 0, -1):
        y_flag = np.concatenate([y, np.zeros((1, 1, n), np.float32)], axis=1)
        if flagged_injection:
            net_in = (1.0 - m4) * y_flag + m4 * y0_flag
        else:
            eps = rng.standard_normal(y0.shape).astype(np.float32)
            y_imp = (1.0 - m1) * y + m1 * q_sample(y0, t, eps, sched)
            net_in = np.concatenate(
                [y_imp, np.zeros((1, 1, n), np.float32)], axis=1).astype(np.float32)
        pred = _predict(model, net_in, t, audio_b, None, guidance, conditional)
        if collect_flagged_errors and has_flagged:
            sel = spec.mask == 1.0
            flagged_errors.append(float(((pred[0].T[sel] - spec.values[sel]) ** 2).mean()))
        pred = (1.0 - m1) * pred + m1 * y0
        noise = rng.standard_normal(y.shape)
        y = posterior_step(y, pred, t, sched, noise).astype(np.float32)
    y = (1.0 - m1) * y + m1 * y0
    seq = MotionSequence(y[0].T, fps=fps, kind=KIND_HEAD)
    if collect_flagged_errors:
        return seq, (float(np.mean(flagged_errors)) if flagged_errors else 0.0)
    return seq


# -- composition and reporting --------------------------------------------------------


@dataclass
class HolisticAnimation:
    """Paired facial + head tracks of equal length and fps."""

    face: MotionSequence
    head: MotionSequence

    def split(self) -> tuple[MotionSequence, MotionSequence]:
        return self.face, self.head

    @property
    def fps(self) -> float:
        return self.face.fps


def compose_holistic(face: MotionSequence, head: MotionSequence) -> HolisticAnimation:
    if face.frames != head.frames:
        raise ValueError(f"length mismatch: face {face.frames} vs head {head.frames}")
    if face.fps != head.fps:
        raise ValueError(f"fps mismatch: face {face.fps} vs head {head.fps}")
    if head.kind != KIND_HEAD:
        raise ValueError("second track must be a head sequence")
    return HolisticAnimation(face=face, head=head)


def boundary_smoothness(seq: MotionSequence, mask: np.ndarray) -> dict:
    """Max frame-delta across mask boundaries over median generated delta.

    Ratios above 3.0 set the warning flag; the report is advisory, not an
    error.
    """
    mask = np.asarray(mask)
    deltas = np.linalg.norm(np.diff(seq.data, axis=0), axis=1)
    boundary = np.flatnonzero(mask[:-1] != mask[1:])
    generated = np.flatnonzero((mask[:-1] == 0) & (mask[1:] == 0))
    med = float(np.median(deltas[generated])) if generated.size else float("nan")
    mx = float(deltas[boundary].max()) if boundary.size else 0.0
    ratio = mx / med if med and np.isfinite(med) and med > 0 else 0.0
    return {
        "max_boundary_delta": mx,
        "median_generated_delta": med,
        "ratio": float(ratio),
        "warning": bool(ratio > 3.0),
    }
