"""Losses, window-cropped training loops, and person-specific fine-tuning.

Facial training minimizes mse + lambda_vel * velocity on random 30-frame
crops with 10% audio-condition dropout. Head training additionally injects
clean frames with a concatenated 0/1 guidance flag (sparse guidance) and
adds a mask loss restricted to the injected frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .adam import AdamState, adam_step
from .denoiser import AUDIO_DIM, STYLE_DIM, DenoiserModel, ModelConfig
from .diffusion import DiffusionSchedule, build_schedule, q_sample
from .tensor import Tensor
from .toydata import CorpusItem, ToyCorpus


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite or exceeded 10x its initial value."""


# -- losses ----------------------------------------------------------------


def loss_simple(x0, x_hat0) -> Tensor:
    """Mean squared error over all entries."""
    x0 = T.as_tensor(x0)
    x_hat0 = T.as_tensor(x_hat0)
    if x0.shape != x_hat0.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x_hat0.shape}")
    return T.tmean((x_hat0 - x0) ** 2.0)


def loss_velocity(x0, x_hat0, frame_axis: int = 0) -> Tensor:
    """Mean squared difference of frame-to-frame deltas."""
    x0 = T.as_tensor(x0)
    x_hat0 = T.as_tensor(x_hat0)
    n = x0.shape[frame_axis]
    if n < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    d0 = T.narrow(x0, 1, n - 1, frame_axis) - T.narrow(x0, 0, n - 1, frame_axis)
    d1 = T.narrow(x_hat0, 1, n - 1, frame_axis) - T.narrow(x_hat0, 0, n - 1, frame_axis)
    return T.tmean((d1 - d0) ** 2.0)


def loss_mask(y0, y_hat0, w) -> Tensor:
    """Squared error restricted to w=1 frames, mean over all elements.

    w broadcasts over channels: pass (N,) against (N, C) sequences or
    (B, 1, N) against (B, C, N) batches.
    """
    y0 = T.as_tensor(y0)
    y_hat0 = T.as_tensor(y_hat0)
    if y0.shape != y_hat0.shape:
        raise ValueError(f"shape mismatch: {y0.shape} vs {y_hat0.shape}")
    w = np.asarray(w, dtype=y0.dtype)
    if w.ndim == 1:
        w = w[:, None] if y0.data.ndim == 2 else w[None, None, :]
    residual = (y_hat0 - y0) * Tensor(w)
    return T.tmean(residual ** 2.0)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    lr: float = 1e-4
    window: int = 30                   # 30 for facial, 300 for head
    dropout: float = 0.10
    lambda_vel: float = 10.0
    lambda_mask: float = 1.0
    seed: int = 0
    widths: tuple[int, int, int] = (64, 128, 256)
    kernel: int = 3
    schedule_T: int = 500
    schedule_kind: str = "cosine"

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must lie in [0, 1]")
        if self.window < 2 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("invalid training configuration")

    def schedule(self) -> DiffusionSchedule:
        return build_schedule(self.schedule_T, self.schedule_kind)


HEAD_WINDOW_DEFAULT = 300


def toy_facial_config(**overrides) -> TrainConfig:
    """Desk-scale facial preset: small widths, short schedule, higher lr."""
    base = dict(iterations=2000, batch_size=16, window=30, lr=1e-3,
                widths=(48, 96, 128), schedule_T=50)
    base.update(overrides)
    return TrainConfig(**base)


def toy_head_config(**overrides) -> TrainConfig:
    """Desk-scale head preset.

    The high audio dropout and mask-loss weight keep the small network from
    leaning entirely on audio conditioning, so the guidance-injection
    pathway is actually exercised during training.
    """
    base = dict(iterations=3000, batch_size=8, window=96, lr=1e-3,
                widths=(32, 64, 96), schedule_T=50, dropout=0.5,
                lambda_mask=5.0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class GuidanceMaskSampler:
    """Random imputation masks for sparse-guidance training.

    inbetween: contiguous clean prefix/suffix totalling a uniform 5-50%
    fraction. keyframe: Bernoulli-placed single clean frames at 1-3 per
    second. mixed: 50/50 between the two. Every mask keeps at least one
    noisy frame.
    """

    family: str = "mixed"
    fps: float = 30.0

    def __post_init__(self):
        if self.family not in ("inbetween", "keyframe", "mixed", "zero"):
            raise ValueError(f"unknown mask family {self.family!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        family = self.family
        if family == "mixed":
            family = "inbetween" if rng.random() < 0.5 else "keyframe"
        mask = np.zeros(n, dtype=np.float32)
        if family == "zero":
            return mask
        if family == "inbetween":
            frac = rng.uniform(0.05, 0.5)
            head = rng.uniform(0.0, frac)
            n_head = int(round(head * n))
            n_tail = int(round((frac - head) * n))
            if n_head:
                mask[:n_head] = 1.0
            if n_tail:
                mask[-n_tail:] = 1.0
        else:
            rate = rng.uniform(1.0, 3.0)
            mask[rng.random(n) < rate / self.fps] = 1.0
        if mask.min() == 1.0:
            mask[rng.integers(n)] = 0.0
        return mask


# -- batching ------------------------------------------------------------------


def _items(corpus) -> list[CorpusItem]:
    return corpus.items if isinstance(corpus, ToyCorpus) else list(corpus)


def _crop_batch(items: list[CorpusItem], cfg: TrainConfig, rng, kind: str):
    """Random window crops: (x0 (B,C,N), audio (B,64,N), subjects)."""
    xs, auds, subjects = [], [], []
    for _ in range(cfg.batch_size):
        item = items[rng.integers(len(items))]
        track = item.face if kind == "facial" else item.head
        n = track.frames
        if n < cfg.window:
            raise ValueError(
                f"corpus sequence shorter ({n}) than training window ({cfg.window})")
        start = rng.integers(n - cfg.window + 1)
        xs.append(track.data[start:start + cfg.window].T)
        auds.append(item.features[start:start + cfg.window].T)
        subjects.append(item.subject)
    return (np.stack(xs).astype(np.float32),
            np.stack(auds).astype(np.float32), subjects)


def _dropout_audio(audio: np.ndarray, cfg: TrainConfig, rng) -> np.ndarray:
    if cfg.dropout <= 0.0:
        return audio
    keep = rng.random(audio.shape[0]) >= cfg.dropout
    return audio * keep[:, None, None].astype(audio.dtype)


def sgdiff_mix(y_t: np.ndarray, y0: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Flagged guidance injection: (1-M) * (y_t ++ 0) + M * (y0 ++ 1).

    y_t, y0: (B, C, N); mask: (B, 1, N). At mask=1 frames the network input
    equals the clean signal with flag 1; elsewhere the noisy signal with
    flag 0.
    """
    bsz, _, n = y_t.shape
    y_t_flag = np.concatenate([y_t, np.zeros((bsz, 1, n), y_t.dtype)], axis=1)
    y_0_flag = np.concatenate([y0, np.ones((bsz, 1, n), y0.dtype)], axis=1)
    return (1.0 - mask) * y_t_flag + mask * y_0_flag


# -- training loops -------------------------------------------------------------


@dataclass
class TrainResult:
    model: DenoiserModel
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    schedule: DiffusionSchedule | None = None

    def write_history(self, path) -> None:
        with open(path, "w") as f:
            f.write("# iteration loss_simple loss_vel loss_mask\n")
            for row in self.history:
                f.write(f"{row[0]} {row[1]:.8g} {row[2]:.8g} {row[3]:.8g}\n")


def smoothed_loss(history, lam: float = 0.05) -> tuple[float, float]:
    """(initial, final) exponentially smoothed total loss."""
    totals = [h[1] + h[2] + h[3] for h in history]
    ema = totals[0]
    for v in totals:
        ema = (1 - lam) * ema + lam * v
    return totals[0], ema


def _check_divergence(total: float, initial: float, it: int, history):
    if not np.isfinite(total):
        raise TrainingDivergedError(
            f"non-finite loss at iteration {it}; last rows: {history[-3:]}")
    if total > 10.0 * max(initial, 1e-8) and it > 20:
        raise TrainingDivergedError(
            f"loss {total:.4g} exceeds 10x initial {initial:.4g} at iteration {it}")


def train_facial(corpus, cfg: TrainConfig,
                 model: DenoiserModel | None = None) -> TrainResult:
    """Train (or continue training) the facial x0-predicting denoiser."""
    items = _items(corpus)
    if not items:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule()
    if model is None:
        c = items[0].face.channels
        model = DenoiserModel(
            ModelConfig(variant="facial", motion_channels=c,
                        widths=cfg.widths, kernel=cfg.kernel,
                        schedule_T=cfg.schedule_T, schedule_kind=cfg.schedule_kind),
            seed=cfg.seed)
        for subject in sorted({it.subject for it in items}):
            model.add_style(subject, rng)

    opt = AdamState(lr=cfg.lr)
    history: list[tuple[int, float, float, float]] = []
    initial = None
    for it in range(cfg.iterations):
        x0, audio, subjects = _crop_batch(items, cfg, rng, "facial")
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        x_t = q_sample(x0, t, eps, sched).astype(np.float32)
        audio_in = _dropout_audio(audio, cfg, rng)
        style = model.style_batch(subjects)

        pred = model.forward(x_t, t, audio_in, style)
        ls = loss_simple(x0, pred)
        lv = loss_velocity(x0, pred, frame_axis=2)
        loss = ls + cfg.lambda_vel * lv
        loss.backward()
        adam_step(model.params, {n: p.grad for n, p in model.params.items()
                                 if p.grad is not None}, opt)

        row = (it, ls.item(), lv.item(), 0.0)
        history.append(row)
        total = row[1] + cfg.lambda_vel * row[2]
        initial = total if initial is None else initial
        _check_divergence(total, initial, it, history)
    return TrainResult(model=model, history=history, schedule=sched)


def train_head_sgdiff(corpus, cfg: TrainConfig, masks: GuidanceMaskSampler,
                      model: DenoiserModel | None = None) -> TrainResult:
    """Sparse-guidance training of the head denoiser.

    Per iteration: noise the clean track, concatenate flag 0 to the noisy
    and flag 1 to the clean signal, mix the two via a random imputation mask,
    and optimize mse + lambda_vel * velocity + lambda_mask * masked mse.
    With the mask sampler forced to all-zeros this reduces to standard
    diffusion training with a constant-zero flag channel.
    """
    items = _items(corpus)
    if not items:
        raise ValueError("empty corpus")
    if items[0].head.channels != 3:
        raise ValueError("head corpus must carry 3-channel sequences")
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule()
    if model is None:
        model = DenoiserModel(
            ModelConfig(variant="head", motion_channels=3,
                        widths=cfg.widths, kernel=cfg.kernel,
                        schedule_T=cfg.schedule_T, schedule_kind=cfg.schedule_kind),
            seed=cfg.seed)

    opt = AdamState(lr=cfg.lr)
    history: list[tuple[int, float, float, float]] = []
    initial = None
    for it in range(cfg.iterations):
        y0, audio, _ = _crop_batch(items, cfg, rng, "head")
        bsz, _, n = y0.shape
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(y0.shape).astype(np.float32)
        y_t = q_sample(y0, t, eps, sched).astype(np.float32)

        mask = np.stack([masks.sample(rng, n) for _ in range(bsz)])[:, None, :].astype(np.float32)
        net_in = sgdiff_mix(y_t, y0, mask)
        audio_in = _dropout_audio(audio, cfg, rng)

        pred = model.forward(net_in, t, audio_in)
        ls = loss_simple(y0, pred)
        lv = loss_velocity(y0, pred, frame_axis=2)
        lm = loss_mask(y0, pred, mask)
        loss = ls + cfg.lambda_vel * lv + cfg.lambda_mask * lm
        loss.backward()
        adam_step(model.params, {n2: p.grad for n2, p in model.params.items()
                                 if p.grad is not None}, opt)

        row = (it, ls.item(), lv.item(), lm.item())
        history.append(row)
        total = row[1] + cfg.lambda_vel * row[2] + cfg.lambda_mask * row[3]
        initial = total if initial is None else initial
        _check_divergence(total, initial, it, history)
    return TrainResult(model=model, history=history, schedule=sched)


def finetune_personalize(model: DenoiserModel, ref_corpus, cfg: TrainConfig,
                         subject: str | None = None) -> TrainResult:
    """Fine-tune all parameters on a small single-subject reference set.

    A fresh style embedding is learned for the target subject; with
    iterations=0 the existing parameters are returned unchanged.
    """
    items = _items(ref_corpus)
    if not items:
        raise ValueError("empty reference corpus")
    subject = subject or items[0].subject
    tuned = model.clone()
    if f"style.{subject}" not in tuned.params:
        tuned.add_style(subject, np.random.default_rng(cfg.seed))
    if cfg.iterations == 0:
        return TrainResult(model=tuned, history=[], schedule=cfg.schedule())
    return train_facial(items, cfg, model=tuned)


def flagged_prediction_error(model: DenoiserModel, head: np.ndarray,
                             audio: np.ndarray, mask: np.ndarray,
                             sched: DiffusionSchedule, t_probes=None,
                             seed: int = 0, flagged_input: bool = True) -> float:
    """Prediction MSE at mask=1 frames under teacher-forced noising.

    For each probe t the clean track is noised with q_sample and passed
    through a single denoise. With flagged_input the network input mixes the
    clean signal at masked frames with flag 1 (sparse-guidance protocol);
    without it the input is the plain noised track with flag 0 (imputation
    protocol, where masked frames carry q_sample(Y0, t)). The returned value
    is the network's pre-replacement error at the masked frames — the
    statistic that exposes whether a model uses or neglects the guidance
    signal.
    """
    if model.config.variant != "head":
        raise ValueError("flagged_prediction_error requires a head model")
    mask = np.asarray(mask, dtype=np.float32)
    sel = mask == 1.0
    if not sel.any():
        raise ValueError("mask selects no frames")
    if t_probes is None:
        t_probes = tuple(max(1, round(f * sched.T)) for f in (0.2, 0.5, 0.8, 1.0))
    rng = np.random.default_rng(seed)
    n = head.shape[0]
    y0 = head.T[None].astype(np.float32)
    audio_b = audio.T[None].astype(np.float32)
    m = mask[None, None, :]
    errs = []
    for t in t_probes:
        t = min(int(t), sched.T)
        eps = rng.standard_normal(y0.shape).astype(np.float32)
        y_t = q_sample(y0, t, eps, sched).astype(np.float32)
        if flagged_input:
            net_in = sgdiff_mix(y_t, y0, m)
        else:
            net_in = np.concatenate(
                [y_t, np.zeros((1, 1, n), np.float32)], axis=1)
        pred = model.forward(net_in, t, audio_b)
        errs.append(float(((pred.data[0].T[sel] - head[sel]) ** 2).mean()))
    return float(np.mean(errs))


def evaluate_reconstruction(model: DenoiserModel, items, sched: DiffusionSchedule,
                            subject: str | None = None, t_probes=(5, 15, 30),
                            seed: int = 0, window: int | None = None) -> float:
    """Deterministic held-out x0-prediction MSE averaged over noise probes."""
    rng = np.random.default_rng(seed)
    errs = []
    for item in _items(items):
        track = item.face if model.config.variant == "facial" else item.head
        x0 = track.data.T[None]
        if window is not None and x0.shape[2] > window:
            x0 = x0[:, :, :window]
        audio = item.features[:x0.shape[2]].T[None].astype(np.float32)
        style = None
        if model.config.variant == "facial":
            style = model.style_vector(subject or item.subject)[None]
        for t in t_probes:
            t = min(t, sched.T)
            eps = rng.standard_normal(x0.shape).astype(np.float32)
            x_t = q_sample(x0, t, eps, sched).astype(np.float32)
            if model.config.variant == "head":
                flag = np.zeros((1, 1, x0.shape[2]), np.float32)
                net_in = np.concatenate([x_t, flag], axis=1)
                pred = model.forward(net_in, t, audio)
            else:
                pred = model.forward(x_t, t, audio, style)
            errs.append(float(((pred.data - x0) ** 2).mean()))
    return float(np.mean(errs))
