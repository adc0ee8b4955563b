"""Fully convolutional x0-predicting denoisers (facial and head variants).

Both networks are 3-level temporal conv U-nets with stride-2 downsampling,
midpoint-linear upsampling, per-frame group normalization and SiLU. The
conditions (audio features, style vector, time-step embedding) are
concatenated channel-wise at the input of every level. The head variant adds
encoder-decoder skip connections and one extra input channel carrying the
0/1 guidance flag.

The receptive field is 27 frames, below the 30-frame training window.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

MIN_FRAMES = 8

AUDIO_DIM = 64
STYLE_DIM = 16
TEMB_DIM = 16
RAW_FEATURE_DIM = 768

CHECKPOINT_MAGIC = b"3DIF"
CHECKPOINT_VERSION = 1


class VariantError(ValueError):
    """Model variant does not match the requested operation."""


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint container."""


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "facial"            # "facial" | "head"
    motion_channels: int = 48          # D*3 for facial, 3 for head
    widths: tuple[int, int, int] = (64, 128, 256)
    kernel: int = 3
    norm_groups: int = 8
    schedule_T: int = 500              # diffusion schedule the model was trained for
    schedule_kind: str = "cosine"

    def __post_init__(self):
        if self.variant not in ("facial", "head"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        for w in self.widths:
            if w % self.norm_groups:
                raise ValueError(f"width {w} not divisible by {self.norm_groups} groups")

    @property
    def skip_connections(self) -> bool:
        return self.variant == "head"

    @property
    def in_channels(self) -> int:
        # the head variant carries the guidance flag as an extra channel
        return self.motion_channels + (1 if self.variant == "head" else 0)

    @property
    def gate_channels(self) -> int:
        # the head variant additionally feeds motion * flag products, which
        # make the injected clean signal linearly accessible to the convs
        return self.motion_channels if self.variant == "head" else 0

    @property
    def cond_channels(self) -> int:
        if self.variant == "head":
            return AUDIO_DIM + TEMB_DIM
        return AUDIO_DIM + STYLE_DIM + TEMB_DIM


@dataclass
class ConditionSet:
    """Per-frame audio features plus optional style vector.

    null_flag marks the unconditional form: audio is treated as zeros.
    """

    audio: np.ndarray                      # (N, AUDIO_DIM)
    style: np.ndarray | None = None        # (STYLE_DIM,)
    null_flag: bool = False

    def effective_audio(self) -> np.ndarray:
        if self.null_flag:
            return np.zeros_like(self.audio)
        return self.audio


def time_embedding(t: int, dim: int = TEMB_DIM) -> np.ndarray:
    """Sinusoidal embedding of the diffusion step; deterministic in t."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float64)


def _kaiming(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class DenoiserModel:
    """Parameter container plus forward pass for one network variant."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameters ------------------------------------------------------

    def _add_conv(self, rng, name: str, cin: int, cout: int, k: int, norm: bool):
        self.params[f"{name}.w"] = Tensor(
            _kaiming(rng, (cout, cin, k), cin * k, self.dtype), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(
            np.zeros(cout, dtype=self.dtype), requires_grad=True)
        if norm:
            self.params[f"{name}.gn_g"] = Tensor(
                np.ones(cout, dtype=self.dtype), requires_grad=True)
            self.params[f"{name}.gn_b"] = Tensor(
                np.zeros(cout, dtype=self.dtype), requires_grad=True)

    def _init_params(self, rng):
        cfg = self.config
        w1, w2, w3 = cfg.widths
        k = cfg.kernel
        cc = cfg.cond_channels
        self._add_conv(rng, "enc1", cfg.in_channels + cfg.gate_channels + cc,
                       w1, k, norm=True)
        self._add_conv(rng, "down1", w1, w2, k, norm=False)
        self._add_conv(rng, "mix2", w2 + cc, w2, 1, norm=True)
        self._add_conv(rng, "down2", w2, w3, k, norm=False)
        self._add_conv(rng, "mix3", w3 + cc, w3, 1, norm=True)
        dec2_in = w3 + (w2 if cfg.skip_connections else 0)
        self._add_conv(rng, "dec2", dec2_in, w2, k, norm=True)
        dec1_in = w2 + (w1 if cfg.skip_connections else 0)
        self._add_conv(rng, "dec1", dec1_in, w1, k, norm=True)
        self._add_conv(rng, "out", w1, cfg.motion_channels, 1, norm=False)
        self.params["temb.w"] = Tensor(
            _kaiming(rng, (TEMB_DIM, TEMB_DIM), TEMB_DIM, self.dtype), requires_grad=True)
        self.params["temb.b"] = Tensor(
            np.zeros(TEMB_DIM, dtype=self.dtype), requires_grad=True)

    def add_style(self, subject: str, rng: np.random.Generator | None = None):
        """Register a fresh learned style embedding for one subject."""
        if self.config.variant != "facial":
            raise VariantError("style embeddings belong to the facial variant")
        rng = rng or np.random.default_rng(0)
        self.params[f"style.{subject}"] = Tensor(
            (rng.standard_normal(STYLE_DIM) * 0.1).astype(self.dtype), requires_grad=True)

    def style_subjects(self) -> list[str]:
        return sorted(n.split(".", 1)[1] for n in self.params if n.startswith("style."))

    def style_vector(self, subject: str | None) -> np.ndarray:
        if subject is None or f"style.{subject}" not in self.params:
            return np.zeros(STYLE_DIM, dtype=self.dtype)
        return self.params[f"style.{subject}"].data

    def style_batch(self, subjects: list[str | None]) -> Tensor:
        """Stack style embeddings as a (B, STYLE_DIM) Tensor connected to the
        learned parameters, so gradients reach them during training."""
        rows = []
        for s in subjects:
            key = f"style.{s}"
            if s is not None and key in self.params:
                rows.append(T.reshape(self.params[key], (1, STYLE_DIM)))
            else:
                rows.append(Tensor(np.zeros((1, STYLE_DIM), dtype=self.dtype)))
        return T.concat(rows, axis=0)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def schedule(self):
        from .diffusion import build_schedule
        return build_schedule(self.config.schedule_T, self.config.schedule_kind)

    def clone(self) -> "DenoiserModel":
        other = DenoiserModel.__new__(DenoiserModel)
        other.config = self.config
        other.dtype = self.dtype
        other.params = {n: Tensor(p.data.copy(), requires_grad=True)
                        for n, p in self.params.items()}
        return other

    def astype(self, dtype) -> "DenoiserModel":
        other = self.clone()
        other.dtype = np.dtype(dtype)
        for p in other.params.values():
            p.data = p.data.astype(dtype)
        return other

    # -- forward ------------------------------------------------------------

    def _block(self, name: str, x: Tensor, stride: int = 1, norm: bool = True,
               act: bool = True) -> Tensor:
        w = self.params[f"{name}.w"]
        pad = (w.shape[2] - 1) // 2
        h = T.conv1d(x, w, self.params[f"{name}.b"], stride=stride, pad=pad)
        if norm:
            h = T.group_norm(h, self.params[f"{name}.gn_g"], self.params[f"{name}.gn_b"],
                             self.config.norm_groups)
        if act:
            h = T.silu(h)
        return h

    def forward(self, x, t: int, audio, style=None) -> Tensor:
        """Batched forward pass.

        x: (B, C_in, N); audio: (B, AUDIO_DIM, N); style: (B, STYLE_DIM) or
        None (zeros). Returns the x0 prediction as (B, motion_channels, N).
        """
        cfg = self.config
        x = T.as_tensor(x, dtype=self.dtype)
        audio = T.as_tensor(audio, dtype=self.dtype)
        b, c, n = x.shape
        if c != cfg.in_channels:
            raise VariantError(
                f"expected {cfg.in_channels} input channels for {cfg.variant}, got {c}")
        if audio.shape != (b, AUDIO_DIM, n):
            raise ValueError(f"audio must be (B, {AUDIO_DIM}, N), got {audio.shape}")

        padded = 0
        if n < MIN_FRAMES:
            padded = MIN_FRAMES - n
            x = T.concat([x, Tensor(np.zeros((b, c, padded), dtype=self.dtype))], axis=2)
            audio = T.concat(
                [audio, Tensor(np.zeros((b, AUDIO_DIM, padded), dtype=self.dtype))], axis=2)
            n = MIN_FRAMES

        temb_raw = Tensor(time_embedding(t)[None, :].astype(self.dtype))
        temb = T.matmul(temb_raw, self.params["temb.w"]) + self.params["temb.b"]
        zeros_t = Tensor(np.zeros((b, TEMB_DIM, n), dtype=self.dtype))
        temb_map = T.reshape(temb, (1, TEMB_DIM, 1)) + zeros_t

        cond_parts = [audio, temb_map]
        if cfg.variant == "facial":
            if style is None:
                style = Tensor(np.zeros((b, STYLE_DIM), dtype=self.dtype))
            else:
                style = T.as_tensor(style, dtype=self.dtype)
            if style.shape != (b, STYLE_DIM):
                raise ValueError(f"style must be (B, {STYLE_DIM}), got {style.shape}")
            zeros_s = Tensor(np.zeros((b, STYLE_DIM, n), dtype=self.dtype))
            style_map = T.reshape(style, (b, STYLE_DIM, 1)) + zeros_s
            cond_parts.insert(1, style_map)
        cond1 = T.concat(cond_parts, axis=1)
        cond2 = T.avg_pool2(cond1)
        cond3 = T.avg_pool2(cond2)

        x_in = x
        if cfg.gate_channels:
            motion = T.narrow(x, 0, cfg.motion_channels, axis=1)
            flag = T.narrow(x, cfg.motion_channels, 1, axis=1)
            x_in = T.concat([x, motion * flag], axis=1)
        h1 = self._block("enc1", T.concat([x_in, cond1], axis=1))
        d1 = self._block("down1", h1, stride=2, norm=False, act=False)
        h2 = self._block("mix2", T.concat([d1, cond2], axis=1))
        d2 = self._block("down2", h2, stride=2, norm=False, act=False)
        h3 = self._block("mix3", T.concat([d2, cond3], axis=1))

        u2 = T.upsample_linear2(h3, h2.shape[2])
        if cfg.skip_connections:
            u2 = T.concat([u2, h2], axis=1)
        g2 = self._block("dec2", u2)
        u1 = T.upsample_linear2(g2, n)
        if cfg.skip_connections:
            u1 = T.concat([u1, h1], axis=1)
        g1 = self._block("dec1", u1)
        out = self._block("out", g1, norm=False, act=False)
        if padded:
            out = T.narrow(out, 0, n - padded, axis=2)
        return out


def facial_forward(x_t: np.ndarray, t: int, cond: ConditionSet,
                   model: DenoiserModel, subject: str | None = None) -> np.ndarray:
    """x0 prediction for one (N, C) facial sequence."""
    if model.config.variant != "facial":
        raise VariantError("facial_forward requires the facial variant")
    n = x_t.shape[0]
    audio = cond.effective_audio()
    if audio.shape[0] != n:
        raise ValueError("audio frame count must match motion frame count")
    style = cond.style if cond.style is not None else model.style_vector(subject)
    out = model.forward(x_t.T[None], t, audio.T[None], style[None])
    return out.data[0].T


def head_forward(y_t_flagged: np.ndarray, t: int, audio: np.ndarray,
                 model: DenoiserModel) -> np.ndarray:
    """x0 prediction for one (N, 4) flagged head sequence; returns (N, 3)."""
    if model.config.variant != "head":
        raise VariantError("head_forward requires the head variant")
    flags = y_t_flagged[:, -1]
    if not np.all(np.isin(flags, (0.0, 1.0))):
        raise ValueError("guidance flag channel must be 0 or 1 per frame")
    out = model.forward(y_t_flagged.T[None], t, audio.T[None])
    return out.data[0].T


# -- audio projection ----------------------------------------------------------


@dataclass
class AudioProjection:
    """Trainable affine map from raw 768-channel features to 64 channels."""

    w: np.ndarray
    b: np.ndarray

    @classmethod
    def create(cls, seed: int = 0) -> "AudioProjection":
        rng = np.random.default_rng(seed)
        return cls(w=_kaiming(rng, (RAW_FEATURE_DIM, AUDIO_DIM), RAW_FEATURE_DIM,
                              np.float32),
                   b=np.zeros(AUDIO_DIM, dtype=np.float32))


def project_audio(raw: np.ndarray, src_fps: float, dst_fps: float,
                  proj: AudioProjection) -> np.ndarray:
    """Resample raw (N_raw, 768) features to dst_fps and project to 64 channels."""
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ValueError("raw features must be a non-empty (N_raw, C) array")
    if raw.shape[1] != RAW_FEATURE_DIM:
        raise ValueError(f"expected {RAW_FEATURE_DIM} channels, got {raw.shape[1]}")
    if src_fps <= 0 or dst_fps <= 0:
        raise ValueError("fps values must be positive")
    n_out = max(1, round(raw.shape[0] * dst_fps / src_fps))
    if n_out == raw.shape[0]:
        resampled = raw
    else:
        resampled = T.resample_linear(Tensor(raw.T, dtype=raw.dtype), n_out).data.T
    return resampled @ proj.w + proj.b


# -- checkpoint container --------------------------------------------------------


def save_checkpoint(model: DenoiserModel, path) -> None:
    """Versioned binary container: magic, version, variant, descriptor, f32 payload, CRC32."""
    names = sorted(model.params)
    descriptor = {
        "config": {
            "variant": model.config.variant,
            "motion_channels": model.config.motion_channels,
            "widths": list(model.config.widths),
            "kernel": model.config.kernel,
            "norm_groups": model.config.norm_groups,
            "schedule_T": model.config.schedule_T,
            "schedule_kind": model.config.schedule_kind,
        },
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    desc = json.dumps(descriptor).encode("utf-8")
    payload = b"".join(
        model.params[n].data.astype("<f4").tobytes() for n in names)
    variant_tag = 0 if model.config.variant == "facial" else 1
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IB", CHECKPOINT_VERSION, variant_tag))
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path) -> DenoiserModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    try:
        version, variant_tag = struct.unpack_from("<IB", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack_from("<I", blob, 9)
        if len(blob) < 13 + dlen:
            raise CheckpointError("truncated checkpoint descriptor")
        desc = json.loads(blob[13:13 + dlen].decode("utf-8"))
        off = 13 + dlen
        (plen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        payload = blob[off:off + plen]
        if len(payload) != plen:
            raise CheckpointError("truncated parameter payload")
        (crc,) = struct.unpack_from("<I", blob, off + plen)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint checksum mismatch")

    cfg = ModelConfig(variant=desc["config"]["variant"],
                      motion_channels=desc["config"]["motion_channels"],
                      widths=tuple(desc["config"]["widths"]),
                      kernel=desc["config"]["kernel"],
                      norm_groups=desc["config"]["norm_groups"],
                      schedule_T=desc["config"].get("schedule_T", 500),
                      schedule_kind=desc["config"].get("schedule_kind", "cosine"))
    if (cfg.variant == "head") != bool(variant_tag):
        raise CheckpointError("variant tag disagrees with descriptor")
    model = DenoiserModel.__new__(DenoiserModel)
    model.config = cfg
    model.dtype = np.dtype(np.float32)
    model.params = {}
    off2 = 0
    for entry in desc["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=off2).reshape(shape).copy()
        off2 += count * 4
        model.params[entry["name"]] = Tensor(arr, requires_grad=True)
    if off2 != len(payload):
        raise CheckpointError("parameter payload length disagrees with descriptor")
    return model
