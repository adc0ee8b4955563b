"""Motion sequence and feature file formats.

MSEQ/1: 8-byte magic "3DIFMSEQ", version u32, kind u8, N u32, C u32, fps f32,
length-prefixed UTF-8 subject id, little-endian f32 payload (row-major),
trailing CRC32 over everything after the magic.

FEAT/1: same envelope with magic "3DIFFEAT", fixed C=768 and a source-fps
field instead of kind/subject.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MSEQ_MAGIC = b"3DIFMSEQ"
FEAT_MAGIC = b"3DIFFEAT"
FORMAT_VERSION = 1

KIND_FACE = "face_displacements"
KIND_HEAD = "head_axis_angle"
_KIND_TAGS = {KIND_FACE: 0, KIND_HEAD: 1}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

FEATURE_CHANNELS = 768


class FormatError(ValueError):
    """Malformed sequence/feature file (bad magic, header, or truncation)."""


class ChecksumError(FormatError):
    """Payload does not match the stored CRC32."""


@dataclass
class MotionSequence:
    """An N-frame, C-channel real-valued trajectory with fps metadata."""

    data: np.ndarray                 # (N, C) float32
    fps: float = 30.0
    kind: str = KIND_FACE
    subject: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"sequence data must be (N, C), got {self.data.shape}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.kind not in _KIND_TAGS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if self.kind == KIND_HEAD and self.channels != 3:
            raise ValueError("head sequences must have 3 channels")
        if self.kind == KIND_FACE and self.channels % 3 != 0:
            raise ValueError("face sequences must have D*3 channels")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.fps


def write_sequence(path, seq: MotionSequence) -> None:
    subject = seq.subject.encode("utf-8")
    body = struct.pack("<IBIIfI", FORMAT_VERSION, _KIND_TAGS[seq.kind],
                       seq.frames, seq.channels, seq.fps, len(subject))
    body += subject
    body += seq.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MSEQ_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def read_sequence(path) -> MotionSequence:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MSEQ_MAGIC:
        raise FormatError(f"bad magic in {path}")
    body, stored = blob[8:-4], blob[-4:]
    if len(blob) < 12 + struct.calcsize("<IBIIfI"):
        raise FormatError(f"truncated file {path}")
    if zlib.crc32(body) != struct.unpack("<I", stored)[0]:
        raise ChecksumError(f"checksum mismatch in {path}")
    try:
        version, tag, n, c, fps, slen = struct.unpack_from("<IBIIfI", body, 0)
    except struct.error as exc:
        raise FormatError(f"malformed header in {path}: {exc}") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported MSEQ version {version}")
    if tag not in _TAG_KINDS:
        raise FormatError(f"unknown sequence kind tag {tag}")
    off = struct.calcsize("<IBIIfI")
    subject = body[off:off + slen].decode("utf-8")
    payload = body[off + slen:]
    if len(payload) != n * c * 4:
        raise FormatError(
            f"payload length {len(payload)} disagrees with header shape ({n}, {c})")
    data = np.frombuffer(payload, dtype="<f4").reshape(n, c).copy()
    return MotionSequence(data=data, fps=fps, kind=_TAG_KINDS[tag], subject=subject)


def write_sequence_text(path, seq: MotionSequence) -> None:
    """Plain-text export for plotting: one frame per line, space-separated."""
    np.savetxt(path, seq.data, fmt="%.8g")


def write_features(path, features: np.ndarray, src_fps: float) -> None:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != FEATURE_CHANNELS:
        raise FormatError(f"features must be (N, {FEATURE_CHANNELS})")
    body = struct.pack("<IIIf", FORMAT_VERSION, features.shape[0],
                       features.shape[1], src_fps)
    body += features.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def import_features(path) -> tuple[np.ndarray, float]:
    """Read a FEAT/1 file; returns (raw (N, 768) features, source fps)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 + struct.calcsize("<IIIf"):
        raise FormatError(f"truncated or empty feature file {path}")
    if blob[:8] != FEAT_MAGIC:
        raise FormatError(f"bad magic in {path}")
    body, stored = blob[8:-4], blob[-4:]
    if zlib.crc32(body) != struct.unpack("<I", stored)[0]:
        raise ChecksumError(f"checksum mismatch in {path}")
    version, n, c, src_fps = struct.unpack_from("<IIIf", body, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported FEAT version {version}")
    if c != FEATURE_CHANNELS:
        raise FormatError(f"expected {FEATURE_CHANNELS} channels, got {c}")
    payload = body[struct.calcsize("<IIIf"):]
    if len(payload) != n * c * 4:
        raise FormatError("payload length disagrees with header shape")
    if n == 0:
        raise FormatError("feature file contains no frames")
    return np.frombuffer(payload, dtype="<f4").reshape(n, c).copy(), src_fps
