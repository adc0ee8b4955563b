"""HTTP service exposing synthesis, editing, and metrics over JSON.

Models and sequences are discovered by scanning a run directory for
``*.ckpt`` and ``*.mseq`` files. Checkpoints are loaded once and shared
immutably; every request owns its own random stream, so concurrent requests
complete independently.
"""

from __future__ import annotations

import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..denoiser import AUDIO_DIM, DenoiserModel, VariantError, load_checkpoint
from ..diffusion import GuidanceConfig
from ..io import KIND_FACE, KIND_HEAD, MotionSequence, read_sequence
from ..metrics import (BeatList, beat_align, detect_beats, diversity,
                       lip_sync_dtw, toy_lip_region)
from ..sampling import (ImputationSpec, MaskError, SampleRequest,
                        boundary_smoothness, edit_facial, sample_facial,
                        sample_head_sgdiff)
from . import schemas


class ServiceError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(detail)


class Registry:
    """Read-only view of the checkpoints and sequences in a run directory."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self._models: dict[str, DenoiserModel] = {}

    def model_names(self) -> list[str]:
        return sorted(p.stem for p in self.run_dir.glob("*.ckpt"))

    def model(self, name: str) -> DenoiserModel:
        if name not in self._models:
            path = self.run_dir / f"{name}.ckpt"
            if not path.exists():
                raise ServiceError(404, f"unknown model {name!r}")
            self._models[name] = load_checkpoint(path)
        return self._models[name]

    def sequence_ids(self) -> list[str]:
        return sorted(p.stem for p in self.run_dir.glob("*.mseq"))

    def sequence(self, seq_id: str) -> MotionSequence:
        path = self.run_dir / f"{seq_id}.mseq"
        if not path.exists():
            raise ServiceError(404, f"unknown sequence {seq_id!r}")
        return read_sequence(path)


def _frames(data: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in data]


def _audio_array(audio, length: int) -> np.ndarray | None:
    if audio is None:
        return None
    arr = np.asarray(audio, dtype=np.float32)
    if arr.ndim != 2 or arr.shape != (length, AUDIO_DIM):
        raise ServiceError(
            400, f"audio must be ({length}, {AUDIO_DIM}), got {list(arr.shape)}")
    return arr


def create_app(run_dir) -> FastAPI:
    app = FastAPI(title="motiondiff service")
    registry = Registry(run_dir)
    app.state.registry = registry

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        job_id = str(uuid.uuid4())
        return JSONResponse(status_code=500,
                            content={"detail": str(exc), "job_id": job_id})

    @app.get("/models", response_model=list[schemas.ModelInfo])
    def list_models():
        infos = []
        for name in registry.model_names():
            model = registry.model(name)
            cfg = model.config
            infos.append(schemas.ModelInfo(
                name=name, variant=cfg.variant,
                motion_channels=cfg.motion_channels,
                schedule_T=cfg.schedule_T, schedule_kind=cfg.schedule_kind,
                subjects=model.style_subjects() if cfg.variant == "facial" else []))
        return infos

    @app.get("/sequences", response_model=list[schemas.SequenceInfo])
    def list_sequences():
        infos = []
        for seq_id in registry.sequence_ids():
            seq = registry.sequence(seq_id)
            infos.append(schemas.SequenceInfo(
                id=seq_id, kind=seq.kind, frames=seq.frames,
                channels=seq.channels, fps=seq.fps, subject=seq.subject))
        return infos

    @app.get("/sequences/{seq_id}", response_model=schemas.SequencePayload)
    def get_sequence(seq_id: str):
        seq = registry.sequence(seq_id)
        return schemas.SequencePayload(
            id=seq_id, kind=seq.kind, frames=seq.frames, channels=seq.channels,
            fps=seq.fps, subject=seq.subject, data=_frames(seq.data))

    @app.post("/synthesize", response_model=schemas.SynthesizeResponse)
    def synthesize(req: schemas.SynthesizeRequest):
        start = time.perf_counter()
        model = registry.model(req.model)
        audio = _audio_array(req.audio, req.length)
        guidance = GuidanceConfig(scale=req.scale)
        try:
            if model.config.variant == "facial":
                sample_req = SampleRequest(
                    model=model, length=req.length, audio=audio,
                    subject=req.subject, guidance=guidance, seed=req.seed,
                    count=req.count, fps=req.fps)
                seqs = sample_facial(sample_req)
            else:
                seqs = [sample_head_sgdiff(model, audio, length=req.length,
                                           seed=req.seed + i, guidance=guidance,
                                           fps=req.fps)
                        for i in range(req.count)]
        except (VariantError, MaskError) as exc:
            raise ServiceError(409, str(exc)) from None
        except ValueError as exc:
            raise ServiceError(400, str(exc)) from None
        elapsed = (time.perf_counter() - start) * 1000.0
        return schemas.SynthesizeResponse(
            request=req, elapsed_ms=elapsed,
            sequences=[schemas.GeneratedSequence(
                data=_frames(s.data), kind=s.kind, fps=s.fps, subject=s.subject)
                for s in seqs])

    @app.post("/edit", response_model=schemas.EditResponse)
    def edit(req: schemas.EditRequest):
        start = time.perf_counter()
        model = registry.model(req.model)

        if req.sequence is not None:
            base = registry.sequence(req.sequence)
        elif req.frames is not None:
            kind = KIND_FACE if model.config.variant == "facial" else KIND_HEAD
            try:
                base = MotionSequence(np.asarray(req.frames, np.float32),
                                      fps=req.fps, kind=kind)
            except ValueError as exc:
                raise ServiceError(400, str(exc)) from None
        else:
            raise ServiceError(400, "provide a sequence id or inline frames")

        n, c = base.data.shape
        if c != model.config.motion_channels:
            raise ServiceError(
                409, f"model expects {model.config.motion_channels} channels, "
                     f"sequence has {c}")

        values = base.data.copy()
        if req.mask is not None:
            mask = np.asarray(req.mask, np.float32)
            if mask.size != n:
                raise ServiceError(400, f"mask length {mask.size} != frames {n}")
        elif req.keyframes is not None:
            mask = np.zeros(n, np.float32)
            for frame, vals in req.keyframes.items():
                if not 0 <= frame < n:
                    raise ServiceError(400, f"keyframe {frame} out of range 0..{n - 1}")
                if len(vals) != c:
                    raise ServiceError(
                        400, f"keyframe {frame} has {len(vals)} values, expected {c}")
                mask[frame] = 1.0
                values[frame] = vals
        else:
            raise ServiceError(400, "provide a mask or a keyframe set")

        audio = _audio_array(req.audio, n)
        guidance = GuidanceConfig(scale=req.scale)
        try:
            spec = ImputationSpec(mask=mask, values=values)
            if model.config.variant == "facial":
                out = edit_facial(model, base, spec, audio=audio,
                                  guidance=guidance, seed=req.seed)
            else:
                out = sample_head_sgdiff(model, audio, spec, seed=req.seed,
                                         guidance=guidance, fps=req.fps)
        except (VariantError, MaskError) as exc:
            raise ServiceError(409, str(exc)) from None
        report = boundary_smoothness(out, mask)
        elapsed = (time.perf_counter() - start) * 1000.0
        return schemas.EditResponse(
            request=req, elapsed_ms=elapsed, data=_frames(out.data),
            kind=out.kind, fps=req.fps,
            boundary=schemas.BoundaryReport(**report))

    @app.post("/metrics", response_model=schemas.MetricsResponse)
    def metrics(req: schemas.MetricsRequest):
        start = time.perf_counter()
        kind = KIND_HEAD if req.kind == "head" else KIND_FACE
        try:
            pred = MotionSequence(np.asarray(req.pred, np.float32),
                                  fps=req.fps, kind=kind)
            gt = MotionSequence(np.asarray(req.gt, np.float32),
                                fps=req.fps, kind=kind)
            lip = lip_sync_dtw(pred, gt, toy_lip_region(pred.channels))
            beat = None
            if kind == KIND_HEAD:
                gt_beats = detect_beats(gt)
                if len(gt_beats):
                    beat = beat_align(detect_beats(pred), gt_beats)
            div = None
            if req.samples is not None:
                div = diversity([np.asarray(s, np.float32) for s in req.samples])
        except ValueError as exc:
            raise ServiceError(400, str(exc)) from None
        elapsed = (time.perf_counter() - start) * 1000.0
        return schemas.MetricsResponse(request=req, elapsed_ms=elapsed,
                                       lip_sync=lip, beat_align=beat,
                                       diversity=div)

    return app
