"""Command-line entry points: corpus generation, training, fine-tuning,
sampling, editing, evaluation, and the HTTP service.

Exit codes: 0 success, 1 runtime failure, 2 usage error. The run directory
(default output location and the directory the service scans) comes from
--run-dir / the MOTIONDIFF_RUN_DIR environment variable.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .denoiser import load_checkpoint, save_checkpoint
from .diffusion import GuidanceConfig
from .io import KIND_HEAD, read_sequence, write_sequence, write_sequence_text
from .metrics import (MetricReport, beat_align, detect_beats, lip_sync_dtw,
                      toy_lip_region)
from .sampling import (ImputationSpec, SampleRequest, boundary_smoothness,
                       edit_facial, make_inbetween_mask, make_keyframe_mask,
                       sample_facial, sample_head_sgdiff)
from .toydata import SubjectStyle, ToyCorpusSpec, gen_toy_corpus, load_corpus, save_corpus
from .training import (HEAD_WINDOW_DEFAULT, GuidanceMaskSampler,
                       finetune_personalize, toy_facial_config,
                       toy_head_config, train_facial, train_head_sgdiff)

RUN_DIR_ENV = "MOTIONDIFF_RUN_DIR"

run_dir_option = click.option(
    "--run-dir", envvar=RUN_DIR_ENV, default=".", show_default=True,
    type=click.Path(file_okay=False, path_type=Path),
    help=f"Artifact directory (env: {RUN_DIR_ENV}).")


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Motion-diffusion toolkit: synthesize and edit conditioned motion."""


@main.command("gen-corpus")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Output directory for the synthetic corpus.")
@click.option("--sequences", default=8, show_default=True)
@click.option("--length", default=360, show_default=True, help="Frames per sequence.")
@click.option("--vertices", default=16, show_default=True)
@click.option("--fps", default=30.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise", default=0.1, show_default=True)
@click.option("--subjects", default="subj0:1.0", show_default=True,
              help="Comma-separated name:amplitude pairs.")
def gen_corpus(out, sequences, length, vertices, fps, seed, noise, subjects):
    """Generate the synthetic audio-correlated motion corpus."""
    try:
        subject_styles = []
        for token in subjects.split(","):
            name, _, amp = token.partition(":")
            subject_styles.append((name.strip(),
                                   SubjectStyle(amplitude=float(amp or 1.0))))
        spec = ToyCorpusSpec(num_sequences=sequences, length=length,
                             vertices=vertices, fps=fps, seed=seed,
                             noise_level=noise, subjects=tuple(subject_styles))
        corpus = gen_toy_corpus(spec)
        save_corpus(corpus, out)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {sequences} sequences to {out}")


@main.command()
@click.option("--variant", type=click.Choice(["facial", "head"]), default="facial",
              show_default=True)
@click.option("--corpus", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Corpus directory (from gen-corpus).")
@click.option("--iters", default=None, type=int, help="Training iterations.")
@click.option("--window", default=None, type=int,
              help=f"Crop window (default: 30 facial / {HEAD_WINDOW_DEFAULT} head).")
@click.option("--batch", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--schedule-t", "schedule_t", default=None, type=int,
              help="Diffusion steps of the trained schedule.")
@run_dir_option
@click.option("--name", default=None, help="Checkpoint name (default: the variant).")
def train(variant, corpus, iters, window, batch, seed, schedule_t, run_dir, name):
    """Train a denoiser on a corpus and write checkpoint + loss history."""
    try:
        data = load_corpus(corpus)
        overrides = {"seed": seed}
        if iters is not None:
            overrides["iterations"] = iters
        if batch is not None:
            overrides["batch_size"] = batch
        if schedule_t is not None:
            overrides["schedule_T"] = schedule_t
        if variant == "facial":
            cfg = toy_facial_config(**overrides, **({"window": window} if window else {}))
            result = train_facial(data, cfg)
        else:
            cfg = toy_head_config(
                **overrides, window=window or HEAD_WINDOW_DEFAULT)
            result = train_head_sgdiff(data, cfg, GuidanceMaskSampler(fps=data.spec.fps))
        run_dir.mkdir(parents=True, exist_ok=True)
        stem = name or variant
        save_checkpoint(result.model, run_dir / f"{stem}.ckpt")
        result.write_history(run_dir / f"{stem}_history.txt")
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {run_dir / (stem + '.ckpt')}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--corpus", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Single-subject reference corpus directory.")
@click.option("--subject", default=None, help="Target subject (default: from corpus).")
@click.option("--iters", default=300, show_default=True)
@click.option("--seed", default=0, show_default=True)
@run_dir_option
@click.option("--name", default="finetuned", show_default=True)
def finetune(model_path, corpus, subject, iters, seed, run_dir, name):
    """Personalize a trained facial model on a short reference set."""
    try:
        model = load_checkpoint(model_path)
        data = load_corpus(corpus)
        cfg = toy_facial_config(iterations=iters, seed=seed,
                                widths=model.config.widths,
                                schedule_T=model.config.schedule_T,
                                schedule_kind=model.config.schedule_kind)
        result = finetune_personalize(model, data, cfg, subject=subject)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.model, run_dir / f"{name}.ckpt")
        if result.history:
            result.write_history(run_dir / f"{name}_history.txt")
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {run_dir / (name + '.ckpt')}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--length", default=90, show_default=True)
@click.option("--count", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--scale", default=0.5, show_default=True, help="Guidance scale.")
@click.option("--subject", default=None)
@click.option("--audio-npy", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Optional (N, 64) .npy conditioning features.")
@click.option("--fps", default=30.0, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Output prefix; writes <out>_000.mseq etc.")
@click.option("--text/--no-text", default=False, show_default=True,
              help="Also write plain-text exports.")
def sample(model_path, length, count, seed, scale, subject, audio_npy, fps, out, text):
    """Draw sequences from a trained model."""
    try:
        model = load_checkpoint(model_path)
        audio = None
        if audio_npy is not None:
            audio = np.load(audio_npy).astype(np.float32)[:length]
        guidance = GuidanceConfig(scale=scale)
        if model.config.variant == "facial":
            req = SampleRequest(model=model, length=length, audio=audio,
                                subject=subject, guidance=guidance,
                                seed=seed, count=count, fps=fps)
            seqs = sample_facial(req)
        else:
            seqs = [sample_head_sgdiff(model, audio, length=length,
                                       seed=seed + i, guidance=guidance, fps=fps)
                    for i in range(count)]
        out.parent.mkdir(parents=True, exist_ok=True)
        for i, seq in enumerate(seqs):
            path = out.parent / f"{out.name}_{i:03d}.mseq"
            write_sequence(path, seq)
            if text:
                write_sequence_text(path.with_suffix(".txt"), seq)
            click.echo(f"wrote {path}")
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--sequence", "seq_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Base .mseq sequence to edit.")
@click.option("--head-frac", default=None, type=float,
              help="Preserved prefix fraction (inbetweening).")
@click.option("--tail-frac", default=None, type=float,
              help="Preserved suffix fraction (inbetweening).")
@click.option("--keyframe-rate", default=None, type=float,
              help="Preserved keyframes per second.")
@click.option("--seed", default=0, show_default=True)
@click.option("--scale", default=0.5, show_default=True, help="Guidance scale.")
@click.option("--audio-npy", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--report", default=None, type=click.Path(path_type=Path),
              help="Boundary-smoothness report path.")
def edit(model_path, seq_path, head_frac, tail_frac, keyframe_rate, seed, scale,
         audio_npy, out, report):
    """Regenerate the unmasked region of a sequence, preserving the rest."""
    if keyframe_rate is None and head_frac is None and tail_frac is None:
        raise click.UsageError(
            "provide --keyframe-rate or --head-frac/--tail-frac")
    try:
        model = load_checkpoint(model_path)
        base = read_sequence(seq_path)
        n = base.frames
        if keyframe_rate is not None:
            mask = make_keyframe_mask(n, base.fps, keyframe_rate, seed=seed)
        else:
            mask = make_inbetween_mask(n, head_frac or 0.0, tail_frac or 0.0)
        spec = ImputationSpec(mask=mask, values=base.data)
        audio = None
        if audio_npy is not None:
            audio = np.load(audio_npy).astype(np.float32)[:n]
        guidance = GuidanceConfig(scale=scale)
        if model.config.variant == "facial":
            result = edit_facial(model, base, spec, audio=audio,
                                 guidance=guidance, seed=seed)
        else:
            result = sample_head_sgdiff(model, audio, spec, seed=seed,
                                        guidance=guidance, fps=base.fps)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_sequence(out, result)
        smooth = boundary_smoothness(result, mask)
        lines = [f"preserved_frames {int(mask.sum())}",
                 f"generated_frames {int(n - mask.sum())}"]
        lines += [f"{k} {v}" for k, v in smooth.items()]
        if report is not None:
            Path(report).write_text("\n".join(lines) + "\n")
        for line in lines:
            click.echo(line)
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {out}")


@main.command("eval")
@click.option("--pred", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--gt", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", default=None, type=click.Path(path_type=Path),
              help="Write the report as text; .json sibling written too.")
def eval_cmd(pred, gt, out):
    """Compare a generated sequence against a reference."""
    try:
        pred_seq = read_sequence(pred)
        gt_seq = read_sequence(gt)
        report = MetricReport(metadata={"pred": str(pred), "gt": str(gt)})
        report.lip_sync = lip_sync_dtw(pred_seq, gt_seq,
                                       toy_lip_region(pred_seq.channels))
        if pred_seq.kind == KIND_HEAD and gt_seq.kind == KIND_HEAD:
            gt_beats = detect_beats(gt_seq)
            if len(gt_beats):
                report.beat_align_score = beat_align(detect_beats(pred_seq), gt_beats)
        if out is not None:
            report.write(text_path=out, json_path=Path(out).with_suffix(".json"))
        click.echo(report.to_text(), nl=False)
    except (ValueError, OSError) as exc:
        _fail(str(exc))


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@run_dir_option
def serve(port, host, run_dir):
    """Run the HTTP service over the checkpoints in the run directory."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(run_dir), host=host, port=port)


if __name__ == "__main__":
    main()
