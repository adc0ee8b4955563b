import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from motiondiff import toydata, training
from motiondiff.denoiser import save_checkpoint
from motiondiff.io import write_sequence


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = toydata.ToyCorpusSpec(
        num_sequences=6, length=90, vertices=4, seed=11,
        subjects=(("alice", toydata.SubjectStyle(amplitude=1.0)),
                  ("bob", toydata.SubjectStyle(amplitude=1.5, smoothing=5, offset=0.2))))
    return toydata.gen_toy_corpus(spec)


@pytest.fixture(scope="session")
def tiny_facial(tiny_corpus):
    cfg = training.toy_facial_config(
        iterations=200, batch_size=8, widths=(16, 32, 32), schedule_T=20, seed=1)
    return training.train_facial(tiny_corpus, cfg)


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory, tiny_facial, tiny_head, tiny_corpus):
    """Run directory with checkpoints and sequences, as `serve` expects."""
    root = tmp_path_factory.mktemp("run")
    save_checkpoint(tiny_facial.model, root / "facial.ckpt")
    save_checkpoint(tiny_head.model, root / "head.ckpt")
    item = tiny_corpus.items[0]
    write_sequence(root / "face0.mseq", item.face)
    write_sequence(root / "head0.mseq", item.head)
    np.save(root / "feat0.npy", item.features)
    return root


@pytest.fixture(scope="session")
def tiny_head(tiny_corpus):
    cfg = training.toy_head_config(
        iterations=200, batch_size=8, window=60, widths=(16, 32, 32),
        schedule_T=20, seed=1)
    masks = training.GuidanceMaskSampler(family="mixed", fps=30.0)
    return training.train_head_sgdiff(tiny_corpus, cfg, masks)
