import numpy as np
import pytest

from motiondiff.denoiser import (AUDIO_DIM, AudioProjection, CheckpointError,
                                 ConditionSet, DenoiserModel, ModelConfig,
                                 VariantError, facial_forward, head_forward,
                                 load_checkpoint, project_audio, save_checkpoint,
                                 time_embedding)
from motiondiff.training import loss_simple


def small_config(variant="facial", channels=6):
    return ModelConfig(variant=variant, motion_channels=channels,
                       widths=(16, 32, 32), schedule_T=20)


@pytest.fixture(scope="module")
def facial_model():
    return DenoiserModel(small_config(), seed=3)


@pytest.fixture(scope="module")
def head_model():
    return DenoiserModel(small_config("head", 3), seed=3)


def rand_inputs(rng, channels, n):
    x = rng.standard_normal((n, channels)).astype(np.float32)
    audio = rng.standard_normal((n, AUDIO_DIM)).astype(np.float32)
    return x, audio


@pytest.mark.parametrize("n", [30, 90, 600])
def test_facial_shape_invariance(facial_model, n):
    rng = np.random.default_rng(n)
    x, audio = rand_inputs(rng, 6, n)
    out = facial_forward(x, 5, ConditionSet(audio=audio), facial_model)
    assert out.shape == (n, 6)
    assert np.all(np.isfinite(out))


def test_facial_null_condition_finite(facial_model):
    rng = np.random.default_rng(0)
    x, audio = rand_inputs(rng, 6, 40)
    out = facial_forward(x, 3, ConditionSet(audio=audio, null_flag=True), facial_model)
    assert np.all(np.isfinite(out))
    # null condition zeroes the audio
    out2 = facial_forward(x, 3, ConditionSet(audio=np.zeros_like(audio)), facial_model)
    np.testing.assert_array_equal(out, out2)


def test_facial_deterministic_repeat(facial_model):
    rng = np.random.default_rng(1)
    x, audio = rand_inputs(rng, 6, 33)
    cond = ConditionSet(audio=audio)
    a = facial_forward(x, 9, cond, facial_model)
    b = facial_forward(x, 9, cond, facial_model)
    np.testing.assert_array_equal(a, b)


def test_facial_channel_mismatch(facial_model):
    rng = np.random.default_rng(2)
    x, audio = rand_inputs(rng, 5, 30)
    with pytest.raises(VariantError):
        facial_forward(x, 1, ConditionSet(audio=audio), facial_model)


def test_facial_short_input_padded(facial_model):
    rng = np.random.default_rng(4)
    x, audio = rand_inputs(rng, 6, 5)
    out = facial_forward(x, 2, ConditionSet(audio=audio), facial_model)
    assert out.shape == (5, 6)


@pytest.mark.parametrize("n", [300, 450])
def test_head_shape_invariance(head_model, n):
    rng = np.random.default_rng(n)
    y = rng.standard_normal((n, 3)).astype(np.float32)
    flags = np.zeros((n, 1), np.float32)
    audio = rng.standard_normal((n, AUDIO_DIM)).astype(np.float32)
    out = head_forward(np.concatenate([y, flags], axis=1), 7, audio, head_model)
    assert out.shape == (n, 3)
    assert np.all(np.isfinite(out))


def test_head_rejects_bad_flags(head_model):
    rng = np.random.default_rng(5)
    y = rng.standard_normal((40, 4)).astype(np.float32)
    y[:, 3] = 0.5
    audio = rng.standard_normal((40, AUDIO_DIM)).astype(np.float32)
    with pytest.raises(ValueError, match="flag"):
        head_forward(y, 1, audio, head_model)


def test_head_deterministic(head_model):
    rng = np.random.default_rng(6)
    y = rng.standard_normal((40, 3)).astype(np.float32)
    inp = np.concatenate([y, np.ones((40, 1), np.float32)], axis=1)
    audio = rng.standard_normal((40, AUDIO_DIM)).astype(np.float32)
    np.testing.assert_array_equal(head_forward(inp, 4, audio, head_model),
                                  head_forward(inp, 4, audio, head_model))


def test_variant_cross_checks(facial_model, head_model):
    rng = np.random.default_rng(7)
    x, audio = rand_inputs(rng, 6, 30)
    with pytest.raises(VariantError):
        head_forward(x, 1, audio, facial_model)
    with pytest.raises(VariantError):
        facial_forward(x, 1, ConditionSet(audio=audio), head_model)


def test_param_count_independent_of_length(facial_model):
    rng = np.random.default_rng(8)
    before = facial_model.num_params()
    for n in (16, 200):
        x, audio = rand_inputs(rng, 6, n)
        facial_forward(x, 1, ConditionSet(audio=audio), facial_model)
    assert facial_model.num_params() == before


def test_gradient_reaches_every_parameter():
    model = DenoiserModel(small_config(), seed=12)
    model.add_style("s0", np.random.default_rng(0))
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 6, 24)).astype(np.float32)
    audio = rng.standard_normal((2, AUDIO_DIM, 24)).astype(np.float32)
    style = model.style_batch(["s0", "s0"])
    pred = model.forward(x, 3, audio, style)
    target = rng.standard_normal(pred.shape).astype(np.float32)
    loss_simple(target, pred).backward()
    for name, p in model.params.items():
        assert p.grad is not None, f"no gradient for {name}"
        assert np.any(p.grad != 0), f"zero gradient for {name}"


def test_interior_shift_equivariance(facial_model):
    rng = np.random.default_rng(10)
    shift = 4  # multiple of the total downsampling factor
    n = 64
    base_x = rng.standard_normal((6, n + shift)).astype(np.float32)
    base_a = rng.standard_normal((AUDIO_DIM, n + shift)).astype(np.float32)
    out0 = facial_model.forward(base_x[None, :, :n], 5, base_a[None, :, :n]).data[0]
    out1 = facial_model.forward(base_x[None, :, shift:], 5, base_a[None, :, shift:]).data[0]
    margin = 16
    np.testing.assert_array_equal(out0[:, margin + shift:n - margin],
                                  out1[:, margin:n - margin - shift])


def test_time_embedding_deterministic_and_distinct():
    a = time_embedding(5)
    b = time_embedding(5)
    c = time_embedding(6)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_clone_is_independent(facial_model):
    clone = facial_model.clone()
    name = next(iter(clone.params))
    clone.params[name].data += 1.0
    assert not np.array_equal(clone.params[name].data, facial_model.params[name].data)


# -- audio projection -----------------------------------------------------------


def test_project_audio_identity_resampling():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((20, 768)).astype(np.float32)
    proj = AudioProjection.create(seed=1)
    out = project_audio(raw, 30.0, 30.0, proj)
    np.testing.assert_allclose(out, raw @ proj.w + proj.b, rtol=1e-5)
    assert out.shape == (20, 64)


def test_project_audio_midpoint():
    raw = np.zeros((2, 768), np.float32)
    raw[0, 0], raw[1, 0] = 2.0, 4.0
    proj = AudioProjection(w=np.eye(768, 64, dtype=np.float32), b=np.zeros(64, np.float32))
    out = project_audio(raw, 2.0, 3.0, proj)
    assert out.shape == (3, 64)
    assert out[1, 0] == pytest.approx(3.0)


def test_project_audio_ramp_oracle():
    n_raw = 50
    raw = np.zeros((n_raw, 768), np.float32)
    raw[:, 0] = np.arange(n_raw)
    proj = AudioProjection(w=np.eye(768, 64, dtype=np.float32), b=np.zeros(64, np.float32))
    out = project_audio(raw, 50.0, 30.0, proj)
    n = round(n_raw * 30.0 / 50.0)
    assert out.shape[0] == n
    expected = np.arange(n) * (n_raw - 1) / (n - 1)  # endpoint-aligned lerp of a ramp
    np.testing.assert_allclose(out[:, 0], expected, rtol=1e-5)


def test_project_audio_rejects_bad_input():
    proj = AudioProjection.create()
    with pytest.raises(ValueError, match="768"):
        project_audio(np.zeros((5, 512)), 30, 30, proj)
    with pytest.raises(ValueError):
        project_audio(np.zeros((0, 768)), 30, 30, proj)


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, facial_model):
    facial_model_l = facial_model.clone()
    facial_model_l.add_style("carol", np.random.default_rng(2))
    path = tmp_path / "model.ckpt"
    save_checkpoint(facial_model_l, path)
    loaded = load_checkpoint(path)
    assert loaded.config == facial_model_l.config
    assert set(loaded.params) == set(facial_model_l.params)
    for name in loaded.params:
        np.testing.assert_array_equal(loaded.params[name].data,
                                      facial_model_l.params[name].data)
    assert loaded.style_subjects() == ["carol"]


def test_checkpoint_bad_magic(tmp_path, facial_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(facial_model, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_corrupt_payload(tmp_path, facial_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(facial_model, path)
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path, facial_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(facial_model, path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
