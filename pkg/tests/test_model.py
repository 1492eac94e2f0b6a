import numpy as np
import pytest

from conftest import make_noise, tiny_head
from mospred.encoder import FrameFeatures
from mospred.errors import CheckpointFormatError, ConfigError, ListenerLookupError
from mospred.losses import LossConfig, total_loss_and_grad
from mospred.model import (
    HeadConfig,
    PredictorHead,
    load_checkpoint,
    merge_params,
    predict_utterance,
    range_clip,
    range_clip_grad,
    save_checkpoint,
    split_params,
    time_pool,
)


def feats(rng, t=12, d=8):
    return FrameFeatures(matrix=rng.standard_normal((t, d)), frame_rate=50.0)


def test_zero_weight_linear_decoder_outputs_bias():
    head = tiny_head(decoder="linear")
    head.params["out.weight"][:] = 0.0
    head.params["out.bias"][:] = 3.0
    rng = np.random.default_rng(0)
    scores = head.decode_frames(feats(rng))
    np.testing.assert_allclose(scores, 3.0, atol=1e-12)


def test_identity_dataset_affine_is_noop():
    head = tiny_head(dataset_calibration=True, dataset_ids=["d0"])
    rng = np.random.default_rng(1)
    f = feats(rng)
    with_affine = head.decode_frames(f, dataset_id="d0")  # tables init to (1, 0)
    without = head.decode_frames(f, dataset_id=None)
    np.testing.assert_allclose(with_affine, without, atol=1e-12)


def test_decode_matches_naive_per_frame_oracle():
    head = tiny_head(
        listener_modeling=True,
        listener_dim=4,
        listener_ids=["a", "b"],
        dataset_calibration=True,
        dataset_ids=["d0", "d1"],
    )
    head.params["dataset.scale"][:] = [1.5, 0.7]
    head.params["dataset.shift"][:] = [-0.2, 0.4]
    rng = np.random.default_rng(2)
    f = feats(rng)
    scores = head.decode_frames(f, listener_id="b", dataset_id="d1")

    w1 = head.params["hidden.weight"].astype(np.float64)
    b1 = head.params["hidden.bias"].astype(np.float64)
    w2 = head.params["out.weight"].astype(np.float64)
    b2 = head.params["out.bias"].astype(np.float64)
    emb = head.params["listener.embeddings"][2].astype(np.float64)
    expected = np.empty(f.num_frames)
    for t in range(f.num_frames):
        x = np.concatenate([f.matrix[t], emb])
        h = np.tanh(w1.T @ x + b1)
        s = float(w2[:, 0] @ h + b2[0])
        expected[t] = 0.7 * s + 0.4
    np.testing.assert_allclose(scores, expected, atol=1e-6)


def test_time_pool():
    assert time_pool(np.array([2.0, 4.0])) == 3.0
    assert time_pool(np.full(7, 1.25)) == 1.25
    rng = np.random.default_rng(3)
    v = rng.uniform(-10, 10, 1000)
    # compensated-sum oracle
    expected = float(np.sum(v, dtype=np.longdouble) / 1000)
    assert abs(time_pool(v) - expected) < 1e-12
    with pytest.raises(ValueError):
        time_pool(np.array([]))


def test_range_clip_values_and_subgradient():
    assert range_clip(5.7, 1, 5) == 5.0
    assert range_clip(3.2, 1, 5) == 3.2
    assert range_clip(0.0, 1, 5) == 1.0
    # finite-difference check of the stated subgradient
    for s, expected in ((6.0, 0.0), (3.0, 1.0), (-2.0, 0.0)):
        fd = (range_clip(s + 1e-6, 1, 5) - range_clip(s - 1e-6, 1, 5)) / 2e-6
        assert abs(fd - expected) < 1e-6
        assert range_clip_grad(s, 1, 5) == expected
    with pytest.raises(ValueError):
        range_clip(1.0, 5, 1)


def test_predict_utterance_composition(tiny_encoder):
    rng = np.random.default_rng(4)
    head = tiny_head()
    wave = make_noise(rng, 3000, 16000)
    pred = predict_utterance(head, tiny_encoder, wave)
    manual_feats = tiny_encoder.encode(wave)
    manual = range_clip(time_pool(head.decode_frames(manual_feats)), 1.0, 5.0)
    assert abs(pred.utterance_score - manual) < 1e-6
    assert 1.0 <= pred.utterance_score <= 5.0
    assert len(pred.frame_scores) == manual_feats.num_frames


def test_predict_constant_decoder(tiny_encoder):
    head = tiny_head(decoder="linear")
    head.params["out.weight"][:] = 0.0
    head.params["out.bias"][:] = 3.0
    wave = make_noise(np.random.default_rng(5), 2000, 16000)
    pred = predict_utterance(head, tiny_encoder, wave)
    assert abs(pred.utterance_score - 3.0) < 1e-7


def test_clipping_contract_on_trained_range(tiny_encoder):
    # extreme parameters still cannot escape the clip range
    head = tiny_head(decoder="linear")
    head.params["out.bias"][:] = 50.0
    wave = make_noise(np.random.default_rng(6), 2000, 16000)
    assert predict_utterance(head, tiny_encoder, wave).utterance_score == 5.0


def test_listener_conditioning_changes_outputs():
    rng = np.random.default_rng(7)
    f = feats(rng)
    for seed in range(10):
        head = tiny_head(
            listener_modeling=True, listener_dim=4, listener_ids=["a", "b", "c"], seed=seed
        )
        outputs = [
            time_pool(head.decode_frames(f, listener_id=lid)) for lid in ("a", "b", "c")
        ]
        assert max(outputs) - min(outputs) > 0.0


def test_listener_lookup_modes():
    rng = np.random.default_rng(8)
    f = feats(rng)
    strict = tiny_head(
        listener_modeling=True, listener_dim=4, listener_ids=["a"], strict_listeners=True
    )
    with pytest.raises(ListenerLookupError):
        strict.decode_frames(f, listener_id="unknown")
    relaxed = tiny_head(listener_modeling=True, listener_dim=4, listener_ids=["a"])
    fallback = relaxed.decode_frames(f, listener_id="unknown")
    mean = relaxed.decode_frames(f, listener_id=None)
    np.testing.assert_allclose(fallback, mean, atol=1e-12)
    disabled = tiny_head()
    with pytest.raises(ListenerLookupError):
        disabled.decode_frames(f, listener_id="a")


def test_end_to_end_l1_gradient_finite_differences():
    # gradient of the training objective w.r.t. decoder parameters
    rng = np.random.default_rng(9)
    head = tiny_head(dtype=np.float64)
    f = feats(rng)
    target = 3.7

    def objective():
        frame_scores, cache = head.forward(f)
        pooled = float(frame_scores.mean())
        pred = range_clip(pooled, 1, 5)
        total, _, dpred = total_loss_and_grad(np.array([pred]), np.array([target]), LossConfig())
        return total, frame_scores, cache, dpred, range_clip_grad(pooled, 1, 5)

    total, frame_scores, cache, dpred, cg = objective()
    dframes = np.full(len(frame_scores), dpred[0] * cg / len(frame_scores))
    grads, _ = head.backward(dframes, cache)
    for name in ("hidden.weight", "hidden.bias", "out.weight", "out.bias"):
        flat = head.params[name].reshape(-1)
        g = grads[name].reshape(-1)
        for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            h = 1e-6
            flat[idx] = orig + h
            hi = objective()[0]
            flat[idx] = orig - h
            lo = objective()[0]
            flat[idx] = orig
            fd = (hi - lo) / (2 * h)
            rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-10)
            assert rel <= 1e-3, f"{name}[{idx}]"


def test_head_input_dim_mismatch():
    head = tiny_head()
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError, match="input dim"):
        head.decode_frames(feats(rng, d=5))


def test_unresolved_clip_range_rejected():
    with pytest.raises(ConfigError, match="clip range"):
        PredictorHead(input_dim=8, cfg=HeadConfig(clip_enabled=True))


# checkpoint -----------------------------------------------------------------


def test_checkpoint_roundtrip_and_determinism(tmp_path):
    head = tiny_head()
    config = {"kind": "unit-test", "nested": {"a": 1}}
    params = merge_params({}, head.params)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, config, params)
    save_checkpoint(p2, config, params)
    assert p1.read_bytes() == p2.read_bytes()  # archives are byte-deterministic
    loaded_config, loaded_params = load_checkpoint(p1)
    assert loaded_config == config
    assert sorted(loaded_params) == sorted(params)
    for name in params:
        np.testing.assert_array_equal(loaded_params[name], np.asarray(params[name], np.float32))


def test_checkpoint_split_merge():
    enc_params = {"conv1.weight": np.zeros(3)}
    head_params = {"out.bias": np.ones(1)}
    merged = merge_params(enc_params, head_params)
    assert set(merged) == {"encoder.conv1.weight", "head.out.bias"}
    assert split_params(merged, "head.") == {"out.bias": head_params["out.bias"]}


def test_checkpoint_format_errors(tmp_path):
    from mospred.errors import UsageError

    with pytest.raises(UsageError, match="not found"):
        load_checkpoint(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a zip archive")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(bad)
