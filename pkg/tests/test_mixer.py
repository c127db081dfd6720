import numpy as np
import pytest

from hopmix.checkpoint import CheckpointError, Checkpoint, decode, encode, load_checkpoint, save_checkpoint
from hopmix.config import config_for_model
from hopmix.imlp import IMlpModule, VanillaMlp
from hopmix.mixer import MixerConfig, MixerModel, count_params, patch_embed, patchify
from hopmix.nn_core import backward, cross_entropy
from oracles import patchify_loops

SMALL = MixerConfig(image_size=8, patch_size=4, channels_in=2, hidden_dim=6, depth=2, token_dim=5,
                    channel_dim=7, num_classes=3)


def images(cfg=SMALL, n=3, seed=0):
    return np.random.default_rng(seed).standard_normal((n, cfg.channels_in, cfg.image_size, cfg.image_size))


def test_patchify_matches_loops():
    x = images()
    np.testing.assert_array_equal(patchify(SMALL, x), patchify_loops(x, SMALL.patch_size))
    assert patchify(SMALL, x[0]).shape == (1, 4, 32)


def test_patchify_rejects_wrong_shape():
    with pytest.raises(ValueError):
        patchify(SMALL, np.zeros((1, 1, 8, 8)))
    with pytest.raises(ValueError):
        MixerConfig(image_size=10, patch_size=4)


@pytest.mark.parametrize("kw", [dict(), dict(token_mixer="vanilla"), dict(specnorm_mode="batchnorm-like"),
                                dict(h_r=0.5)])
def test_count_params_matches_enumeration(kw):
    cfg = SMALL.with_(**kw)
    assert count_params(cfg) == sum(p.data.size for p in MixerModel(cfg).parameters())


def test_presets_have_expected_counts():
    assert count_params(MixerConfig.preset("micro")) == sum(
        p.data.size for p in MixerModel(MixerConfig.preset("micro")).parameters())
    assert MixerConfig.preset("micro").num_tokens == 16


def test_imlp_and_vanilla_share_common_parameters():
    a = dict(MixerModel(SMALL).named_parameters())
    b = dict(MixerModel(SMALL.with_(token_mixer="vanilla")).named_parameters())
    common = set(a) & set(b)
    assert {"stem.weight", "blocks.0.token_mix.fc1.weight", "blocks.1.channel_mlp.fc2.weight"} <= common
    for name in common:
        np.testing.assert_array_equal(a[name].data, b[name].data, err_msg=name)
    assert {n for n in a if "fc_sn" in n} and not {n for n in b if "fc_sn" in n}


def test_block_types():
    m = MixerModel(SMALL)
    assert all(isinstance(b.token_mix, IMlpModule) for b in m.blocks)
    assert len(m.imlp_blocks()) == 2
    v = MixerModel(SMALL.with_(token_mixer="vanilla"))
    assert all(isinstance(b.token_mix, VanillaMlp) for b in v.blocks)
    assert v.imlp_blocks() == []


def test_frozen_forward_is_pure():
    m = MixerModel(SMALL).freeze()
    x = images()
    bufs = {k: v.copy() for k, v in m.named_buffers()}
    a = m(x).data
    b = m(x).data
    np.testing.assert_array_equal(a, b)
    for k, v in m.named_buffers():
        np.testing.assert_array_equal(v, bufs[k], err_msg=k)


def test_per_sample_independence_in_eval():
    m = MixerModel(SMALL).freeze()
    x = images(n=4)
    full = m(x).data
    np.testing.assert_allclose(m(x[2:3]).data, full[2:3], atol=1e-13)


def test_every_parameter_gets_a_gradient():
    m = MixerModel(SMALL)
    m.freeze()
    for p in m.parameters():
        if p.ndim == 1:
            p.data = p.data + 0.1 * np.random.default_rng(p.data.size).standard_normal(p.shape)
    backward(cross_entropy(m(images()), [0, 1, 2]))
    for name, p in m.named_parameters():
        if name.endswith("token_mix.fc2.bias"):
            # a per-channel constant on the token axis is removed by the channel LN
            assert np.abs(p.grad).max() < 1e-12, name
        else:
            assert np.abs(p.grad).max() > 0, name


def test_patch_embed_single_image():
    m = MixerModel(SMALL)
    x = images(n=1)
    np.testing.assert_array_equal(patch_embed(m, x[0]).data, m.embed(x).data[0])


def test_prepare_scales_uint8():
    m = MixerModel(SMALL)
    m.set_input_stats(np.array([0.5, 0.25]), np.array([2.0, 4.0]))
    px = np.full((1, 2, 8, 8), 255, np.uint8)
    out = m.prepare(px)
    assert out[0, 0, 0, 0] == pytest.approx(0.25)
    assert out[0, 1, 0, 0] == pytest.approx(0.1875)


def test_checkpoint_round_trip(tmp_path):
    m = MixerModel(SMALL.with_(seed=4))
    m.set_input_stats(np.array([0.1, 0.2]), np.array([0.3, 0.4]))
    path = tmp_path / "m.ckpt"
    save_checkpoint(Checkpoint.from_model(m, config_for_model(m.cfg).echo()), path)
    m2 = load_checkpoint(path).build_model()
    assert m2.cfg == m.cfg
    for (n1, a), (n2, b) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(a.data, b.data)
    for (n1, a), (n2, b) in zip(m.named_buffers(), m2.named_buffers()):
        assert n1 == n2
        np.testing.assert_array_equal(a, b)
    x = images()
    np.testing.assert_array_equal(m.freeze()(x).data, m2.freeze()(x).data)


def test_checkpoint_corruption_detected():
    m = MixerModel(SMALL)
    blob = encode(Checkpoint.from_model(m, config_for_model(m.cfg).echo()))
    with pytest.raises(CheckpointError):
        decode(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        decode(blob[:-3])
    with pytest.raises(CheckpointError):
        decode(blob + b"\0")
