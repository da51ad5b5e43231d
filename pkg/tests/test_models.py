"""Shape contracts and structural identities of the five networks."""

import numpy as np
import pytest

from m2d.autodiff import ShapeMismatch, Tensor, bce_loss, grad_check, l1_loss, no_grad, softmax
from m2d.models import ModelConfig, ResAttBlock, build_models, predict_probs, zero_parameters

TINY = ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=6)


def rand_input(rng, batch=2):
    return Tensor(rng.random((batch, 1, 128, 128)).astype(np.float32))


@pytest.mark.parametrize(
    "cfg",
    [
        ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=6),
        ModelConfig(embed_dim=64, depth_multiplier=0.25, n_classes=12),
        ModelConfig(embed_dim=512, depth_multiplier=1.0, n_classes=1101),
    ],
    ids=["tiny", "quarter", "paper"],
)
def test_shape_contract_all_configs(cfg):
    m = build_models(cfg, seed=0).eval()
    rng = np.random.default_rng(0)
    x = rand_input(rng, batch=1)
    with no_grad():
        out = m.encoder(x)
        assert out.temporal.shape == (1, cfg.embed_dim, 4, 1)
        assert out.embedding.shape == (1, cfg.embed_dim)
        assert m.dec_spec(out.embedding).shape == (1, 1, 128, 128)
        assert m.dec_melody(out.temporal).shape == (1, 128)
        assert m.dec_rhythm(out.temporal).shape == (1, 128)
        assert m.predictor(out.embedding).shape == (1, cfg.n_classes)


def test_depth_multiplier_one_reproduces_stage_counts():
    assert ModelConfig(embed_dim=512, depth_multiplier=1.0, n_classes=2).stage_blocks == (3, 4, 6, 3)
    assert ModelConfig(embed_dim=512, depth_multiplier=0.125, n_classes=2).stage_blocks == (1, 1, 1, 1)


def test_embedding_is_mean_of_temporal_feature():
    m = build_models(TINY, seed=1).eval()
    rng = np.random.default_rng(1)
    with no_grad():
        out = m.encoder(rand_input(rng))
    np.testing.assert_allclose(out.embedding.data, out.temporal.data[:, :, :, 0].mean(axis=2), rtol=1e-5)


def test_zero_parameters_zero_embedding():
    m = build_models(TINY, seed=2).eval()
    zero_parameters(m.encoder)
    with no_grad():
        out = m.encoder(rand_input(np.random.default_rng(2)))
    np.testing.assert_allclose(out.embedding.data, 0.0, atol=1e-7)


def test_zero_parameters_decoder_outputs():
    m = build_models(TINY, seed=3).eval()
    zero_parameters(m.dec_spec)
    zero_parameters(m.dec_rhythm)
    u = Tensor(np.random.default_rng(3).standard_normal((2, TINY.embed_dim)).astype(np.float32))
    ft = Tensor(np.random.default_rng(4).standard_normal((2, TINY.embed_dim, 4, 1)).astype(np.float32))
    with no_grad():
        np.testing.assert_allclose(m.dec_spec(u).data, 0.0, atol=1e-7)
        np.testing.assert_allclose(m.dec_rhythm(ft).data, 0.5, atol=1e-7)


def test_rhythm_decoder_in_open_unit_interval():
    m = build_models(TINY, seed=4).eval()
    ft = Tensor(np.random.default_rng(5).standard_normal((4, TINY.embed_dim, 4, 1)).astype(np.float32))
    with no_grad():
        out = m.dec_rhythm(ft).data
    assert out.min() > 0.0 and out.max() < 1.0


def test_res_att_zero_weights_is_identity():
    block = ResAttBlock(TINY, np.random.default_rng(6))
    zero_parameters(block)
    x = Tensor(np.random.default_rng(6).standard_normal((3, TINY.embed_dim)).astype(np.float32))
    with no_grad():
        np.testing.assert_allclose(block(x).data, x.data, atol=1e-7)


def test_res_att_closed_gate_passes_input():
    block = ResAttBlock(TINY, np.random.default_rng(7))
    block.fc4.bias.data[...] = -20.0
    block.fc4.weight.data[...] = 0.0
    x = Tensor(np.random.default_rng(7).standard_normal((3, TINY.embed_dim)).astype(np.float32))
    with no_grad():
        np.testing.assert_allclose(block(x).data, x.data, atol=1e-6)


def test_predictor_zero_weights_uniform_probs():
    m = build_models(TINY, seed=8)
    zero_parameters(m.predictor)
    u = Tensor(np.random.default_rng(8).standard_normal((5, TINY.embed_dim)).astype(np.float32))
    with no_grad():
        probs = predict_probs(m.predictor, u).data
    np.testing.assert_allclose(probs, 1.0 / TINY.n_classes, atol=1e-7)


def test_predictor_softmax_sums_to_one():
    m = build_models(TINY, seed=9).eval()
    u = Tensor(np.random.default_rng(9).standard_normal((7, TINY.embed_dim)).astype(np.float32))
    with no_grad():
        probs = softmax(m.predictor(u)).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_encoder_map_not_degenerate():
    m = build_models(TINY, seed=10).eval()
    rng = np.random.default_rng(10)
    sims = []
    with no_grad():
        for _ in range(100):
            a = m.encoder(rand_input(rng, batch=1)).embedding.data[0]
            b = m.encoder(rand_input(rng, batch=1)).embedding.data[0]
            denom = np.linalg.norm(a) * np.linalg.norm(b)
            sims.append(float(a @ b / denom) if denom > 0 else 1.0)
    assert max(sims) < 0.999


def test_encoder_rejects_wrong_input():
    m = build_models(TINY, seed=11)
    with pytest.raises(ShapeMismatch):
        m.encoder(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))
    with pytest.raises(ShapeMismatch):
        m.predictor(Tensor(np.zeros((1, TINY.embed_dim + 16), dtype=np.float32)))


def test_build_is_deterministic():
    a = build_models(TINY, seed=12).state_dict()
    b = build_models(TINY, seed=12).state_dict()
    assert sorted(a) == sorted(b)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k


def test_gradcheck_res_att_block():
    cfg = ModelConfig(embed_dim=16, depth_multiplier=0.125, n_classes=4, dtype=np.float64)
    block = ResAttBlock(cfg, np.random.default_rng(13))
    x = Tensor(np.random.default_rng(13).standard_normal((2, 16)), requires_grad=True, dtype=np.float64)
    tgt = np.random.default_rng(14).standard_normal((2, 16))
    f = lambda: l1_loss(block(x), tgt)
    assert grad_check(f, [x] + block.parameters(), max_coords=16) < 1e-4


def test_gradcheck_rhythm_head_through_temporal_feature():
    cfg = ModelConfig(embed_dim=32, depth_multiplier=0.125, n_classes=4, dtype=np.float64)
    m = build_models(cfg, seed=15)
    ft = Tensor(np.random.default_rng(15).standard_normal((1, 32, 4, 1)), requires_grad=True, dtype=np.float64)
    tgt = (np.random.default_rng(16).random((1, 128)) > 0.8).astype(np.float64)
    f = lambda: bce_loss(m.dec_rhythm(ft), tgt)
    assert grad_check(f, [ft], max_coords=32) < 1e-4
