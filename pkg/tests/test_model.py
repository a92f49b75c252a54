import numpy as np
import pytest
import torch
from torch import nn

from dualview_slr.errors import ConfigurationError, NumericError, ShapeError
from dualview_slr.model import (
    EncoderConfig,
    ModelConfig,
    SequenceEncoder,
    SingleViewModel,
    SpatialBackboneConfig,
    build_backbone,
    build_head,
    encode_sequence,
    extract_spatial_features,
    forward_single_view,
    pool_and_classify,
    sinusoidal_encoding,
)
from dualview_slr.training import TrainConfig, fit


def tiny_config(d=8, layers=2, heads=2, V=3, pe="sinusoidal", dropout=0.0):
    return ModelConfig(
        SpatialBackboneConfig("small", feature_dim=d),
        EncoderConfig(num_layers=layers, num_heads=heads, embed_dim=d, feedforward_dim=2 * d, dropout=dropout,
                      positional_encoding=pe),
        num_classes=V,
        fusion_dim=d,
    )


def test_resnet34_reference_shapes():
    backbone = build_backbone(SpatialBackboneConfig())
    backbone.eval()
    with torch.no_grad():
        feats = extract_spatial_features(torch.randn(16, 3, 64, 64), backbone)
    assert feats.shape == (16, 512)
    enc = SequenceEncoder(EncoderConfig(), 512).eval()
    with torch.no_grad():
        seq = encode_sequence(feats, enc)
    assert seq.shape == (16, 512)
    assert isinstance(enc.input_proj, nn.Identity)


def test_resnet_width_must_be_512():
    with pytest.raises(ConfigurationError):
        SpatialBackboneConfig("resnet34", feature_dim=256)


def test_embed_dim_divisible_by_heads():
    with pytest.raises(ConfigurationError):
        EncoderConfig(embed_dim=10, num_heads=4)


def test_identical_frames_give_identical_rows():
    bb = build_backbone(SpatialBackboneConfig("small", feature_dim=16)).eval()
    frame = torch.randn(1, 3, 32, 32)
    feats = extract_spatial_features(frame.repeat(16, 1, 1, 1), bb)
    assert feats.shape == (16, 16)
    assert torch.equal(feats, feats[:1].expand_as(feats))


def test_frame_permutation_permutes_rows():
    torch.manual_seed(0)
    bb = build_backbone(SpatialBackboneConfig("small", feature_dim=16)).eval()
    clip = torch.randn(6, 3, 32, 32)
    perm = torch.randperm(6)
    with torch.no_grad():
        a = extract_spatial_features(clip, bb)
        b = extract_spatial_features(clip[perm], bb)
    torch.testing.assert_close(b, a[perm], rtol=0, atol=1e-6)


def test_backbone_shape_mismatch_is_configuration_error():
    bb = build_backbone(SpatialBackboneConfig("small", feature_dim=8))
    with pytest.raises(ConfigurationError):
        extract_spatial_features(torch.randn(4, 5, 16, 16), bb)
    with pytest.raises(ShapeError):
        extract_spatial_features(torch.randn(16, 16), bb)


def test_input_projection_when_widths_differ():
    enc = SequenceEncoder(EncoderConfig(num_layers=1, num_heads=2, embed_dim=8, feedforward_dim=8), 5)
    assert isinstance(enc.input_proj, nn.Linear)
    assert enc(torch.randn(4, 5)).shape == (4, 8)
    with pytest.raises(ShapeError):
        enc(torch.randn(4, 8))


def test_zeroed_residual_branches_are_identity():
    cfg = EncoderConfig(num_layers=3, num_heads=4, embed_dim=16, feedforward_dim=32, dropout=0.0)
    enc = SequenceEncoder(cfg, 16)
    for layer in enc.layers:
        nn.init.zeros_(layer.attn.out_proj.weight)
        nn.init.zeros_(layer.attn.out_proj.bias)
        nn.init.zeros_(layer.ff[-1].weight)
        nn.init.zeros_(layer.ff[-1].bias)
    x = torch.randn(10, 16)
    torch.testing.assert_close(enc(x), x + sinusoidal_encoding(256, 16)[:10], rtol=0, atol=1e-6)


def test_attention_rows_sum_to_one():
    torch.manual_seed(3)
    enc = SequenceEncoder(EncoderConfig(num_layers=2, num_heads=4, embed_dim=16, feedforward_dim=32), 16).eval()
    _, maps = enc(torch.randn(2, 12, 16), return_attention=True)
    assert len(maps) == 2
    for w in maps:
        assert w.shape == (2, 4, 12, 12)
        torch.testing.assert_close(w.sum(-1), torch.ones(2, 4, 12), rtol=0, atol=1e-6)


def test_encoder_rejects_non_finite():
    enc = SequenceEncoder(EncoderConfig(num_layers=1, num_heads=2, embed_dim=4, feedforward_dim=4), 4)
    x = torch.zeros(3, 4)
    x[1, 2] = float("nan")
    with pytest.raises(NumericError):
        enc(x)


def test_encoder_eval_determinism():
    enc = SequenceEncoder(EncoderConfig(num_layers=2, num_heads=2, embed_dim=8, feedforward_dim=8, dropout=0.5), 8)
    enc.eval()
    x = torch.randn(16, 8)
    assert torch.equal(enc(x), enc(x))


def test_pool_identical_rows():
    head = build_head(4, 3)
    u = torch.randn(4)
    torch.testing.assert_close(pool_and_classify(u.repeat(7, 1), head), head(u))


def test_pool_row_permutation_invariant():
    head = build_head(6, 5, hidden=7)
    seq = torch.randn(9, 6)
    torch.testing.assert_close(pool_and_classify(seq[torch.randperm(9)], head), pool_and_classify(seq, head))


def test_pool_hand_computed_logits():
    head = nn.Linear(2, 2)
    with torch.no_grad():
        head.weight.copy_(torch.tensor([[1.0, 2.0], [-1.0, 0.5]]))
        head.bias.copy_(torch.tensor([0.1, -0.2]))
    seq = torch.tensor([[1.0, 0.0], [3.0, 2.0]])  # mean (2, 1)
    # [1*2 + 2*1 + 0.1, -1*2 + 0.5*1 - 0.2] = [4.1, -1.7]
    torch.testing.assert_close(pool_and_classify(seq, head), torch.tensor([4.1, -1.7]))


def test_head_width_must_be_positive():
    with pytest.raises(ConfigurationError):
        build_head(4, 0)


def test_forward_is_composition_of_stages():
    torch.manual_seed(1)
    model = SingleViewModel(tiny_config(d=16, heads=4, V=5)).eval()
    clip = torch.randn(16, 3, 32, 32)
    with torch.no_grad():
        staged = pool_and_classify(
            encode_sequence(extract_spatial_features(clip, model.backbone), model.encoder), model.head
        )
        direct = forward_single_view(clip, model)
    assert direct.shape == (5,)
    assert torch.equal(direct, staged)
    assert torch.isfinite(direct).all()


def test_shape_chain_batched():
    model = SingleViewModel(tiny_config(d=16, heads=4, V=7)).eval()
    clip = torch.randn(2, 16, 3, 32, 32)
    feats = extract_spatial_features(clip, model.backbone)
    assert feats.shape == (2, 16, 16)
    seq = encode_sequence(feats, model.encoder)
    assert seq.shape == (2, 16, 16)
    assert pool_and_classify(seq, model.head).shape == (2, 7)


def test_end_to_end_permutation_invariance_without_positions():
    torch.manual_seed(2)
    model = SingleViewModel(tiny_config(pe="none")).eval()
    clip = torch.randn(5, 3, 16, 16)
    perm = torch.tensor([3, 0, 4, 1, 2])
    with torch.no_grad():
        torch.testing.assert_close(model(clip[perm]), model(clip), rtol=0, atol=1e-6)


def test_positions_break_frame_permutation_invariance():
    torch.manual_seed(2)
    model = SingleViewModel(tiny_config()).eval()
    clip = torch.randn(5, 3, 16, 16)
    with torch.no_grad():
        assert not torch.allclose(model(clip.flip(0)), model(clip), atol=1e-6)


def test_eval_mode_bitwise_determinism():
    model = SingleViewModel(tiny_config(dropout=0.3)).eval()
    clip = torch.randn(4, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(model(clip), model(clip))


def test_frozen_backbone_not_updated():
    cfg = tiny_config()
    cfg.backbone.frozen = True
    model = SingleViewModel(cfg)
    assert all(not p.requires_grad for p in model.backbone.parameters())
    model.train()
    assert not model.backbone.training and model.encoder.training


class _Pairs(torch.utils.data.Dataset):
    def __init__(self, clips, labels):
        self.clips, self.labels = clips, labels

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return {"front": self.clips[i]}, int(self.labels[i]), str(i)


def test_tiny_model_overfits_four_samples():
    torch.manual_seed(0)
    clips = torch.randn(4, 4, 3, 16, 16)
    labels = torch.tensor([0, 1, 2, 1])
    model = SingleViewModel(tiny_config(d=16, heads=2, V=3))
    data = _Pairs(clips, labels)
    fit(model, data, None, TrainConfig(batch_size=4, learning_rate=0.05, max_epochs=200, patience=200))
    model.eval()
    with torch.no_grad():
        assert model(clips).argmax(-1).tolist() == labels.tolist()
