import numpy as np
import pytest
import torch

from clickseg import ModelConfig, SegmentationModel
from clickseg.net import backbone_forward, pad_to_stride


def make_inputs(rng, b=1, h=32, w=32, zeros=False):
    if zeros:
        img = torch.zeros((b, 3, h, w))
        smap = torch.zeros((b, 2, h, w))
    else:
        img = torch.from_numpy(rng.random((b, 3, h, w)).astype(np.float32))
        smap = torch.from_numpy((rng.random((b, 2, h, w)) > 0.9).astype(np.float32))
    return img, smap


class TestModelConfig:
    def test_concat_input_conflicts_with_fusion(self):
        with pytest.raises(ValueError):
            ModelConfig(concat_input=True, use_fusion=True)
        cfg = ModelConfig(concat_input=True, use_correction=False, use_fusion=False)
        assert cfg.input_channels == 6

    def test_head_channels_extra_for_correction_only(self):
        cfg = ModelConfig(channels=16, use_correction=True, use_fusion=False)
        assert cfg.head_in_channels == 17
        assert ModelConfig(channels=16).head_in_channels == 16

    def test_arch_hash_changes_with_fields(self):
        a = ModelConfig(channels=16)
        b = ModelConfig(channels=32)
        assert a.arch_hash() != b.arch_hash()
        assert a.arch_hash() == ModelConfig(channels=16).arch_hash()


class TestBackbone:
    def test_zero_inputs_finite_features(self, tiny_model, rng):
        img, smap = make_inputs(rng, zeros=True)
        feats = backbone_forward(tiny_model.backbone, img, smap)
        assert torch.isfinite(feats).all()

    def test_deterministic_bit_identical(self, tiny_model, rng):
        img, smap = make_inputs(rng)
        a = backbone_forward(tiny_model.backbone, img, smap)
        b = backbone_forward(tiny_model.backbone, img, smap)
        assert torch.equal(a, b)

    def test_output_shape_and_nonnegative(self, tiny_model, rng):
        img, smap = make_inputs(rng, h=32, w=48)
        feats = backbone_forward(tiny_model.backbone, img, smap)
        assert feats.shape == (1, tiny_model.config.channels, 8, 12)
        assert (feats >= 0).all()

    def test_internal_padding_for_odd_sizes(self, tiny_model, rng):
        img, smap = make_inputs(rng, h=50, w=50)
        feats = backbone_forward(tiny_model.backbone, img, smap)
        assert feats.shape[-2:] == (13, 13)  # padded 52 / 4

    def test_receptive_field_bounds_single_pixel_perturbation(self, tiny_model, rng):
        img, smap = make_inputs(rng, h=40, w=40)
        base = backbone_forward(tiny_model.backbone, img, smap)
        y, x = 17, 23
        img2 = img.clone()
        img2[0, 0, y, x] += 1.0
        pert = backbone_forward(tiny_model.backbone, img2, smap)
        changed = (base != pert).any(dim=1)[0]

        def influence(v):
            lo = hi = v
            lo, hi = lo - 1, hi + 1  # stem 3x3
            lo, hi = -(-(lo - 1) // 2), (hi + 1) // 2  # stride-2 conv, pad 1
            lo, hi = -(-(lo - 1) // 2), (hi + 1) // 2  # second stride-2 conv
            lo, hi = lo - 4, hi + 4  # two residual blocks, two 3x3 convs each
            return lo, hi

        ys, xs = np.nonzero(changed.numpy())
        lo_y, hi_y = influence(y)
        lo_x, hi_x = influence(x)
        assert ys.min() >= lo_y and ys.max() <= hi_y
        assert xs.min() >= lo_x and xs.max() <= hi_x
        assert len(ys) > 0  # the perturbation must reach the features at all


class TestHead:
    def test_outputs_strictly_between_zero_and_one(self, tiny_model, rng):
        feats = torch.from_numpy(rng.random((1, 8, 8, 8)).astype(np.float32))
        out = tiny_model.head(feats)
        assert out.min().item() > 0.0
        assert out.max().item() < 1.0

    def test_zero_features_zero_bias_give_half(self, tiny_config):
        torch.manual_seed(0)
        model = SegmentationModel(tiny_config)
        with torch.no_grad():
            for layer in (model.head.conv1, model.head.conv2, model.head.classifier):
                layer.bias.zero_()
        out = model.head(torch.zeros((1, 8, 4, 4)))
        assert torch.allclose(out, torch.full_like(out, 0.5))

    def test_upsample_recovers_input_resolution(self, tiny_model, rng):
        img, smap = make_inputs(rng, h=96, w=96)
        feats = backbone_forward(tiny_model.backbone, img, smap)
        out = tiny_model.head(feats)
        assert out.shape == (1, 1, 96, 96)


class TestPadding:
    def test_pad_to_stride_amounts(self):
        x = torch.zeros((1, 1, 50, 47))
        padded, (ph, pw) = pad_to_stride(x, 4)
        assert padded.shape[-2:] == (52, 48)
        assert (ph, pw) == (2, 1)

    def test_no_padding_when_divisible(self):
        x = torch.zeros((1, 1, 48, 48))
        padded, (ph, pw) = pad_to_stride(x, 4)
        assert padded is x
        assert (ph, pw) == (0, 0)
