from __future__ import annotations

import pytest
import torch

from fusioncast.core_unet import init_parameters
from fusioncast.errors import AlignmentError, ConfigError
from fusioncast.wf_unet import WFUNet, WFUNetConfig, count_wf_parameters


def build(config, seed=0):
    model = WFUNet(config)
    init_parameters(model, seed)
    return model.eval()


def set_fusion(model, w_precip, w_wind, bias):
    with torch.no_grad():
        model.fusion.weight.copy_(
            torch.tensor([[[[w_precip]], [[w_wind]]]], dtype=torch.float64)
        )
        model.fusion.bias.copy_(torch.tensor([bias], dtype=torch.float64))
    return model


class TestConfig:
    def test_even_fusion_kernel_rejected(self, tiny_core_config):
        with pytest.raises(ConfigError):
            WFUNetConfig(stream_config=tiny_core_config, fusion_kernel=(2, 2))


class TestParameterCount:
    def test_tiny(self, tiny_wf_config):
        assert count_wf_parameters(tiny_wf_config) == 2529  # 2 * 1263 + 3

    def test_matches_instantiation(self, tiny_wf_config):
        model = WFUNet(tiny_wf_config)
        assert count_wf_parameters(tiny_wf_config) == sum(
            p.numel() for p in model.parameters()
        )

    def test_wider_fusion_kernel(self, tiny_core_config):
        cfg = WFUNetConfig(stream_config=tiny_core_config, fusion_kernel=(3, 3))
        model = WFUNet(cfg)
        assert count_wf_parameters(cfg) == 2 * 1263 + 2 * 9 + 1
        assert count_wf_parameters(cfg) == sum(p.numel() for p in model.parameters())


class TestShapes:
    def test_output_shape(self, tiny_wf_config):
        model = build(tiny_wf_config)
        out = model(torch.randn(3, 2, 8, 8), torch.randn(3, 2, 8, 8))
        assert out.shape == (3, 8, 8)

    def test_wide_fusion_kernel_preserves_shape(self, tiny_core_config):
        cfg = WFUNetConfig(stream_config=tiny_core_config, fusion_kernel=(3, 3))
        model = build(cfg)
        assert model(torch.randn(1, 2, 8, 8), torch.randn(1, 2, 8, 8)).shape == (1, 8, 8)

    def test_stream_shape_mismatch(self, tiny_wf_config):
        model = build(tiny_wf_config)
        with pytest.raises(AlignmentError):
            model(torch.randn(1, 2, 8, 8), torch.randn(2, 2, 8, 8))

    def test_consistent_but_wrong_shape(self, tiny_wf_config):
        model = build(tiny_wf_config)
        with pytest.raises(ConfigError):
            model(torch.randn(1, 3, 8, 8), torch.randn(1, 3, 8, 8))


class TestFusionAlgebra:
    def test_unit_weight_selects_precip_stream(self, tiny_wf_config):
        model = set_fusion(build(tiny_wf_config), 1.0, 0.0, 0.0)
        p_in, w_in = torch.randn(2, 2, 8, 8), torch.randn(2, 2, 8, 8)
        with torch.no_grad():
            fused = model(p_in, w_in)
            p, _ = model.stream_outputs(p_in, w_in)
        assert torch.equal(fused, p)

    def test_affine_recomposition(self, tiny_wf_config):
        # double() first so 0.7 etc. are stored exactly, not as f32 roundings
        model = set_fusion(build(tiny_wf_config).double(), 0.7, -0.3, 0.125)
        p_in = torch.randn(2, 2, 8, 8, dtype=torch.float64)
        w_in = torch.randn(2, 2, 8, 8, dtype=torch.float64)
        with torch.no_grad():
            fused = model(p_in, w_in)
            p, w = model.stream_outputs(p_in, w_in)
        assert torch.allclose(fused, 0.7 * p - 0.3 * w + 0.125, atol=1e-12, rtol=0)

    def test_zeroed_wind_stream_is_inert(self, tiny_wf_config):
        model = set_fusion(build(tiny_wf_config), 1.0, 1.0, 0.0)
        with torch.no_grad():
            for param in model.stream_wind.parameters():
                param.zero_()
        p_in, w_in = torch.randn(1, 2, 8, 8), torch.randn(1, 2, 8, 8)
        with torch.no_grad():
            fused = model(p_in, w_in)
            p, w = model.stream_outputs(p_in, w_in)
        assert torch.equal(w, torch.zeros_like(w))
        assert torch.equal(fused, p)

    def test_swapping_streams_and_weights_is_identity(self, tiny_wf_config):
        a = set_fusion(build(tiny_wf_config).double(), 0.6, -0.2, 0.05)
        b = WFUNet(tiny_wf_config).double().eval()
        b.stream_precip.load_state_dict(a.stream_wind.state_dict())
        b.stream_wind.load_state_dict(a.stream_precip.state_dict())
        set_fusion(b, -0.2, 0.6, 0.05)
        p_in = torch.randn(2, 2, 8, 8, dtype=torch.float64)
        w_in = torch.randn(2, 2, 8, 8, dtype=torch.float64)
        with torch.no_grad():
            # fused sums run in opposite channel order, so agreement is to
            # rounding, not bit-for-bit
            assert torch.allclose(a(p_in, w_in), b(w_in, p_in), atol=1e-14, rtol=0)


class TestStreams:
    def test_streams_are_separate_parameters(self, tiny_wf_config):
        model = build(tiny_wf_config)
        pp = {id(p) for p in model.stream_precip.parameters()}
        wp = {id(p) for p in model.stream_wind.parameters()}
        assert not (pp & wp)
        pairs = zip(model.stream_precip.parameters(), model.stream_wind.parameters())
        assert any(not torch.equal(x, y) for x, y in pairs)

    def test_wind_params_do_not_affect_precip_stream(self, tiny_wf_config):
        model = build(tiny_wf_config)
        x = torch.randn(1, 2, 8, 8)
        with torch.no_grad():
            before, _ = model.stream_outputs(x, x)
            for param in model.stream_wind.parameters():
                param.add_(1.0)
            after, _ = model.stream_outputs(x, x)
        assert torch.equal(before, after)

    def test_eval_forward_is_bit_stable(self, tiny_wf_config):
        model = build(tiny_wf_config)
        p_in, w_in = torch.randn(2, 2, 8, 8), torch.randn(2, 2, 8, 8)
        with torch.no_grad():
            assert torch.equal(model(p_in, w_in), model(p_in, w_in))
