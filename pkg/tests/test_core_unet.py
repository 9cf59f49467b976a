from __future__ import annotations

import numpy as np
import pytest
import torch
from torch import nn

from fusioncast.core_unet import (
    CoreUNet,
    CoreUNetConfig,
    count_parameters,
    double_conv,
    init_parameters,
)
from fusioncast.errors import ConfigError
from oracles import conv3d_naive, maxpool_1x2x2_naive, upsample_nearest_naive


def build(config, seed=0):
    model = CoreUNet(config)
    init_parameters(model, seed)
    return model.eval()


class TestConfig:
    def test_channel_ladder(self):
        cfg = CoreUNetConfig(levels=3, base_channels=4, input_lag=2, spatial_size=(8, 8))
        assert [cfg.channels(i) for i in range(3)] == [4, 8, 16]

    def test_growth_three(self):
        cfg = CoreUNetConfig(
            levels=3, base_channels=2, input_lag=2, spatial_size=(8, 8), channel_growth=3
        )
        assert [cfg.channels(i) for i in range(3)] == [2, 6, 18]

    def test_validation(self):
        with pytest.raises(ConfigError):
            CoreUNetConfig(levels=0)
        with pytest.raises(ConfigError):
            CoreUNetConfig(kernel_size=2)
        with pytest.raises(ConfigError):
            CoreUNetConfig(levels=3, spatial_size=(6, 8))  # 6 not divisible by 4
        with pytest.raises(ConfigError):
            CoreUNetConfig(dropout_rate=1.0)
        with pytest.raises(ConfigError):
            CoreUNetConfig(input_lag=0)


class TestShapes:
    @pytest.mark.parametrize("batch", [1, 3])
    def test_output_shape(self, tiny_core_config, batch):
        model = build(tiny_core_config)
        out = model(torch.randn(batch, 2, 8, 8))
        assert out.shape == (batch, 8, 8)

    def test_desk_shape(self, desk_core_config):
        model = build(desk_core_config)
        out = model(torch.randn(2, 4, 32, 32))
        assert out.shape == (2, 32, 32)

    def test_rejects_wrong_lag(self, tiny_core_config):
        model = build(tiny_core_config)
        with pytest.raises(ConfigError):
            model(torch.randn(1, 3, 8, 8))

    def test_rejects_wrong_spatial(self, tiny_core_config):
        model = build(tiny_core_config)
        with pytest.raises(ConfigError):
            model(torch.randn(1, 2, 8, 16))

    def test_rejects_missing_batch_axis(self, tiny_core_config):
        model = build(tiny_core_config)
        with pytest.raises(ConfigError):
            model(torch.randn(2, 8, 8))


class TestBlocksAgainstOracles:
    def test_double_conv_matches_naive(self):
        torch.manual_seed(4)
        block = double_conv(2, 3, 3).double()
        x = torch.randn(2, 3, 5, 5, dtype=torch.float64)
        with torch.no_grad():
            got = block(x.unsqueeze(0)).squeeze(0).numpy()
        first = conv3d_naive(
            x.numpy(), block[0].weight.detach().numpy(), block[0].bias.detach().numpy()
        )
        first = np.maximum(first, 0.0)
        second = conv3d_naive(
            first, block[2].weight.detach().numpy(), block[2].bias.detach().numpy()
        )
        expected = np.maximum(second, 0.0)
        assert np.allclose(got, expected, atol=1e-12)

    def test_pool_matches_naive(self):
        x = torch.randn(3, 2, 6, 8, dtype=torch.float64)
        got = nn.MaxPool3d((1, 2, 2))(x.unsqueeze(0)).squeeze(0).numpy()
        assert np.array_equal(got, maxpool_1x2x2_naive(x.numpy()))

    def test_pool_keeps_time_axis(self):
        x = torch.randn(1, 5, 4, 4)
        assert nn.MaxPool3d((1, 2, 2))(x.unsqueeze(0)).shape == (1, 1, 5, 2, 2)

    def test_upsample_matches_naive(self):
        x = torch.randn(2, 3, 3, 4, dtype=torch.float64)
        up = nn.Upsample(scale_factor=(1, 2, 2), mode="nearest")
        got = up(x.unsqueeze(0)).squeeze(0).numpy()
        assert np.array_equal(got, upsample_nearest_naive(x.numpy()))

    def test_upsample_single_pixel(self):
        x = torch.full((1, 1, 1, 1, 1), 7.0)
        up = nn.Upsample(scale_factor=(1, 2, 2), mode="nearest")
        assert torch.equal(up(x), torch.full((1, 1, 1, 2, 2), 7.0))

    def test_head_collapses_time_as_weighted_sum(self):
        head = nn.Conv3d(1, 1, (2, 1, 1))
        with torch.no_grad():
            head.weight.copy_(torch.tensor([[[[[2.0]], [[3.0]]]]]))
            head.bias.copy_(torch.tensor([0.25]))
        x = torch.randn(1, 1, 2, 4, 4, dtype=torch.float64)
        got = head.double()(x).squeeze()
        expected = 2.0 * x[0, 0, 0] + 3.0 * x[0, 0, 1] + 0.25
        assert torch.allclose(got, expected, atol=1e-12)


class TestParameterCount:
    def test_tiny(self, tiny_core_config):
        assert count_parameters(tiny_core_config) == 1263

    def test_desk(self, desk_core_config):
        assert count_parameters(desk_core_config) == 22237

    def test_single_level(self):
        cfg = CoreUNetConfig(levels=1, base_channels=2, input_lag=2, spatial_size=(8, 8))
        assert count_parameters(cfg) == 171

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(levels=2, base_channels=2, input_lag=2, spatial_size=(8, 8)),
            dict(levels=1, base_channels=3, input_lag=5, spatial_size=(8, 8)),
            dict(levels=3, base_channels=4, input_lag=4, spatial_size=(32, 32)),
            dict(levels=2, base_channels=2, input_lag=2, spatial_size=(8, 8), kernel_size=5),
            dict(levels=3, base_channels=2, input_lag=3, spatial_size=(16, 16), channel_growth=3),
        ],
    )
    def test_closed_form_matches_instantiation(self, kwargs):
        cfg = CoreUNetConfig(**kwargs)
        model = CoreUNet(cfg)
        assert count_parameters(cfg) == sum(p.numel() for p in model.parameters())

    def test_full_scale_matches_instantiation(self):
        cfg = CoreUNetConfig()  # levels=5, base 64, lag 12, 96x96
        model = CoreUNet(cfg)
        assert count_parameters(cfg) == sum(p.numel() for p in model.parameters())

    def test_first_encoder_size(self, desk_core_config):
        model = CoreUNet(desk_core_config)
        assert sum(p.numel() for p in model.encoders[0].parameters()) == 548


class TestDeterminism:
    def test_eval_forward_is_bit_stable(self, desk_core_config):
        model = build(desk_core_config)
        x = torch.randn(2, 4, 32, 32)
        with torch.no_grad():
            a, b = model(x), model(x)
        assert torch.equal(a, b)

    def test_dropout_rate_ignored_in_eval(self, tiny_core_config):
        from dataclasses import replace

        x = torch.randn(1, 2, 8, 8)
        dry = build(replace(tiny_core_config, dropout_rate=0.0))
        wet = build(replace(tiny_core_config, dropout_rate=0.7))
        with torch.no_grad():
            assert torch.equal(dry(x), wet(x))

    def test_dropout_active_in_train_mode(self, desk_core_config):
        model = build(desk_core_config).train()
        x = torch.randn(1, 4, 32, 32)
        a, b = model(x), model(x)
        assert not torch.equal(a, b)


class TestInit:
    def test_same_seed_same_weights(self, tiny_core_config):
        a = build(tiny_core_config, seed=5)
        b = build(tiny_core_config, seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self, tiny_core_config):
        a = build(tiny_core_config, seed=5)
        b = build(tiny_core_config, seed=6)
        assert any(
            not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_biases_zero_weights_not(self, tiny_core_config):
        model = build(tiny_core_config)
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                assert torch.equal(p, torch.zeros_like(p))
            else:
                assert p.abs().sum() > 0

    def test_he_scale(self):
        cfg = CoreUNetConfig(levels=2, base_channels=16, input_lag=4, spatial_size=(8, 8))
        model = build(cfg)
        w = model.bottleneck[2].weight  # 32 -> 32 conv: fan_in = 32*27
        expected_std = (2.0 / (32 * 27)) ** 0.5
        assert abs(w.std().item() - expected_std) / expected_std < 0.05

    def test_init_leaves_global_rng_untouched(self, tiny_core_config):
        model = CoreUNet(tiny_core_config)
        torch.manual_seed(123)
        before = torch.get_rng_state()
        init_parameters(model, seed=99)
        assert torch.equal(before, torch.get_rng_state())


class TestFunction:
    def test_zero_parameters_give_zero_output(self, tiny_core_config):
        model = CoreUNet(tiny_core_config)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        out = model.eval()(torch.randn(2, 2, 8, 8))
        assert torch.equal(out, torch.zeros(2, 8, 8))

    def test_batch_independence(self, tiny_core_config):
        model = build(tiny_core_config)
        x = torch.randn(3, 2, 8, 8, dtype=torch.float64)
        model = model.double()
        with torch.no_grad():
            batched = model(x)
            single = torch.stack([model(x[i : i + 1])[0] for i in range(3)])
        assert torch.allclose(batched, single, atol=1e-12)
