import math

import numpy as np
import pytest
import torch

from uaed.annotations import InvalidInputError
from uaed.model import EncoderConfig, UAEDNet, sample_prediction


@pytest.fixture(scope="module")
def net():
    return UAEDNet(EncoderConfig(seed=1)).eval()


def _image(h=64, w=64, seed=0):
    return torch.rand(1, 3, h, w, generator=torch.Generator().manual_seed(seed))


class TestEncoder:
    def test_stage_resolutions(self, net):
        pyr = net.encode(_image())
        assert [tuple(f.shape[-2:]) for f in pyr.features] == [(32, 32), (16, 16), (8, 8), (4, 4)]

    def test_doubling_input_doubles_features(self, net):
        small = net.encode(_image(64, 96))
        large = net.encode(_image(128, 192))
        for a, b in zip(small.features, large.features):
            assert b.shape[-2] == 2 * a.shape[-2] and b.shape[-1] == 2 * a.shape[-1]
            assert b.shape[:2] == a.shape[:2]

    def test_deterministic(self, net):
        x = _image()
        with torch.no_grad():
            a, b = net.encode(x), net.encode(x)
        assert all(torch.equal(p, q) for p, q in zip(a.features, b.features))

    def test_same_seed_same_weights(self):
        a = UAEDNet(EncoderConfig(seed=4))
        b = UAEDNet(EncoderConfig(seed=4))
        assert all(torch.equal(p, q) for p, q in zip(a.state_dict().values(), b.state_dict().values()))

    @pytest.mark.parametrize("shape", [(16, 16), (64, 60), (30, 64)])
    def test_bad_shapes(self, net, shape):
        with pytest.raises(InvalidInputError):
            net.encode(_image(*shape))

    def test_rejects_wrong_channels(self, net):
        with pytest.raises(InvalidInputError):
            net.encode(torch.zeros(1, 1, 64, 64))


class TestDecoders:
    def test_output_shape(self, net):
        with torch.no_grad():
            for h, w in [(64, 64), (32, 96), (128, 64)]:
                out = net(_image(h, w))
                assert out.mu.shape == out.var.shape == (1, h, w)

    def test_variance_non_negative(self):
        for seed in range(5):
            m = UAEDNet(EncoderConfig(seed=seed))
            with torch.no_grad():
                for p in m.branch_parameters("variance"):
                    p.normal_(0, 1, generator=torch.Generator().manual_seed(seed))
                assert m(_image(seed=seed)).var.min() >= 0

    def test_initial_variance_near_init(self, net):
        with torch.no_grad():
            var = net(_image()).var
        assert torch.allclose(var, torch.full_like(var, 0.05), atol=5e-3)

    def test_variance_perturbation_leaves_mean(self):
        m = UAEDNet(EncoderConfig(seed=2))
        x = _image()
        with torch.no_grad():
            before = m(x)
            for p in m.branch_parameters("variance"):
                p.add_(torch.randn_like(p))
            after = m(x)
        assert torch.equal(before.mu, after.mu)
        assert not torch.equal(before.var, after.var)

    def test_branch_gradients_isolated(self):
        m = UAEDNet(EncoderConfig(seed=3))
        out = m(_image())
        out.mu.square().mean().backward(retain_graph=True)
        assert all(p.grad is None or not p.grad.any() for p in m.branch_parameters("variance"))
        assert any(p.grad is not None and p.grad.any() for p in m.branch_parameters("mean"))
        m.zero_grad(set_to_none=True)
        out.var.mean().backward()
        assert all(p.grad is None or not p.grad.any() for p in m.branch_parameters("mean"))
        assert any(p.grad is not None and p.grad.any() for p in m.branch_parameters("variance"))

    def test_no_variance_branch(self):
        m = UAEDNet(EncoderConfig(seed=0), with_variance=False)
        with torch.no_grad():
            out = m(_image())
        assert not out.var.any()
        assert m.branch_parameters("variance") == []

    def test_dense_decoder_runs(self):
        m = UAEDNet(EncoderConfig(seed=0, dense=True))
        with torch.no_grad():
            assert m(_image()).mu.shape == (1, 64, 64)


class TestSampling:
    def test_zero_noise(self):
        mu = torch.randn(5, 5)
        assert torch.equal(sample_prediction(mu, torch.rand(5, 5), 0), torch.sigmoid(mu))
        assert torch.equal(sample_prediction(mu, torch.rand(5, 5), torch.zeros(5, 5)), torch.sigmoid(mu))

    def test_closed_form(self):
        out = sample_prediction(torch.zeros(1, dtype=torch.float64), torch.ones(1, dtype=torch.float64), torch.ones(1, dtype=torch.float64))
        assert out.item() == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
        assert out.item() == pytest.approx(0.7310585786300049, abs=1e-15)

    def test_zero_variance_ignores_noise(self):
        mu = torch.randn(6, 6)
        var = torch.zeros(6, 6)
        a = sample_prediction(mu, var, torch.randn(6, 6))
        b = sample_prediction(mu, var, 10 * torch.randn(6, 6))
        assert torch.equal(a, b)

    def test_negative_variance(self):
        with pytest.raises(InvalidInputError):
            sample_prediction(torch.zeros(2), torch.tensor([0.1, -0.1]), torch.ones(2))

    def test_open_unit_interval(self):
        g = torch.Generator().manual_seed(0)
        mu = 4 * torch.randn(200, 200, generator=g, dtype=torch.float64)
        var = torch.rand(200, 200, generator=g, dtype=torch.float64) * 4
        y = sample_prediction(mu, var, torch.randn(200, 200, generator=g, dtype=torch.float64))
        assert (y > 0).all() and (y < 1).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_gradients(self, seed):
        g = torch.Generator().manual_seed(seed)
        mu = torch.randn(8, 8, generator=g, dtype=torch.float64, requires_grad=True)
        var = (torch.rand(8, 8, generator=g, dtype=torch.float64) + 0.1).requires_grad_()
        eps = torch.randn(8, 8, generator=g, dtype=torch.float64)
        y = sample_prediction(mu, var, eps)
        gm, gv = torch.autograd.grad(y.sum(), (mu, var))
        h = 1e-6
        with torch.no_grad():
            fd_m = (sample_prediction(mu + h, var, eps) - sample_prediction(mu - h, var, eps)) / (2 * h)
            fd_v = (sample_prediction(mu, var + h, eps) - sample_prediction(mu, var - h, eps)) / (2 * h)
        # elementwise op, so the summed gradient is the per-pixel derivative
        for analytic, numeric in ((gm, fd_m), (gv, fd_v)):
            rel = (analytic - numeric).abs() / numeric.abs().clamp_min(1e-8)
            assert rel.max() < 1e-4

    def test_gradient_finite_at_zero_variance(self):
        mu = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        var = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        sample_prediction(mu, var, torch.ones(3, dtype=torch.float64)).sum().backward()
        assert torch.isfinite(var.grad).all()

    @pytest.mark.parametrize("s", [0.3, 1.0, 2.5])
    def test_monte_carlo_moments(self, s):
        n = 100_000
        g = torch.Generator().manual_seed(int(s * 10))
        eps = torch.randn(n, generator=g, dtype=torch.float64)
        y = sample_prediction(torch.zeros(n, dtype=torch.float64), torch.full((n,), s * s, dtype=torch.float64), eps)
        logits = torch.logit(y).numpy()
        assert abs(logits.mean()) <= 3 * s / math.sqrt(n)
        assert abs(logits.std() - s) <= 0.02 * s
