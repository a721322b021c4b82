import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pdtrans.errors import NonPositiveCoefficient, NonPositiveSigma
from pdtrans.losses import (
    HALF_LOG_2PI,
    gaussian_nll,
    kl_standard_normal,
    reconstruction_loss,
    total_loss,
)

# frozen from an independent float64 evaluation of the closed forms
NLL_EXAMPLES = [
    ((0.0, 0.0, 1.0), 0.9189385332046727),
    ((1.0, 0.0, 1.0), 1.4189385332046727),
    ((2.0, 0.0, 2.0), 2.1120857137646180),
]
KL_EXAMPLES = [
    ((0.0, 1.0), 0.0),
    ((1.0, 1.0), 0.5),
    ((0.0, 2.0), 0.8068528194400546),
]


def t64(*xs):
    return [torch.tensor(x, dtype=torch.float64) for x in xs]


def central_diff(f, x, h=1e-4):
    out = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = f(x).item()
        flat[i] = old - h
        down = f(x).item()
        flat[i] = old
        out.view(-1)[i] = (up - down) / (2 * h)
    return out


class TestGaussianNll:
    @pytest.mark.parametrize("args, expected", NLL_EXAMPLES)
    def test_examples(self, args, expected):
        assert gaussian_nll(*t64(*args)).item() == pytest.approx(expected, abs=1e-12)

    def test_mean_over_elements(self):
        y, mu, s = t64([0.0, 1.0, 2.0], [0.0, 0.0, 0.0], [1.0, 1.0, 2.0])
        assert gaussian_nll(y, mu, s).item() == pytest.approx(np.mean([e for _, e in NLL_EXAMPLES]), abs=1e-12)

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(NonPositiveSigma):
            gaussian_nll(*t64([1.0], [0.0], [0.0]))

    def test_minimised_at_target(self):
        y, s = t64(1.3, 0.7)
        mu = torch.tensor(1.3, dtype=torch.float64, requires_grad=True)
        (g,) = torch.autograd.grad(gaussian_nll(y, mu, s), mu, create_graph=True)
        (h,) = torch.autograd.grad(g, mu)
        assert g.item() == 0.0
        assert h.item() > 0

    def test_gradients_match_finite_differences(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(20):
            y = torch.randn(3, generator=g, dtype=torch.float64)
            mu = torch.randn(3, generator=g, dtype=torch.float64, requires_grad=True)
            s = (torch.rand(3, generator=g, dtype=torch.float64) + 0.3).requires_grad_()
            gaussian_nll(y, mu, s).backward()
            with torch.no_grad():
                fd_mu = central_diff(lambda m: gaussian_nll(y, m, s), mu.detach().clone())
                fd_s = central_diff(lambda v: gaussian_nll(y, mu, v), s.detach().clone())
            np.testing.assert_allclose(mu.grad.numpy(), fd_mu.numpy(), rtol=1e-4, atol=1e-9)
            np.testing.assert_allclose(s.grad.numpy(), fd_s.numpy(), rtol=1e-4, atol=1e-9)


class TestKl:
    @pytest.mark.parametrize("args, expected", KL_EXAMPLES)
    def test_examples(self, args, expected):
        mu, sd = t64([args[0]], [args[1]])
        assert kl_standard_normal(mu, sd).item() == pytest.approx(expected, abs=1e-12)

    def test_summed_over_dims_averaged_over_batch(self):
        mu = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
        sd = torch.tensor([[1.0, 2.0], [1.0, 1.0]], dtype=torch.float64)
        assert kl_standard_normal(mu, sd).item() == pytest.approx((0.5 + KL_EXAMPLES[2][1]) / 2)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=1, max_size=6),
        st.lists(st.floats(0.05, 4), min_size=6, max_size=6),
    )
    def test_nonnegative(self, mus, sds):
        mu = torch.tensor(mus, dtype=torch.float64)
        sd = torch.tensor(sds[: len(mus)], dtype=torch.float64)
        assert kl_standard_normal(mu, sd).item() >= -1e-12

    def test_zero_only_at_prior(self):
        mu, sd = t64([0.0] * 4, [1.0] * 4)
        assert abs(kl_standard_normal(mu, sd).item()) < 1e-9
        assert kl_standard_normal(mu + 1e-3, sd).item() > 1e-9
        assert kl_standard_normal(mu, sd * 1.001).item() > 1e-9

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(NonPositiveSigma):
            kl_standard_normal(*t64([0.0], [-1.0]))

    def test_gradients_match_finite_differences(self):
        g = torch.Generator().manual_seed(1)
        for _ in range(20):
            mu = torch.randn(2, 3, generator=g, dtype=torch.float64, requires_grad=True)
            sd = (torch.rand(2, 3, generator=g, dtype=torch.float64) * 2 + 0.3).requires_grad_()
            kl_standard_normal(mu, sd).backward()
            with torch.no_grad():
                fd_mu = central_diff(lambda m: kl_standard_normal(m, sd), mu.detach().clone())
                fd_sd = central_diff(lambda v: kl_standard_normal(mu, v), sd.detach().clone())
            np.testing.assert_allclose(mu.grad.numpy(), fd_mu.numpy(), rtol=1e-4, atol=1e-9)
            np.testing.assert_allclose(sd.grad.numpy(), fd_sd.numpy(), rtol=1e-4, atol=1e-9)


class TestReconstruction:
    def test_perfect(self):
        assert reconstruction_loss(*t64([1.0, 2.0], [1.0, 2.0], [1.0, 1.0])).item() == pytest.approx(
            HALF_LOG_2PI, abs=1e-12
        )

    def test_same_as_nll(self):
        y, m, s = (torch.rand(5, dtype=torch.float64) + 0.1 for _ in range(3))
        assert reconstruction_loss(m, y, s).item() == gaussian_nll(y, m, s).item()

    def test_gradient_wrt_mu_hat(self):
        mu_hat = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
        y, s = t64([0.0], [2.0])
        reconstruction_loss(mu_hat, y, s).backward()
        assert mu_hat.grad.item() == pytest.approx(0.25, abs=1e-12)
        fd = central_diff(lambda m: reconstruction_loss(m, y, s), mu_hat.detach().clone())
        assert fd.item() == pytest.approx(0.25, rel=1e-6)


class TestTotal:
    def test_arithmetic(self):
        out = total_loss(1.0, 0.5, 2.0)
        assert out.total.item() == 3.5
        assert out.as_floats() == {"nll": 1.0, "kl": 0.5, "recon": 2.0, "total": 3.5}

    @pytest.mark.parametrize("gamma, beta", [(1.0, 0.0), (0.0, 1.0), (-1.0, 1.0)])
    def test_coefficients_must_be_positive(self, gamma, beta):
        with pytest.raises(NonPositiveCoefficient):
            total_loss(1.0, 1.0, 1.0, gamma, beta)

    @settings(max_examples=50, deadline=None)
    @given(*(st.floats(-10, 10) for _ in range(3)), st.floats(0.01, 5), st.floats(0.01, 5))
    def test_weighted_sum_is_exact(self, nll, kl, recon, gamma, beta):
        out = total_loss(nll, kl, recon, gamma, beta)
        assert out.total.item() == gamma * nll + beta * kl + recon
        assert math.isfinite(out.total.item())
