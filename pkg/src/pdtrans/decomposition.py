"""Conditional generative head: latent posterior, reparameterized sampling and
a trend + seasonal decoder whose components add up to the forecast mean."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EvenKernel, KernelTooLarge, NonFiniteInput, ShapeMismatch

LATENT_FLOOR = 1e-6


@dataclass
class LatentGaussian:
    mean: torch.Tensor
    std: torch.Tensor
    sample: torch.Tensor | None = None
    noise: torch.Tensor | None = None


@dataclass
class DecompositionOutput:
    trend: torch.Tensor
    seasonal: torch.Tensor
    mu_hat: torch.Tensor


def mlp(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(n_in, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, n_out)
    )


def moving_average(x: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """Centered moving average over the last axis with replicate-edge padding."""
    length = x.shape[-1]
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise EvenKernel(f"kernel_size={kernel_size} must be a positive odd integer")
    if kernel_size > 2 * length - 1:
        raise KernelTooLarge(f"kernel_size={kernel_size} exceeds 2*{length}-1")
    half = (kernel_size - 1) // 2
    if half == 0:
        return x
    lead = x.shape[:-1]
    flat = x.reshape(-1, 1, length)
    padded = torch.cat(
        [flat[..., :1].expand(-1, -1, half), flat, flat[..., -1:].expand(-1, -1, half)], dim=-1
    )
    return F.avg_pool1d(padded, kernel_size, stride=1).reshape(*lead, length)


def reparameterize(latent: LatentGaussian, generator=None, noise=None) -> LatentGaussian:
    """Draw ``z = mean + std * eps`` with ``eps ~ N(0, I)`` (or the given noise)."""
    if noise is None:
        noise = torch.randn(
            latent.mean.shape, generator=generator, dtype=latent.mean.dtype, device=latent.mean.device
        )
    z = latent.mean + latent.std * noise
    return LatentGaussian(latent.mean, latent.std, z, noise)


class LinearDecoder(nn.Module):
    """Diagonal maps on each branch; the level bias sits on the trend.

    The seasonal diagonal is per step. The trend diagonal and bias are tied
    across steps (a scalar times the identity), so a per-step pattern cannot
    be written onto the smoothed trend and cancelled by the seasonal branch.
    The returned components are the *scaled* branches, so their sum is the
    reconstructed mean for any parameter values.
    """

    def __init__(self, tau: int):
        super().__init__()
        self.trend_weight = nn.Parameter(torch.ones(1))
        self.seasonal_weight = nn.Parameter(torch.ones(tau))
        self.bias = nn.Parameter(torch.zeros(1))

    def forward(self, trend, seasonal) -> DecompositionOutput:
        if trend.shape != seasonal.shape:
            raise ShapeMismatch(f"trend {tuple(trend.shape)} vs seasonal {tuple(seasonal.shape)}")
        trend = trend * self.trend_weight + self.bias
        seasonal = seasonal * self.seasonal_weight
        return DecompositionOutput(trend, seasonal, trend + seasonal)


class GenerativeHead(nn.Module):
    def __init__(self, t0: int, tau: int, latent_dim: int, hidden: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 == 0:
            raise EvenKernel(f"kernel_size={kernel_size} must be odd")
        if kernel_size > 2 * tau - 1:
            raise KernelTooLarge(f"kernel_size={kernel_size} exceeds 2*tau-1")
        self.t0, self.tau, self.latent_dim = t0, tau, latent_dim
        self.kernel_size = kernel_size
        self.encoder = mlp(t0 + tau, hidden, 2 * latent_dim)
        self.trend_mlp = mlp(latent_dim, hidden, tau)
        self.seasonal_mlp = mlp(latent_dim + t0, hidden, tau)
        self.linear_decoder = LinearDecoder(tau)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)
        # start from a flat trend; shapes the seasonal branch can cancel get no push
        nn.init.zeros_(self.trend_mlp[-1].weight)

    def encode(self, history, mu_pred) -> LatentGaussian:
        """Posterior q(z | history, predicted means); leading axes broadcast."""
        if not (bool(torch.isfinite(history).all()) and bool(torch.isfinite(mu_pred).all())):
            raise NonFiniteInput("encoder inputs contain NaN or Inf")
        if history.shape[-1] != self.t0 or mu_pred.shape[-1] != self.tau:
            raise ShapeMismatch(
                f"expected lengths ({self.t0}, {self.tau}), got "
                f"({history.shape[-1]}, {mu_pred.shape[-1]})"
            )
        lead = torch.broadcast_shapes(history.shape[:-1], mu_pred.shape[:-1])
        x = torch.cat(
            [history.expand(*lead, self.t0), mu_pred.expand(*lead, self.tau)], dim=-1
        )
        mean, pre_std = self.encoder(x).split(self.latent_dim, dim=-1)
        return LatentGaussian(mean, F.softplus(pre_std) + LATENT_FLOOR)

    def _condition(self, z, history):
        lead = torch.broadcast_shapes(z.shape[:-1], history.shape[:-1])
        return torch.cat([z.expand(*lead, -1), history.expand(*lead, -1)], dim=-1)

    def decode_trend(self, z):
        return moving_average(self.trend_mlp(z), self.kernel_size)

    def decode_seasonal(self, z, history):
        # centred over the horizon: the level belongs to the trend
        out = self.seasonal_mlp(self._condition(z, history))
        return out - out.mean(dim=-1, keepdim=True)

    def decode(self, z, history) -> DecompositionOutput:
        """p(mu | z, history). Only the seasonal branch sees the conditioning range,
        so the phase of the cycle cannot leak into the smoothed trend."""
        trend = self.decode_trend(z)
        seasonal = self.decode_seasonal(z, history)
        lead = torch.broadcast_shapes(trend.shape, seasonal.shape)
        return self.linear_decoder(trend.expand(lead), seasonal)

    def forward(self, history, mu_pred, generator=None, noise=None):
        latent = reparameterize(self.encode(history, mu_pred), generator, noise)
        return latent, self.decode(latent.sample, history)

    def generative_forecast(
        self, history, mu_pred, sigma_pred, n_latent: int = 1, generator=None, noise=None
    ):
        """Latent draws per predicted-mean trajectory, then N(mu_hat, sigma^2) samples.

        ``history`` is ``[B, t0]``; ``mu_pred`` and ``sigma_pred`` are
        ``[B, S, tau]``. Returns the decomposition with shape
        ``[B, S, n_latent, tau]`` and predictive samples of the same shape.
        ``noise`` optionally fixes the latent noise (``[B, S, n_latent, latent_dim]``).
        """
        if n_latent < 1:
            raise ValueError("n_latent must be >= 1")
        latent = self.encode(history[:, None, :], mu_pred)
        mean = latent.mean[:, :, None, :].expand(*latent.mean.shape[:2], n_latent, -1)
        std = latent.std[:, :, None, :].expand_as(mean)
        latent = reparameterize(LatentGaussian(mean, std), generator, noise)
        decomposition = self.decode(latent.sample, history[:, None, None, :])
        sigma = sigma_pred[:, :, None, :]
        eps = torch.randn(
            decomposition.mu_hat.shape, generator=generator, dtype=sigma.dtype, device=sigma.device
        )
        samples = decomposition.mu_hat + sigma * eps
        return latent, decomposition, samples


def component_variance(sigma):
    """Variance carried by each of the trend and seasonal Gaussians."""
    return sigma**2 / 2


def sample_components(decomposition: DecompositionOutput, sigma, generator=None):
    """Independent draws Y_trend ~ N(mu_trend, sigma^2/2), Y_seasonal ~ N(mu_seasonal, sigma^2/2)."""
    std = torch.sqrt(component_variance(sigma))
    noise = torch.randn((2, *decomposition.trend.shape), generator=generator, dtype=std.dtype)
    return decomposition.trend + std * noise[0], decomposition.seasonal + std * noise[1]
