"""The full forecaster: Transformer likelihood plus optional generative head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .decomposition import DecompositionOutput, GenerativeHead
from .losses import LossBreakdown, gaussian_nll, kl_standard_normal, reconstruction_loss, total_loss
from .transformer import ModelConfig, ModelInputs, TransformerForecaster


@dataclass
class Forecast:
    """Scaled-domain forecast for a batch of windows.

    ``samples`` pools every draw per window: ``[B, n_draws, tau]``.
    ``mu_paths``/``sigma_paths`` are the autoregressive trajectories
    ``[B, n_samples, tau]``; ``decomposition`` (absent in ablation mode) has
    shape ``[B, n_samples, n_latent, tau]``.
    """

    samples: torch.Tensor
    mu_paths: torch.Tensor
    sigma_paths: torch.Tensor
    decomposition: DecompositionOutput | None


class PDTrans(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.transformer = TransformerForecaster(config)
        self.head = (
            GenerativeHead(
                config.t0,
                config.tau,
                config.latent_dim,
                max(config.d_ff // 4, 1),
                config.trend_kernel,
            )
            if config.use_decomposition
            else None
        )

    def loss(self, inputs: ModelInputs, generator=None, noise=None) -> LossBreakdown:
        """Joint objective on one batch: teacher-forced NLL, and with the head
        enabled, KL to N(0, I) plus the reconstruction NLL of mu_hat."""
        params = self.transformer(inputs)
        nll = gaussian_nll(inputs.target, params.mean, params.std)
        if self.head is None:
            zero = torch.zeros((), dtype=nll.dtype)
            return total_loss(nll, zero, zero, self.config.gamma, self.config.beta)
        latent, decomposition = self.head(inputs.history, params.mean, generator, noise)
        kl = kl_standard_normal(latent.mean, latent.std)
        recon = reconstruction_loss(decomposition.mu_hat, inputs.target, params.std)
        return total_loss(nll, kl, recon, self.config.gamma, self.config.beta)

    @torch.no_grad()
    def forecast(
        self, inputs: ModelInputs, n_samples: int = 100, n_latent: int = 1, generator=None
    ) -> Forecast:
        values, mu, sigma = self.transformer.autoregressive_forecast(inputs, n_samples, generator)
        if self.head is None:
            return Forecast(values, mu, sigma, None)
        _, decomposition, samples = self.head.generative_forecast(
            inputs.history, mu, sigma, n_latent, generator
        )
        batch, _, _, tau = samples.shape
        return Forecast(samples.reshape(batch, -1, tau), mu, sigma, decomposition)
