"""Loss terms of the joint objective and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import NonPositiveCoefficient, NonPositiveSigma

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def gaussian_nll(y, mu, sigma) -> torch.Tensor:
    """Mean over elements of (y - mu)^2 / (2 sigma^2) + log sigma + log(2 pi) / 2."""
    sigma = _tensor(sigma, mu)
    y, mu = _tensor(y, sigma), _tensor(mu, sigma)
    if not bool((sigma > 0).all()):
        raise NonPositiveSigma("sigma must be strictly positive")
    return ((y - mu) ** 2 / (2 * sigma**2) + torch.log(sigma)).mean() + HALF_LOG_2PI


def kl_standard_normal(mu, sigma) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis and
    averaged over the rest."""
    sigma = _tensor(sigma, mu)
    mu = _tensor(mu, sigma)
    if not bool((sigma > 0).all()):
        raise NonPositiveSigma("latent sigma must be strictly positive")
    per_row = -0.5 * (1 + torch.log(sigma**2) - mu**2 - sigma**2).sum(dim=-1)
    return per_row.mean()


def reconstruction_loss(mu_hat, y, sigma) -> torch.Tensor:
    # Scored against the observations, with the Transformer's sigma.
    return gaussian_nll(y, mu_hat, sigma)


@dataclass
class LossBreakdown:
    nll: torch.Tensor
    kl: torch.Tensor
    recon: torch.Tensor
    total: torch.Tensor
    gamma: float
    beta: float

    def as_floats(self) -> dict:
        return {
            "nll": self.nll.item(),
            "kl": self.kl.item(),
            "recon": self.recon.item(),
            "total": self.total.item(),
        }


def total_loss(nll, kl, recon, gamma: float = 1.0, beta: float = 1.0) -> LossBreakdown:
    if not gamma > 0 or not beta > 0:
        raise NonPositiveCoefficient(f"gamma={gamma}, beta={beta}; both must be > 0")
    nll, kl, recon = (_tensor(x) for x in (nll, kl, recon))
    return LossBreakdown(nll, kl, recon, gamma * nll + beta * kl + recon, gamma, beta)
