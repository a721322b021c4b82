"""Encoder-decoder Transformer emitting a Gaussian (mean, std) per forecast step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AllMaskedRow, InvalidConfig, NonFiniteFeatures, ShapeMismatch

SIGMA_FLOOR = 1e-6


@dataclass
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 32
    d_ff: int = 128
    embed_dim_id: int = 20
    embed_dim_pos: int = 30
    t0: int = 168
    tau: int = 24
    dropout: float = 0.1
    latent_dim: int = 20
    # None spans the whole horizon: 2 * tau - 1, a straight line per window
    kernel_size: int | None = None
    gamma: float = 1.0
    beta: float = 1.0
    n_series: int = 1
    n_covariates: int = 3
    use_decomposition: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise InvalidConfig(f"kernel_size={self.kernel_size} must be a positive odd integer")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if self.gamma <= 0 or self.beta <= 0:
            raise InvalidConfig("gamma and beta must be > 0")
        for name in ("n_layers", "t0", "tau", "latent_dim", "n_series", "d_ff"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def trend_kernel(self) -> int:
        return 2 * self.tau - 1 if self.kernel_size is None else self.kernel_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


# Per-dataset hyperparameter presets for the benchmark datasets (N, h,
# d_model, d_ff, trade-off coefficients, trend kernel).
SIZE_PRESETS = {
    "electricity": dict(n_layers=3, n_heads=8, d_model=160, d_ff=2048, kernel_size=5),
    "traffic": dict(n_layers=3, n_heads=8, d_model=160, d_ff=2048, kernel_size=3),
    "solar": dict(n_layers=3, n_heads=8, d_model=16, d_ff=640, kernel_size=3),
    "exchange": dict(n_layers=3, n_heads=4, d_model=160, d_ff=640, kernel_size=5, t0=30, tau=20),
    "m4_hourly": dict(n_layers=3, n_heads=8, d_model=160, d_ff=2048, kernel_size=3),
}
for _row in SIZE_PRESETS.values():
    _row.update(gamma=1.0, beta=1.0, latent_dim=20, embed_dim_id=20, embed_dim_pos=30)


@dataclass
class GaussianParams:
    mean: torch.Tensor
    std: torch.Tensor


class ModelInputs(NamedTuple):
    history: torch.Tensor  # [B, t0]
    target: torch.Tensor | None  # [B, tau]
    covariates: torch.Tensor  # [B, t0 + tau, k]
    series_index: torch.Tensor  # [B] long

    @classmethod
    def from_batch(cls, batch, dtype=torch.float32) -> ModelInputs:
        return cls(
            torch.as_tensor(np.asarray(batch.history), dtype=dtype),
            torch.as_tensor(np.asarray(batch.target), dtype=dtype),
            torch.as_tensor(np.asarray(batch.covariates), dtype=dtype),
            torch.as_tensor(np.asarray(batch.series_index), dtype=torch.long),
        )

    def repeat(self, n: int) -> ModelInputs:
        """Duplicate every row ``n`` times (row-major: row b becomes rows b*n..b*n+n-1)."""
        rep = lambda x: None if x is None else x.repeat_interleave(n, dim=0)  # noqa: E731
        return ModelInputs(*(rep(x) for x in self))


def causal_mask(length: int, device=None) -> torch.Tensor:
    """Boolean ``[length, length]`` mask, True where attention is blocked (key after query)."""
    return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)


def attention_weights(q, k, mask=None):
    """Row-stochastic weights softmax(q k^T / sqrt(d_k)), blocked keys at -inf.

    ``mask`` is boolean, broadcastable to ``[..., L_q, L_k]``, True = blocked.
    """
    scores = (q * (1.0 / math.sqrt(q.shape[-1]))) @ k.transpose(-2, -1)
    if mask is not None:
        if mask.shape[-2:] != scores.shape[-2:]:
            raise ShapeMismatch(f"mask {tuple(mask.shape)} vs scores {tuple(scores.shape)}")
        if bool(mask.all(dim=-1).any()):
            raise AllMaskedRow("a query row has every key masked")
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def scaled_dot_product_attention(q, k, v, mask=None):
    weights = attention_weights(q, k, mask)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise InvalidConfig("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def split_heads(self, x):
        # [..., L, d_model] -> [..., H, L, d_k]
        *lead, length, _ = x.shape
        return x.reshape(*lead, length, self.n_heads, self.d_k).transpose(-3, -2)

    def merge_heads(self, x):
        *lead, _, length, _ = x.shape
        return x.transpose(-3, -2).reshape(*lead, length, self.d_model)

    def project_kv(self, key, value):
        return self.split_heads(self.k_proj(key)), self.split_heads(self.v_proj(value))

    def attend(self, q_heads, k_heads, v_heads, mask=None):
        weights = attention_weights(q_heads, k_heads, mask)
        out = weights @ v_heads
        return self.out_proj(self.merge_heads(out)), weights

    def forward(self, query, key, value, mask=None, return_weights=False):
        if not query.shape[-1] == key.shape[-1] == value.shape[-1] == self.d_model:
            raise ShapeMismatch(
                f"expected last dim {self.d_model}, got "
                f"{query.shape[-1]}, {key.shape[-1]}, {value.shape[-1]}"
            )
        k, v = self.project_kv(key, value)
        out, weights = self.attend(self.split_heads(self.q_proj(query)), k, v, mask)
        return (out, weights) if return_weights else out


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__(
            nn.Linear(d_model, d_ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model)
        )


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.self_attn(x, x, x)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, mask):
        x = self.norm1(x + self.drop(self.self_attn(x, x, x, mask)))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory, memory)))
        return self.norm3(x + self.drop(self.ff(x)))

    def step(self, x, cache: dict, memory_kv, n_paths: int):
        """Advance one position. ``x`` is ``[B*n_paths, 1, d]``; ``cache`` holds
        this layer's projected self-attention keys/values of earlier positions;
        ``memory_kv`` are cross-attention keys/values ``[B, H, t0, d_k]`` shared
        by the ``n_paths`` rows of each window."""
        sa = self.self_attn
        k_new, v_new = sa.project_kv(x, x)
        if cache:
            cache["k"] = torch.cat([cache["k"], k_new], dim=-2)
            cache["v"] = torch.cat([cache["v"], v_new], dim=-2)
        else:
            cache["k"], cache["v"] = k_new, v_new
        out, _ = sa.attend(sa.split_heads(sa.q_proj(x)), cache["k"], cache["v"])
        x = self.norm1(x + self.drop(out))

        ca = self.cross_attn
        rows, _, d = x.shape
        q = ca.split_heads(ca.q_proj(x.reshape(rows // n_paths, n_paths, d)))
        out, _ = ca.attend(q, *memory_kv)
        x = self.norm2(x + self.drop(out.reshape(rows, 1, d)))
        return self.norm3(x + self.drop(self.ff(x)))


class TransformerForecaster(nn.Module):
    """Autoregressive Transformer whose decoder step t sees ``(y_{t-1}, x_t)``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.id_embedding = nn.Embedding(cfg.n_series, cfg.embed_dim_id)
        self.pos_embedding = nn.Embedding(cfg.t0 + cfg.tau, cfg.embed_dim_pos)
        self.pos_proj = nn.Linear(cfg.embed_dim_pos, cfg.d_model, bias=False)
        self.input_proj = nn.Linear(1 + cfg.n_covariates + cfg.embed_dim_id, cfg.d_model)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.mu_head = nn.Linear(cfg.d_model, 1)
        self.sigma_head = nn.Linear(cfg.d_model, 1)
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.xavier_uniform_(p)
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    # embedding ------------------------------------------------------------

    def position_term(self, positions):
        return self.pos_proj(self.pos_embedding(positions))

    def embed(self, values, covariates, series_index, positions):
        """Project ``[value, covariates, id-embedding]`` and add the position term.

        values ``[B, L]``, covariates ``[B, L, k]``, series_index ``[B]``,
        positions ``[L]`` (absolute window positions, 0 = first history step).
        """
        batch, length = values.shape
        if covariates.shape != (batch, length, self.cfg.n_covariates):
            raise ShapeMismatch(
                f"covariates {tuple(covariates.shape)} != {(batch, length, self.cfg.n_covariates)}"
            )
        ids = self.id_embedding(series_index)[:, None, :].expand(batch, length, -1)
        x = torch.cat([values[..., None], covariates, ids], dim=-1)
        return self.input_proj(x) + self.position_term(positions)

    def embed_history(self, inputs: ModelInputs):
        t0 = self.cfg.t0
        if inputs.history.shape[1] != t0:
            raise ShapeMismatch(f"history length {inputs.history.shape[1]} != t0={t0}")
        positions = torch.arange(t0, device=inputs.history.device)
        return self.embed(inputs.history, inputs.covariates[:, :t0], inputs.series_index, positions)

    def embed_decoder(self, inputs: ModelInputs, target=None):
        """Decoder inputs for all tau steps: target shifted right by one, the
        last history value in front."""
        t0, tau = self.cfg.t0, self.cfg.tau
        target = inputs.target if target is None else target
        if target is None or target.shape[1] != tau:
            raise ShapeMismatch(f"decoder needs a target of length tau={tau}")
        values = torch.cat([inputs.history[:, -1:], target[:, :-1]], dim=1)
        positions = torch.arange(t0, t0 + tau, device=values.device)
        return self.embed(values, inputs.covariates[:, t0:], inputs.series_index, positions)

    # stacks ------------------------------------------------------------------

    def encode(self, embedded):
        x = embedded
        for layer in self.encoder_layers:
            x = layer(x)
        return x

    def decode(self, embedded, memory, mask=None):
        if mask is None:
            mask = causal_mask(embedded.shape[1], embedded.device)
        x = embedded
        for layer in self.decoder_layers:
            x = layer(x, memory, mask)
        return x

    def likelihood_head(self, features) -> GaussianParams:
        if not bool(torch.isfinite(features).all()):
            raise NonFiniteFeatures("decoder features contain NaN or Inf")
        mu = self.mu_head(features).squeeze(-1)
        sigma = F.softplus(self.sigma_head(features).squeeze(-1)) + SIGMA_FLOOR
        return GaussianParams(mu, sigma)

    def forward(self, inputs: ModelInputs) -> GaussianParams:
        """Teacher-forced pass over the whole prediction range at once."""
        memory = self.encode(self.embed_history(inputs))
        features = self.decode(self.embed_decoder(inputs), memory)
        return self.likelihood_head(features)

    # incremental decoding ------------------------------------------------------

    def _memory_kv(self, memory):
        return [layer.cross_attn.project_kv(memory, memory) for layer in self.decoder_layers]

    def _step(self, x, caches, memory_kv, n_paths):
        for layer, cache, kv in zip(self.decoder_layers, caches, memory_kv):
            x = layer.step(x, cache, kv, n_paths)
        return self.likelihood_head(x)

    def decode_sequential(self, inputs: ModelInputs) -> GaussianParams:
        """Step-by-step decoding fed with the ground-truth target (no sampling)."""
        t0, tau = self.cfg.t0, self.cfg.tau
        memory = self.encode(self.embed_history(inputs))
        memory_kv = self._memory_kv(memory)
        caches = [{} for _ in self.decoder_layers]
        prev = inputs.history[:, -1]
        mus, sigmas = [], []
        for i in range(tau):
            x = self.embed(
                prev[:, None],
                inputs.covariates[:, t0 + i : t0 + i + 1],
                inputs.series_index,
                torch.tensor([t0 + i], device=prev.device),
            )
            params = self._step(x, caches, memory_kv, 1)
            mus.append(params.mean[:, 0])
            sigmas.append(params.std[:, 0])
            prev = inputs.target[:, i]
        return GaussianParams(torch.stack(mus, 1), torch.stack(sigmas, 1))

    @torch.no_grad()
    def autoregressive_forecast(
        self,
        inputs: ModelInputs,
        n_samples: int,
        generator: torch.Generator | None = None,
    ):
        """Sample ``n_samples`` paths per window, feeding each draw back in.

        Returns ``(values, mu, sigma)``, each ``[B, n_samples, tau]`` in the
        scaled domain.
        """
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        t0, tau = self.cfg.t0, self.cfg.tau
        batch = inputs.history.shape[0]
        memory = self.encode(self.embed_history(inputs))
        memory_kv = self._memory_kv(memory)
        caches = [{} for _ in self.decoder_layers]
        ids = inputs.series_index.repeat_interleave(n_samples)
        covs = inputs.covariates.repeat_interleave(n_samples, dim=0)
        prev = inputs.history[:, -1].repeat_interleave(n_samples)
        values, mus, sigmas = [], [], []
        for i in range(tau):
            x = self.embed(
                prev[:, None],
                covs[:, t0 + i : t0 + i + 1],
                ids,
                torch.tensor([t0 + i], device=prev.device),
            )
            params = self._step(x, caches, memory_kv, n_samples)
            mu, sigma = params.mean[:, 0], params.std[:, 0]
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            prev = mu + sigma * noise
            values.append(prev)
            mus.append(mu)
            sigmas.append(sigma)
        shape = (batch, n_samples, tau)
        return tuple(torch.stack(x, dim=1).reshape(shape) for x in (values, mus, sigmas))
