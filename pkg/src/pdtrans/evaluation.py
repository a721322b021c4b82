"""Quantile metrics, rolling-window forecasting and result writers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np
import torch

from .data import TimeSeriesDataset, WindowBatch, make_windows
from .errors import HistoryTooShort, MissingGroundTruth, ShapeMismatch, ZeroDenominator
from .model import PDTrans
from .transformer import ModelInputs

QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
FORECAST_COLUMNS = ("series_id", "window", "step", "q10", "q50", "q90", "mean", "sigma")
DECOMPOSITION_COLUMNS = ("series_id", "step", "mu_hat", "mu_trend", "mu_seasonal", "sigma")

# rows (windows x sample paths) pushed through the decoder at once
MAX_ROWS = 4096


def pinball(y, y_hat, rho: float) -> np.ndarray:
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    diff = y - y_hat
    return np.where(diff > 0, rho * diff, (rho - 1) * diff)


def _quantile_terms(y, y_hat, rho):
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"y {y.shape} vs forecast {y_hat.shape}")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    return 2 * pinball(y, y_hat, rho).sum(), np.abs(y).sum()


def quantile_loss(y, y_hat, rho: float) -> float:
    """Normalised rho-quantile loss 2 * sum pinball / sum |y|."""
    num, den = _quantile_terms(y, y_hat, rho)
    if den == 0:
        raise ZeroDenominator("sum of |y| is zero")
    return float(num / den)


@dataclass
class ForecastResult:
    """One forecast window, every array in the data domain."""

    series_id: int
    window: int
    start: int
    quantiles: dict[float, np.ndarray]
    mean: np.ndarray
    samples: np.ndarray | None = None
    sigma: np.ndarray | None = None
    mu_hat: np.ndarray | None = None
    trend: np.ndarray | None = None
    seasonal: np.ndarray | None = None
    truth: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return self.start + np.arange(len(self.mean))


def _quantile_curves(samples, rhos, method, mu_hat=None, sigma=None):
    if method == "empirical":
        qs = np.quantile(samples, rhos, axis=0)
        # interpolation rounding can break ties by an ulp; keep curves ordered
        qs = np.maximum.accumulate(qs, axis=0)
    elif method == "analytic":
        z = np.array([NormalDist().inv_cdf(r) for r in rhos])
        qs = mu_hat[None, :] + z[:, None] * sigma[None, :]
    else:
        raise ValueError(f"unknown quantile method {method!r}")
    return {float(r): q for r, q in zip(rhos, qs)}


def _remap(batch: WindowBatch, index_of: dict | None) -> WindowBatch:
    if index_of is None:
        return batch
    try:
        idx = np.array([index_of[int(s)] for s in batch.series_id], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"series {exc.args[0]} unknown to the model") from None
    fields_ = batch._fields()
    fields_["series_index"] = idx
    return WindowBatch(**fields_)


def rolling_forecast(
    model: PDTrans,
    dataset: TimeSeriesDataset,
    t0: int | None = None,
    tau: int | None = None,
    n_windows: int | None = 7,
    n_samples: int = 100,
    n_latent: int = 1,
    seed: int = 0,
    end_offset: int = 0,
    quantiles: Sequence[float] = QUANTILES,
    method: str = "empirical",
    series_ids: Sequence[int] | None = None,
    keep_samples: bool = False,
) -> list[ForecastResult]:
    """Forecast the last ``n_windows`` non-overlapping windows of every series.

    Each window gets ``n_samples`` autoregressive paths; with the generative
    head enabled each path is refined by ``n_latent`` latent draws and the
    pooled N(mu_hat, sigma^2) samples give the quantile curves. Without the
    head the sampled paths themselves are the predictive draws.
    ``series_ids`` lists the ids in embedding order when the dataset is not
    the one the model was trained on.
    """
    cfg = model.config
    t0 = cfg.t0 if t0 is None else t0
    tau = cfg.tau if tau is None else tau
    if (t0, tau) != (cfg.t0, cfg.tau):
        raise ShapeMismatch(f"model expects t0={cfg.t0}, tau={cfg.tau}")
    index_of = None if series_ids is None else {int(s): i for i, s in enumerate(series_ids)}
    (batch,) = make_windows(dataset, t0, tau, mode="eval", n_windows=n_windows, end_offset=end_offset)
    batch = _remap(batch, index_of)
    truth = batch.unscale(batch.target)
    was_training = model.training
    model.eval()
    generator = torch.Generator().manual_seed(seed)
    chunk = max(1, MAX_ROWS // (n_samples * n_latent))
    rhos = tuple(sorted(set(quantiles) | {0.5, 0.9}))
    results = []
    try:
        for lo in range(0, len(batch), chunk):
            part = batch[lo : lo + chunk]
            fc = model.forecast(ModelInputs.from_batch(part), n_samples, n_latent, generator)
            samples = part.unscale(fc.samples.double().numpy())
            sigma = part.unscale(fc.sigma_paths.double().mean(dim=1).numpy())
            if fc.decomposition is not None:
                dec = fc.decomposition
                mean_of = lambda x: part.unscale(x.double().mean(dim=(1, 2)).numpy())  # noqa: E731
                mu_hat, trend, seasonal = mean_of(dec.mu_hat), mean_of(dec.trend), mean_of(dec.seasonal)
            else:
                mu_hat = part.unscale(fc.mu_paths.double().mean(dim=1).numpy())
                trend = seasonal = None
            for j in range(len(part)):
                i = lo + j
                results.append(
                    ForecastResult(
                        series_id=int(part.series_id[j]),
                        window=int(part.window[j]),
                        start=int(part.start[j]),
                        quantiles=_quantile_curves(samples[j], rhos, method, mu_hat[j], sigma[j]),
                        mean=samples[j].mean(axis=0),
                        samples=samples[j] if keep_samples else None,
                        sigma=sigma[j],
                        mu_hat=mu_hat[j],
                        trend=None if trend is None else trend[j],
                        seasonal=None if seasonal is None else seasonal[j],
                        truth=truth[i],
                        extras={"scale": float(part.scale[j])},
                    )
                )
    finally:
        model.train(was_training)
    return results


def evaluate(results: Iterable[ForecastResult], rhos: Sequence[float] = (0.5, 0.9)) -> dict:
    """Global rho-quantile losses: numerators and denominators are summed over
    every series and window before dividing."""
    results = list(results)
    num = {r: 0.0 for r in rhos}
    den = 0.0
    for res in results:
        if res.truth is None:
            raise MissingGroundTruth(f"series {res.series_id} window {res.window} has no truth")
        for r in rhos:
            n, d = _quantile_terms(res.truth, res.quantiles[float(r)], r)
            num[r] += n
        den += d
    if den == 0:
        raise ZeroDenominator("sum of |y| is zero over all windows")
    metrics = {f"rho_{r}": float(num[r] / den) for r in rhos}
    metrics["n_windows"] = len({res.window for res in results})
    metrics["n_series"] = len({res.series_id for res in results})
    return metrics


def format_metrics(metrics: dict, digits: int = 3) -> dict:
    return {k: round(v, digits) if isinstance(v, float) else v for k, v in metrics.items()}


def baseline_seasonal_naive(
    dataset: TimeSeriesDataset,
    period: int,
    tau: int,
    t0: int | None = None,
    n_windows: int | None = 7,
    end_offset: int = 0,
) -> list[ForecastResult]:
    """Repeat the last observed season: y_hat[t] = y[t - period] (cycled when tau > period)."""
    t0 = period if t0 is None else t0
    if t0 < period:
        raise HistoryTooShort(f"history of {t0} steps is shorter than the period {period}")
    (batch,) = make_windows(dataset, t0, tau, mode="eval", n_windows=n_windows, end_offset=end_offset)
    hist = batch.unscale(batch.history)
    truth = batch.unscale(batch.target)
    lag = t0 - period + np.arange(tau) % period
    point = hist[:, lag]
    results = []
    for i in range(len(batch)):
        results.append(
            ForecastResult(
                series_id=int(batch.series_id[i]),
                window=int(batch.window[i]),
                start=int(batch.start[i]),
                quantiles={r: point[i] for r in QUANTILES},
                mean=point[i],
                truth=truth[i],
            )
        )
    return results


# writers ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_forecast_csv(results: Sequence[ForecastResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FORECAST_COLUMNS)
        for res in results:
            for i, step in enumerate(res.steps):
                sig = None if res.sigma is None else res.sigma[i]
                w.writerow(
                    [
                        res.series_id,
                        res.window,
                        int(step),
                        _fmt(res.quantiles[0.1][i]),
                        _fmt(res.quantiles[0.5][i]),
                        _fmt(res.quantiles[0.9][i]),
                        _fmt(res.mean[i]),
                        _fmt(sig),
                    ]
                )


def write_decomposition_csv(results: Sequence[ForecastResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DECOMPOSITION_COLUMNS)
        for res in results:
            for i, step in enumerate(res.steps):
                pick = lambda a: None if a is None else a[i]  # noqa: E731
                w.writerow(
                    [
                        res.series_id,
                        int(step),
                        _fmt(pick(res.mu_hat)),
                        _fmt(pick(res.trend)),
                        _fmt(pick(res.seasonal)),
                        _fmt(pick(res.sigma)),
                    ]
                )


def write_metrics_json(metrics: dict, path, digits: int = 3) -> None:
    Path(path).write_text(json.dumps(format_metrics(metrics, digits), indent=2) + "\n")
