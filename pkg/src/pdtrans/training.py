"""Joint optimisation loop, learning-rate schedule, checkpoints and early stopping."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .data import TimeSeriesDataset, make_windows
from .errors import CheckpointFormatError, EmptyValidationSplit, NonFiniteLoss, WindowTooLong
from .model import PDTrans
from .transformer import ModelConfig, ModelInputs

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pdtrans-checkpoint"
CHECKPOINT_VERSION = 1
LOG_FIELDS = ("epoch", "step", "nll", "kl", "recon", "total", "lr")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def lr_schedule(epoch: int, base_lr: float = 1e-3) -> float:
    """Step decay: 20% lower every two epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * 0.8 ** (epoch // 2)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    base_lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    n_samples_infer: int = 100
    n_latent_infer: int = 1
    batches_per_epoch: int = 100
    n_windows: int = 7
    n_samples_val: int = 20
    clip_norm: float = 10.0
    frequency: str = "hourly"

    def to_dict(self) -> dict:
        """Flat dict: model fields and run fields side by side."""
        out = self.model.to_dict()
        out.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        model_keys = {f.name for f in fields(ModelConfig)}
        run_keys = {f.name for f in fields(cls)} - {"model"}
        unknown = set(data) - model_keys - run_keys
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        model = ModelConfig(**{k: v for k, v in data.items() if k in model_keys})
        return cls(model=model, **{k: v for k, v in data.items() if k in run_keys})

    @classmethod
    def load(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @property
    def holdout(self) -> int:
        """Steps reserved at the end of each series for one evaluation split."""
        return self.n_windows * self.model.tau


@dataclass
class TrainState:
    model: PDTrans
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    generator: torch.Generator
    epoch: int = 0
    step: int = 0
    best_val: float = math.inf
    patience_left: int = 0
    log_rows: list = field(default_factory=list)


def init_state(config: TrainConfig, n_series: int | None = None) -> TrainState:
    torch.manual_seed(config.seed)
    model_cfg = config.model
    if n_series is not None and n_series != model_cfg.n_series:
        model_cfg = ModelConfig(**{**model_cfg.to_dict(), "n_series": n_series})
        config.model = model_cfg
    model = PDTrans(model_cfg)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    return TrainState(
        model=model,
        optimizer=optimizer,
        rng=np.random.default_rng(config.seed),
        generator=torch.Generator().manual_seed(config.seed),
        patience_left=config.patience,
    )


def train_epoch(
    state: TrainState,
    dataset: TimeSeriesDataset,
    config: TrainConfig,
    end_offset: int | None = None,
) -> TrainState:
    """One epoch of ``batches_per_epoch`` random-window Adam steps."""
    cfg = config.model
    end_offset = 2 * config.holdout if end_offset is None else end_offset
    lr = lr_schedule(state.epoch, config.base_lr)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    model = state.model
    model.train()
    for b in range(config.batches_per_epoch):
        (batch,) = make_windows(
            dataset,
            cfg.t0,
            cfg.tau,
            mode="train",
            n_samples=config.batch_size,
            end_offset=end_offset,
            rng=state.rng,
        )
        inputs = ModelInputs.from_batch(batch)
        state.optimizer.zero_grad(set_to_none=True)
        losses = model.loss(inputs, generator=state.generator)
        if not torch.isfinite(losses.total):
            raise NonFiniteLoss(b, state.epoch, float(losses.total))
        losses.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
        state.optimizer.step()
        state.step += 1
        state.log_rows.append({"epoch": state.epoch, "step": state.step, **losses.as_floats(), "lr": lr})
    state.epoch += 1
    return state


def validation_score(model: PDTrans, dataset, config: TrainConfig, end_offset: int) -> float:
    from .evaluation import evaluate, rolling_forecast

    results = rolling_forecast(
        model,
        dataset,
        n_windows=config.n_windows,
        n_samples=config.n_samples_val,
        n_latent=config.n_latent_infer,
        seed=config.seed,
        end_offset=end_offset,
    )
    return evaluate(results)["rho_0.5"]


def fit(
    config: TrainConfig,
    dataset: TimeSeriesDataset,
    run_dir,
    time_budget: float | None = None,
) -> Path:
    """Train with early stopping on validation rho_0.5; return the best checkpoint path.

    The last ``n_windows * tau`` steps of every series are held out for
    testing and the ``n_windows * tau`` before them for validation.
    ``time_budget`` (seconds) optionally ends training after the epoch
    that crosses it.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.model
    val_offset = config.holdout
    try:
        make_windows(dataset, cfg.t0, cfg.tau, mode="eval", n_windows=1, end_offset=val_offset)
        make_windows(dataset, cfg.t0, cfg.tau, mode="eval", n_windows=1, end_offset=2 * val_offset)
    except WindowTooLong as exc:
        raise EmptyValidationSplit(f"series too short for train/validation/test split: {exc}") from exc

    state = init_state(config, n_series=len(dataset))
    series_ids = dataset.series_ids
    log_path = run_dir / "train_log.csv"
    best_path = run_dir / "best.ckpt"
    started = time.monotonic()
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        while state.epoch < config.max_epochs:
            n_logged = len(state.log_rows)
            train_epoch(state, dataset, config)
            writer.writerows(state.log_rows[n_logged:])
            fh.flush()
            score = validation_score(state.model, dataset, config, val_offset)
            improved = math.isfinite(score) and score < state.best_val
            if improved:
                state.best_val = score
                state.patience_left = config.patience
            else:
                state.patience_left -= 1
            log.info(
                "epoch %d val rho_0.5=%.5f best=%.5f", state.epoch, score, state.best_val
            )
            save_checkpoint(run_dir / "last.ckpt", state, config, series_ids)
            if improved:
                save_checkpoint(best_path, state, config, series_ids)
            if state.patience_left <= 0:
                log.info("early stop after epoch %d", state.epoch)
                break
            if time_budget is not None and time.monotonic() - started > time_budget:
                log.info("time budget reached after epoch %d", state.epoch)
                break
    if not best_path.exists():
        save_checkpoint(best_path, state, config, series_ids)
    return best_path


# checkpoints ------------------------------------------------------------------


def save_checkpoint(path, state: TrainState, config: TrainConfig, series_ids) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "series_ids": [int(s) for s in series_ids],
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "best_val": state.best_val,
        "patience_left": state.patience_left,
        "rng_state": {
            "numpy": state.rng.bit_generator.state,
            "torch": state.generator.get_state(),
        },
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[PDTrans, TrainConfig, dict]:
    """Rebuild the model (in eval mode) and its run config from a checkpoint."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path} is not a pdtrans checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {payload.get('version')}")
    config = TrainConfig.from_dict(payload["config"])
    model = PDTrans(config.model)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config, payload


def restore_state(path) -> tuple[TrainState, TrainConfig]:
    """Resume a training state (parameters, optimizer moments, RNGs) from a checkpoint."""
    model, config, payload = load_checkpoint(path)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    optimizer.load_state_dict(payload["optimizer"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng_state"]["numpy"]
    gen = torch.Generator()
    gen.set_state(payload["rng_state"]["torch"])
    state = TrainState(
        model=model,
        optimizer=optimizer,
        rng=rng,
        generator=gen,
        epoch=payload["epoch"],
        step=payload["step"],
        best_val=payload["best_val"],
        patience_left=payload["patience_left"],
    )
    return state, config


def parameter_digest(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


__all__ = [
    "TrainConfig",
    "TrainState",
    "fit",
    "init_state",
    "load_checkpoint",
    "lr_schedule",
    "parameter_digest",
    "restore_state",
    "save_checkpoint",
    "train_epoch",
]
