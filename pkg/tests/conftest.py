import numpy as np
import pytest
import torch

from pdtrans.data import SyntheticSpec, gen_synthetic, make_windows
from pdtrans.model import PDTrans
from pdtrans.transformer import ModelConfig, ModelInputs


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        n_layers=1,
        n_heads=2,
        d_model=8,
        d_ff=16,
        embed_dim_id=3,
        embed_dim_pos=4,
        t0=8,
        tau=4,
        latent_dim=4,
        dropout=0.0,
        n_series=3,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_inputs(cfg: ModelConfig, batch: int = 5, seed: int = 0, dtype=torch.float32) -> ModelInputs:
    g = torch.Generator().manual_seed(seed)
    return ModelInputs(
        torch.randn(batch, cfg.t0, generator=g, dtype=dtype),
        torch.randn(batch, cfg.tau, generator=g, dtype=dtype),
        torch.rand(batch, cfg.t0 + cfg.tau, cfg.n_covariates, generator=g, dtype=dtype) - 0.5,
        torch.randint(0, cfg.n_series, (batch,), generator=g),
    )


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    torch.manual_seed(0)
    return PDTrans(tiny_cfg).eval()


@pytest.fixture(scope="session")
def small_synthetic():
    return gen_synthetic(SyntheticSpec(n_series=3, length=96, seed=1))


@pytest.fixture
def small_windows(small_synthetic):
    dataset, _ = small_synthetic
    (batch,) = make_windows(dataset, 8, 4, mode="train", n_samples=6, rng=np.random.default_rng(0))
    return batch


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.report():
        terminalreporter.write_line(line)
