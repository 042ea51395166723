import pytest
import torch

from hrm.config import ModelConfig
from hrm.core import init_params


def tiny_config(**kw) -> ModelConfig:
    base = dict(vocab_size=6, seq_len=8, hidden_dim=16, n_heads=2, blocks_per_module=1,
                expansion=2.0, N=2, T=2, M_max=3, batch_size=4, warmup_steps=2, lr=1e-3, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_net(tiny):
    return init_params(tiny)


@pytest.fixture
def tiny64(tiny):
    return init_params(tiny).double()


@pytest.fixture
def tokens():
    return torch.randint(0, 6, (3, 8), generator=torch.Generator().manual_seed(1))
