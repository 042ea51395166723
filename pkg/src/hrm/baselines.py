"""Transformer baselines trained through the same pipeline as the HRM.

Both expose ``segment``/``initial_carry`` so :class:`hrm.act.Trainer` and
:func:`hrm.act.evaluate` drive them unchanged.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ModelConfig
from .core import ReasoningModule, lecun_normal, rope_tables, truncated_normal
from .dynamics import CarryState, SegmentResult, StateTrace


class _BaselineNet(nn.Module):
    def __init__(self, config: ModelConfig, depth: int, generator: torch.Generator | None = None):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if generator is None:
            generator = torch.Generator().manual_seed(config.seed)
        self.config = config
        self.depth = depth
        d = config.hidden_dim
        self.embed_scale = math.sqrt(d)
        self.embedding = nn.Parameter(truncated_normal((config.vocab_size, d), std=d ** -0.5,
                                                       generator=generator))
        self.stack = ReasoningModule(config, n_blocks=depth, generator=generator)
        self.w_out = nn.Parameter(lecun_normal(d, config.vocab_size, generator))
        self.w_q = nn.Parameter(torch.zeros(d, 2))
        cos, sin = rope_tables(config.seq_len, config.head_dim, config.rope_base)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)

    def embed_input(self, tokens):
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.config.vocab_size):
            raise ValueError(f"token ids must lie in [0, {self.config.vocab_size})")
        return self.embed_scale * self.embedding[tokens]

    def initial_carry(self, batch_size: int) -> CarryState:
        dtype = self.embedding.dtype
        z = torch.zeros(batch_size, self.config.seq_len, self.config.hidden_dim, dtype=dtype)
        return CarryState(z, z.clone())

    def _apply(self, z, x_emb):
        return self.stack([z, x_emb], self.rope_cos, self.rope_sin)

    def _result(self, z, trace):
        return SegmentResult(CarryState(z.detach(), z.detach()), z @ self.w_out,
                             z[..., 0, :] @ self.w_q, trace)


class FeedForwardNet(_BaselineNet):
    """Plain stack of ``depth`` blocks; ignores the carry."""

    def segment(self, carry: CarryState, tokens: torch.Tensor, trace: bool = False) -> SegmentResult:
        x = self.embed_input(tokens)
        z = self._apply(torch.zeros_like(x), x)
        tr = None
        if trace:
            tr = StateTrace(T=1)
            tr.record(0, x, x)
            tr.record(1, z, z)
        out = self._result(z, tr)
        out.l_updates = self.depth
        return out


class RecurrentNet(_BaselineNet):
    """One weight-shared stack applied ``loops`` times per segment.

    State update ``z <- stack(z + x_emb)``; only the last application is
    recorded for autograd (one-step gradient), and the state is carried
    across segments.
    """

    def __init__(self, config: ModelConfig, depth: int, loops: int, generator=None):
        super().__init__(config, depth, generator)
        if loops < 1:
            raise ValueError("loops must be >= 1")
        self.loops = loops

    def segment(self, carry: CarryState, tokens: torch.Tensor, trace: bool = False) -> SegmentResult:
        x = self.embed_input(tokens)
        z = carry.z_L
        tr = StateTrace(T=1) if trace else None
        if tr is not None:
            tr.record(0, z, z)
        with torch.no_grad():
            for i in range(1, self.loops):
                z = self._apply(z, x)
                if tr is not None:
                    tr.record(i, z, z)
        z = self._apply(z, x)
        if tr is not None:
            tr.record(self.loops, z, z)
        out = self._result(z, tr)
        out.l_updates = self.loops * self.depth
        return out


def baseline_forward(variant: str, net: _BaselineNet, tokens: torch.Tensor,
                     carry: CarryState | None = None) -> torch.Tensor:
    """Logits of a baseline for one segment from its initial (or given) state."""
    if variant not in ("feedforward", "recurrent"):
        raise ValueError(f"unknown baseline variant {variant!r}")
    if carry is None:
        carry = net.initial_carry(tokens.shape[0])
    return net.segment(carry, tokens).logits


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
