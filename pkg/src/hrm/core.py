"""Transformer building blocks for the low/high-level recurrent modules.

Every linear map is bias-free and stored as a ``[fan_in, fan_out]`` matrix so
that ``y = x @ W``. RMSNorm carries no learned scale.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig

__all__ = [
    "truncated_normal",
    "lecun_normal",
    "rms_norm",
    "rope_tables",
    "apply_rope",
    "Attention",
    "GatedMLP",
    "Block",
    "ReasoningModule",
    "HRMNet",
    "init_params",
    "stablemax",
    "log_stablemax",
]


def truncated_normal(shape, std: float = 1.0, bound: float = 2.0,
                     generator: torch.Generator | None = None,
                     dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Normal(0, std^2) samples restricted to ``[-bound*std, bound*std]``.

    Out-of-range draws are resampled (rejection), so the result is an exact
    truncated normal rather than a clipped one.
    """
    out = torch.randn(shape, generator=generator, dtype=torch.float64)
    bad = out.abs() > bound
    while bad.any():
        out[bad] = torch.randn(int(bad.sum()), generator=generator, dtype=torch.float64)
        bad = out.abs() > bound
    return (out * std).to(dtype)


def lecun_normal(fan_in: int, fan_out: int, generator: torch.Generator | None = None) -> torch.Tensor:
    # std 1/sqrt(fan_in) before truncation; no variance correction
    return truncated_normal((fan_in, fan_out), std=fan_in ** -0.5, generator=generator)


def rms_norm(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)


def rope_tables(seq_len: int, head_dim: int, base: float = 10000.0):
    """Cosine/sine tables of shape ``[seq_len, head_dim // 2]``."""
    inv_freq = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    angles = torch.arange(seq_len, dtype=torch.float64)[:, None] * inv_freq[None, :]
    return angles.cos().float(), angles.sin().float()


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive channel pairs ``(2k, 2k+1)`` of ``x[..., L, head_dim]``."""
    x1, x2 = x[..., 0::2], x[..., 1::2]
    r1 = x1 * cos - x2 * sin
    r2 = x1 * sin + x2 * cos
    return torch.stack((r1, r2), dim=-1).flatten(-2)


class Attention(nn.Module):
    """Bidirectional multi-head self-attention with rotary position encoding."""

    def __init__(self, dim: int, n_heads: int, generator=None):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.w_qkv = nn.Parameter(lecun_normal(dim, 3 * dim, generator))
        self.w_out = nn.Parameter(lecun_normal(dim, dim, generator))

    def _qkv(self, x, cos, sin):
        B, L, _ = x.shape
        qkv = (x @ self.w_qkv).view(B, L, 3, self.n_heads, self.head_dim)
        q, k, v = (t.transpose(1, 2) for t in qkv.unbind(dim=2))
        return apply_rope(q, cos[:L], sin[:L]), apply_rope(k, cos[:L], sin[:L]), v

    def scores(self, x, cos, sin) -> torch.Tensor:
        """Pre-softmax scores ``[B, heads, L, L]``."""
        q, k, _ = self._qkv(x, cos, sin)
        return q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)

    def forward(self, x, cos, sin):
        B, L, D = x.shape
        q, k, v = self._qkv(x, cos, sin)
        out = F.scaled_dot_product_attention(q, k, v)
        return out.transpose(1, 2).reshape(B, L, D) @ self.w_out


class GatedMLP(nn.Module):
    def __init__(self, dim: int, inner: int, generator=None):
        super().__init__()
        self.w_gate = nn.Parameter(lecun_normal(dim, inner, generator))
        self.w_up = nn.Parameter(lecun_normal(dim, inner, generator))
        self.w_down = nn.Parameter(lecun_normal(inner, dim, generator))

    def forward(self, x):
        return (F.silu(x @ self.w_gate) * (x @ self.w_up)) @ self.w_down


class Block(nn.Module):
    """Post-Norm block: normalize after each residual add."""

    def __init__(self, config: ModelConfig, generator=None):
        super().__init__()
        self.eps = config.rms_eps
        self.attn = Attention(config.hidden_dim, config.n_heads, generator)
        self.mlp = GatedMLP(config.hidden_dim, config.inner_dim, generator)

    def forward(self, x, cos, sin):
        x = rms_norm(x + self.attn(x, cos, sin), self.eps)
        return rms_norm(x + self.mlp(x), self.eps)


class ReasoningModule(nn.Module):
    """Stack of blocks fed by the element-wise sum of its inputs."""

    def __init__(self, config: ModelConfig, n_blocks: int | None = None, generator=None):
        super().__init__()
        n_blocks = config.blocks_per_module if n_blocks is None else n_blocks
        self.blocks = nn.ModuleList(Block(config, generator) for _ in range(n_blocks))

    def forward(self, inputs, cos, sin):
        if not inputs:
            raise ValueError("module needs at least one input")
        shape = inputs[0].shape
        for t in inputs[1:]:
            if t.shape != shape:
                raise ValueError(f"input shape mismatch: {tuple(t.shape)} vs {tuple(shape)}")
        x = inputs[0]
        for t in inputs[1:]:
            x = x + t
        for block in self.blocks:
            x = block(x, cos, sin)
        return x


class HRMNet(nn.Module):
    """Parameters of the hierarchical model: f_I, f_L, f_H, f_O and the Q-head.

    Also owns the fixed initial hidden states ``z_H0``/``z_L0`` (buffers,
    never trained).
    """

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        if generator is None:
            generator = torch.Generator().manual_seed(config.seed)
        self.config = config
        d = config.hidden_dim
        self.embed_scale = math.sqrt(d)
        # table rows get the same per-entry scale as a fan_in=d matrix, so
        # sqrt(d)-scaled embeddings have unit variance
        self.embedding = nn.Parameter(truncated_normal((config.vocab_size, d), std=d ** -0.5,
                                                       generator=generator))
        self.L_module = ReasoningModule(config, generator=generator)
        self.H_module = ReasoningModule(config, generator=generator)
        self.w_out = nn.Parameter(lecun_normal(d, config.vocab_size, generator))
        # zero Q-head: both actions start at value 0.5, so nothing halts early
        self.w_q = nn.Parameter(torch.zeros(d, 2))
        self.register_buffer("z_H0", truncated_normal((config.seq_len, d), generator=generator))
        self.register_buffer("z_L0", truncated_normal((config.seq_len, d), generator=generator))
        cos, sin = rope_tables(config.seq_len, config.head_dim, config.rope_base)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)

    @property
    def rope(self):
        return self.rope_cos, self.rope_sin

    def embed_input(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.dtype not in (torch.int64, torch.int32):
            raise TypeError("tokens must be an integer tensor")
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.config.vocab_size):
            raise ValueError(f"token ids must lie in [0, {self.config.vocab_size})")
        if tokens.shape[-1] != self.config.seq_len:
            raise ValueError(f"expected sequences of length {self.config.seq_len}, got {tokens.shape[-1]}")
        return self.embed_scale * self.embedding[tokens]

    def output_head(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.w_out

    def q_logits(self, z_H: torch.Tensor) -> torch.Tensor:
        # summary vector: hidden state at position 0
        return z_H[..., 0, :] @ self.w_q

    def f_L(self, z_L, z_H, x_emb):
        return self.L_module([z_L, z_H, x_emb], *self.rope)

    def f_H(self, z_H, z_L):
        return self.H_module([z_H, z_L], *self.rope)


def init_params(config: ModelConfig, seed: int | None = None) -> HRMNet:
    """Build a freshly initialized network; bit-identical for equal seeds."""
    gen = torch.Generator().manual_seed(config.seed if seed is None else seed)
    return HRMNet(config, gen)


def _stable_s(x: torch.Tensor) -> torch.Tensor:
    pos = x >= 0
    return torch.where(pos, x + 1, 1 / (1 - torch.where(pos, torch.zeros_like(x), x)))


def stablemax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    s = _stable_s(logits)
    return s / s.sum(dim=dim, keepdim=True)


def log_stablemax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    s = _stable_s(logits)
    return torch.log(s) - torch.log(s.sum(dim=dim, keepdim=True))
