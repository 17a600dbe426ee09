"""Attention primitives: projected multi-head attention, FFN, layer norm.

Everything runs in float64 on (T, d)-shaped single sequences; desk-scale
inputs are small enough that batching happens one video at a time.
"""

from __future__ import annotations

import math

import torch
from torch import nn

LN_EPS = 1e-6


def fan_uniform_(tensor: torch.Tensor, fan_in: int, fan_out: int,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return tensor.uniform_(-bound, bound, generator=generator)


class LayerNorm(nn.Module):
    """Per-feature normalization with learned scale and shift."""

    def __init__(self, d: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(d, dtype=torch.float64))
        self.shift = nn.Parameter(torch.zeros(d, dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=-1, keepdim=True)
        var = x.var(dim=-1, unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + LN_EPS) * self.scale + self.shift


class FeedForward(nn.Module):
    """Position-wise FFN: ReLU(x W1 + b1) W2 + b2."""

    def __init__(self, d: int, d_f: int, generator: torch.Generator | None = None):
        super().__init__()
        self.W1 = nn.Parameter(fan_uniform_(torch.empty(d, d_f, dtype=torch.float64), d, d_f, generator))
        self.b1 = nn.Parameter(torch.zeros(d_f, dtype=torch.float64))
        self.W2 = nn.Parameter(fan_uniform_(torch.empty(d_f, d, dtype=torch.float64), d_f, d, generator))
        self.b2 = nn.Parameter(torch.zeros(d, dtype=torch.float64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(x @ self.W1 + self.b1) @ self.W2 + self.b2


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with h heads and an output projection.

    Self-attention when ``kv`` is omitted; cross-attention when queries and
    keys/values come from different sequences. Per head i:
    A_i = Softmax(Q W_i^Q (K W_i^K)^T / sqrt(d_h)) (V W_i^V), the heads are
    concatenated and mapped through W_o.
    """

    def __init__(self, d: int, heads: int, d_h: int | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        if d_h is None:
            if d % heads != 0:
                raise ValueError(f"d={d} not divisible by heads={heads}")
            d_h = d // heads
        self.d = d
        self.heads = heads
        self.d_h = d_h
        shape = (heads, d, d_h)
        self.W_q = nn.Parameter(fan_uniform_(torch.empty(shape, dtype=torch.float64), d, d_h, generator))
        self.W_k = nn.Parameter(fan_uniform_(torch.empty(shape, dtype=torch.float64), d, d_h, generator))
        self.W_v = nn.Parameter(fan_uniform_(torch.empty(shape, dtype=torch.float64), d, d_h, generator))
        self.W_o = nn.Parameter(fan_uniform_(torch.empty(heads * d_h, d, dtype=torch.float64),
                                             heads * d_h, d, generator))

    def attention_weights(self, query_seq: torch.Tensor, kv_seq: torch.Tensor) -> torch.Tensor:
        """Row-stochastic attention matrices, shape (heads, T_q, T_kv)."""
        q = torch.einsum("td,hdk->htk", query_seq, self.W_q)
        k = torch.einsum("td,hdk->htk", kv_seq, self.W_k)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_h)
        return torch.softmax(scores, dim=-1)

    def forward(self, query_seq: torch.Tensor, kv_seq: torch.Tensor | None = None) -> torch.Tensor:
        if kv_seq is None:
            kv_seq = query_seq
        if query_seq.shape[-1] != self.d or kv_seq.shape[-1] != self.d:
            raise ValueError(f"expected width {self.d}, got {query_seq.shape} / {kv_seq.shape}")
        attn = self.attention_weights(query_seq, kv_seq)
        v = torch.einsum("td,hdk->htk", kv_seq, self.W_v)
        heads = attn @ v  # (h, T_q, d_h)
        concat = heads.permute(1, 0, 2).reshape(query_seq.shape[0], self.heads * self.d_h)
        return concat @ self.W_o


def sinusoidal_positions(max_len: int, d: int) -> torch.Tensor:
    """Fixed sin/cos positional table of shape (max_len, d)."""
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angles = pos / torch.pow(10000.0, i / d)
    table = torch.zeros(max_len, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : d // 2])
    return table
