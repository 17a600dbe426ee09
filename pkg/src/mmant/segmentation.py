"""Transformer video segmentation: attention/FFN stack and per-frame head."""

from __future__ import annotations

import torch
from torch import nn

from .attention import FeedForward, LayerNorm, MultiHeadAttention, fan_uniform_, sinusoidal_positions


class TransformerLayer(nn.Module):
    """One attention + FFN block with residuals and layer norms.

    The literal form is
        H' = LN2(FFN(LN1(MHSA(H + P)) + H)) + H,
    positional encodings entering the attention input only. With
    ``eq5_literal=False`` a conventional pre-norm block is used instead
    (stability comparison variant).
    """

    def __init__(self, d: int, heads: int, d_f: int, eq5_literal: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.attn = MultiHeadAttention(d, heads, generator=generator)
        self.ffn = FeedForward(d, d_f, generator=generator)
        self.ln1 = LayerNorm(d)
        self.ln2 = LayerNorm(d)
        self.eq5_literal = eq5_literal

    def forward(self, h: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        if self.eq5_literal:
            attended = self.attn(h + positions)
            return self.ln2(self.ffn(self.ln1(attended) + h)) + h
        x = h + self.attn(self.ln1(h) + positions)
        return x + self.ffn(self.ln2(x))


class SegmentationModule(nn.Module):
    """N-layer transformer stack plus a softmax classification head.

    Returns per-frame class distributions and the last hidden state, which
    downstream modules consume for fusion.
    """

    def __init__(self, d: int, n_layers: int, n_classes: int, heads: int, d_f: int,
                 max_len: int = 512, eq5_literal: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerLayer(d, heads, d_f, eq5_literal, generator) for _ in range(n_layers))
        self.head_W = nn.Parameter(
            fan_uniform_(torch.empty(d, n_classes, dtype=torch.float64), d, n_classes, generator))
        self.head_b = nn.Parameter(torch.zeros(n_classes, dtype=torch.float64))
        self.register_buffer("pos_table", sinusoidal_positions(max_len, d))

    def hidden(self, x0: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        T = x0.shape[0]
        if positions is None:
            if T > self.pos_table.shape[0]:
                raise ValueError(
                    f"sequence length {T} exceeds positional table ({self.pos_table.shape[0]})")
            positions = self.pos_table[:T]
        h = x0
        for layer in self.layers:
            h = layer(h, positions)
        return h

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.head_W + self.head_b

    def forward(self, x0: torch.Tensor,
                positions: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.hidden(x0, positions)
        probs = torch.softmax(self.logits(h), dim=-1)
        return probs, h
