"""Multi-modal anticipation: fusion, label cross-attention, query decoding.

Video tokens and fine-grained label embeddings are concatenated along the
feature axis, projected back to width d, self-attended, then cross-attended
against embedded coarse segmentation labels. Learned queries decode the fused
context into (action, duration) pairs that tile the prediction horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import MultiHeadAttention, fan_uniform_


@dataclass
class FuturePrediction:
    """Per-query decoded future plus its frame-level expansion."""

    action_logits: torch.Tensor    # (n_q, K_f + 1), last class is "none"
    action_probs: torch.Tensor     # (n_q, K_f + 1)
    duration_fracs: torch.Tensor   # (n_q,), softmax across queries
    expanded: np.ndarray           # fine id per future frame, length = horizon


class FusionBlock(nn.Module):
    """Feature-axis concatenation, projection to d, and self-attention."""

    def __init__(self, d: int, heads: int, n_coarse: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.concat_proj = nn.Parameter(
            fan_uniform_(torch.empty(2 * d, d, dtype=torch.float64), 2 * d, d, generator))
        self.mhsa = MultiHeadAttention(d, heads, generator=generator)
        self.mhca = MultiHeadAttention(d, heads, generator=generator)
        self.label_embed = nn.Parameter(
            fan_uniform_(torch.empty(n_coarse, d, dtype=torch.float64), n_coarse, d, generator))

    def fuse(self, h_video: torch.Tensor, h_fine: torch.Tensor) -> torch.Tensor:
        if h_video.shape[0] != h_fine.shape[0]:
            raise ValueError(
                f"modality length mismatch: {h_video.shape[0]} vs {h_fine.shape[0]}")
        fused = torch.cat([h_video, h_fine], dim=-1) @ self.concat_proj
        # residual keeps per-token identity: attention output alone is a
        # convex mix of values and would erase which token is which
        return fused + self.mhsa(fused)

    def embed_labels(self, seg_probs: torch.Tensor, soft: bool = False) -> torch.Tensor:
        """H^vidSeg: coarse segmentation labels re-embedded to width d."""
        if soft:
            return seg_probs @ self.label_embed
        return self.label_embed[seg_probs.argmax(dim=-1)]

    def cross_attend(self, h_mhsa: torch.Tensor, h_vidseg: torch.Tensor) -> torch.Tensor:
        """Fused tokens query the embedded segmentation labels (keys/values).

        Residual: the raw attention output lives in the span of the label
        embeddings (rank <= n_coarse), which would discard the fine-grained
        content of the fused tokens.
        """
        return h_mhsa + self.mhca(h_mhsa, h_vidseg)

    def unimodal_projection_(self) -> None:
        """Freeze the projection to the zero-block form [I; 0].

        The fine half of the concatenated input is then ignored, which makes
        the fused path bitwise identical to a video-only model.
        """
        d = self.concat_proj.shape[1]
        with torch.no_grad():
            self.concat_proj.zero_()
            self.concat_proj[:d] = torch.eye(d, dtype=torch.float64)
        self.concat_proj.requires_grad_(False)


def expand_durations(fracs: np.ndarray, class_ids: np.ndarray, horizon: int) -> np.ndarray:
    """Tile the horizon by cumulative duration intervals.

    Frame j belongs to the first query whose cumulative boundary (in frames)
    exceeds j. The final boundary is pinned to the horizon so the tiling is
    exact regardless of rounding.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    bounds = np.cumsum(fracs) * horizon
    bounds[-1] = horizon
    out = np.empty(horizon, dtype=np.int64)
    q = 0
    for j in range(horizon):
        while j >= bounds[q] and q < len(fracs) - 1:
            q += 1
        out[j] = class_ids[q]
    return out


class QueryDecoder(nn.Module):
    """Learned queries cross-attend into the fused context.

    Each query emits a distribution over fine actions plus a "none" class for
    padding, and a duration logit; durations are softmax-normalized across
    queries so the fractions tile the horizon.
    """

    def __init__(self, d: int, heads: int, n_queries: int, n_fine: int,
                 max_len: int = 512, generator: torch.Generator | None = None):
        super().__init__()
        self.n_fine = n_fine
        self.queries = nn.Parameter(
            fan_uniform_(torch.empty(n_queries, d, dtype=torch.float64), n_queries, d, generator))
        from .attention import FeedForward, sinusoidal_positions
        self.register_buffer("pos_table", sinusoidal_positions(max_len, d))
        self.cross = MultiHeadAttention(d, heads, generator=generator)
        self.last_proj = nn.Parameter(
            fan_uniform_(torch.empty(d, d, dtype=torch.float64), d, d, generator))
        self.ffn = FeedForward(d, 4 * d, generator=generator)
        self.action_W = nn.Parameter(
            fan_uniform_(torch.empty(d, n_fine + 1, dtype=torch.float64), d, n_fine + 1, generator))
        self.action_b = nn.Parameter(torch.zeros(n_fine + 1, dtype=torch.float64))
        self.duration_W = nn.Parameter(
            fan_uniform_(torch.empty(d, 1, dtype=torch.float64), d, 1, generator))
        self.duration_b = nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, context: torch.Tensor, horizon: int,
                anchor: torch.Tensor | None = None) -> FuturePrediction:
        # every query is anchored on a projection of the most recent
        # fine-grained embedding — the near future is dominated by the ongoing
        # action, and a soft attention average over the window dilutes that
        # signal behind window-specific variance; positions on the keys/values
        # are indexed from the end of the window so recency stays meaningful
        # at any observed length; the residual keeps query identity visible to
        # the shared heads, and the FFN lets each query transform its
        # retrieved context
        anchored = self.queries if anchor is None \
            else self.queries + anchor @ self.last_proj
        attended = anchored + self.cross(
            self.queries, context + self.pos_table[: context.shape[0]].flip(0))
        decoded = attended + self.ffn(attended)
        action_logits = decoded @ self.action_W + self.action_b
        duration_fracs = torch.softmax(
            (decoded @ self.duration_W + self.duration_b).squeeze(-1), dim=0)
        action_probs = torch.softmax(action_logits, dim=-1)
        # expansion uses real action classes only; "none" never fills frames
        class_ids = action_probs[:, : self.n_fine].argmax(dim=-1).detach().numpy()
        expanded = expand_durations(duration_fracs.detach().numpy(), class_ids, horizon)
        return FuturePrediction(action_logits, action_probs, duration_fracs, expanded)


def target_segments(future_labels: np.ndarray, n_queries: int) -> tuple[np.ndarray, np.ndarray]:
    """Run-length encode future labels into exactly n_queries (class, frac) rows.

    Extra tail segments are absorbed into the last kept one so fractions still
    sum to 1; missing rows are padded with class -1 (mapped to "none") and
    fraction 0.
    """
    horizon = len(future_labels)
    change = np.flatnonzero(np.diff(future_labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [horizon]])
    classes = future_labels[starts]
    lengths = (ends - starts).astype(np.float64)
    if len(classes) > n_queries:
        lengths[n_queries - 1] += lengths[n_queries:].sum()
        classes, lengths = classes[:n_queries], lengths[:n_queries]
    fracs = lengths / horizon
    pad = n_queries - len(classes)
    if pad:
        classes = np.concatenate([classes, -np.ones(pad, dtype=classes.dtype)])
        fracs = np.concatenate([fracs, np.zeros(pad)])
    return classes, fracs


def anticipation_loss(pred: FuturePrediction, future_labels: np.ndarray,
                      n_fine: int) -> torch.Tensor:
    """Per-query cross-entropy on segment classes plus MSE on duration fractions."""
    n_q = pred.action_logits.shape[0]
    classes, fracs = target_segments(np.asarray(future_labels), n_q)
    target_ids = torch.as_tensor(np.where(classes < 0, n_fine, classes), dtype=torch.long)
    ce = nn.functional.cross_entropy(pred.action_logits, target_ids)
    mse = ((pred.duration_fracs - torch.as_tensor(fracs, dtype=torch.float64)) ** 2).mean()
    return ce + mse
