"""Fine-grained label generator and its temporal consistency loss.

Clusters are maximal temporally contiguous runs of one fine label. The
consistency loss pulls each cluster's features toward its centroid and pushes
distinct cluster centroids apart, so repeated instances of one action at
distant times keep separate representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import fan_uniform_
from .segmentation import SegmentationModule

CENTROID_EPS = 1e-8


@dataclass
class ClusterAssignment:
    cluster_id: np.ndarray                 # per-frame int, run index in temporal order
    cluster_members: dict[int, list[int]]  # cluster -> frame indices
    cluster_class: dict                    # cluster -> fine label (any hashable)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_members)


@dataclass
class ClampDiagnostics:
    """Counts coincident-centroid clamps hit by the separation loss."""

    clamp_events: int = 0


def form_clusters(labels) -> ClusterAssignment:
    """Assign each frame to its maximal same-label run, numbered from 0."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("label sequence must be non-empty")
    ids = np.zeros(labels.size, dtype=np.int64)
    members: dict[int, list[int]] = {0: [0]}
    classes: dict = {0: labels[0]}
    k = 0
    for i in range(1, labels.size):
        if labels[i] != labels[i - 1]:
            k += 1
            members[k] = []
            classes[k] = labels[i]
        ids[i] = k
        members[k].append(i)
    return ClusterAssignment(ids, members, classes)


def cluster_centroids(features: torch.Tensor, clusters: ClusterAssignment) -> torch.Tensor:
    """Centroid matrix (n_clusters, d), rows ordered by cluster id."""
    return torch.stack([features[clusters.cluster_members[k]].mean(dim=0)
                        for k in range(clusters.n_clusters)])


def intra_loss(features: torch.Tensor, clusters: ClusterAssignment) -> torch.Tensor:
    """Sum of squared distances of each frame feature to its cluster centroid."""
    mu = cluster_centroids(features, clusters)
    diff = features - mu[torch.as_tensor(clusters.cluster_id)]
    return (diff ** 2).sum()


def inter_loss(features: torch.Tensor, clusters: ClusterAssignment,
               diagnostics: ClampDiagnostics | None = None) -> torch.Tensor:
    """Sum of inverse centroid distances over ordered cluster pairs.

    Coincident centroids would blow up; distances below CENTROID_EPS are
    clamped there and counted in the diagnostics instead of raising, since
    training batches can transiently collapse centroids.
    """
    mu = cluster_centroids(features, clusters)
    n = mu.shape[0]
    if n < 2:
        return features.new_zeros(())
    sq = ((mu[:, None, :] - mu[None, :, :]) ** 2).sum(dim=-1)
    off = ~torch.eye(n, dtype=torch.bool)
    sq = sq[off]
    clamped = sq < CENTROID_EPS ** 2
    if diagnostics is not None and bool(clamped.any()):
        diagnostics.clamp_events += int(clamped.sum())
    # clamp before the sqrt so the backward pass stays finite at collapse
    return (1.0 / torch.sqrt(torch.clamp(sq, min=CENTROID_EPS ** 2))).sum()


@dataclass
class TclWeights:
    lambda1: float = 1.0
    lambda2: float = 0.1


def tcl_loss(features: torch.Tensor, clusters: ClusterAssignment, w: TclWeights,
             diagnostics: ClampDiagnostics | None = None) -> torch.Tensor:
    return w.lambda1 * intra_loss(features, clusters) + \
        w.lambda2 * inter_loss(features, clusters, diagnostics)


def generator_total_loss(logits: torch.Tensor, fine_targets: torch.Tensor,
                         features: torch.Tensor, clusters: ClusterAssignment,
                         w: TclWeights,
                         diagnostics: ClampDiagnostics | None = None) -> torch.Tensor:
    """Mean per-frame cross-entropy plus the temporal consistency loss."""
    if int(fine_targets.max()) >= logits.shape[-1] or int(fine_targets.min()) < 0:
        raise ValueError("fine target id out of range")
    ce = nn.functional.cross_entropy(logits, fine_targets)
    return ce + tcl_loss(features, clusters, w, diagnostics)


class FineGenerator(nn.Module):
    """Transformer backbone with a fine-label head and a label embedding table.

    The backbone mirrors the segmentation stack in shape but owns its weights.
    Hidden features (pre-head) are what the consistency loss operates on; the
    embedding table turns predicted fine labels into width-d vectors for the
    fusion stage.
    """

    def __init__(self, d: int, n_layers: int, n_fine: int, heads: int, d_f: int,
                 max_len: int = 512, eq5_literal: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.backbone = SegmentationModule(d, n_layers, n_fine, heads, d_f,
                                           max_len, eq5_literal, generator)
        self.embed_table = nn.Parameter(
            fan_uniform_(torch.empty(n_fine, d, dtype=torch.float64), n_fine, d, generator))

    def forward(self, x0: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Fine-label distributions (T, K_f) and pre-head hidden features (T, d)."""
        return self.backbone(x0)

    def logits_and_hidden(self, x0: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.backbone.hidden(x0)
        return self.backbone.logits(h), h


def fine_embed(fine_probs: torch.Tensor, embed_table: torch.Tensor,
               pool_window: int, soft: bool = False) -> torch.Tensor:
    """Pool predicted-label embeddings over a centered window of t frames.

    Hard mode embeds the argmax label per frame; soft mode mixes the table by
    the predicted distribution. Edge windows are truncated.
    """
    if pool_window < 1:
        raise ValueError("pool window must be >= 1")
    if soft:
        per_frame = fine_probs @ embed_table
    else:
        per_frame = embed_table[fine_probs.argmax(dim=-1)]
    T = per_frame.shape[0]
    rows = []
    half_lo = (pool_window - 1) // 2
    half_hi = pool_window // 2
    for j in range(T):
        lo, hi = max(0, j - half_lo), min(T, j + half_hi + 1)
        rows.append(per_frame[lo:hi].mean(dim=0))
    return torch.stack(rows)
