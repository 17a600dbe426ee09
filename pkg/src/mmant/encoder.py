"""Video encoder: temporal stride sampling plus a rectified linear map."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .attention import fan_uniform_


def stride_sample(features: np.ndarray, tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep frames {0, tau, 2*tau, ...}, exactly floor(T/tau) of them.

    Returns the sampled rows and the kept frame indices. Up to tau-1 trailing
    frames are dropped so the row count matches floor(T/tau).
    """
    T = features.shape[0]
    if tau < 1:
        raise ValueError("stride must be >= 1")
    if T < tau:
        raise ValueError(f"video shorter than stride: T={T} < tau={tau}")
    n = T // tau
    idx = np.arange(n) * tau
    return features[idx], idx


class VideoEncoder(nn.Module):
    """X_0 = ReLU(F_tau W) with W of shape (C, D)."""

    def __init__(self, C: int, D: int, tau: int, generator: torch.Generator | None = None):
        super().__init__()
        self.tau = tau
        self.W = nn.Parameter(fan_uniform_(torch.empty(C, D, dtype=torch.float64), C, D, generator))

    def encode(self, sampled: torch.Tensor) -> torch.Tensor:
        if sampled.shape[-1] != self.W.shape[0]:
            raise ValueError(
                f"feature width {sampled.shape[-1]} != encoder input width {self.W.shape[0]}")
        return torch.relu(sampled @ self.W)

    def forward(self, features: np.ndarray | torch.Tensor) -> tuple[torch.Tensor, np.ndarray]:
        """Stride-sample raw frame features and encode them to tokens."""
        arr = features.detach().cpu().numpy() if isinstance(features, torch.Tensor) else features
        sampled, idx = stride_sample(arr, self.tau)
        tokens = self.encode(torch.as_tensor(sampled, dtype=torch.float64))
        return tokens, idx
