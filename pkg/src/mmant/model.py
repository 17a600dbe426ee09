"""Full model bundle: encoder, segmentation, fine generator, anticipation.

Also owns the checkpoint format: a JSON text header naming every tensor and
its shape, followed by the raw little-endian float64 payloads in header order.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .anticipation import FusionBlock, FuturePrediction, QueryDecoder
from .config import ModelConfig
from .encoder import VideoEncoder
from .finegrained import FineGenerator, fine_embed
from .segmentation import SegmentationModule

CHECKPOINT_MAGIC = "mmant-ckpt-v1"


class AnticipationModel(nn.Module):
    """Everything trained in the main stage, plus a frozen fine generator."""

    def __init__(self, cfg: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = VideoEncoder(cfg.C, cfg.d, cfg.tau, generator)
        self.segmenter = SegmentationModule(
            cfg.d, cfg.l_seg, cfg.n_coarse, cfg.heads, cfg.ffn_width,
            cfg.max_len, cfg.eq5_literal, generator)
        self.fusion = FusionBlock(cfg.d, cfg.heads, cfg.n_coarse, generator)
        self.decoder = QueryDecoder(cfg.d, cfg.heads, cfg.n_queries, cfg.n_fine,
                                    cfg.max_len, generator)
        self.fine_generator: FineGenerator | None = None
        if not cfg.use_fine:
            self.fusion.unimodal_projection_()

    def attach_generator(self, gen: FineGenerator) -> None:
        """Install a trained fine generator; it stays frozen in the main stage."""
        gen.requires_grad_(False)
        self.fine_generator = gen

    def encode_context(self, observed: np.ndarray
                       ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, np.ndarray]:
        """Everything upstream of the decoder for one observed window.

        Returns the fused context, the query anchor (the most recent
        fine-grained embedding, all-zero when the fine branch is disabled),
        per-sampled-frame coarse distributions, and the kept frame indices.
        """
        tokens, idx = self.encoder(observed)
        seg_probs, _ = self.segmenter(tokens)

        if self.cfg.use_fine and self.fine_generator is not None:
            fine_probs, _ = self.fine_generator(tokens)
            h_fine = fine_embed(fine_probs, self.fine_generator.embed_table,
                                self.cfg.pooling)
        else:
            h_fine = torch.zeros_like(tokens)

        h_mhsa = self.fusion.fuse(tokens, h_fine)
        h_vidseg = self.fusion.embed_labels(seg_probs, soft=self.cfg.soft_seg_labels)
        context = self.fusion.cross_attend(h_mhsa, h_vidseg)
        return context, h_fine[-1], seg_probs, idx

    def forward(self, observed: np.ndarray, horizon: int,
                detach_context: bool = False
                ) -> tuple[torch.Tensor, FuturePrediction, np.ndarray]:
        """Run the full pipeline on one observed window.

        Returns per-sampled-frame coarse distributions, the decoded future,
        and the kept frame indices. With detach_context the anticipation loss
        reaches only the decoder: letting it flow into the trunk teaches the
        shared features to fingerprint individual training windows instead of
        generalizing.
        """
        context, anchor, seg_probs, idx = self.encode_context(observed)
        if detach_context:
            context = context.detach()
            anchor = anchor.detach()
        pred = self.decoder(context, horizon, anchor=anchor)
        return seg_probs, pred, idx


def build_fine_generator(cfg: ModelConfig,
                         generator: torch.Generator | None = None) -> FineGenerator:
    return FineGenerator(cfg.d, cfg.l_seg, cfg.n_fine, cfg.heads, cfg.ffn_width,
                         cfg.max_len, cfg.eq5_literal, generator)


def horizon_frames(full_T: int, beta: float) -> int:
    return math.ceil(beta * full_T)


def save_tensors(named: dict[str, torch.Tensor], path: str | Path) -> None:
    entries, payloads = [], []
    offset = 0
    for name in sorted(named):
        arr = named[name].detach().cpu().numpy().astype("<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"magic": CHECKPOINT_MAGIC, "tensors": entries})
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        for blob in payloads:
            fh.write(blob)


def load_tensors(path: str | Path) -> dict[str, torch.Tensor]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        body = fh.read()
    out = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=entry["offset"])
        out[entry["name"]] = torch.as_tensor(arr.reshape(shape).copy())
    return out


def save_model(model: nn.Module, path: str | Path) -> None:
    save_tensors(dict(model.state_dict()), path)


def load_model_(model: nn.Module, path: str | Path) -> None:
    state = load_tensors(path)
    model.load_state_dict(state)
