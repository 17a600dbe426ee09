"""Central finite-difference gradient checks for every differentiable path."""

from __future__ import annotations

import numpy as np
import torch

from .anticipation import FusionBlock, QueryDecoder, anticipation_loss
from .config import ModelConfig
from .encoder import VideoEncoder
from .finegrained import TclWeights, form_clusters, inter_loss, intra_loss, tcl_loss
from .model import AnticipationModel
from .segmentation import SegmentationModule

LOSS_TOL = 1e-4
STACK_TOL = 1e-3


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_difference_check(make_loss, tensors: list[torch.Tensor],
                            h: float = 1e-6, max_entries: int = 400,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between autograd and central finite differences.

    ``make_loss`` must be a pure function of the given leaf tensors. Large
    tensors are spot-checked on a random subset of entries.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
        t.requires_grad_(True)
    loss = make_loss()
    loss.backward()
    worst = 0.0
    for t in tensors:
        grad = t.grad if t.grad is not None else torch.zeros_like(t)
        flat = t.detach().reshape(-1)
        n = flat.numel()
        entries = range(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        for i in entries:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
            up = make_loss().item()
            with torch.no_grad():
                flat[i] = orig - h
            down = make_loss().item()
            with torch.no_grad():
                flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, relative_error(fd, grad.reshape(-1)[i].item()))
    return worst


def _tiny_cfg() -> ModelConfig:
    return ModelConfig(C=5, d=8, n_coarse=3, n_fine=4, tau=1, heads=2,
                       l_seg=2, n_queries=3, max_len=16)


def check_encoder(seed: int = 0) -> float:
    torch.manual_seed(seed)
    enc = VideoEncoder(5, 8, 1)
    # keep pre-activations away from the ReLU kink
    x = torch.randn(4, 5, dtype=torch.float64) + 0.5
    return finite_difference_check(lambda: enc.encode(x).pow(2).sum(),
                                   [enc.W, x])


def check_mhsa(seed: int = 0) -> float:
    torch.manual_seed(seed)
    from .attention import MultiHeadAttention
    attn = MultiHeadAttention(6, 2)
    x = torch.randn(4, 6, dtype=torch.float64)
    params = [attn.W_q, attn.W_k, attn.W_v, attn.W_o, x]
    return finite_difference_check(lambda: attn(x).pow(2).sum(), params)


def check_seg_stack(seed: int = 0) -> float:
    torch.manual_seed(seed)
    seg = SegmentationModule(d=8, n_layers=2, n_classes=3, heads=2, d_f=16, max_len=8)
    x = torch.rand(4, 8, dtype=torch.float64)
    targets = torch.tensor([0, 1, 2, 1])

    def loss():
        probs, _ = seg(x)
        return torch.nn.functional.nll_loss(torch.log(probs), targets)

    return finite_difference_check(loss, list(seg.parameters()) + [x])


def check_tcl(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    feats = torch.as_tensor(rng.normal(size=(6, 4)))
    clusters = form_clusters([0, 0, 1, 1, 0, 0])
    w = TclWeights(0.7, 0.3)
    return {
        "intra": finite_difference_check(lambda: intra_loss(feats, clusters), [feats]),
        "inter": finite_difference_check(lambda: inter_loss(feats, clusters), [feats]),
        "tcl": finite_difference_check(lambda: tcl_loss(feats, clusters, w), [feats]),
    }


def check_anticipation(seed: int = 0) -> float:
    torch.manual_seed(seed)
    cfg = _tiny_cfg()
    fusion = FusionBlock(cfg.d, cfg.heads, cfg.n_coarse)
    decoder = QueryDecoder(cfg.d, cfg.heads, cfg.n_queries, cfg.n_fine)
    h_video = torch.rand(4, cfg.d, dtype=torch.float64)
    h_fine = torch.rand(4, cfg.d, dtype=torch.float64)
    vidseg = torch.rand(4, cfg.d, dtype=torch.float64)
    future = np.array([0, 0, 1, 2, 2, 2])

    def loss():
        ctx = fusion.cross_attend(fusion.fuse(h_video, h_fine), vidseg)
        pred = decoder(ctx, len(future))
        return anticipation_loss(pred, future, cfg.n_fine)

    params = list(fusion.parameters()) + list(decoder.parameters()) + [h_video, h_fine, vidseg]
    return finite_difference_check(loss, params)


def check_full_model(seed: int = 0) -> float:
    torch.manual_seed(seed)
    cfg = _tiny_cfg()
    cfg.soft_seg_labels = True  # keep the label-embedding path smooth for FD
    model = AnticipationModel(cfg)
    from .model import build_fine_generator
    model.attach_generator(build_fine_generator(cfg))
    observed = np.random.default_rng(seed).random((4, cfg.C))
    future = np.array([1, 1, 3, 3, 0])
    coarse = torch.tensor([0, 1, 2, 0])

    def loss():
        probs, pred, _ = model(observed, len(future))
        seg_ce = torch.nn.functional.nll_loss(torch.log(probs + 1e-12), coarse)
        return seg_ce + anticipation_loss(pred, future, cfg.n_fine)

    params = [p for p in model.parameters() if p.requires_grad]
    return finite_difference_check(loss, params, max_entries=24)


def run_scope(scope: str, seed: int = 0) -> dict[str, float]:
    """Max relative FD error per operation for the requested scope."""
    checks: dict[str, float] = {}
    if scope in ("encoder", "all"):
        checks["encoder"] = check_encoder(seed)
    if scope in ("mhsa", "all"):
        checks["mhsa"] = check_mhsa(seed)
    if scope in ("seg", "all"):
        checks["seg_stack"] = check_seg_stack(seed)
    if scope in ("tcl", "all"):
        checks.update(check_tcl(seed))
    if scope in ("anticipation", "all"):
        checks["anticipation"] = check_anticipation(seed)
    if scope in ("full", "all"):
        checks["full_model"] = check_full_model(seed)
    if not checks:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    return checks


def scope_tolerance(name: str) -> float:
    return LOSS_TOL if name in ("intra", "inter", "tcl", "encoder") else STACK_TOL
