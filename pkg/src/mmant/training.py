"""Two-stage training: fine generator first, then the main anticipation model.

Stage one trains the shared video encoder together with the fine-grained
generator under cross-entropy plus the temporal consistency loss. Stage two
freezes the generator, trains encoder and segmentation under the coarse
cross-entropy, and trains the decoder under the anticipation loss against
detached contexts (see AnticipationModel.forward on why the gradient stops
at the trunk).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .anticipation import anticipation_loss
from .config import ModelConfig, TrainConfig
from .data import Corpus, make_samples
from .encoder import VideoEncoder
from .evaluation import mean_moc, segmentation_accuracy
from .finegrained import (ClampDiagnostics, FineGenerator, TclWeights,
                          form_clusters, generator_total_loss, inter_loss, intra_loss)
from .model import AnticipationModel, build_fine_generator


class DivergenceError(RuntimeError):
    """Raised when a training loss turns non-finite."""


def lr_schedule(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup to lr_peak, then cosine annealing to zero."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_peak * epoch / cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def split_corpus(corpus: Corpus, holdout_frac: float, seed: int) -> tuple[Corpus, Corpus]:
    """Seeded 80/20-style split by video."""
    idx = np.random.default_rng(seed).permutation(len(corpus))
    n_hold = int(round(holdout_frac * len(corpus)))
    hold = [corpus[i] for i in sorted(idx[:n_hold])]
    train = [corpus[i] for i in sorted(idx[n_hold:])]
    return train, hold


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _check_finite(loss: torch.Tensor, stage: str, epoch: int) -> None:
    if not torch.isfinite(loss):
        raise DivergenceError(f"{stage} loss diverged (non-finite) at epoch {epoch}")


@dataclass
class GeneratorRun:
    encoder: VideoEncoder
    generator: FineGenerator
    trace: list[dict] = field(default_factory=list)
    diagnostics: ClampDiagnostics = field(default_factory=ClampDiagnostics)


def train_generator(corpus: Corpus, model_cfg: ModelConfig, cfg: TrainConfig,
                    encoder: VideoEncoder | None = None) -> GeneratorRun:
    """Stage one: fit the fine-grained generator (and the shared encoder)."""
    if not corpus:
        raise ValueError("corpus is empty")
    cfg.validate()
    init = torch.Generator().manual_seed(cfg.seed)
    if encoder is None:
        encoder = VideoEncoder(model_cfg.C, model_cfg.d, model_cfg.tau, init)
    generator = build_fine_generator(model_cfg, init)
    weights = TclWeights(model_cfg.lambda1, model_cfg.lambda2)
    run = GeneratorRun(encoder, generator)

    params = list(encoder.parameters()) + list(generator.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr_peak, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = {"ce": 0.0, "intra": 0.0, "inter": 0.0}
        count = 0
        for batch in _batches(len(corpus), cfg.batch_size, rng):
            opt.zero_grad()
            loss = torch.zeros((), dtype=torch.float64)
            for i in batch:
                feats, timeline = corpus[i]
                tokens, idx = encoder(feats.values)
                targets = torch.as_tensor(timeline.fine_frames()[idx])
                clusters = form_clusters(targets.numpy())
                logits, hidden = generator.logits_and_hidden(tokens)
                loss = loss + generator_total_loss(
                    logits, targets, hidden, clusters, weights, run.diagnostics)
                with torch.no_grad():
                    sums["ce"] += nn.functional.cross_entropy(logits, targets).item()
                    sums["intra"] += intra_loss(hidden, clusters).item()
                    sums["inter"] += inter_loss(hidden, clusters).item()
                count += 1
            loss = loss / len(batch)
            _check_finite(loss, "generator", epoch)
            loss.backward()
            opt.step()
        run.trace.append({"epoch": epoch, "lr": lr,
                          **{k: v / count for k, v in sums.items()}})
    return run


@dataclass
class MainRun:
    model: AnticipationModel
    trace: list[dict] = field(default_factory=list)


def train_main(corpus: Corpus, stage1: GeneratorRun, model_cfg: ModelConfig,
               cfg: TrainConfig, holdout: Corpus | None = None) -> MainRun:
    """Stage two: trunk under segmentation cross-entropy, then the decoder.

    The two halves train sequentially rather than under a summed loss: the
    anticipation gradient stops at the trunk boundary regardless (see
    AnticipationModel.forward), and a decoder trained against a still-moving
    trunk spends its high-lr epochs fitting features that no longer exist by
    the end of training. Both halves follow the same lr schedule; the trace
    has one row per epoch with the trunk and decoder losses side by side.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    cfg.validate()
    init = torch.Generator().manual_seed(cfg.seed + 1)
    model = AnticipationModel(model_cfg, init)
    model.encoder = stage1.encoder
    model.attach_generator(stage1.generator)
    run = MainRun(model)
    rng = np.random.default_rng(cfg.seed + 1)

    trunk = (list(model.encoder.parameters())
             + list(model.segmenter.parameters()))
    opt = torch.optim.AdamW(trunk, lr=cfg.lr_peak, weight_decay=cfg.weight_decay)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        seg_sum = 0.0
        count = 0
        for batch in _batches(len(corpus), cfg.batch_size, rng):
            opt.zero_grad()
            loss = torch.zeros((), dtype=torch.float64)
            for i in batch:
                feats, timeline = corpus[i]
                tokens, idx = model.encoder(feats.values)
                seg_probs, _ = model.segmenter(tokens)
                coarse = torch.as_tensor(timeline.coarse_frames()[idx])
                seg_ce = nn.functional.nll_loss(torch.log(seg_probs + 1e-12), coarse)
                loss = loss + seg_ce
                seg_sum += seg_ce.item()
                count += 1
            loss = loss / len(batch)
            _check_finite(loss, "main", epoch)
            loss.backward()
            opt.step()
        run.trace.append({"epoch": epoch, "lr": lr, "seg_ce": seg_sum / count})

    # every observation rate contributes, and batches are drawn over
    # (video, alpha) windows — per-video batches with one random rate starve
    # the decoder of gradient steps at desk scale; contexts are cached once
    # since nothing upstream of the decoder moves anymore
    samples = [s for alpha in cfg.alpha_train
               for s in make_samples(corpus, alpha, cfg.beta_train)]
    with torch.no_grad():
        cached = [model.encode_context(s.observed.values)[:2] for s in samples]
    opt = torch.optim.AdamW(model.decoder.parameters(), lr=cfg.lr_peak,
                            weight_decay=cfg.weight_decay)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        ant_sum = 0.0
        count = 0
        for batch in _batches(len(samples), cfg.batch_size, rng):
            opt.zero_grad()
            loss = torch.zeros((), dtype=torch.float64)
            for i in batch:
                context, anchor = cached[i]
                s = samples[i]
                pred = model.decoder(context, len(s.future_labels), anchor=anchor)
                ant = anticipation_loss(pred, s.future_labels, model_cfg.n_fine)
                loss = loss + ant
                ant_sum += ant.item()
                count += 1
            loss = loss / len(batch)
            _check_finite(loss, "main", epoch)
            loss.backward()
            opt.step()
        record = run.trace[epoch]
        record["ant"] = ant_sum / count
        if holdout:
            with torch.no_grad():
                record["holdout_moc"] = mean_moc(model, holdout, alpha=0.2, beta=0.5,
                                                 n_classes=model_cfg.n_fine)
                record["holdout_seg_acc"] = segmentation_accuracy(model, holdout)
    return run


@dataclass
class TrainedRun:
    model: AnticipationModel
    generator_trace: list[dict]
    main_trace: list[dict]
    train_split: Corpus
    holdout_split: Corpus


def train_joint(corpus: Corpus, model_cfg: ModelConfig, cfg: TrainConfig,
                holdout: Corpus | None = None) -> TrainedRun:
    """Single-stage variant: generator and main model optimized together."""
    init = torch.Generator().manual_seed(cfg.seed)
    model = AnticipationModel(model_cfg, init)
    model.fine_generator = build_fine_generator(model_cfg, init)
    weights = TclWeights(model_cfg.lambda1, model_cfg.lambda2)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_peak,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    trace: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        total = count = 0
        epoch_samples = [s for alpha in cfg.alpha_train
                         for s in make_samples(corpus, alpha, cfg.beta_train)]
        for batch in _batches(len(epoch_samples), cfg.batch_size, rng):
            samples = [epoch_samples[i] for i in batch]
            opt.zero_grad()
            loss = torch.zeros((), dtype=torch.float64)
            for s in samples:
                seg_probs, pred, idx = model(s.observed.values, len(s.future_labels),
                                             detach_context=True)
                tokens, _ = model.encoder(s.observed.values)
                fine = torch.as_tensor(s.observed_labels.fine_frames()[idx])
                logits, hidden = model.fine_generator.logits_and_hidden(tokens)
                gen = generator_total_loss(logits, fine, hidden,
                                           form_clusters(fine.numpy()), weights)
                coarse = torch.as_tensor(s.observed_labels.coarse_frames()[idx])
                seg_ce = nn.functional.nll_loss(torch.log(seg_probs + 1e-12), coarse)
                loss = loss + gen + seg_ce + anticipation_loss(pred, s.future_labels,
                                                               model_cfg.n_fine)
            loss = loss / len(samples)
            _check_finite(loss, "joint", epoch)
            loss.backward()
            opt.step()
            total += loss.item()
            count += 1
        trace.append({"epoch": epoch, "lr": lr, "loss": total / max(count, 1)})
    return TrainedRun(model, [], trace, corpus, holdout or [])


def train_two_stage(corpus: Corpus, model_cfg: ModelConfig, cfg: TrainConfig) -> TrainedRun:
    """Full pipeline: seeded split, generator stage, then main stage."""
    train, hold = split_corpus(corpus, cfg.holdout_frac, cfg.seed)
    if cfg.stage == "joint":
        return train_joint(train, model_cfg, cfg, holdout=hold)
    stage1 = train_generator(train, model_cfg, cfg)
    stage2 = train_main(train, stage1, model_cfg, cfg, holdout=hold)
    return TrainedRun(stage2.model, stage1.trace, stage2.trace, train, hold)


def write_trace_csv(trace: list[dict], path: str | Path) -> None:
    if not trace:
        return
    keys = list(trace[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
