"""Mean-over-classes accuracy and the alpha/beta/seed evaluation protocol."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, ProtocolSpec, TrainConfig
from .data import Corpus, make_samples


def moc_accuracy(pred: np.ndarray, truth: np.ndarray, n_classes: int | None = None) -> float:
    """Per-class frame accuracy averaged over classes present in the truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"pred/truth shape mismatch: {pred.shape} vs {truth.shape}")
    accs = []
    for c in np.unique(truth):
        mask = truth == c
        accs.append(float((pred[mask] == c).mean()))
    return float(np.mean(accs))


def evaluate_model(model, corpus: Corpus, alpha: float, beta: float,
                   n_classes: int) -> list[tuple[str, float]]:
    """Per-video MoC over the prediction horizon at original frame resolution."""
    rows = []
    with torch.no_grad():
        for s in make_samples(corpus, alpha, beta):
            horizon = len(s.future_labels)
            try:
                _, pred, _ = model(s.observed.values, horizon)
            except ValueError:
                continue  # observed window shorter than the stride
            rows.append((s.observed.video_id,
                         moc_accuracy(pred.expanded, s.future_labels, n_classes)))
    return rows


def mean_moc(model, corpus: Corpus, alpha: float, beta: float, n_classes: int) -> float:
    rows = evaluate_model(model, corpus, alpha, beta, n_classes)
    return float(np.mean([m for _, m in rows])) if rows else float("nan")


def segmentation_accuracy(model, corpus: Corpus) -> float:
    """Coarse frame accuracy at sampled resolution over full videos."""
    hits = total = 0
    with torch.no_grad():
        for feats, timeline in corpus:
            tokens, idx = model.encoder(feats.values)
            probs, _ = model.segmenter(tokens)
            truth = timeline.coarse_frames()[idx]
            hits += int((probs.argmax(dim=-1).numpy() == truth).sum())
            total += len(idx)
    return hits / total


def chance_levels(corpus: Corpus, n_coarse: int, n_fine: int) -> dict[str, float]:
    """Uniform chance baselines for segmentation accuracy and MoC."""
    return {"seg_acc": 1.0 / n_coarse, "moc": 1.0 / n_fine}


def run_protocol(models_by_seed: dict[int, object], corpus: Corpus, spec: ProtocolSpec,
                 out_dir: str | Path, n_classes: int) -> dict[tuple[float, float], float]:
    """Evaluate every (alpha, beta, seed, video) cell and write the CSVs.

    protocol.csv holds the per-video dump; summary.csv holds per-(alpha, beta)
    means over videos then seeds. Returns the summary as a dict.
    """
    spec.validate()
    missing = [s for s in spec.seeds if s not in models_by_seed]
    if missing:
        raise FileNotFoundError(f"missing trained runs for seeds: {missing}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    detail_rows = []
    summary: dict[tuple[float, float], float] = {}
    for alpha in spec.alphas:
        for beta in spec.betas:
            seed_means = []
            for seed in spec.seeds:
                rows = evaluate_model(models_by_seed[seed], corpus, alpha, beta, n_classes)
                for vid, moc in rows:
                    detail_rows.append((alpha, beta, seed, vid, moc))
                seed_means.append(float(np.mean([m for _, m in rows])))
            summary[(alpha, beta)] = float(np.mean(seed_means))

    with open(out / "protocol.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "seed", "video_id", "moc"])
        for alpha, beta, seed, vid, moc in detail_rows:
            w.writerow([repr(alpha), repr(beta), seed, vid, repr(moc)])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "mean_moc"])
        for (alpha, beta), moc in summary.items():
            w.writerow([repr(alpha), repr(beta), repr(moc)])
    return summary


def recompute_summary(protocol_csv: str | Path) -> dict[tuple[float, float], float]:
    """Rebuild summary cells from the per-sample dump (integrity check path)."""
    per_cell_seed: dict[tuple[float, float, int], list[float]] = {}
    with open(protocol_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (float(row["alpha"]), float(row["beta"]), int(row["seed"]))
            per_cell_seed.setdefault(key, []).append(float(row["moc"]))
    cells: dict[tuple[float, float], list[float]] = {}
    for (alpha, beta, _seed), mocs in per_cell_seed.items():
        cells.setdefault((alpha, beta), []).append(float(np.mean(mocs)))
    return {k: float(np.mean(v)) for k, v in cells.items()}


ABLATION_VARIANTS = ("unimodal", "multimodal", "no_multilevel", "multilevel")


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Model config for one ablation arm; only the fine branch wiring differs."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    cfg = ModelConfig(**{**base.__dict__})
    if variant in ("unimodal", "no_multilevel"):
        cfg.use_fine = False
    return cfg


def run_ablation(corpus: Corpus, variants: list[str], base_cfg: ModelConfig,
                 train_cfg: TrainConfig, seeds: list[int], alphas: list[float],
                 beta: float, out_dir: str | Path) -> list[dict]:
    """Train each variant under identical seeds/data order and compare MoC."""
    from .training import train_two_stage

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in variants:
        cfg = variant_config(base_cfg, variant)
        for seed in seeds:
            tcfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
            run = train_two_stage(corpus, cfg, tcfg)
            for alpha in alphas:
                rows.append({
                    "variant": variant, "seed": seed, "alpha": alpha, "beta": beta,
                    "moc": mean_moc(run.model, run.holdout_split, alpha, beta, cfg.n_fine),
                    "n_params": sum(p.numel() for p in run.model.parameters()
                                    if p.requires_grad),
                })
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows
