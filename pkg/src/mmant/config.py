"""Configuration objects: corpus spec, model hyperparameters, training setup."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


@dataclass
class CorpusSpec:
    """Parameters of the synthetic hierarchical-activity corpus generator."""

    n_videos: int
    n_coarse: int
    n_fine: int
    fine_to_coarse: list[int]
    C: int
    mean_video_len: int
    drift_rate: float
    noise_std: float
    transition_matrix: list[list[float]]
    seed: int
    mean_segment_len: float = 24.0

    def validate(self) -> None:
        if self.n_videos < 0:
            raise ConfigError("n_videos must be >= 0")
        if self.n_coarse < 1 or self.n_fine < 1:
            raise ConfigError("n_coarse and n_fine must be >= 1")
        if len(self.fine_to_coarse) != self.n_fine:
            raise ConfigError("fine_to_coarse must map every fine_id exactly once")
        for f, c in enumerate(self.fine_to_coarse):
            if not 0 <= c < self.n_coarse:
                raise ConfigError(f"fine_to_coarse[{f}]={c} out of range [0, {self.n_coarse})")
        if self.C < 1:
            raise ConfigError("C must be >= 1")
        if self.mean_video_len < 1:
            raise ConfigError("mean_video_len must be >= 1")
        if self.drift_rate < 0:
            raise ConfigError("drift_rate must be >= 0")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be > 0")
        tm = self.transition_matrix
        if len(tm) != self.n_fine or any(len(row) != self.n_fine for row in tm):
            raise ConfigError("transition_matrix must be n_fine x n_fine")
        for i, row in enumerate(tm):
            if any(p < 0 for p in row):
                raise ConfigError(f"transition_matrix row {i} has a negative entry")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ConfigError(f"transition_matrix row {i} sums to {sum(row)}, not 1")
        if self.mean_segment_len < 1:
            raise ConfigError("mean_segment_len must be >= 1")


def cyclic_transition_matrix(n_fine: int, p_next: float = 0.95, seed: int = 0) -> list[list[float]]:
    """Row-stochastic matrix with a dominant successor cycle.

    Fine class i moves to (i+1) mod n_fine with probability p_next; the
    remainder is split over two seeded "shortcut" classes. Zero diagonal, so
    segment durations are governed entirely by the duration distribution.
    """
    import numpy as np

    if n_fine == 1:
        return [[1.0]]
    rng = np.random.default_rng(seed)
    tm = np.zeros((n_fine, n_fine))
    for i in range(n_fine):
        nxt = (i + 1) % n_fine
        tm[i, nxt] = p_next
        others = [j for j in range(n_fine) if j != i and j != nxt]
        picks = rng.choice(others, size=min(2, len(others)), replace=False)
        for j in picks:
            tm[i, j] += (1.0 - p_next) / len(picks)
    return tm.tolist()


def default_corpus_spec(seed: int = 0) -> CorpusSpec:
    """Default desk-scale corpus: 60 videos, 6 coarse / 12 fine classes."""
    n_fine = 12
    return CorpusSpec(
        n_videos=60,
        n_coarse=6,
        n_fine=n_fine,
        fine_to_coarse=[f // 2 for f in range(n_fine)],
        C=16,
        mean_video_len=200,
        drift_rate=0.02,
        noise_std=0.5,
        transition_matrix=cyclic_transition_matrix(n_fine, seed=seed),
        seed=seed,
    )


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by all modules."""

    C: int = 16
    d: int = 32
    n_coarse: int = 6
    n_fine: int = 12
    tau: int = 3
    heads: int = 4
    l_seg: int = 2
    l_ant: int = 1
    n_queries: int = 8
    max_len: int = 512
    d_f: int | None = None          # FFN inner width; defaults to 4*d
    pool_window: int | None = None  # fine-label pooling window t; defaults to tau
    # intra/inter are unnormalized sums over frames; lambda1 well below 1
    # keeps the consistency term from swamping the mean cross-entropy
    lambda1: float = 0.01
    lambda2: float = 0.1
    eq5_literal: bool = True
    soft_seg_labels: bool = False   # embed soft distributions instead of argmax
    use_fine: bool = True           # fine-grained branch feeds the fusion input

    @property
    def ffn_width(self) -> int:
        return self.d_f if self.d_f is not None else 4 * self.d

    @property
    def pooling(self) -> int:
        return self.pool_window if self.pool_window is not None else self.tau

    def validate(self) -> None:
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        for name in ("C", "d", "tau", "heads", "l_seg", "l_ant", "n_queries", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda weights must be >= 0")


@dataclass
class TrainConfig:
    """Two-stage training setup."""

    epochs: int = 60
    lr_peak: float = 1e-3
    batch_size: int = 16
    warmup_epochs: int = 10
    alpha_train: tuple[float, ...] = (0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)
    beta_train: float = 0.5
    seed: int = 1
    stage: str = "main"  # generator | main | joint
    weight_decay: float = 0.1
    holdout_frac: float = 0.2

    def validate(self) -> None:
        if not self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must be < epochs")
        if self.lr_peak <= 0:
            raise ConfigError("lr_peak must be > 0")
        if self.stage not in ("generator", "main", "joint"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if not 0 < self.beta_train < 1:
            raise ConfigError("beta_train must lie in (0, 1)")
        for a in self.alpha_train:
            if not 0 < a < 1:
                raise ConfigError("alpha_train rates must lie in (0, 1)")


@dataclass
class ProtocolSpec:
    """Evaluation grid: observation/prediction rates and seeds."""

    alphas: tuple[float, ...] = (0.1, 0.2, 0.3)
    betas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    seeds: tuple[int, ...] = (1, 10, 13452)

    def validate(self) -> None:
        if not self.alphas or not self.betas or not self.seeds:
            raise ConfigError("alphas, betas, and seeds must be non-empty")
        for r in list(self.alphas) + list(self.betas):
            if not 0 < r < 1:
                raise ConfigError(f"rate {r} out of (0, 1)")


_CONFIG_TYPES = {
    "corpus": CorpusSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "protocol": ProtocolSpec,
}


def load_config(path: str | Path, kind: str):
    """Load and validate a JSON config file of the given kind."""
    cls = _CONFIG_TYPES[kind]
    with open(path) as fh:
        raw = json.load(fh)
    try:
        cfg = cls(**{k: tuple(v) if isinstance(v, list) and k in ("alpha_train", "alphas", "betas", "seeds") else v
                     for k, v in raw.items()})
    except TypeError as exc:
        raise ConfigError(f"bad {kind} config: {exc}") from exc
    cfg.validate()
    return cfg


def save_config(cfg, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2)
        fh.write("\n")
