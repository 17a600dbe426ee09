"""Synthetic hierarchical-activity corpora: generation, disk format, samples.

Each video is a Markov walk over fine action classes with geometric segment
durations. Frame features are class-conditioned Gaussians whose means drift
linearly with the absolute frame index, so the same fine class occupies
displaced feature regions at distant timestamps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, CorpusSpec


class CorpusIOError(RuntimeError):
    """Raised when an on-disk corpus is missing or inconsistent."""


@dataclass(frozen=True)
class LabelSegment:
    coarse_id: int
    fine_id: int
    start: int  # inclusive
    end: int    # exclusive


@dataclass
class LabelTimeline:
    """Ordered segments tiling [0, T) with maximal same-fine-label runs."""

    segments: list[LabelSegment]
    T: int

    def validate(self) -> None:
        pos = 0
        prev_fine = None
        for seg in self.segments:
            if seg.start != pos or seg.end <= seg.start:
                raise ValueError("segments must tile [0, T) contiguously")
            if seg.fine_id == prev_fine:
                raise ValueError("adjacent segments must differ in fine_id")
            pos = seg.end
            prev_fine = seg.fine_id
        if pos != self.T:
            raise ValueError(f"segments cover [0, {pos}) but T={self.T}")

    def fine_frames(self) -> np.ndarray:
        out = np.empty(self.T, dtype=np.int64)
        for seg in self.segments:
            out[seg.start:seg.end] = seg.fine_id
        return out

    def coarse_frames(self) -> np.ndarray:
        out = np.empty(self.T, dtype=np.int64)
        for seg in self.segments:
            out[seg.start:seg.end] = seg.coarse_id
        return out

    def slice(self, start: int, end: int) -> "LabelTimeline":
        """Timeline restricted to [start, end), re-indexed to start at 0."""
        segs = []
        for seg in self.segments:
            s, e = max(seg.start, start), min(seg.end, end)
            if s < e:
                segs.append(LabelSegment(seg.coarse_id, seg.fine_id, s - start, e - start))
        return LabelTimeline(segs, end - start)


@dataclass
class FrameFeatureSequence:
    values: np.ndarray  # (T, C) float32
    video_id: str

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]


Corpus = list[tuple[FrameFeatureSequence, LabelTimeline]]


@dataclass
class AnticipationSample:
    """One (observed prefix, future window) pair cut at rates alpha/beta."""

    observed: FrameFeatureSequence
    observed_labels: LabelTimeline
    future_labels: np.ndarray  # fine id per frame, length ceil(beta*T)
    alpha: float
    beta: float
    full_T: int


def _segment_lengths(rng: np.random.Generator, T: int, mean_len: float) -> list[int]:
    """Geometric durations with the given mean, clipped to [3, 0.5*T]."""
    lo, hi = 3, max(3, T // 2)
    lens: list[int] = []
    total = 0
    p = min(1.0, 1.0 / mean_len)
    while total < T:
        n = int(np.clip(rng.geometric(p), lo, hi))
        n = min(n, T - total)
        lens.append(n)
        total += n
    # avoid a trailing sliver shorter than the clip floor
    if len(lens) >= 2 and lens[-1] < lo:
        lens[-2] += lens[-1]
        lens.pop()
    return lens


def _walk_labels(rng: np.random.Generator, spec: CorpusSpec, n_segments: int) -> list[int]:
    """Markov walk over fine labels; self-transitions are renormalized away."""
    tm = np.asarray(spec.transition_matrix)
    labels = [int(rng.integers(spec.n_fine))]
    for _ in range(n_segments - 1):
        cur = labels[-1]
        row = tm[cur].copy()
        row[cur] = 0.0
        mass = row.sum()
        if mass <= 0:
            if spec.n_fine == 1:
                break  # single class: one segment covers the video
            row = np.ones(spec.n_fine)
            row[cur] = 0.0
            mass = row.sum()
        labels.append(int(rng.choice(spec.n_fine, p=row / mass)))
    return labels


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Deterministically synthesize a corpus from the spec (seed included)."""
    spec.validate()
    master = np.random.default_rng(spec.seed)
    base_means = master.normal(size=(spec.n_fine, spec.C))
    drift_dirs = master.normal(size=(spec.n_fine, spec.C))
    drift_dirs /= np.linalg.norm(drift_dirs, axis=1, keepdims=True)

    corpus: Corpus = []
    for v in range(spec.n_videos):
        rng = np.random.default_rng((spec.seed, v))
        T = int(rng.integers(int(0.8 * spec.mean_video_len), int(1.2 * spec.mean_video_len) + 1))
        T = max(T, 4)
        lens = _segment_lengths(rng, T, spec.mean_segment_len)
        fine_seq = _walk_labels(rng, spec, len(lens))
        if len(fine_seq) < len(lens):  # single-class corpus: merge into one run
            lens = [T]

        segments, pos = [], 0
        for fine, n in zip(fine_seq, lens):
            segments.append(LabelSegment(spec.fine_to_coarse[fine], fine, pos, pos + n))
            pos += n
        timeline = LabelTimeline(segments, T)
        timeline.validate()

        fine_frames = timeline.fine_frames()
        idx = np.arange(T)[:, None].astype(np.float64)
        feats = (base_means[fine_frames]
                 + spec.drift_rate * idx * drift_dirs[fine_frames]
                 + rng.normal(scale=spec.noise_std, size=(T, spec.C)))
        corpus.append((FrameFeatureSequence(feats.astype(np.float32), f"video_{v:04d}"), timeline))
    return corpus


def write_corpus(corpus: Corpus, dir_path: str | Path, spec: CorpusSpec | None = None) -> Path:
    """Persist a corpus: JSON manifest plus one raw .f32 file per video."""
    root = Path(dir_path)
    (root / "features").mkdir(parents=True, exist_ok=True)
    videos = []
    for feats, timeline in corpus:
        fname = f"features/{feats.video_id}.f32"
        feats.values.astype("<f4").tofile(root / fname)
        videos.append({
            "video_id": feats.video_id,
            "T": timeline.T,
            "C": feats.C,
            "feature_file": fname,
            "segments": [[s.coarse_id, s.fine_id, s.start, s.end] for s in timeline.segments],
        })
    manifest = {"version": 1, "videos": videos}
    if spec is not None:
        manifest["spec"] = {
            "n_coarse": spec.n_coarse,
            "n_fine": spec.n_fine,
            "fine_to_coarse": list(spec.fine_to_coarse),
            "C": spec.C,
        }
    path = root / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def read_corpus(dir_path: str | Path) -> Corpus:
    root = Path(dir_path)
    path = root / "manifest.json"
    if not path.exists():
        raise CorpusIOError(f"no manifest.json under {root}")
    with open(path) as fh:
        manifest = json.load(fh)
    corpus: Corpus = []
    for entry in manifest["videos"]:
        vid, T, C = entry["video_id"], entry["T"], entry["C"]
        raw = np.fromfile(root / entry["feature_file"], dtype="<f4")
        if raw.size != T * C:
            raise CorpusIOError(
                f"feature file for {vid} holds {raw.size} floats, expected {T}x{C}")
        timeline = LabelTimeline(
            [LabelSegment(*seg) for seg in entry["segments"]], T)
        timeline.validate()
        corpus.append((FrameFeatureSequence(raw.reshape(T, C), vid), timeline))
    return corpus


def read_corpus_meta(dir_path: str | Path) -> dict:
    with open(Path(dir_path) / "manifest.json") as fh:
        manifest = json.load(fh)
    if "spec" not in manifest:
        raise CorpusIOError("manifest carries no corpus spec metadata")
    return manifest["spec"]


def make_samples(corpus: Corpus, alpha: float, beta: float) -> list[AnticipationSample]:
    """Cut each eligible video into observed/future windows; report skips.

    Windows use ceiling arithmetic: observed [0, ceil(alpha*T)), future of
    length ceil(beta*T) immediately after. Videos where the two windows do not
    fit are skipped.
    """
    if alpha <= 0 or beta <= 0:
        raise ConfigError("alpha and beta must be > 0")
    samples = []
    for feats, timeline in corpus:
        T = timeline.T
        n_obs = math.ceil(alpha * T)
        n_fut = math.ceil(beta * T)
        if n_obs + n_fut > T or n_obs == 0:
            continue
        fine = timeline.fine_frames()
        samples.append(AnticipationSample(
            observed=FrameFeatureSequence(feats.values[:n_obs], feats.video_id),
            observed_labels=timeline.slice(0, n_obs),
            future_labels=fine[n_obs:n_obs + n_fut].copy(),
            alpha=alpha,
            beta=beta,
            full_T=T,
        ))
    return samples
