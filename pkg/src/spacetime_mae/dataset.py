"""Clip datasets and the repeated-sampling batch loader."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .clipfile import read_clip, read_labels, write_clip, write_labels
from .video import ConfigError, VideoClip, augment, generate_synthetic, sample_clip


class ClipDataset:
    """Indexable collection of raw videos with optional integer labels.

    Directory-backed datasets decode the file on every access, which is the
    cost repeated sampling amortizes.
    """

    def __init__(self, clips: Sequence[VideoClip] | None = None, labels: Sequence[int] | None = None,
                 paths: Sequence[Path] | None = None):
        if (clips is None) == (paths is None):
            raise ValueError("pass exactly one of clips or paths")
        self._clips = list(clips) if clips is not None else None
        self._paths = list(paths) if paths is not None else None
        self.labels = list(labels) if labels is not None else None
        if self.labels is not None and len(self.labels) != len(self):
            raise ValueError(f"{len(self.labels)} labels for {len(self)} clips")

    @classmethod
    def from_directory(cls, directory: str | Path) -> "ClipDataset":
        directory = Path(directory)
        paths = sorted(directory.glob("*.vmae"))
        if not paths:
            raise FileNotFoundError(f"no .vmae clips in {directory}")
        table = read_labels(directory)
        labels = None
        if table is not None:
            missing = [p.name for p in paths if p.name not in table]
            if missing:
                raise ValueError(f"labels.tsv lacks entries for {missing[:3]}")
            labels = [table[p.name] for p in paths]
        return cls(paths=paths, labels=labels)

    def __len__(self) -> int:
        return len(self._clips) if self._clips is not None else len(self._paths)

    def __getitem__(self, i: int) -> VideoClip:
        if self._clips is not None:
            return self._clips[i]
        return read_clip(self._paths[i])

    def subset(self, indices: Sequence[int]) -> "ClipDataset":
        labels = [self.labels[i] for i in indices] if self.labels is not None else None
        if self._clips is not None:
            return ClipDataset([self._clips[i] for i in indices], labels)
        return ClipDataset(paths=[self._paths[i] for i in indices], labels=labels)


def synthetic_dataset(kind: str, count: int, shape: tuple[int, int, int, int], seed: int,
                      **spec_kwargs) -> ClipDataset:
    from .video import SyntheticSpec

    T, H, W, C = shape
    spec = SyntheticSpec(**spec_kwargs)
    root = np.random.SeedSequence(seed)
    clips, labels = [], []
    for i, child in enumerate(root.spawn(count)):
        clip, lab = generate_synthetic(kind, T, H, W, C, np.random.default_rng(child), spec)
        clip.source_id = f"{kind}_{i:05d}"
        clips.append(clip)
        labels.append(lab)
    return ClipDataset(clips, labels)


def write_dataset(directory: str | Path, dataset: ClipDataset) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {}
    out = []
    for i in range(len(dataset)):
        name = f"clip_{i:05d}.vmae"
        write_clip(directory / name, dataset[i])
        out.append(directory / name)
        if dataset.labels is not None:
            names[name] = dataset.labels[i]
    if dataset.labels is not None:
        write_labels(directory, names)
    return out


@dataclass
class SamplingConfig:
    num_frames: int = 16
    stride: int = 4
    out_h: int = 224
    out_w: int = 224
    scale_range: tuple[float, float] = (0.5, 1.0)
    hflip_prob: float = 0.5


@dataclass
class SampleBatch:
    clips: list[VideoClip]
    labels: list[int] | None
    seeds: list[int]
    sources: list[int] = field(default_factory=list)

    def __post_init__(self):
        shapes = {c.shape for c in self.clips}
        if len(shapes) > 1:
            raise ValueError(f"batch clips disagree in shape: {shapes}")


def make_sample(video: VideoClip, cfg: SamplingConfig, seed: int) -> VideoClip:
    rng = np.random.default_rng(seed)
    clip = sample_clip(video, cfg.num_frames, cfg.stride, rng)
    return augment(clip, cfg.out_h, cfg.out_w, cfg.scale_range, cfg.hflip_prob, rng)


def load_batch(dataset: ClipDataset, batch_size: int, repeat_factor: int, rng: np.random.Generator,
               sampling: SamplingConfig, sources: Sequence[int] | None = None) -> SampleBatch:
    """Decode ``batch_size // repeat_factor`` videos, ``repeat_factor`` augmented samples each."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if repeat_factor < 1 or batch_size < 1 or batch_size % repeat_factor:
        raise ConfigError(
            f"batch_size ({batch_size}) must be a positive multiple of repeat_factor ({repeat_factor})"
        )
    n_src = batch_size // repeat_factor
    if sources is None:
        sources = rng.choice(len(dataset), size=n_src, replace=n_src > len(dataset))
    if len(sources) != n_src:
        raise ConfigError(f"expected {n_src} sources, got {len(sources)}")
    clips, labels, seeds = [], [], []
    for src in sources:
        video = dataset[int(src)]
        for _ in range(repeat_factor):
            s = int(rng.integers(2**63))
            clips.append(make_sample(video, sampling, s))
            seeds.append(s)
            if dataset.labels is not None:
                labels.append(dataset.labels[int(src)])
    return SampleBatch(clips, labels if dataset.labels is not None else None, seeds,
                       [int(s) for s in sources for _ in range(repeat_factor)])


class RepeatedSampler:
    """Endless stream of batches under repeated sampling.

    Sources are visited in shuffled passes; each decoded source yields
    ``repeat_factor`` samples. One effective epoch is ``len(dataset)`` samples,
    whatever the repeat factor.
    """

    def __init__(self, dataset: ClipDataset, batch_size: int, repeat_factor: int,
                 sampling: SamplingConfig, seed: int):
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        if repeat_factor < 1 or batch_size % repeat_factor:
            raise ConfigError(
                f"batch_size ({batch_size}) must be a positive multiple of repeat_factor ({repeat_factor})"
            )
        self.dataset = dataset
        self.batch_size = batch_size
        self.repeat_factor = repeat_factor
        self.sampling = sampling
        self.rng = np.random.default_rng(seed)
        self.samples_seen = 0
        self.decodes = 0
        self._order: list[int] = []

    @property
    def effective_epoch(self) -> float:
        return self.samples_seen / len(self.dataset)

    def _next_source(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.dataset)))
        return int(self._order.pop(0))

    def next_batch(self) -> SampleBatch:
        n_src = self.batch_size // self.repeat_factor
        sources = [self._next_source() for _ in range(n_src)]
        batch = load_batch(self.dataset, self.batch_size, self.repeat_factor, self.rng,
                           self.sampling, sources)
        self.decodes += n_src
        self.samples_seen += self.batch_size
        return batch

    def __iter__(self) -> Iterator[SampleBatch]:
        while True:
            yield self.next_batch()
