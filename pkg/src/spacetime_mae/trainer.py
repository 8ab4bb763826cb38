"""Pretraining and fine-tuning loops."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as mm
from . import tensor as tc
from .checkpoint import save_checkpoint
from .dataset import ClipDataset, RepeatedSampler, SamplingConfig
from .masking import MaskSchedule, ratio_at, sample_agnostic, sample_mask
from .optim import OptimState, adamw_step, clip_gradients, lr_at, no_decay
from .video import ConfigError, VideoClip, resize_bilinear

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "epoch", "lr", "loss", "tokens_per_sec", "wall_ms")


@dataclass
class RunConfig:
    epochs: int = 800
    warmup_epochs: int = 120
    base_lr: float = 1.6e-3
    batch_size: int = 512
    repeat_factor: int = 4
    grad_clip: float = 0.02
    seed: int = 0
    eval_interval: int = 50  # epochs between checkpoints
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    adam_eps: float = 1e-8
    deterministic: bool = False  # zero the timing columns so metrics files are reproducible
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if isinstance(self.sampling, dict):
            self.sampling = SamplingConfig(**self.sampling)
        self.betas = tuple(self.betas)
        self.sampling.scale_range = tuple(self.sampling.scale_range)
        if min(self.epochs, self.batch_size, self.repeat_factor) < 1 or self.base_lr <= 0:
            raise ConfigError("epochs, batch_size, repeat_factor and base_lr must be positive")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) must be below epochs ({self.epochs})")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        out["sampling"]["scale_range"] = list(self.sampling.scale_range)
        return out

    def lr_at(self, step: float, steps_per_epoch: float = 1.0) -> float:
        return lr_at(self.base_lr, self.warmup_epochs * steps_per_epoch, self.epochs * steps_per_epoch, step)


def mask_seed(run_seed: int, epoch: int, sample_index: int) -> int:
    """Per-sample mask seed, a hash of (run seed, epoch, sample index)."""
    ss = np.random.SeedSequence([run_seed, epoch, sample_index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def fit_clip(clip: VideoClip, cfg: mm.MaeConfig, sampling: SamplingConfig) -> VideoClip:
    """Deterministic evaluation view: first frames at the configured stride, resized."""
    from .video import sample_clip

    T, H, W = cfg.input_size
    c = sample_clip(clip, T, sampling.stride, start=0) if clip.shape[0] != T else clip
    if c.shape[1:3] != (H, W):
        c = VideoClip(resize_bilinear(c.frames, H, W), c.source_id, c.frame_stride)
    return c


def _decay_mask(names) -> dict[str, bool]:
    return {n: not no_decay(n) for n in names}


def _collect_grads(params: dict[str, tc.Tensor]) -> dict[str, np.ndarray]:
    return {k: t.grad for k, t in params.items() if t.grad is not None}


class MetricsWriter:
    def __init__(self, path: Path | None):
        self.rows: list[tuple] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._w.writerow(METRICS_HEADER)

    def write(self, row: tuple) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._w.writerow(row)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()

    def as_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(self.rows)
        return buf.getvalue()


def format_row(step, epoch, lr, loss, tps, wall_ms) -> tuple:
    return (step, epoch, f"{lr:.8e}", f"{loss:.8e}", f"{tps:.1f}", f"{wall_ms:.1f}")


def write_config_echo(path: Path, mae_cfg: mm.MaeConfig, run_cfg: RunConfig, names) -> None:
    """Flat ``key = value`` listing of every resolved hyperparameter."""

    def flat(prefix, d):
        for k, v in d.items():
            if isinstance(v, dict):
                yield from flat(f"{prefix}{k}.", v)
            else:
                yield f"{prefix}{k}", v

    lines = [f"{k} = {v!r}" for k, v in flat("model.", mae_cfg.to_dict())]
    lines += [f"{k} = {v!r}" for k, v in flat("run.", run_cfg.to_dict())]
    excluded = sorted(n for n in names if no_decay(n))
    lines.append(f"run.no_weight_decay = {excluded!r}")
    path.write_text("\n".join(lines) + "\n")


@dataclass
class PretrainResult:
    model: mm.MaeModel
    metrics: list[tuple]
    metrics_csv: str
    checkpoints: list[Path]
    steps: int
    samples_seen: int
    decodes: int


def evaluate_masked_mse(model: mm.MaeModel, dataset: ClipDataset, sampling: SamplingConfig,
                        seed: int = 12345) -> tuple[float, float]:
    """(model MSE, predict-zero MSE) on fixed plans over the deterministic eval view."""
    cfg = model.cfg
    losses, zeros = [], []
    with tc.no_grad():
        for i in range(len(dataset)):
            clip = fit_clip(dataset[i], cfg, sampling)
            plan = sample_mask(cfg.sampler, cfg.grid, cfg.mask_ratio, mask_seed(seed, 0, i))
            loss, _ = mm.forward_pretrain(clip, plan, model)
            tgt = mm.targets_for(clip, plan, model)[plan.masked]
            losses.append(float(loss.data))
            zeros.append(float(np.mean(tgt.astype(np.float64) ** 2)))
    return float(np.mean(losses)), float(np.mean(zeros))


def pretrain(dataset: ClipDataset, mae_cfg: mm.MaeConfig, run_cfg: RunConfig, out_dir: str | Path | None = None,
             model: mm.MaeModel | None = None) -> PretrainResult:
    """Effective-epoch pretraining with repeated sampling and a fresh mask per sample."""
    model = model or mm.MaeModel(mae_cfg, seed=run_cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_config_echo(out / "config_echo.txt", mae_cfg, run_cfg, model.params)
    n_videos = len(dataset)
    total_steps = max(1, run_cfg.epochs * n_videos // run_cfg.batch_size)
    steps_per_epoch = n_videos / run_cfg.batch_size
    sampler = RepeatedSampler(dataset, run_cfg.batch_size, run_cfg.repeat_factor, run_cfg.sampling,
                              seed=run_cfg.seed)
    state = OptimState(run_cfg.base_lr, run_cfg.betas, run_cfg.weight_decay, run_cfg.adam_eps)
    decay = _decay_mask(model.params)
    writer = MetricsWriter(out / "metrics.csv" if out is not None else None)
    checkpoints: list[Path] = []
    t_start = time.perf_counter()
    next_ckpt = run_cfg.eval_interval
    try:
        for step in range(total_steps):
            t0 = time.perf_counter()
            first_sample = sampler.samples_seen
            epoch = first_sample // n_videos
            batch = sampler.next_batch()
            model.zero_grad()
            total = None
            enc_tokens = 0
            for j, clip in enumerate(batch.clips):
                plan = sample_mask(mae_cfg.sampler, mae_cfg.grid, mae_cfg.mask_ratio,
                                   mask_seed(run_cfg.seed, epoch, first_sample + j))
                sample_loss, _ = mm.forward_pretrain(clip, plan, model)
                enc_tokens += plan.visible.size
                total = sample_loss if total is None else tc.add(total, sample_loss)
            loss = tc.scale(total, 1.0 / len(batch.clips))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise FloatingPointError(f"non-finite loss at step {step} (epoch {epoch})")
            tc.backward(loss)
            grads = clip_gradients(_collect_grads(model.params), run_cfg.grad_clip)
            lr = run_cfg.lr_at(step, steps_per_epoch)
            adamw_step({k: t.data for k, t in model.params.items()}, grads, state, lr, decay)
            dt = time.perf_counter() - t0
            if run_cfg.deterministic:
                tps, wall = 0.0, 0.0
            else:
                tps, wall = enc_tokens / max(dt, 1e-9), (time.perf_counter() - t_start) * 1e3
            writer.write(format_row(step, epoch, lr, loss_val, tps, wall))
            epoch_done = sampler.samples_seen / n_videos
            if out is not None and epoch_done >= next_ckpt and step < total_steps - 1:
                path = out / f"epoch_{int(epoch_done):04d}.ckpt"
                save_checkpoint(path, model.state_dict())
                checkpoints.append(path)
                next_ckpt += run_cfg.eval_interval
    finally:
        writer.close()
    if out is not None:
        path = out / "final.ckpt"
        save_checkpoint(path, model.state_dict())
        checkpoints.append(path)
    return PretrainResult(model, writer.rows, writer.as_csv(), checkpoints, total_steps,
                          sampler.samples_seen, sampler.decodes)


@dataclass
class FinetuneResult:
    accuracy: float
    losses: list[float]
    ratios: list[float]
    encoder_tokens: list[int]
    step_ms: list[float]
    metrics_csv: str
    model: mm.MaeModel
    head: dict


def accuracy(model: mm.MaeModel, head: dict, dataset: ClipDataset, sampling: SamplingConfig) -> float:
    if dataset.labels is None:
        raise ValueError("evaluation dataset has no labels")
    correct = 0
    with tc.no_grad():
        for i in range(len(dataset)):
            logits = mm.classify(fit_clip(dataset[i], model.cfg, sampling), model, head)
            correct += int(np.argmax(logits.data[0]) == dataset.labels[i])
    return correct / len(dataset)


def finetune(train: ClipDataset, mae_cfg: mm.MaeConfig, run_cfg: RunConfig, num_classes: int,
             init: dict[str, np.ndarray] | None = None, mask_schedule: MaskSchedule | None = None,
             evaluation: ClipDataset | None = None, out_dir: str | Path | None = None) -> FinetuneResult:
    """Train encoder + linear head with cross-entropy; returns accuracy on ``evaluation``.

    ``init=None`` trains from scratch. ``mask_schedule`` sets the encoder masking ratio per step.
    """
    if train.labels is None:
        raise ValueError("fine-tuning needs labels")
    bad = [lab for lab in train.labels if not 0 <= lab < num_classes]
    if bad:
        raise ValueError(f"labels {sorted(set(bad))[:5]} outside [0, {num_classes})")
    model = mm.MaeModel(mae_cfg, seed=run_cfg.seed)
    if init is not None:
        model.load_state_dict(init)
    head = mm.init_head(mae_cfg.d_enc, num_classes, seed=run_cfg.seed + 1, dtype=mae_cfg.dtype)
    # the decoder is unused when classifying
    params = {k: t for k, t in model.params.items() if not _is_decoder(k)}
    params.update(head)
    n_videos = len(train)
    total_steps = max(1, run_cfg.epochs * n_videos // run_cfg.batch_size)
    steps_per_epoch = n_videos / run_cfg.batch_size
    schedule = mask_schedule or MaskSchedule(0.0, 0.0, total_steps, "constant")
    sampler = RepeatedSampler(train, run_cfg.batch_size, run_cfg.repeat_factor, run_cfg.sampling,
                              seed=run_cfg.seed)
    state = OptimState(run_cfg.base_lr, run_cfg.betas, run_cfg.weight_decay, run_cfg.adam_eps)
    decay = _decay_mask(params)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(Path(out_dir) / "metrics.csv" if out_dir is not None else None)
    losses, ratios, tokens, times = [], [], [], []
    t_start = time.perf_counter()
    try:
        for step in range(total_steps):
            t0 = time.perf_counter()
            first_sample = sampler.samples_seen
            epoch = first_sample // n_videos
            batch = sampler.next_batch()
            ratio = ratio_at(schedule, min(step * schedule.total_steps // total_steps, schedule.total_steps))
            for t in params.values():
                t.grad = None
            logits, n_tok = [], 0
            for j, clip in enumerate(batch.clips):
                plan = sample_agnostic(mae_cfg.grid, ratio, mask_seed(run_cfg.seed, epoch, first_sample + j))
                n_tok += plan.visible.size
                logits.append(mm.classify(clip, model, head, plan))
            loss = tc.cross_entropy(tc.concat(logits, axis=0), batch.labels)
            tc.backward(loss)
            grads = clip_gradients(_collect_grads(params), run_cfg.grad_clip)
            lr = run_cfg.lr_at(step, steps_per_epoch)
            adamw_step({k: t.data for k, t in params.items()}, grads, state, lr, decay)
            dt = time.perf_counter() - t0
            losses.append(float(loss.data))
            ratios.append(ratio)
            tokens.append(n_tok)
            times.append(dt * 1e3)
            if run_cfg.deterministic:
                tps, wall = 0.0, 0.0
            else:
                tps, wall = n_tok / max(dt, 1e-9), (time.perf_counter() - t_start) * 1e3
            writer.write(format_row(step, epoch, lr, losses[-1], tps, wall))
    finally:
        writer.close()
    acc = accuracy(model, head, evaluation, run_cfg.sampling) if evaluation is not None else float("nan")
    if out_dir is not None:
        ckpt = dict(model.state_dict())
        ckpt.update({k: t.data for k, t in head.items()})
        save_checkpoint(Path(out_dir) / "final.ckpt", ckpt)
    return FinetuneResult(acc, losses, ratios, tokens, times, writer.as_csv(), model, head)


def _is_decoder(name: str) -> bool:
    return name.startswith(("dec", "mask_token", "pred_head"))
