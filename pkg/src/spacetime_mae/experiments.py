"""Desk-scale experiment protocols shared by the acceptance tests and scripts/.

Each function returns plain numbers so callers can print, tabulate or assert.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from pathlib import Path

from . import model as mm
from .config import load_config
from .dataset import SamplingConfig, synthetic_dataset
from .masking import MaskSchedule, keep_count
from .perf import benchmark_step
from .tokenizer import PatchSpec
from .trainer import RunConfig, evaluate_masked_mse, finetune, pretrain

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def _config(name: str):
    return load_config(CONFIG_DIR / name)


# pretraining convergence ---------------------------------------------------------


@dataclass
class ConvergenceResult:
    initial_mse: float
    final_mse: float
    zero_baseline: float
    losses: list[float]
    steps: int


def convergence_run(seed: int = 0, data_seed: int = 0, count: int = 64) -> ConvergenceResult:
    """Pretrain the tiny model from configs/tiny_pretrain.toml on moving squares."""
    cfg = _config("tiny_pretrain.toml")
    run = replace(cfg.run, seed=seed)
    ds = synthetic_dataset("moving_square", count, (*cfg.model.input_size, cfg.model.patch.in_channels), data_seed)
    model = mm.MaeModel(cfg.model, seed=seed)
    init, _ = evaluate_masked_mse(model, ds, run.sampling)
    res = pretrain(ds, cfg.model, run, model=model)
    final, zero = evaluate_masked_mse(model, ds, run.sampling)
    return ConvergenceResult(init, final, zero, [float(r[3]) for r in res.metrics], res.steps)


# transfer ---------------------------------------------------------------------------

# fast squares on a flat background: the direction is the only thing that varies
TRANSFER_DATA = dict(ramp=(0.0, 0.0), speed=4)


@dataclass
class TransferResult:
    seed: int
    scratch: float
    pretrained: float
    pretrain_mse: tuple[float, float]


def transfer_pair(seed: int, recipe: str = "tiny_transfer_pretrain.toml", train_count: int = 128,
                  test_count: int = 256, pretrain_count: int = 64) -> TransferResult:
    """Fine-tune from scratch and from a pretrained encoder under one budget.

    Both arms share the architecture, the fine-tuning data, the optimizer
    settings and the head initialization; only the encoder weights differ.
    """
    pre = _config(recipe)
    ft = _config("tiny_finetune.toml")
    shape = (*pre.model.input_size, pre.model.patch.in_channels)
    pre_ds = synthetic_dataset("moving_square", pretrain_count, shape, 100 + seed, **TRANSFER_DATA)
    train = synthetic_dataset("moving_square", train_count, shape, 200 + seed, **TRANSFER_DATA)
    test = synthetic_dataset("moving_square", test_count, shape, 300 + seed, **TRANSFER_DATA)
    pre_run = replace(pre.run, seed=seed)
    model = mm.MaeModel(pre.model, seed=seed)
    pretrain(pre_ds, pre.model, pre_run, model=model)
    mse = evaluate_masked_mse(model, pre_ds, pre_run.sampling)
    ft_run = replace(ft.run, seed=seed)
    scratch = finetune(train, ft.model, ft_run, ft.finetune.num_classes, evaluation=test)
    warm = finetune(train, ft.model, ft_run, ft.finetune.num_classes, init=model.state_dict(), evaluation=test)
    return TransferResult(seed, scratch.accuracy, warm.accuracy, mse)


# sparse vs dense wall clock ----------------------------------------------------------


def bench_config() -> mm.MaeConfig:
    """512 tokens (8x8x8) of width 128: large enough for attention and MLP cost to show."""
    return mm.MaeConfig(PatchSpec(2, 8, 1), (16, 64, 64), d_enc=128, depth_enc=4, heads_enc=4,
                        d_dec=32, depth_dec=1, heads_dec=2)


def speedup_run(ratios=(0.0, 0.5, 0.75, 0.9), repetitions: int = 5, seed: int = 0):
    return benchmark_step(bench_config(), list(ratios), repetitions, seed)


# masked fine-tuning -------------------------------------------------------------------


@dataclass
class ScheduleResult:
    ratios: list[float]
    encoder_tokens: list[int]
    expected_tokens: list[int]
    masked_ms: list[float]
    dense_ms: list[float]
    batch_size: int


def schedule_run(count: int = 8, epochs: int = 2, batch_size: int = 2, start: float = 0.5,
                 seed: int = 0) -> ScheduleResult:
    """Cosine-annealed fine-tuning masking next to a dense run on identical data."""
    cfg = bench_config()
    ds = synthetic_dataset("moving_square", count, (*cfg.input_size, 1), seed)
    samp = SamplingConfig(cfg.input_size[0], 1, cfg.input_size[1], cfg.input_size[2], (1.0, 1.0), 0.0)
    run = RunConfig(epochs=epochs, warmup_epochs=0, base_lr=1e-3, batch_size=batch_size, repeat_factor=1,
                    seed=seed, betas=(0.9, 0.999), deterministic=True, sampling=samp)
    steps = epochs * count // batch_size
    sched = MaskSchedule(start, 0.0, steps, "cosine")
    masked = finetune(ds, cfg, run, 8, mask_schedule=sched)
    dense = finetune(ds, cfg, run, 8)
    expected = [batch_size * keep_count(cfg.num_tokens, r) for r in masked.ratios]
    return ScheduleResult(masked.ratios, masked.encoder_tokens, expected, masked.step_ms, dense.step_ms,
                          batch_size)


def early_speedup(res: ScheduleResult, first: int = 1, count: int = 3) -> float:
    """Dense over masked median step time on the early, most-masked steps (step 0 is warm-up)."""
    sl = slice(first, first + count)
    return statistics.median(res.dense_ms[sl]) / statistics.median(res.masked_ms[sl])
