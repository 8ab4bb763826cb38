"""Multiply-accumulate cost model and a wall-clock harness for sparse vs dense encoding.

Costs count one multiply-add as one FLOP and include linear maps only:
norms, softmax, activations and the mask-token broadcast are free.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import model as mm
from . import tensor as tc
from .masking import keep_count, sample_agnostic

STAGES = ("patch_embed", "encoder_blocks", "enc_to_dec", "decoder_blocks", "pred_head")


def vit_flops(n_tokens: int, d: int, depth: int, mlp_ratio: int = 4) -> int:
    """MACs of ``depth`` transformer blocks over ``n_tokens`` tokens of width ``d``."""
    n = n_tokens
    per_block = 4 * n * d * d + 2 * n * n * d + 2 * mlp_ratio * n * d * d
    return depth * per_block


@dataclass
class FlopsReport:
    dense: dict[str, int]
    sparse: dict[str, int]
    num_tokens: int
    num_visible: int

    @property
    def dense_total(self) -> int:
        return sum(self.dense.values())

    @property
    def sparse_total(self) -> int:
        return sum(self.sparse.values())

    @property
    def speedup(self) -> float:
        return self.dense_total / self.sparse_total

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("stage", "dense_macs", "sparse_macs"))
        for s in STAGES:
            w.writerow((s, self.dense[s], self.sparse[s]))
        w.writerow(("total", self.dense_total, self.sparse_total))
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'stage':<16}{'dense (G)':>12}{'sparse (G)':>12}"]
        for s in STAGES:
            lines.append(f"{s:<16}{self.dense[s] / 1e9:>12.2f}{self.sparse[s] / 1e9:>12.2f}")
        lines.append(f"{'total':<16}{self.dense_total / 1e9:>12.1f}{self.sparse_total / 1e9:>12.1f}")
        lines.append(f"tokens {self.num_tokens}, visible {self.num_visible}, gain {self.speedup:.2f}x")
        return "\n".join(lines)


def mae_flops(cfg: mm.MaeConfig, ratio: float | None = None, embed_all_tokens: bool = True) -> FlopsReport:
    """Per-stage MACs for the dense (all tokens encoded) and sparse (visible only) variants.

    ``embed_all_tokens`` charges the patch projection for every token in the
    sparse variant too, as ``encode`` embeds before gathering the visible set.
    """
    ratio = cfg.mask_ratio if ratio is None else ratio
    n = cfg.num_tokens
    v = keep_count(n, ratio)
    k, out = cfg.patch.patch_dim, cfg.patch.slice_dim
    de, dd = cfg.d_enc, cfg.d_dec

    def stages(enc_tokens: int, embed_tokens: int) -> dict[str, int]:
        return {
            "patch_embed": embed_tokens * k * de,
            "encoder_blocks": vit_flops(enc_tokens, de, cfg.depth_enc, cfg.mlp_ratio),
            "enc_to_dec": enc_tokens * de * dd,
            "decoder_blocks": vit_flops(n, dd, cfg.depth_dec, cfg.mlp_ratio),
            "pred_head": n * dd * out,
        }

    return FlopsReport(stages(n, n), stages(v, n if embed_all_tokens else v), n, v)


# wall clock ---------------------------------------------------------------------


def _step(model: mm.MaeModel, clip, plan, dense: bool) -> None:
    model.zero_grad()
    loss, _ = mm.forward_pretrain(clip, plan, model, dense=dense)
    tc.backward(loss)


def time_step(model: mm.MaeModel, clip, plan, dense: bool, repetitions: int, warmup: int = 1) -> float:
    """Median forward+backward wall time in milliseconds."""
    for _ in range(warmup):
        _step(model, clip, plan, dense)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        _step(model, clip, plan, dense)
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


@dataclass
class BenchRow:
    rho: float
    measured_ms: float
    analytic_macs: int
    speedup: float
    analytic_speedup: float
    load_ms: float | None = None


def benchmark_step(cfg: mm.MaeConfig, ratios, repetitions: int = 5, seed: int = 0,
                   dataset=None, sampling=None) -> tuple[float, list[BenchRow]]:
    """Time dense and sparse training steps on identical parameters.

    Returns the dense median (ms) and one row per ratio. With a dataset, each
    row also reports the median time to load and augment one sample.
    """
    from .video import VideoClip

    model = mm.MaeModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    T, H, W = cfg.input_size
    clip = VideoClip(rng.uniform(size=(T, H, W, cfg.patch.in_channels)).astype(cfg.dtype))
    ref_plan = sample_agnostic(cfg.grid, max(ratios), seed)
    dense_ms = time_step(model, clip, ref_plan, dense=True, repetitions=repetitions)
    dense_macs = mae_flops(cfg, 0.0).dense_total
    load_ms = None
    if dataset is not None:
        from .dataset import make_sample

        loads = []
        for i in range(repetitions):
            t0 = time.perf_counter()
            make_sample(dataset[i % len(dataset)], sampling, seed + i)
            loads.append((time.perf_counter() - t0) * 1e3)
        load_ms = statistics.median(loads)
    rows = []
    for rho in ratios:
        report = mae_flops(cfg, rho)
        if keep_count(cfg.num_tokens, rho) == cfg.num_tokens:
            ms = dense_ms
        else:
            ms = time_step(model, clip, sample_agnostic(cfg.grid, rho, seed), dense=False,
                           repetitions=repetitions)
        rows.append(BenchRow(rho, ms, report.sparse_total, dense_ms / ms, dense_macs / report.sparse_total,
                             load_ms))
    return dense_ms, rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rho", "measured_ms", "analytic_macs", "speedup"))
    for r in rows:
        w.writerow((r.rho, f"{r.measured_ms:.3f}", r.analytic_macs, f"{r.speedup:.3f}"))
    return buf.getvalue()
