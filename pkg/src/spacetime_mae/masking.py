"""Mask plans for the four token-sampling strategies and masking-ratio schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError
from .video import ConfigError

SAMPLERS = ("agnostic", "space_only", "time_only", "block")
# guards floor(N * (1 - ratio)) against results like 1.9999999999 for exact products
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class MaskPlan:
    grid: tuple[int, int, int]
    visible: np.ndarray
    masked: np.ndarray
    ratio: float
    sampler: str
    seed: int
    boxes: tuple[tuple[int, int, int, int, int, int], ...] = field(default=(), compare=False)

    @property
    def num_tokens(self) -> int:
        return self.grid[0] * self.grid[1] * self.grid[2]

    @property
    def achieved_ratio(self) -> float:
        return len(self.masked) / self.num_tokens

    def __eq__(self, other):
        if not isinstance(other, MaskPlan):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.ratio == other.ratio
            and self.sampler == other.sampler
            and self.seed == other.seed
            and np.array_equal(self.visible, other.visible)
            and np.array_equal(self.masked, other.masked)
        )

    def __hash__(self):
        return hash((self.grid, self.ratio, self.sampler, self.seed, self.visible.tobytes()))

    def to_line(self) -> str:
        t, h, w = self.grid
        vis = ",".join(str(int(i)) for i in self.visible)
        return f"{self.sampler} {self.ratio!r} {self.seed} grid={t},{h},{w} visible={vis}"

    @classmethod
    def from_line(cls, line: str) -> "MaskPlan":
        try:
            sampler, ratio, seed, grid_s, vis_s = line.strip().split(" ")
            if not grid_s.startswith("grid=") or not vis_s.startswith("visible="):
                raise ValueError
            grid = tuple(int(v) for v in grid_s[5:].split(","))
            vis = vis_s[8:]
            visible = np.array([int(v) for v in vis.split(",")] if vis else [], dtype=np.int64)
        except ValueError as exc:
            raise ValueError(f"malformed mask plan line: {line!r}") from exc
        return plan_from_visible(grid, visible, float(ratio), sampler, int(seed))


def plan_from_visible(grid, visible, ratio: float, sampler: str, seed: int, boxes=()) -> MaskPlan:
    n = grid[0] * grid[1] * grid[2]
    keep = np.zeros(n, dtype=bool)
    keep[np.asarray(visible, dtype=np.int64)] = True
    return MaskPlan(
        tuple(int(g) for g in grid),
        np.flatnonzero(keep),
        np.flatnonzero(~keep),
        float(ratio),
        sampler,
        int(seed),
        tuple(boxes),
    )


def _check(grid, ratio: float) -> None:
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"masking ratio must lie in [0, 1), got {ratio}")
    if len(grid) != 3 or min(grid) < 1:
        raise ConfigError(f"grid must be three positive extents, got {grid}")


def keep_count(total: int, ratio: float) -> int:
    return int(math.floor(total * (1.0 - ratio) + _FLOOR_SLACK))


def sample_agnostic(grid, ratio: float, seed: int) -> MaskPlan:
    _check(grid, ratio)
    n = grid[0] * grid[1] * grid[2]
    rng = np.random.default_rng(seed)
    visible = rng.permutation(n)[: keep_count(n, ratio)]
    return plan_from_visible(grid, visible, ratio, "agnostic", seed)


def sample_space_only(grid, ratio: float, seed: int) -> MaskPlan:
    _check(grid, ratio)
    gt, gh, gw = grid
    s = gh * gw
    rng = np.random.default_rng(seed)
    cells = rng.permutation(s)[: keep_count(s, ratio)]
    visible = (np.arange(gt)[:, None] * s + cells[None, :]).ravel()
    return plan_from_visible(grid, visible, ratio, "space_only", seed)


def sample_time_only(grid, ratio: float, seed: int) -> MaskPlan:
    _check(grid, ratio)
    gt, gh, gw = grid
    s = gh * gw
    rng = np.random.default_rng(seed)
    steps = rng.permutation(gt)[: keep_count(gt, ratio)]
    visible = (steps[:, None] * s + np.arange(s)[None, :]).ravel()
    return plan_from_visible(grid, visible, ratio, "time_only", seed)


@dataclass(frozen=True)
class BlockParams:
    min_tokens: int = 4
    aspect_range: tuple[float, float] = (0.5, 2.0)
    max_attempts: int = 100_000


def _draw_box(grid, rng: np.random.Generator, bp: BlockParams, remaining: int):
    """One (t0, h0, w0, dt, dh, dw) box with uniform temporal extent and log-uniform area."""
    gt, gh, gw = grid
    dt = int(rng.integers(1, gt + 1))
    min_area = max(1, math.ceil(bp.min_tokens / dt))
    # spatial area is capped near what is still needed, bounding the overshoot
    max_area = max(min_area, min(math.ceil(remaining / dt), gh * gw))
    area = math.exp(rng.uniform(math.log(min_area), math.log(max_area) + 1e-12))
    aspect = math.exp(rng.uniform(math.log(bp.aspect_range[0]), math.log(bp.aspect_range[1])))
    dh = int(min(gh, max(1, round(math.sqrt(area * aspect)))))
    dw = int(min(gw, max(1, round(math.sqrt(area / aspect)))))
    t0 = int(rng.integers(0, gt - dt + 1))
    h0 = int(rng.integers(0, gh - dh + 1))
    w0 = int(rng.integers(0, gw - dw + 1))
    return t0, h0, w0, dt, dh, dw


def paint_boxes(grid, boxes) -> np.ndarray:
    """Boolean mask volume of the union of boxes."""
    vol = np.zeros(grid, dtype=bool)
    for t0, h0, w0, dt, dh, dw in boxes:
        vol[t0 : t0 + dt, h0 : h0 + dh, w0 : w0 + dw] = True
    return vol


def sample_block(grid, ratio: float, seed: int, params: BlockParams | None = None) -> MaskPlan:
    """Mask random spacetime boxes until at least ceil(N * ratio) tokens are covered."""
    _check(grid, ratio)
    bp = params or BlockParams()
    gt, gh, gw = grid
    n = gt * gh * gw
    target = math.ceil(n * ratio - _FLOOR_SLACK)
    rng = np.random.default_rng(seed)
    vol = np.zeros(grid, dtype=bool)
    boxes = []
    count = 0
    for _ in range(bp.max_attempts):
        if count >= target:
            break
        box = _draw_box(grid, rng, bp, target - count)
        t0, h0, w0, dt, dh, dw = box
        region = vol[t0 : t0 + dt, h0 : h0 + dh, w0 : w0 + dw]
        if region.all():
            continue
        region[...] = True
        boxes.append(box)
        count = int(vol.sum())
    else:
        raise RuntimeError(f"block sampler did not reach {target} masked tokens")
    visible = np.flatnonzero(~vol.ravel())
    return plan_from_visible(grid, visible, ratio, "block", seed, boxes)


_DISPATCH = {
    "agnostic": sample_agnostic,
    "space_only": sample_space_only,
    "time_only": sample_time_only,
    "block": sample_block,
}


def sample_mask(sampler: str, grid, ratio: float, seed: int) -> MaskPlan:
    try:
        fn = _DISPATCH[sampler]
    except KeyError:
        raise ConfigError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}") from None
    return fn(tuple(grid), ratio, seed)


def render_text(plan: MaskPlan) -> str:
    """Per-time-slice text grid: '#' masked, '.' visible, blank line between slices."""
    gt, gh, gw = plan.grid
    keep = np.zeros(plan.num_tokens, dtype=bool)
    keep[plan.visible] = True
    keep = keep.reshape(gt, gh, gw)
    blocks = []
    for t in range(gt):
        rows = ["".join("." if v else "#" for v in row) for row in keep[t]]
        blocks.append(f"t={t}\n" + "\n".join(rows))
    return "\n\n".join(blocks) + "\n"


@dataclass(frozen=True)
class MaskSchedule:
    start_ratio: float = 0.0
    end_ratio: float = 0.0
    total_steps: int = 1
    shape: str = "constant"

    def __post_init__(self):
        if self.shape not in ("constant", "cosine"):
            raise ConfigError(f"schedule shape must be constant or cosine, got {self.shape!r}")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be positive")


def ratio_at(schedule: MaskSchedule, step: int) -> float:
    if not (0 <= step <= schedule.total_steps):
        raise ContractError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.shape == "constant":
        return schedule.start_ratio
    s, e = schedule.start_ratio, schedule.end_ratio
    return e + (s - e) * (1.0 + math.cos(math.pi * step / schedule.total_steps)) / 2.0
