import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spacetime_mae.masking import (
    SAMPLERS,
    BlockParams,
    MaskPlan,
    MaskSchedule,
    keep_count,
    paint_boxes,
    ratio_at,
    render_text,
    sample_agnostic,
    sample_block,
    sample_mask,
    sample_space_only,
    sample_time_only,
)
from spacetime_mae.tensor import ContractError
from spacetime_mae.video import ConfigError

REF_GRID = (8, 14, 14)


def test_reference_counts():
    assert len(sample_agnostic(REF_GRID, 0.9, 0).visible) == 156
    assert len(sample_agnostic(REF_GRID, 0.9, 0).masked) == 1412
    assert len(sample_agnostic(REF_GRID, 0.95, 0).visible) == 78
    assert len(sample_space_only(REF_GRID, 0.9, 0).visible) == 152
    assert len(sample_time_only(REF_GRID, 0.75, 0).visible) == 392
    assert len(sample_time_only(REF_GRID, 0.875, 0).visible) == 196


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_ratio_zero_all_visible(sampler):
    plan = sample_mask(sampler, REF_GRID, 0.0, 1)
    assert len(plan.visible) == 1568 and len(plan.masked) == 0
    if sampler == "block":
        assert plan.boxes == ()


@pytest.mark.parametrize("ratio", [-0.1, 1.0, 1.5])
def test_ratio_out_of_range(ratio):
    for sampler in SAMPLERS:
        with pytest.raises(ConfigError):
            sample_mask(sampler, (2, 2, 2), ratio, 0)


def test_unknown_sampler():
    with pytest.raises(ConfigError):
        sample_mask("checkerboard", (2, 2, 2), 0.5, 0)


def test_floor_slack():
    # 0.1 * 1568 would floor to 156 only with the guard against 156.7999...
    assert keep_count(10, 0.7) == 3
    assert keep_count(1568, 0.9) == 156


@given(
    sampler=st.sampled_from(SAMPLERS),
    grid=st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
    ratio=st.floats(0.0, 0.95),
    seed=st.integers(0, 2**32 - 1),
)
def test_partition_and_determinism(sampler, grid, ratio, seed):
    plan = sample_mask(sampler, grid, ratio, seed)
    n = grid[0] * grid[1] * grid[2]
    v, m = plan.visible.tolist(), plan.masked.tolist()
    assert v == sorted(v) and m == sorted(m)
    assert sorted(v + m) == list(range(n))
    assert sample_mask(sampler, grid, ratio, seed) == plan
    assert MaskPlan.from_line(plan.to_line()) == plan


def test_agnostic_count_over_many_seeds():
    for seed in range(1000):
        ratio = (seed % 19) / 20
        assert len(sample_agnostic((4, 4, 2), ratio, seed).visible) == math.floor(32 * (1 - ratio) + 1e-9)


def test_agnostic_uniformity():
    freq = np.zeros(32)
    for seed in range(10_000):
        freq[sample_agnostic((2, 4, 4), 0.5, seed).visible] += 1
    assert np.abs(freq / 10_000 - 0.5).max() <= 0.02


def _keep(plan):
    k = np.zeros(plan.num_tokens, bool)
    k[plan.visible] = True
    return k.reshape(plan.grid)


@given(seed=st.integers(0, 10_000), ratio=st.floats(0.0, 0.9))
def test_space_only_is_a_tube(seed, ratio):
    k = _keep(sample_space_only((4, 3, 5), ratio, seed))
    assert all(np.array_equal(k[t], k[0]) for t in range(4))
    # permuting time leaves the plan unchanged
    assert np.array_equal(k[::-1], k)


@given(seed=st.integers(0, 10_000), ratio=st.floats(0.0, 0.9))
def test_time_only_keeps_whole_frames(seed, ratio):
    k = _keep(sample_time_only((6, 3, 4), ratio, seed))
    per_frame = k.reshape(6, -1)
    assert np.all(per_frame.all(axis=1) | ~per_frame.any(axis=1))
    assert per_frame.all(axis=1).sum() == keep_count(6, ratio)


@given(seed=st.integers(0, 10_000), ratio=st.floats(0.05, 0.95))
def test_block_is_union_of_logged_boxes(seed, ratio):
    grid = (4, 6, 6)
    n = 144
    plan = sample_block(grid, ratio, seed)
    vol = paint_boxes(grid, plan.boxes)
    assert np.array_equal(~vol.ravel(), _keep(plan).ravel())
    last = plan.boxes[-1]
    assert ratio - 1e-9 <= plan.achieved_ratio <= ratio + last[3] * last[4] * last[5] / n
    for _, _, _, dt, dh, dw in plan.boxes:
        assert dt >= 1 and dh >= 1 and dw >= 1


def test_block_box_constraints():
    plan = sample_block(REF_GRID, 0.9, 4, BlockParams())
    assert plan.achieved_ratio >= 0.9
    assert len(plan.boxes) >= 1


def test_line_format():
    plan = sample_agnostic((1, 2, 2), 0.5, 7)
    line = plan.to_line()
    assert line.startswith("agnostic 0.5 7 grid=1,2,2 visible=")
    with pytest.raises(ValueError):
        MaskPlan.from_line("agnostic 0.5 grid=1,2,2")


def test_render_text_marks():
    text = render_text(sample_time_only((2, 1, 3), 0.5, 0))
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("t=")]
    assert sorted(lines) == ["###", "..."]


# schedules ------------------------------------------------------------------------------


def test_cosine_schedule_points():
    s = MaskSchedule(0.5, 0.0, 100, "cosine")
    assert ratio_at(s, 0) == 0.5
    assert ratio_at(s, 100) == pytest.approx(0.0, abs=1e-15)
    assert ratio_at(s, 50) == pytest.approx(0.25, abs=1e-15)


def test_constant_schedule():
    assert ratio_at(MaskSchedule(0.3, 0.9, 10, "constant"), 7) == 0.3


@given(total=st.integers(1, 500), start=st.floats(0, 0.95), end=st.floats(0, 0.95))
def test_cosine_is_monotone(total, start, end):
    s = MaskSchedule(start, end, total, "cosine")
    vals = np.array([ratio_at(s, i) for i in range(total + 1)])
    d = np.diff(vals) * np.sign(end - start or 1)
    assert np.all(d >= -1e-12)


def test_schedule_errors():
    with pytest.raises(ContractError):
        ratio_at(MaskSchedule(0.5, 0.0, 10, "cosine"), 11)
    with pytest.raises(ContractError):
        ratio_at(MaskSchedule(0.5, 0.0, 10, "cosine"), -1)
    with pytest.raises(ConfigError):
        MaskSchedule(0.5, 0.0, 10, "linear")
