"""Video clips, temporal sampling, spatial augmentation and synthetic motion data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C), values in [0, 1]
    source_id: str = ""
    frame_stride: int = 1

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or min(f.shape) < 1:
            raise ConfigError(f"clip must be T x H x W x C with extents >= 1, got {f.shape}")
        if f.dtype.kind != "f":
            f = f.astype(np.float32)
        if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
            raise ConfigError("clip values must be finite and inside [0, 1]")
        if self.frame_stride < 1:
            raise ConfigError("frame_stride must be positive")
        self.frames = f

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape


def clip_indices(num_video_frames: int, num_frames: int, stride: int, start: int) -> np.ndarray:
    """Frame indices ``start + k*stride``, clamped to the last frame."""
    idx = start + stride * np.arange(num_frames)
    return np.minimum(idx, num_video_frames - 1)


def sample_clip(
    video: VideoClip,
    num_frames: int,
    stride: int,
    rng: np.random.Generator | None = None,
    start: int | None = None,
) -> VideoClip:
    if num_frames < 1 or stride < 1:
        raise ConfigError(f"num_frames and stride must be >= 1, got {num_frames}, {stride}")
    total = video.shape[0]
    span = (num_frames - 1) * stride + 1
    if start is None:
        rng = rng if rng is not None else np.random.default_rng()
        start = int(rng.integers(0, max(total - span, 0) + 1))
    idx = clip_indices(total, num_frames, stride, start)
    return VideoClip(video.frames[idx], video.source_id, video.frame_stride * stride)


@dataclass(frozen=True)
class CropParams:
    top: int
    left: int
    height: int
    width: int
    flip: bool


def draw_crop(
    height: int,
    width: int,
    scale_range: tuple[float, float],
    hflip_prob: float,
    rng: np.random.Generator,
    ratio_range: tuple[float, float] = (3 / 4, 4 / 3),
    attempts: int = 10,
) -> CropParams:
    lo, hi = scale_range
    if not (0.0 < lo <= hi <= 1.0):
        raise ConfigError(f"scale range must satisfy 0 < lo <= hi <= 1, got {scale_range}")
    area = height * width
    log_r = (math.log(ratio_range[0]), math.log(ratio_range[1]))
    h = w = None
    for _ in range(attempts):
        target = area * rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(*log_r))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= width and 0 < ch <= height:
            h, w = ch, cw
            break
    if h is None:
        # fallback: largest centered crop at the requested scale
        s = math.sqrt(hi)
        h = min(height, max(1, int(round(height * s))))
        w = min(width, max(1, int(round(width * s))))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    flip = bool(rng.uniform() < hflip_prob)
    return CropParams(top, left, h, w, flip)


def _resize_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers; identical sizes map every output to one input exactly
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (T, H, W, C) block."""
    _, h, w, _ = frames.shape
    if (h, w) == (out_h, out_w):
        return frames.copy()
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy = fy.astype(frames.dtype)[None, :, None, None]
    fx = fx.astype(frames.dtype)[None, None, :, None]
    rows = frames[:, y0] * (1 - fy) + frames[:, y1] * fy
    out = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
    return np.clip(out, 0.0, 1.0)


def apply_crop(clip: VideoClip, params: CropParams, out_h: int, out_w: int) -> VideoClip:
    p = params
    region = clip.frames[:, p.top : p.top + p.height, p.left : p.left + p.width]
    out = resize_bilinear(region, out_h, out_w)
    if p.flip:
        out = out[:, :, ::-1]
    return VideoClip(np.ascontiguousarray(out), clip.source_id, clip.frame_stride)


def augment(
    clip: VideoClip,
    out_h: int,
    out_w: int,
    scale_range: tuple[float, float] = (0.5, 1.0),
    hflip_prob: float = 0.5,
    rng: np.random.Generator | None = None,
) -> VideoClip:
    """Random resized crop plus horizontal flip, shared by every frame of the clip."""
    rng = rng if rng is not None else np.random.default_rng()
    _, h, w, _ = clip.shape
    params = draw_crop(h, w, scale_range, hflip_prob, rng)
    return apply_crop(clip, params, out_h, out_w)


# synthetic data --------------------------------------------------------------

# compass order: E, NE, N, NW, W, SW, S, SE as (dy, dx) with y pointing down
DIRECTIONS: tuple[tuple[int, int], ...] = (
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
)
SYNTHETIC_KINDS = ("moving_square", "moving_gradient", "two_object")


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic generators; defaults give one pixel per frame."""

    speed: int = 1
    square_range: tuple[float, float] = (0.25, 0.4)  # side as fraction of min(H, W)
    background: tuple[float, float] = (0.0, 0.2)
    ramp: tuple[float, float] = (0.1, 0.2)  # amplitude of the static background ramp
    foreground: tuple[float, float] = (0.7, 1.0)
    extra: dict = field(default_factory=dict)


def _background(H, W, C, rng, spec: SyntheticSpec) -> np.ndarray:
    """Static linear ramp with random orientation, shared by all frames."""
    base = rng.uniform(*spec.background, size=C)
    amp = rng.uniform(*spec.ramp)
    theta = rng.uniform(0, 2 * np.pi)
    ys, xs = np.mgrid[0:H, 0:W]
    proj = np.cos(theta) * xs / max(W - 1, 1) + np.sin(theta) * ys / max(H - 1, 1)
    u = (proj - proj.min()) / max(np.ptp(proj), 1e-12)
    return (base[None, None, :] + amp * u[..., None]).astype(np.float32)


def _square_frames(T, H, W, C, pos, vel, side, fg, frames):
    ys = np.arange(H)[:, None]
    xs = np.arange(W)[None, :]
    for t in range(T):
        y0 = pos[0] + vel[0] * t
        x0 = pos[1] + vel[1] * t
        # toroidal wrap keeps the object in view for any clip length
        inside = (((ys - y0) % H) < side) & (((xs - x0) % W) < side)
        frames[t][inside] = fg
    return frames


def generate_synthetic(
    kind: str,
    T: int,
    H: int,
    W: int,
    C: int,
    rng: np.random.Generator,
    spec: SyntheticSpec | None = None,
    label: int | None = None,
) -> tuple[VideoClip, int]:
    """A clip whose motion direction (index into DIRECTIONS) is the label."""
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if T < 1 or min(H, W) < 8 or C < 1:
        raise ConfigError(f"synthetic clips need T >= 1 and H, W >= 8, got {(T, H, W, C)}")
    spec = spec or SyntheticSpec()
    if label is None:
        label = int(rng.integers(len(DIRECTIONS)))
    vel = (DIRECTIONS[label][0] * spec.speed, DIRECTIONS[label][1] * spec.speed)
    frames = np.empty((T, H, W, C), dtype=np.float32)
    frames[:] = _background(H, W, C, rng, spec)

    if kind == "moving_square":
        side = max(2, int(round(min(H, W) * rng.uniform(*spec.square_range))))
        pos = (int(rng.integers(H)), int(rng.integers(W)))
        fg = rng.uniform(*spec.foreground, size=C)
        _square_frames(T, H, W, C, pos, vel, side, fg, frames)
    elif kind == "moving_gradient":
        period = rng.uniform(0.5, 1.0) * min(H, W)
        phase = rng.uniform(0, 2 * np.pi)
        theta = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:H, 0:W]
        u = np.cos(theta) * xs + np.sin(theta) * ys
        v = -np.sin(theta) * xs + np.cos(theta) * ys
        for t in range(T):
            # pattern content translates by vel per frame
            shift_u = np.cos(theta) * vel[1] * t + np.sin(theta) * vel[0] * t
            shift_v = -np.sin(theta) * vel[1] * t + np.cos(theta) * vel[0] * t
            wave = 0.5 + 0.25 * np.cos(2 * np.pi * (u - shift_u) / period + phase)
            wave += 0.2 * np.cos(2 * np.pi * (v - shift_v) / (1.7 * period))
            frames[t] = np.clip(wave, 0.0, 1.0)[..., None]
    else:
        side = max(2, int(round(min(H, W) * spec.square_range[1])))
        side2 = max(2, side // 2)
        other = DIRECTIONS[int(rng.integers(len(DIRECTIONS)))]
        vel2 = (other[0] * spec.speed, other[1] * spec.speed)
        fg = rng.uniform(*spec.foreground, size=C)
        fg2 = rng.uniform(0.4, 0.6, size=C)
        _square_frames(T, H, W, C, (int(rng.integers(H)), int(rng.integers(W))), vel2, side2, fg2, frames)
        _square_frames(T, H, W, C, (int(rng.integers(H)), int(rng.integers(W))), vel, side, fg, frames)

    return VideoClip(frames, source_id=f"{kind}", frame_stride=1), label
