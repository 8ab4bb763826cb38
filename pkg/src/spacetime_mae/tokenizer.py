"""Tubelet patchification, embeddings, reconstruction targets and visualization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, add, gather_rows, linear
from .video import ConfigError, VideoClip


@dataclass(frozen=True)
class PatchSpec:
    t_patch: int = 2
    p: int = 16
    in_channels: int = 3

    @property
    def patch_dim(self) -> int:
        """Length of one flattened tubelet."""
        return self.t_patch * self.p * self.p * self.in_channels

    @property
    def slice_dim(self) -> int:
        """Length of one temporal slice of a tubelet (the prediction size)."""
        return self.p * self.p * self.in_channels

    def grid(self, T: int, H: int, W: int) -> tuple[int, int, int]:
        for axis, size, step in (("T", T, self.t_patch), ("H", H, self.p), ("W", W, self.p)):
            if size % step:
                raise ConfigError(f"axis {axis}={size} is not divisible by patch size {step}")
        return T // self.t_patch, H // self.p, W // self.p


def num_tokens(grid: tuple[int, int, int]) -> int:
    return grid[0] * grid[1] * grid[2]


def grid_coords(grid: tuple[int, int, int]) -> np.ndarray:
    """(N, 3) row-major (t, h, w) enumeration of the token grid."""
    t, h, w = np.meshgrid(*(np.arange(g) for g in grid), indexing="ij")
    return np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1)


def patchify(clip: VideoClip | np.ndarray, spec: PatchSpec) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Split a clip into (N, t_patch*p*p*C) tubelet rows, layout (dt, dy, dx, c)."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    T, H, W, C = frames.shape
    if C != spec.in_channels:
        raise ConfigError(f"clip has {C} channels, patch spec expects {spec.in_channels}")
    gt, gh, gw = spec.grid(T, H, W)
    tp, p = spec.t_patch, spec.p
    x = frames.reshape(gt, tp, gh, p, gw, p, C).transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(x.reshape(gt * gh * gw, spec.patch_dim)), (gt, gh, gw)


def unpatchify(patches: np.ndarray, grid: tuple[int, int, int], spec: PatchSpec) -> np.ndarray:
    gt, gh, gw = grid
    tp, p, C = spec.t_patch, spec.p, spec.in_channels
    if patches.shape != (gt * gh * gw, spec.patch_dim):
        raise DimensionError(f"patches {patches.shape} do not fit grid {grid} with {spec}")
    x = patches.reshape(gt, gh, gw, tp, p, p, C).transpose(0, 3, 1, 4, 2, 5, 6)
    return np.ascontiguousarray(x.reshape(gt * tp, gh * p, gw * p, C))


@dataclass
class PositionalEmbedding:
    """Separable table pair: a token at (t, s) gets time_table[t] + space_table[s]."""

    time_table: Tensor  # (T', d)
    space_table: Tensor  # (H'*W', d)
    learnable: bool = True

    @classmethod
    def init(cls, grid, d: int, rng: np.random.Generator, std: float = 0.02, dtype=np.float32,
             learnable: bool = True, kind: str = "trunc_normal") -> "PositionalEmbedding":
        """``kind`` is "trunc_normal" (std ``std``) or "sincos" (fixed-frequency start, still trainable)."""
        gt, gh, gw = grid
        if kind == "sincos":
            if d % 4:
                raise ConfigError(f"sin-cos positional tables need width divisible by 4, got {d}")
            tt = sincos_1d(np.arange(gt), d).astype(dtype)
            hh, ww = np.divmod(np.arange(gh * gw), gw)
            st = np.concatenate([sincos_1d(hh, d // 2), sincos_1d(ww, d // 2)], axis=1).astype(dtype)
        elif kind == "trunc_normal":
            tt = trunc_normal(rng, (gt, d), std).astype(dtype)
            st = trunc_normal(rng, (gh * gw, d), std).astype(dtype)
        else:
            raise ConfigError(f"unknown positional init {kind!r}")
        return cls(Tensor(tt, requires_grad=learnable), Tensor(st, requires_grad=learnable), learnable)

    @property
    def dim(self) -> int:
        return self.time_table.shape[1]

    def rows(self, coords: np.ndarray, grid) -> Tensor:
        """Embedding rows for the given (t, h, w) coordinates."""
        _, _, gw = grid
        t_idx = coords[:, 0]
        s_idx = coords[:, 1] * gw + coords[:, 2]
        return add(gather_rows(self.time_table, t_idx), gather_rows(self.space_table, s_idx))

    def materialize(self, grid) -> np.ndarray:
        """Full (N, d) table; only for inspection."""
        gt, gh, gw = grid
        full = self.time_table.data[:, None, :] + self.space_table.data[None, :, :]
        return full.reshape(gt * gh * gw, -1)


def sincos_1d(positions: np.ndarray, d: int) -> np.ndarray:
    """(len(positions), d) table: sines in the first half, cosines in the second."""
    omega = 1.0 / 10000.0 ** (np.arange(d // 2, dtype=np.float64) / (d / 2))
    angles = np.asarray(positions, dtype=np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


@dataclass
class TokenSequence:
    embeddings: Tensor  # (N, d)
    grid: tuple[int, int, int]
    coords: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def embed(raw_patches, w_embed: Tensor, pos: PositionalEmbedding, grid,
          bias: Tensor | None = None) -> TokenSequence:
    raw = raw_patches if isinstance(raw_patches, Tensor) else Tensor._wrap(
        np.asarray(raw_patches, dtype=w_embed.dtype))
    n = num_tokens(grid)
    if raw.shape != (n, w_embed.shape[0]):
        raise DimensionError(f"patches {raw.shape} vs embed weight {w_embed.shape} on grid {grid}")
    if pos.dim != w_embed.shape[1]:
        raise DimensionError(f"positional dim {pos.dim} vs embed dim {w_embed.shape[1]}")
    coords = grid_coords(grid)
    tokens = add(linear(raw, w_embed, bias), pos.rows(coords, grid))
    return TokenSequence(tokens, tuple(grid), coords)


def slice_stats(raw_patches: np.ndarray, spec: PatchSpec) -> tuple[np.ndarray, np.ndarray]:
    first = raw_patches[:, : spec.slice_dim]
    return first.mean(axis=1, keepdims=True), first.std(axis=1, keepdims=True)


def build_target(raw_patches: np.ndarray, spec: PatchSpec, normalize: bool,
                 eps: float = 1e-6) -> np.ndarray:
    """First temporal slice of each tubelet, optionally standardized per patch."""
    first = np.array(raw_patches[:, : spec.slice_dim], copy=True)
    if not normalize:
        return first
    mu, sd = slice_stats(raw_patches, spec)
    return (first - mu) / (sd + eps)


def masked_clip(original: VideoClip, plan, spec: PatchSpec, fill: float = 0.5) -> VideoClip:
    raw, grid = patchify(original, spec)
    raw = raw.copy()
    raw[np.asarray(plan.masked, dtype=np.int64)] = fill
    return VideoClip(unpatchify(raw, grid, spec), original.source_id, original.frame_stride)


def stitch_visualization(original: VideoClip, plan, predictions: np.ndarray, spec: PatchSpec,
                         normalized: bool, eps: float = 1e-6) -> VideoClip:
    """Visible patches from ``original``, masked patches from decoded predictions."""
    preds = np.asarray(predictions)
    masked = np.asarray(plan.masked, dtype=np.int64)
    if preds.shape != (masked.size, spec.slice_dim):
        raise ContractError(
            f"expected {masked.size} predictions of length {spec.slice_dim}, got {preds.shape}"
        )
    raw, grid = patchify(original, spec)
    out = raw.astype(np.float64)
    if masked.size:
        pix = preds.astype(np.float64)
        if normalized:
            mu, sd = slice_stats(raw.astype(np.float64), spec)
            pix = pix * (sd[masked] + eps) + mu[masked]
        out[masked] = np.tile(pix, (1, spec.t_patch))
    frames = np.clip(unpatchify(out, grid, spec), 0.0, 1.0).astype(original.frames.dtype)
    return VideoClip(frames, original.source_id, original.frame_stride)


def deflate_patch_embed(w_embed: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """Sum the temporal sub-blocks of a tubelet projection into a 2-D patch projection."""
    k = spec.t_patch
    if k < 1 or w_embed.shape[0] != spec.patch_dim:
        raise DimensionError(f"weight {w_embed.shape} does not match {spec}")
    return w_embed.reshape(k, spec.slice_dim, w_embed.shape[1]).sum(axis=0)


def image_patch_spec(spec: PatchSpec) -> PatchSpec:
    return PatchSpec(1, spec.p, spec.in_channels)


# PPM output -----------------------------------------------------------------


def _to_rgb8(frame: np.ndarray) -> np.ndarray:
    if frame.shape[-1] == 3:
        rgb = frame
    else:
        rgb = np.repeat(frame[..., :1], 3, axis=-1)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    rgb = _to_rgb8(frame)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    # header: four whitespace-separated fields, then exactly one whitespace byte
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1).reshape(h, w, 3)


def write_frames(directory: str | Path, stem: str, clip: VideoClip) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(clip.frames):
        path = directory / f"{stem}_f{i:03d}.ppm"
        write_ppm(path, frame)
        paths.append(path)
    return paths


def write_triptych(directory: str | Path, stem: str, original: VideoClip, masked: VideoClip,
                   reconstruction: VideoClip) -> list[Path]:
    """One PPM per frame: original | masked | reconstruction, side by side."""
    panels = np.concatenate([original.frames, masked.frames, reconstruction.frames], axis=2)
    return write_frames(directory, stem, VideoClip(panels, original.source_id))
