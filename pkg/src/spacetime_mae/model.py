"""Asymmetric spacetime masked autoencoder: sparse ViT encoder, full-set decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as tc
from .masking import MaskPlan
from .tensor import ContractError, DimensionError, Tensor
from .tokenizer import (
    PatchSpec,
    PositionalEmbedding,
    build_target,
    embed,
    grid_coords,
    patchify,
    trunc_normal,
)
from .video import ConfigError, VideoClip


@dataclass
class MaeConfig:
    patch: PatchSpec = field(default_factory=PatchSpec)
    input_size: tuple[int, int, int] = (16, 224, 224)  # T, H, W
    d_enc: int = 1024
    depth_enc: int = 24
    heads_enc: int = 16
    d_dec: int = 512
    depth_dec: int = 4
    heads_dec: int = 16
    mlp_ratio: int = 4
    mask_ratio: float = 0.9
    sampler: str = "agnostic"
    target_normalize: bool = True
    norm_eps: float = 1e-6
    target_eps: float = 1e-6
    dtype: str = "float32"
    init: str = "xavier"  # linear-layer init: "xavier" uniform or "trunc_normal" (std 0.02)
    pos_init: str = "trunc_normal"  # or "sincos"; tables stay learnable either way

    def __post_init__(self):
        if isinstance(self.patch, dict):
            self.patch = PatchSpec(**self.patch)
        self.input_size = tuple(int(v) for v in self.input_size)
        for d, h, which in ((self.d_enc, self.heads_enc, "encoder"), (self.d_dec, self.heads_dec, "decoder")):
            if h < 1 or d % h:
                raise ConfigError(f"{which} heads ({h}) must divide {which} width ({d})")
        if self.d_dec > self.d_enc:
            raise ConfigError(f"decoder width {self.d_dec} exceeds encoder width {self.d_enc}")
        if self.init not in ("xavier", "trunc_normal"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.pos_init not in ("trunc_normal", "sincos"):
            raise ConfigError(f"unknown pos_init {self.pos_init!r}")
        if min(self.depth_enc, self.mlp_ratio) < 1 or self.depth_dec < 0:
            raise ConfigError("depths and mlp_ratio must be positive")
        self.patch.grid(*self.input_size)

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.patch.grid(*self.input_size)

    @property
    def num_tokens(self) -> int:
        gt, gh, gw = self.grid
        return gt * gh * gw

    def to_dict(self) -> dict:
        out = asdict(self)
        out["input_size"] = list(self.input_size)
        return out


def _block_params(d: int, mlp_ratio: int) -> int:
    hidden = mlp_ratio * d
    return 2 * 2 * d + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d)


def param_count(cfg: MaeConfig) -> int:
    """Closed-form parameter count of MaeModel(cfg), classifier head excluded."""
    gt, gh, gw = cfg.grid
    pos = gt + gh * gw
    de, dd = cfg.d_enc, cfg.d_dec
    k = cfg.patch.patch_dim
    out = cfg.patch.slice_dim
    enc = k * de + de + pos * de + cfg.depth_enc * _block_params(de, cfg.mlp_ratio) + 2 * de
    dec = de * dd + dd + dd + pos * dd + cfg.depth_dec * _block_params(dd, cfg.mlp_ratio) + 2 * dd
    return enc + dec + dd * out + out


class MaeModel:
    """Parameter container; the forward ops are module-level functions."""

    def __init__(self, cfg: MaeConfig, seed: int = 0):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        de, dd = cfg.d_enc, cfg.d_dec
        self._linear("patch_embed", cfg.patch.patch_dim, de, rng)
        self.enc_pos = PositionalEmbedding.init(cfg.grid, de, rng, dtype=self.dtype, kind=cfg.pos_init)
        self.params["enc_pos.time"] = self.enc_pos.time_table
        self.params["enc_pos.space"] = self.enc_pos.space_table
        for i in range(cfg.depth_enc):
            self._block(f"enc.{i}", de, cfg.mlp_ratio, rng)
        self._norm("enc_norm", de)
        self._linear("dec_embed", de, dd, rng)
        self._param("mask_token", trunc_normal(rng, (dd,), 0.02))
        self.dec_pos = PositionalEmbedding.init(cfg.grid, dd, rng, dtype=self.dtype, kind=cfg.pos_init)
        self.params["dec_pos.time"] = self.dec_pos.time_table
        self.params["dec_pos.space"] = self.dec_pos.space_table
        for i in range(cfg.depth_dec):
            self._block(f"dec.{i}", dd, cfg.mlp_ratio, rng)
        self._norm("dec_norm", dd)
        self._linear("pred_head", dd, cfg.patch.slice_dim, rng)

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _linear(self, name: str, fan_in: int, fan_out: int, rng) -> None:
        if self.cfg.init == "xavier":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        else:
            w = trunc_normal(rng, (fan_in, fan_out), 0.02)
        self._param(f"{name}.weight", w)
        self._param(f"{name}.bias", np.zeros(fan_out))

    def _norm(self, name: str, d: int) -> None:
        self._param(f"{name}.weight", np.ones(d))
        self._param(f"{name}.bias", np.zeros(d))

    def _block(self, name: str, d: int, mlp_ratio: int, rng) -> None:
        self._norm(f"{name}.norm1", d)
        for proj in ("q", "k", "v", "proj"):
            self._linear(f"{name}.attn.{proj}", d, d, rng)
        self._norm(f"{name}.norm2", d)
        self._linear(f"{name}.mlp.fc1", d, mlp_ratio * d, rng)
        self._linear(f"{name}.mlp.fc2", mlp_ratio * d, d, rng)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self.params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"checkpoint lacks {name}")
                continue
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: checkpoint {arr.shape} vs model {t.shape}")
            t.data = arr.astype(self.dtype).copy()
        if strict:
            extra = set(state) - set(self.params)
            if extra:
                raise KeyError(f"unexpected checkpoint entries {sorted(extra)[:3]}")


# transformer pieces ---------------------------------------------------------


def _lin(model: MaeModel, name: str, x: Tensor) -> Tensor:
    return tc.linear(x, model[f"{name}.weight"], model[f"{name}.bias"])


def _ln(model: MaeModel, name: str, x: Tensor) -> Tensor:
    return tc.layer_norm(x, model[f"{name}.weight"], model[f"{name}.bias"], model.cfg.norm_eps)


def attention(model: MaeModel, name: str, x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return tc.transpose(tc.reshape(t, (n, heads, dh)), (1, 0, 2))

    q = split(_lin(model, f"{name}.q", x))
    k = split(_lin(model, f"{name}.k", x))
    v = split(_lin(model, f"{name}.v", x))
    scores = tc.scale(tc.matmul(q, tc.transpose(k, (0, 2, 1))), dh**-0.5)
    out = tc.matmul(tc.softmax_rows(scores), v)
    out = tc.reshape(tc.transpose(out, (1, 0, 2)), (n, d))
    return _lin(model, f"{name}.proj", out)


def block(model: MaeModel, name: str, x: Tensor, heads: int) -> Tensor:
    """Pre-norm ViT block."""
    x = tc.add(x, attention(model, f"{name}.attn", _ln(model, f"{name}.norm1", x), heads))
    h = tc.gelu(_lin(model, f"{name}.mlp.fc1", _ln(model, f"{name}.norm2", x)))
    return tc.add(x, _lin(model, f"{name}.mlp.fc2", h))


# pretraining ops -------------------------------------------------------------


def _check_plan(model: MaeModel, plan: MaskPlan) -> None:
    if tuple(plan.grid) != model.cfg.grid:
        raise ContractError(f"mask plan grid {plan.grid} does not match model grid {model.cfg.grid}")


def _raw_patches(model: MaeModel, clip) -> np.ndarray | Tensor:
    if isinstance(clip, Tensor):
        return clip
    if isinstance(clip, VideoClip):
        T, H, W, _ = clip.shape
        if (T, H, W) != model.cfg.input_size:
            raise ContractError(f"clip {clip.shape} does not match model input {model.cfg.input_size}")
        raw, _ = patchify(clip, model.cfg.patch)
        return raw.astype(model.dtype)
    raw = np.asarray(clip, dtype=model.dtype)
    if raw.shape != (model.cfg.num_tokens, model.cfg.patch.patch_dim):
        raise ContractError(f"raw patches {raw.shape} do not match the model geometry")
    return raw


def embed_tokens(model: MaeModel, clip) -> Tensor:
    raw = _raw_patches(model, clip)
    seq = embed(raw, model["patch_embed.weight"], model.enc_pos, model.cfg.grid, model["patch_embed.bias"])
    return seq.embeddings


def encode(clip, plan: MaskPlan, model: MaeModel, dense: bool = False) -> Tensor:
    """Encode visible tokens only; returns (|visible|, d_enc).

    ``dense=True`` is the cost baseline: every position enters attention, with
    masked positions carrying only their positional embedding, and the output
    covers all N tokens.
    """
    _check_plan(model, plan)
    cfg = model.cfg
    tokens = embed_tokens(model, clip)
    if plan.visible.size == 0:
        raise ContractError("mask plan leaves no visible tokens for the encoder")
    x = tc.gather_rows(tokens, plan.visible)
    if dense:
        n = cfg.num_tokens
        x = tc.scatter_rows(x, plan.visible, n)
        if plan.masked.size:
            pos_only = model.enc_pos.rows(grid_coords(cfg.grid)[plan.masked], cfg.grid)
            x = tc.add(x, tc.scatter_rows(pos_only, plan.masked, n))
    for i in range(cfg.depth_enc):
        x = block(model, f"enc.{i}", x, cfg.heads_enc)
    return _ln(model, "enc_norm", x)


def decoder_input(encoded: Tensor, plan: MaskPlan, model: MaeModel, dense: bool = False) -> Tensor:
    """Full-set decoder sequence before the first block: tokens, mask tokens and positions."""
    cfg = model.cfg
    n = cfg.num_tokens
    y = _lin(model, "dec_embed", encoded)
    if dense:
        full = y
    else:
        full = tc.scatter_rows(y, plan.visible, n)
        if plan.masked.size:
            mask_rows = tc.gather_rows(
                tc.reshape(model["mask_token"], (1, cfg.d_dec)), np.zeros(plan.masked.size, dtype=np.int64)
            )
            full = tc.add(full, tc.scatter_rows(mask_rows, plan.masked, n))
    return tc.add(full, model.dec_pos.rows(grid_coords(cfg.grid), cfg.grid))


def decode(encoded: Tensor, plan: MaskPlan, model: MaeModel, dense: bool = False) -> Tensor:
    """Predict the target slice for every masked token; returns (|masked|, p*p*C)."""
    _check_plan(model, plan)
    cfg = model.cfg
    expected = cfg.num_tokens if dense else plan.visible.size
    if encoded.shape != (expected, cfg.d_enc):
        raise ContractError(f"encoded rows {encoded.shape} do not match {expected} expected tokens")
    if plan.masked.size == 0:
        raise ContractError("no masked tokens; ratio too low")
    x = decoder_input(encoded, plan, model, dense)
    for i in range(cfg.depth_dec):
        x = block(model, f"dec.{i}", x, cfg.heads_dec)
    x = _lin(model, "pred_head", _ln(model, "dec_norm", x))
    return tc.gather_rows(x, plan.masked)


def targets_for(clip, plan: MaskPlan, model: MaeModel) -> np.ndarray:
    raw = _raw_patches(model, clip)
    raw = raw.data if isinstance(raw, Tensor) else raw
    tgt = build_target(raw, model.cfg.patch, model.cfg.target_normalize, model.cfg.target_eps)
    return tgt.astype(model.dtype)


def loss(predictions: Tensor, targets: np.ndarray, plan: MaskPlan) -> Tensor:
    """Mean squared error over every element of every masked token.

    ``targets`` holds all N rows; only the masked rows are read.
    """
    if plan.masked.size == 0:
        raise ContractError("no masked tokens; ratio too low")
    tgt = np.asarray(targets)[plan.masked]
    if predictions.shape != tgt.shape:
        raise DimensionError(f"predictions {predictions.shape} vs masked targets {tgt.shape}")
    diff = tc.sub(predictions, tc.as_tensor(tgt.astype(predictions.dtype)))
    return tc.mean(tc.square(diff))


def forward_pretrain(clip, plan: MaskPlan, model: MaeModel, dense: bool = False) -> tuple[Tensor, Tensor]:
    if plan.masked.size == 0:
        raise ContractError("no masked tokens; ratio too low")
    encoded = encode(clip, plan, model, dense)
    preds = decode(encoded, plan, model, dense)
    return loss(preds, targets_for(clip, plan, model), plan), preds


# classification ------------------------------------------------------------------


def init_head(d_enc: int, num_classes: int, seed: int = 0, dtype="float32") -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        "head.weight": Tensor(trunc_normal(rng, (d_enc, num_classes), 0.02).astype(dtype), requires_grad=True),
        "head.bias": Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True),
    }


def pooled_features(clip, model: MaeModel, plan: MaskPlan | None = None) -> Tensor:
    cfg = model.cfg
    if plan is None:
        from .masking import sample_agnostic

        plan = sample_agnostic(cfg.grid, 0.0, 0)
    return tc.reshape(tc.mean_over_axis(encode(clip, plan, model), 0), (1, cfg.d_enc))


def classify(clip, model: MaeModel, head: dict[str, Tensor], plan: MaskPlan | None = None) -> Tensor:
    """Logits (1, num_classes) from the mean of the encoded tokens.

    Passing a plan with nonzero ratio runs masked fine-tuning on its visible set.
    """
    w = head["head.weight"]
    if w.shape[0] != model.cfg.d_enc:
        raise DimensionError(f"head expects {w.shape[0]} features, encoder gives {model.cfg.d_enc}")
    return tc.linear(pooled_features(clip, model, plan), w, head["head.bias"])
