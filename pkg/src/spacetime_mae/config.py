"""TOML experiment files whose keys follow the names of the pretraining settings table.

A file has up to four tables::

    [model]          input_size, patch_size, channels, encoder_*/decoder_*, mask_ratio, ...
    [optimization]   base_learning_rate, optimizer_momentum, warmup_epochs, gradient_clipping, ...
    [augmentation]   num_frames, sampling_stride, crop_size, scale_range, horizontal_flip
    [finetune]       num_classes, mask_schedule

Every key is optional; omitted keys keep the dataclass defaults. Unknown keys
are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib as tomli
except ModuleNotFoundError:  # python < 3.11
    import tomli

from .dataset import SamplingConfig
from .masking import SAMPLERS, MaskSchedule
from .model import MaeConfig
from .tokenizer import PatchSpec
from .trainer import RunConfig
from .video import ConfigError


class ConfigFileError(ConfigError):
    """A config file failed to parse or validate; the message carries file, line and field."""


@dataclass
class FinetuneSettings:
    num_classes: int = 8
    schedule_start: float = 0.0
    schedule_end: float = 0.0
    schedule_shape: str = "constant"

    def schedule(self, total_steps: int) -> MaskSchedule:
        return MaskSchedule(self.schedule_start, self.schedule_end, total_steps, self.schedule_shape)


@dataclass
class ExperimentConfig:
    model: MaeConfig = field(default_factory=MaeConfig)
    run: RunConfig = field(default_factory=RunConfig)
    finetune: FinetuneSettings = field(default_factory=FinetuneSettings)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "run": self.run.to_dict(), "finetune": dict(vars(self.finetune))}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Inverse of ``to_dict`` (used when re-running from a manifest)."""
        return cls(MaeConfig(**d["model"]), RunConfig(**d["run"]), FinetuneSettings(**d.get("finetune", {})))


# config key -> dataclass attribute
_MODEL_KEYS = {
    "input_size": "input_size",
    "encoder_width": "d_enc",
    "encoder_depth": "depth_enc",
    "encoder_heads": "heads_enc",
    "decoder_width": "d_dec",
    "decoder_depth": "depth_dec",
    "decoder_heads": "heads_dec",
    "mlp_ratio": "mlp_ratio",
    "mask_ratio": "mask_ratio",
    "mask_sampler": "sampler",
    "norm_pix_loss": "target_normalize",
    "norm_eps": "norm_eps",
    "target_eps": "target_eps",
    "init": "init",
}
_OPT_KEYS = {
    "epochs": "epochs",
    "warmup_epochs": "warmup_epochs",
    "base_learning_rate": "base_lr",
    "batch_size": "batch_size",
    "repeated_sampling": "repeat_factor",
    "gradient_clipping": "grad_clip",
    "weight_decay": "weight_decay",
    "optimizer_momentum": "betas",
    "adam_eps": "adam_eps",
    "seed": "seed",
    "checkpoint_interval": "eval_interval",
    "deterministic": "deterministic",
}
_FIXED_OPT = {"optimizer": "adamw", "learning_rate_schedule": "cosine decay"}
_AUG_KEYS = {
    "num_frames": "num_frames",
    "sampling_stride": "stride",
    "scale_range": "scale_range",
    "horizontal_flip": "hflip_prob",
}
_FT_KEYS = {"num_classes", "mask_schedule"}


def _key_line(text: str, table: str, key: str) -> int | None:
    current = None
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
        elif current == table and pat.match(line):
            return i
    return None


def _fail(src: str, text: str, table: str, key: str | None, msg: str):
    line = _key_line(text, table, key) if key else None
    where = f"{src}:{line}" if line else src
    name = f"{table}.{key}" if key else table
    raise ConfigFileError(f"{where}: field {name}: {msg}")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigFileError(f"{source}: {e}") from None

    unknown_tables = set(doc) - {"model", "optimization", "augmentation", "finetune"}
    if unknown_tables:
        raise ConfigFileError(f"{source}: unknown table(s) {sorted(unknown_tables)}")

    def section(name: str, allowed) -> dict:
        tbl = doc.get(name, {})
        if not isinstance(tbl, dict):
            _fail(source, text, name, None, "must be a table")
        for k in tbl:
            if k not in allowed:
                _fail(source, text, name, k, f"unknown key; expected one of {sorted(allowed)}")
        return tbl

    model_tbl = section("model", set(_MODEL_KEYS) | {"patch_size", "channels"})
    opt_tbl = section("optimization", set(_OPT_KEYS) | set(_FIXED_OPT))
    aug_tbl = section("augmentation", set(_AUG_KEYS) | {"crop_size"})
    ft_tbl = section("finetune", _FT_KEYS)

    defaults = {"model": MaeConfig(), "optimization": RunConfig(), "augmentation": SamplingConfig()}
    extra = {"patch_size": [1], "channels": 1, "crop_size": [1], "optimizer": "", "learning_rate_schedule": ""}
    for name, tbl in (("model", model_tbl), ("optimization", opt_tbl), ("augmentation", aug_tbl)):
        for k, val in tbl.items():
            ref = extra[k] if k in extra else getattr(defaults[name], _lookup(name, k))
            if not _same_kind(val, ref):
                _fail(source, text, name, k, f"expected {_kind_name(ref)}, got {val!r}")

    def build(table: str, tbl: dict, factory, kwargs: dict):
        try:
            return factory(**kwargs)
        except (ConfigError, TypeError, ValueError) as e:
            _fail(source, text, table, _blame(tbl, table, str(e)), str(e))

    for k, want in _FIXED_OPT.items():
        if k in opt_tbl and str(opt_tbl[k]).lower() != want:
            _fail(source, text, "optimization", k, f"only {want!r} is implemented")

    m = {_MODEL_KEYS[k]: v for k, v in model_tbl.items() if k in _MODEL_KEYS}
    if m.get("sampler", "agnostic") not in SAMPLERS:
        _fail(source, text, "model", "mask_sampler", f"unknown sampler; expected one of {SAMPLERS}")
    patch = model_tbl.get("patch_size", [2, 16, 16])
    if not (isinstance(patch, list) and len(patch) == 3 and patch[1] == patch[2]):
        _fail(source, text, "model", "patch_size", "expected [t, p, p] with square spatial patches")
    m["patch"] = PatchSpec(int(patch[0]), int(patch[1]), int(model_tbl.get("channels", 3)))
    mae = build("model", model_tbl, MaeConfig, m)

    s = {_AUG_KEYS[k]: v for k, v in aug_tbl.items() if k in _AUG_KEYS}
    crop = aug_tbl.get("crop_size", list(mae.input_size[1:]))
    s["out_h"], s["out_w"] = int(crop[0]), int(crop[1])
    s.setdefault("num_frames", mae.input_size[0])
    if "scale_range" in s:
        s["scale_range"] = tuple(s["scale_range"])
    sampling = build("augmentation", aug_tbl, SamplingConfig, s)
    if (sampling.num_frames, sampling.out_h, sampling.out_w) != mae.input_size:
        _fail(source, text, "augmentation", "num_frames" if "num_frames" in aug_tbl else None,
              f"sampled clips {(sampling.num_frames, sampling.out_h, sampling.out_w)} "
              f"do not match model input_size {mae.input_size}")

    r = {_OPT_KEYS[k]: v for k, v in opt_tbl.items() if k in _OPT_KEYS}
    r["sampling"] = sampling
    run = build("optimization", opt_tbl, RunConfig, r)

    ft = FinetuneSettings(num_classes=int(ft_tbl.get("num_classes", 8)))
    sched = ft_tbl.get("mask_schedule")
    if sched is not None:
        if not isinstance(sched, dict) or set(sched) - {"start", "end", "shape"}:
            _fail(source, text, "finetune", "mask_schedule", "expected {start, end, shape}")
        ft.schedule_start = float(sched.get("start", 0.0))
        ft.schedule_end = float(sched.get("end", 0.0))
        ft.schedule_shape = str(sched.get("shape", "constant"))
        build("finetune", ft_tbl, ft.schedule, {"total_steps": 1})
    return ExperimentConfig(mae, run, ft)


def _blame(tbl: dict, table: str, msg: str) -> str | None:
    """Key of ``tbl`` a validation message most likely refers to, if any."""
    low = msg.lower()
    words = set(re.findall(r"[\w.]+", low))

    def rank(k):
        score = sum(w in words for w in k.split("_")) + (_lookup(table, k) in words)
        score += str(tbl[k]).lower() in words
        hits = [i for i in (low.find(k), low.find(k.replace("_", " ")), low.find(_lookup(table, k))) if i >= 0]
        return -score, min(hits, default=len(low))

    ranked = sorted(tbl, key=rank)
    return ranked[0] if ranked and rank(ranked[0])[0] < 0 else None


def _same_kind(val, ref) -> bool:
    if isinstance(ref, bool):
        return isinstance(val, bool)
    if isinstance(ref, int):
        return isinstance(val, int) and not isinstance(val, bool)
    if isinstance(ref, float):
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if isinstance(ref, (list, tuple)):
        return isinstance(val, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)
    return isinstance(val, type(ref))


def _kind_name(ref) -> str:
    if isinstance(ref, bool):
        return "a boolean"
    if isinstance(ref, (list, tuple)):
        return "an array of numbers"
    return {int: "an integer", float: "a number", str: "a string"}.get(type(ref), type(ref).__name__)


def _lookup(table: str, key: str) -> str:
    return {"model": _MODEL_KEYS, "optimization": _OPT_KEYS, "augmentation": _AUG_KEYS}.get(table, {}).get(key, key)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def render_config(cfg: ExperimentConfig) -> str:
    """TOML text that ``parse_config`` maps back to ``cfg``."""
    m, r, s, f = cfg.model, cfg.run, cfg.run.sampling, cfg.finetune

    def v(x) -> str:
        if isinstance(x, bool):
            return "true" if x else "false"
        if isinstance(x, str):
            return f'"{x}"'
        if isinstance(x, (list, tuple)):
            return "[" + ", ".join(v(i) for i in x) + "]"
        return repr(x)

    lines = ["[model]"]
    lines.append(f"input_size = {v(list(m.input_size))}")
    lines.append(f"patch_size = {v([m.patch.t_patch, m.patch.p, m.patch.p])}")
    lines.append(f"channels = {m.patch.in_channels}")
    lines += [f"{k} = {v(getattr(m, a))}" for k, a in _MODEL_KEYS.items() if k != "input_size"]
    lines += ["", "[optimization]", 'optimizer = "adamw"', 'learning_rate_schedule = "cosine decay"']
    lines += [f"{k} = {v(getattr(r, a))}" for k, a in _OPT_KEYS.items()]
    lines += ["", "[augmentation]"]
    lines += [f"{k} = {v(getattr(s, a))}" for k, a in _AUG_KEYS.items()]
    lines.append(f"crop_size = {v([s.out_h, s.out_w])}")
    lines += ["", "[finetune]", f"num_classes = {f.num_classes}"]
    lines.append(f"mask_schedule = {{ start = {f.schedule_start!r}, end = {f.schedule_end!r}, "
                 f"shape = {v(f.schedule_shape)} }}")
    return "\n".join(lines) + "\n"
