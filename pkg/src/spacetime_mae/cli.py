"""Command-line entry point.

Exit codes: 0 success, 2 usage or config error, 1 runtime failure. Commands
that take ``--out`` leave a ``manifest.json`` there; ``rerun`` replays one.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigFileError, ExperimentConfig, load_config
from .video import ConfigError, SYNTHETIC_KINDS
from .masking import SAMPLERS

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "spacetime-mae-manifest/1"


class UsageError(Exception):
    pass


def _int_list(text: str, n: int | None = None, name: str = "value") -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name} must be comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{name} needs {n} integers, got {len(vals)}")
    if min(vals) < 1:
        raise argparse.ArgumentTypeError(f"{name} entries must be positive, got {text!r}")
    return vals


def _shape(text: str) -> tuple[int, ...]:
    return _int_list(text, 4, "shape")


def _grid(text: str) -> tuple[int, ...]:
    return _int_list(text, 3, "grid")


def _ratio(text: str) -> float:
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must be a number, got {text!r}") from None
    if not 0.0 <= r < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must lie in [0, 1), got {r}")
    return r


def _ratios(text: str) -> list[float]:
    return [_ratio(t) for t in text.split(",")]


def _float_pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


# manifests ----------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def write_manifest(out: Path, command: str, args: argparse.Namespace, cfg: ExperimentConfig | None,
                   outputs: list[Path]) -> Path:
    """Everything needed to replay the command; no timestamps, so identical runs match."""
    from .threads import configured_threads

    skip = {"func", "command", "out", "config", "manifest", "resolved_config"}
    body = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "args": {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip},
        "config": cfg.to_dict() if cfg is not None else None,
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
        "threads": configured_threads(),
    }
    path = out / MANIFEST
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: Path) -> dict:
    try:
        body = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read manifest {path}: {e}") from None
    if body.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{path} is not a {MANIFEST_FORMAT} manifest")
    return body


def _resolve_config(args) -> ExperimentConfig:
    # a replayed manifest carries the resolved config; otherwise read the file
    if getattr(args, "resolved_config", None) is not None:
        return args.resolved_config
    if args.config is None:
        return ExperimentConfig()
    return load_config(args.config)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RuntimeError(f"cannot create output directory {out}: {e}") from None
    return out


# commands ------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .dataset import synthetic_dataset, write_dataset

    out = _out_dir(args)
    spec = {"speed": args.speed}
    if args.ramp is not None:
        spec["ramp"] = args.ramp
    ds = synthetic_dataset(args.kind, args.count, tuple(args.shape), args.seed, **spec)
    files = write_dataset(out, ds)
    from .clipfile import LABELS_FILE

    write_manifest(out, "gen-data", args, None, files + [out / LABELS_FILE])
    print(f"wrote {len(files)} clips and {LABELS_FILE} to {out}")
    return 0


def _load_data(path) -> "ClipDataset":  # noqa: F821
    from .dataset import ClipDataset

    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"--data {p} is not a directory")
    ds = ClipDataset.from_directory(p)
    if len(ds) == 0:
        raise UsageError(f"--data {p} holds no clip files")
    return ds


def cmd_pretrain(args) -> int:
    from .trainer import pretrain

    cfg = _resolve_config(args)
    ds = _load_data(args.data)
    out = _out_dir(args)
    res = pretrain(ds, cfg.model, cfg.run, out)
    outputs = [out / "metrics.csv", out / "config_echo.txt"] + res.checkpoints
    write_manifest(out, "pretrain", args, cfg, outputs)
    final_loss = res.metrics[-1][3] if res.metrics else float("nan")
    print(f"pretrained {res.steps} steps over {res.samples_seen} samples; final loss {final_loss}")
    return 0


def cmd_finetune(args) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import finetune

    cfg = _resolve_config(args)
    ds = _load_data(args.data)
    if ds.labels is None:
        raise UsageError(f"--data {args.data} has no labels.tsv")
    evaluation = _load_data(args.eval) if args.eval else None
    init = None if args.init == "scratch" else load_checkpoint(args.init)
    out = _out_dir(args)
    n_steps = max(1, cfg.run.epochs * len(ds) // cfg.run.batch_size)
    res = finetune(ds, cfg.model, cfg.run, cfg.finetune.num_classes, init=init,
                   mask_schedule=cfg.finetune.schedule(n_steps), evaluation=evaluation, out_dir=out)
    result = {"accuracy": None if np.isnan(res.accuracy) else res.accuracy,
              "init": "scratch" if init is None else "checkpoint", "steps": len(res.losses)}
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "finetune", args, cfg, [out / "metrics.csv", out / "final.ckpt", out / "result.json"])
    acc = "n/a (no --eval set)" if result["accuracy"] is None else f"{res.accuracy:.4f}"
    print(f"fine-tuned {len(res.losses)} steps; accuracy {acc}")
    return 0


def _config_near(ckpt: Path, explicit) -> ExperimentConfig:
    if explicit is not None:
        return load_config(explicit)
    manifest = ckpt.parent / MANIFEST
    if not manifest.exists():
        raise UsageError(f"no {MANIFEST} next to {ckpt}; pass --config")
    body = read_manifest(manifest)
    if body.get("config") is None:
        raise UsageError(f"{manifest} carries no model config; pass --config")
    return ExperimentConfig.from_dict(body["config"])


def cmd_reconstruct(args) -> int:
    from . import model as mm
    from . import tensor as tc
    from .checkpoint import load_checkpoint
    from .clipfile import read_clip
    from .masking import sample_mask
    from .tokenizer import masked_clip, patchify, stitch_visualization, write_triptych

    ckpt = Path(args.ckpt)
    cfg = _resolve_config(args) if getattr(args, "resolved_config", None) else _config_near(ckpt, args.config)
    model = mm.MaeModel(cfg.model, seed=0)
    model.load_state_dict(load_checkpoint(ckpt), strict=False)
    clip = read_clip(args.clip)
    if clip.shape[:3] != cfg.model.input_size or clip.shape[3] != cfg.model.patch.in_channels:
        raise RuntimeError(f"clip geometry {clip.shape} does not match checkpoint model input "
                           f"{cfg.model.input_size} x {cfg.model.patch.in_channels} channels")
    plan = sample_mask(args.sampler, cfg.model.grid, args.ratio, args.seed)
    out = _out_dir(args)
    spec = cfg.model.patch
    if plan.masked.size:
        with tc.no_grad():
            loss, preds = mm.forward_pretrain(clip, plan, model)
        preds, mse = preds.data, float(loss.data)
    else:
        preds, mse = np.zeros((0, spec.slice_dim), dtype=np.float32), None
    recon = stitch_visualization(clip, plan, preds, spec, cfg.model.target_normalize, cfg.model.target_eps)
    files = write_triptych(out, "recon", clip, masked_clip(clip, plan, spec), recon)
    (out / "mask.txt").write_text(plan.to_line() + "\n")
    write_manifest(out, "reconstruct", args, cfg, files + [out / "mask.txt"])
    if mse is None:
        print(f"wrote {len(files)} triptychs; masked_mse n/a (no masked tokens)")
    else:
        raw, _ = patchify(clip, spec)
        rec_raw, _ = patchify(recon, spec)
        pixel_mse = float(np.mean((rec_raw[plan.masked] - raw[plan.masked]) ** 2))
        print(f"wrote {len(files)} triptychs; masked_mse {mse:.6f} (target space), {pixel_mse:.6f} (pixels)")
    return 0


def cmd_flops(args) -> int:
    from .perf import mae_flops

    cfg = _resolve_config(args)
    report = mae_flops(cfg.model, args.ratio)
    print(report.table())
    print()
    print(report.to_csv(), end="")
    if args.out:
        out = _out_dir(args)
        (out / "flops.csv").write_text(report.to_csv())
        write_manifest(out, "flops", args, cfg, [out / "flops.csv"])
    return 0


def cmd_bench(args) -> int:
    from .perf import bench_csv, benchmark_step

    cfg = _resolve_config(args)
    ds = _load_data(args.data) if args.data else None
    dense_ms, rows = benchmark_step(cfg.model, args.ratios, args.repetitions, cfg.run.seed, ds, cfg.run.sampling)
    text = bench_csv(rows)
    print(f"dense step median {dense_ms:.3f} ms")
    for r in rows:
        load = "" if r.load_ms is None else f", load {r.load_ms:.3f} ms/sample"
        print(f"rho {r.rho}: {r.measured_ms:.3f} ms, measured {r.speedup:.2f}x, analytic {r.analytic_speedup:.2f}x{load}")
    print()
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "bench.csv").write_text(text)
        write_manifest(out, "bench", args, cfg, [out / "bench.csv"])
    return 0


def cmd_mask_viz(args) -> int:
    from .masking import render_text, sample_mask

    plan = sample_mask(args.sampler, tuple(args.grid), args.ratio, args.seed)
    text = render_text(plan)
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "mask.txt").write_text(text)
        write_manifest(out, "mask-viz", args, None, [out / "mask.txt"])
    return 0


def cmd_rerun(args) -> int:
    body = read_manifest(Path(args.manifest))
    command = body["command"]
    if command not in COMMANDS:
        raise UsageError(f"manifest names unknown command {command!r}")
    replay = argparse.Namespace(**body["args"])
    replay.out = args.out
    replay.config = None
    replay.resolved_config = ExperimentConfig.from_dict(body["config"]) if body.get("config") else None
    for key in ("shape", "grid"):
        if getattr(replay, key, None) is not None:
            setattr(replay, key, tuple(getattr(replay, key)))
    return COMMANDS[command](replay)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "reconstruct": cmd_reconstruct,
    "flops": cmd_flops,
    "bench": cmd_bench,
    "mask-viz": cmd_mask_viz,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spacetime-mae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="write synthetic motion clips and labels.tsv")
    g.add_argument("--out", required=True)
    g.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    g.add_argument("--count", required=True, type=int)
    g.add_argument("--shape", required=True, type=_shape, help="T,H,W,C")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--speed", type=int, default=1, help="pixels per frame")
    g.add_argument("--ramp", type=_float_pair, default=None, help="background ramp amplitude range LO,HI")

    t = sub.add_parser("pretrain", help="masked-autoencoder pretraining")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)

    f = sub.add_parser("finetune", help="supervised fine-tuning from a checkpoint or from scratch")
    f.add_argument("--data", required=True)
    f.add_argument("--init", required=True, help="checkpoint file or 'scratch'")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--eval", default=None, help="labelled directory for test accuracy")

    r = sub.add_parser("reconstruct", help="original | masked | reconstruction triptychs")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--clip", required=True)
    r.add_argument("--ratio", type=_ratio, default=0.9)
    r.add_argument("--sampler", choices=SAMPLERS, default="agnostic")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--config", default=None, help="override the manifest next to --ckpt")

    fl = sub.add_parser("flops", help="analytic dense vs sparse MAC counts")
    fl.add_argument("--config", required=True)
    fl.add_argument("--ratio", type=_ratio, default=None, help="default: the config's mask_ratio")
    fl.add_argument("--out", default=None)

    b = sub.add_parser("bench", help="wall-clock dense vs sparse training steps")
    b.add_argument("--config", required=True)
    b.add_argument("--ratios", type=_ratios, default=[0.0, 0.5, 0.75, 0.9])
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--data", default=None, help="clip directory for load+compute timing")
    b.add_argument("--out", default=None)

    m = sub.add_parser("mask-viz", help="text rendering of one mask sample")
    m.add_argument("--grid", required=True, type=_grid, help="T',H',W'")
    m.add_argument("--ratio", required=True, type=_ratio)
    m.add_argument("--sampler", choices=SAMPLERS, default="agnostic")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default=None)

    rr = sub.add_parser("rerun", help="replay a command from its manifest.json")
    rr.add_argument("manifest")
    rr.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    from .threads import thread_limit

    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    func = cmd_rerun if args.command == "rerun" else COMMANDS[args.command]
    try:
        with thread_limit():
            return func(args)
    except (UsageError, ConfigFileError) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, OSError, RuntimeError, ValueError, FloatingPointError) as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
