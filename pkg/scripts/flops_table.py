"""Analytic MACs per stage for ViT-L at a sweep of masking ratios."""

import argparse
from pathlib import Path

from spacetime_mae.config import load_config
from spacetime_mae.perf import mae_flops

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "vit_l_kinetics.toml"))
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.0, 0.5, 0.75, 0.9, 0.95])
    ap.add_argument("--visible-only-embed", action="store_true",
                    help="charge the patch projection for visible tokens only")
    args = ap.parse_args()
    cfg = load_config(args.config).model
    print(mae_flops(cfg, 0.9, not args.visible_only_embed).table())
    print()
    print("rho,visible,dense_gmacs,sparse_gmacs,gain")
    for rho in args.ratios:
        r = mae_flops(cfg, rho, not args.visible_only_embed)
        print(f"{rho},{r.num_visible},{r.dense_total / 1e9:.2f},{r.sparse_total / 1e9:.2f},{r.speedup:.3f}")


if __name__ == "__main__":
    main()
