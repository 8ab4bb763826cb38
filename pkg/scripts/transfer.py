"""Pretrained vs scratch fine-tuning accuracy on the 8-way direction task.

The default recipe is configs/tiny_transfer_pretrain.toml. Passing
``--recipe tiny_pretrain.toml`` runs the convergence recipe instead, for
comparison (it does not beat scratch; see the notes in the README).
"""

import argparse

from spacetime_mae.experiments import transfer_pair
from spacetime_mae.threads import thread_limit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--recipe", default="tiny_transfer_pretrain.toml", help="pretraining config under configs/")
    args = ap.parse_args()
    print("seed,scratch_acc,pretrained_acc,pretrain_mse,predict_zero")
    wins = 0
    with thread_limit():
        for s in args.seeds:
            r = transfer_pair(s, recipe=args.recipe)
            wins += r.pretrained >= r.scratch
            print(f"{s},{r.scratch:.4f},{r.pretrained:.4f},{r.pretrain_mse[0]:.4f},{r.pretrain_mse[1]:.4f}", flush=True)
    print(f"# pretrained >= scratch on {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
