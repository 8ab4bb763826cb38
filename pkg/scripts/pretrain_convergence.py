"""Tiny pretraining run: masked MSE before and after 30 effective epochs.

    python scripts/pretrain_convergence.py --seeds 0 1 2
"""

import argparse

from spacetime_mae.experiments import convergence_run
from spacetime_mae.threads import thread_limit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--count", type=int, default=64, help="number of pretraining clips")
    args = ap.parse_args()
    print("seed,initial_mse,final_mse,predict_zero,ratio")
    with thread_limit():
        for s in args.seeds:
            r = convergence_run(seed=s, data_seed=s, count=args.count)
            print(f"{s},{r.initial_mse:.4f},{r.final_mse:.4f},{r.zero_baseline:.4f},{r.final_mse / r.initial_mse:.3f}")


if __name__ == "__main__":
    main()
