"""Sparse vs dense forward+backward wall clock on the 512-token bench model."""

import argparse

from spacetime_mae.experiments import bench_config, speedup_run
from spacetime_mae.perf import bench_csv
from spacetime_mae.threads import thread_limit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.0, 0.5, 0.75, 0.9, 0.95])
    ap.add_argument("--repetitions", type=int, default=7)
    args = ap.parse_args()
    cfg = bench_config()
    with thread_limit():
        dense_ms, rows = speedup_run(args.ratios, args.repetitions)
    print(f"# {cfg.num_tokens} tokens, encoder {cfg.d_enc}x{cfg.depth_enc}, dense {dense_ms:.1f} ms")
    print(bench_csv(rows), end="")
    for r in rows:
        print(f"# rho {r.rho}: measured {r.speedup:.2f}x, analytic {r.analytic_speedup:.2f}x")


if __name__ == "__main__":
    main()
