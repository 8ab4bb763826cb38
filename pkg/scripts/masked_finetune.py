"""Cosine-annealed masking during fine-tuning: per-step ratio, tokens and time vs dense."""

import argparse

from spacetime_mae.experiments import early_speedup, schedule_run
from spacetime_mae.threads import thread_limit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start", type=float, default=0.5)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--count", type=int, default=8)
    args = ap.parse_args()
    with thread_limit():
        r = schedule_run(count=args.count, epochs=args.epochs, start=args.start)
    print("step,ratio,encoder_tokens,expected_tokens,masked_ms,dense_ms")
    for i, (rho, tok, exp, ms, dms) in enumerate(zip(r.ratios, r.encoder_tokens, r.expected_tokens,
                                                     r.masked_ms, r.dense_ms)):
        print(f"{i},{rho:.4f},{tok},{exp},{ms:.1f},{dms:.1f}")
    print(f"# early-step speedup {early_speedup(r):.2f}x; total {sum(r.dense_ms) / sum(r.masked_ms):.2f}x")


if __name__ == "__main__":
    main()
