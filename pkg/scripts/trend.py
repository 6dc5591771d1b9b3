"""Strategy comparison and ablations on a generated stream, one row per seed.

    python3 scripts/trend.py --seeds 5 --variants finetune,hero,no_kd,no_replay,jointtrain
"""

import argparse
import time

import numpy as np

from hetcl.metrics import average_performance, forgetting_magnitude
from hetcl.taskstream import BENCHMARK_STREAM, SyntheticConfig, generate_synthetic, partition_by_classes
from hetcl.trainer import TrainConfig, run_sequence

VARIANTS = {
    "finetune": dict(strategy="finetune"),
    "hero": dict(strategy="hero"),
    "no_kd": dict(strategy="hero", lambda_kd=0.0),
    "no_replay": dict(strategy="hero", lambda_er=0.0, replay_enabled=False),
    "naive_er": dict(strategy="naive_er"),
    "jointtrain": dict(strategy="jointtrain"),
}



def run_variant(name, seed, stream_kw=None, **train_kw):
    g = generate_synthetic(SyntheticConfig(seed=seed, **{**BENCHMARK_STREAM, **(stream_kw or {})}))
    seq = partition_by_classes(g, 2, 0.6, seed)
    res = run_sequence(seq, TrainConfig(seed=seed, **{**VARIANTS[name], **train_kw}))
    return res.matrix


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variants", default="finetune,hero,no_kd,no_replay,jointtrain")
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()
    names = args.variants.split(",")
    table = {n: [] for n in names}
    t0 = time.time()
    for seed in range(args.seeds):
        for n in names:
            m = run_variant(n, seed, epochs=args.epochs)
            table[n].append((average_performance(m), forgetting_magnitude(m)))
            print(f"seed {seed} {n:11s} AP {table[n][-1][0]:.4f} AFmag {table[n][-1][1]:+.4f}", flush=True)
    print(f"--- {time.time() - t0:.0f}s")
    for n in names:
        v = np.array(table[n])
        print(f"{n:11s} AP {v[:, 0].mean():.4f} +- {v[:, 0].std(ddof=1) if len(v) > 1 else 0:.4f}"
              f"  AFmag {v[:, 1].mean():+.4f}")


if __name__ == "__main__":
    main()
