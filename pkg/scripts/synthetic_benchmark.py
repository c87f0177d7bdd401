"""Gaussian-mixture XOR task: Bayes teacher -> kernel model -> sketch.

Sweeps the number of sketch rows and reports test accuracy and agreement of
sketch decisions with kernel-model decisions for both estimators.
"""

import argparse
import time

import numpy as np
from scipy.stats import multivariate_normal

from repsketch.distill import (DistillConfig, decide, median_pairwise_distance, predict_batch, select_bandwidth,
                               to_sketch, train)
from repsketch.kde import KernelConfig
from repsketch.lsh import Family, LshFamilyConfig
from repsketch.metrics import format_table
from repsketch.sketch import query_batch

CENTERS = np.array([[1.5, 1.5], [-1.5, -1.5], [1.5, -1.5], [-1.5, 1.5]])


def mixture(n, rng):
    comp = rng.integers(0, 4, n)
    X = CENTERS[comp] + rng.standard_normal((n, 2))
    dens = np.stack([multivariate_normal(c, np.eye(2)).pdf(X) for c in CENTERS], axis=1)
    return X, (comp < 2).astype(float), dens[:, :2].sum(axis=1) / dens.sum(axis=1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--M", type=int, default=200)
    ap.add_argument("--R", type=int, default=100)
    ap.add_argument("--rows", default="250,500,1000,2000,4000")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    X, labels, teacher = mixture(2000, rng)
    tr, val, te = slice(0, 1400), slice(1400, 1600), slice(1600, 2000)
    cfg = DistillConfig(num_points_M=args.M, seed=args.seed)
    t0 = time.perf_counter()
    r, scores = select_bandwidth((X[tr], teacher[tr]), cfg, KernelConfig(LshFamilyConfig(Family.L2PStable, 2, 1.0)),
                                 (X[val], teacher[val]))
    med = median_pairwise_distance(X[tr], cfg.seed)
    for cand, mse in scores.items():
        print(f"r = {cand / med:.1f} x median: validation MSE {mse:.5f}")
    model = train((X[tr], teacher[tr]), cfg, KernelConfig(LshFamilyConfig(Family.L2PStable, 2, r))).model
    print(f"distillation took {time.perf_counter() - t0:.1f}s")

    teacher_acc = np.mean(decide(teacher[te], "classification") == labels[te])
    kd = decide(predict_batch(model, X[te]), "classification")
    print(f"teacher accuracy {teacher_acc:.4f}, kernel model {np.mean(kd == labels[te]):.4f}")
    rows = []
    for L in (int(v) for v in args.rows.split(",")):
        sk = to_sketch(model, L, args.R, master_seed=args.seed)
        row = {"L": L, "params": sk.params_count}
        for est in ("mean", "mom"):
            sd = decide(query_batch(sk, X[te], est), "classification")
            row[f"acc_{est}"] = float(np.mean(sd == labels[te]))
            row[f"agree_{est}"] = float(np.mean(sd == kd))
        rows.append(row)
    print(format_table(rows))


if __name__ == "__main__":
    main()
