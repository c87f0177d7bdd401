"""Recover a planted kernel model from its own outputs, then sketch it."""

import argparse
import math

import numpy as np

from repsketch.distill import DistillConfig, KernelModel, export_points, predict_batch, to_sketch, train
from repsketch.kde import KernelConfig, exact_root_kde
from repsketch.lsh import Family, LshFamilyConfig
from repsketch.sketch import query_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--M", type=int, default=10, help="student size (the planted model has 5 points)")
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--L", type=int, default=5000)
    ap.add_argument("--R", type=int, default=2000)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    kernel = KernelConfig(LshFamilyConfig(Family.L2PStable, 2, 2.0))
    planted = KernelModel(rng.uniform(-2, 2, (5, 2)), rng.uniform(-1, 1, 5), kernel)
    X = rng.uniform(-3, 3, (6000, 2))
    y = predict_batch(planted, X)
    cfg = DistillConfig(num_points_M=args.M, learning_rate=0.1, epochs=args.epochs, batch_size=64,
                        momentum=0.9, lr_decay=1.0, seed=args.seed)
    res = train((X[:5000], y[:5000]), cfg, kernel, validation=(X[5000:], y[5000:]))
    for epoch in (0, 1, 10, 50, args.epochs):
        if epoch < len(res.train_loss):
            print(f"epoch {epoch:4d}  train {res.train_loss[epoch]:.3e}  held-out {res.val_loss[epoch]:.3e}")

    Q = X[5000:5100]
    sk = to_sketch(res.model, args.L, args.R, master_seed=args.seed)
    f = predict_batch(res.model, Q)
    z = query_batch(sk, Q, "mom")
    pts = export_points(res.model)
    bound = np.array([6 * exact_root_kde(q, pts, kernel, absolute=True) for q in Q]) * math.sqrt(math.log(20) / args.L)
    print(f"sketch L={args.L} R={args.R}: mean |Z - f| = {np.mean(np.abs(z - f)):.4f}, "
          f"mean bound = {bound.mean():.4f}, inside {int(np.sum(np.abs(z - f) <= bound))}/100")


if __name__ == "__main__":
    main()
