"""Adult (a9a) end to end: MLP teacher -> distilled kernel model -> sketch.

Needs the libsvm files ``a9a`` and ``a9a.t`` locally (they are not bundled)
and scikit-learn for the teacher network.
"""

import argparse
from pathlib import Path

import numpy as np

from repsketch.data import load_libsvm
from repsketch.distill import DistillConfig, decide, predict_batch, select_bandwidth, to_sketch, train
from repsketch.kde import KernelConfig
from repsketch.lsh import Family, LshFamilyConfig
from repsketch.metrics import MlpSpec, mlp_flops, mlp_params, sketch_flops
from repsketch.sketch import query_batch

D = 123


def run(train_path, test_path, M=200, p=8, L=2000, R=500, seed=0, epochs=30):
    from sklearn.neural_network import MLPClassifier

    tr, te = load_libsvm(train_path, n_features=D), load_libsvm(test_path, n_features=D)
    teacher = MLPClassifier((512, 256, 128), max_iter=20, early_stopping=True, random_state=seed)
    teacher.fit(tr.features, tr.labels)
    y_tr = teacher.predict_proba(tr.features)[:, 1]
    teacher_acc = float(np.mean(decide(teacher.predict_proba(te.features)[:, 1], "classification") == te.labels))

    n_val = len(tr) // 10
    cfg = DistillConfig(num_points_M=M, projected_dim=p, epochs=epochs, seed=seed)
    template = KernelConfig(LshFamilyConfig(Family.SparseSign, p, 1.0))
    r, _ = select_bandwidth((tr.features[n_val:], y_tr[n_val:]), cfg, template,
                            (tr.features[:n_val], y_tr[:n_val]))
    model = train((tr.features, y_tr), cfg, KernelConfig(LshFamilyConfig(Family.SparseSign, p, r))).model
    kernel_acc = float(np.mean(decide(predict_batch(model, te.features), "classification") == te.labels))
    sk = to_sketch(model, L, R, master_seed=seed)
    sketch_acc = float(np.mean(decide(query_batch(sk, te.features, "mom"), "classification") == te.labels))
    nn = MlpSpec(D, (512, 256, 128))
    return {
        "teacher_acc": teacher_acc, "kernel_acc": kernel_acc, "sketch_acc": sketch_acc, "r": r,
        "sketch_params": sk.params_count, "nn_params": mlp_params(nn),
        "sketch_flops": sketch_flops(D, p, 1, R), "nn_flops": mlp_flops(nn, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("train", type=Path)
    ap.add_argument("test", type=Path)
    ap.add_argument("--M", type=int, default=200)
    ap.add_argument("--p", type=int, default=8)
    ap.add_argument("--L", type=int, default=2000)
    ap.add_argument("--R", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for k, v in run(args.train, args.test, args.M, args.p, args.L, args.R, args.seed).items():
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
