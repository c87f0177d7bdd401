"""Parameter, memory and FLOP accounting for the Adult configuration.

Prints the reference MLP (123 -> 512/256/128 -> 1) next to sketch
configurations, with reduction ratios under both FLOP conventions.
"""

import argparse

from repsketch.metrics import MlpSpec, format_table, mlp_flops, mlp_params, sketch_flops, sketch_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=123)
    ap.add_argument("--hidden", default="512/256/128")
    args = ap.parse_args()

    nn = MlpSpec.parse(args.hidden, args.d)
    nn_params = mlp_params(nn)
    rows = [{"model": f"MLP {args.hidden}", "params": nn_params, "memory_mb": nn_params * 8 / 1e6,
             "flops_1/mac": mlp_flops(nn, 1), "flops_2/mac": mlp_flops(nn, 2), "param_x": 1.0, "flop_x": 1.0}]
    # (L, R, p, K, hash rows aggregated)
    configs = [(8, 133, 8, 1, 500), (1, 1016, 8, 1, 500), (20, 100, 0, 1, 500), (16, 125, 0, 1, 500)]
    for L, R, p, K, agg in configs:
        d = args.d if p else 0
        n = sketch_params(L, R, d, p)
        f = sketch_flops(args.d if p else 0, p or args.d, K, agg)
        rows.append({"model": f"sketch L={L} R={R} p={p or '-'}", "params": n, "memory_mb": n * 8 / 1e6,
                     "flops_1/mac": f, "flops_2/mac": f, "param_x": round(nn_params / n, 2),
                     "flop_x": round(mlp_flops(nn, 1) / f, 1)})
    print(format_table(rows))


if __name__ == "__main__":
    main()
