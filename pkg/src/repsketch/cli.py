"""Command-line front end: distill -> build -> query/evaluate, plus checks.

Exit codes: 0 success, 1 verification or metric failure, 2 input error,
3 file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import distill, metrics, sketch, verify
from .errors import ConfigError, InputError, RepSketchError
from .kde import KernelConfig
from .lsh import Family, LshFamilyConfig

log = logging.getLogger("repsketch")


class _Out:
    """Emit records as aligned text or one JSON object per line."""

    def __init__(self, fmt: str, stream=None):
        self.fmt = fmt
        self.stream = stream or sys.stdout

    def record(self, kind: str, **fields):
        if self.fmt == "json-lines":
            print(json.dumps({"record": kind, **fields}, sort_keys=True), file=self.stream)
        else:
            body = " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())
            print(f"{kind}: {body}", file=self.stream)

    def table(self, rows, columns=None):
        if self.fmt == "json-lines":
            for r in rows:
                print(json.dumps(r, sort_keys=True), file=self.stream)
        else:
            print(metrics.format_table(rows, columns), file=self.stream)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _range_r(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"range R must be >= 2, got {text}")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--format", choices=("text", "json-lines"), default="text")
    p.add_argument("--config", type=Path, help="key=value file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")


def _estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("mom", "mean"), default="mom")
    p.add_argument("--groups", "-g", type=_positive_int, default=None,
                   help="median-of-means groups (default 8*ceil(ln 20) lowered to a divisor of L)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repsketch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="fit a kernel model to teacher scores")
    _common(p)
    p.add_argument("--data", type=Path, help="libsvm file (plain or gzip)")
    p.add_argument("--teacher", type=Path, help="one score per data row")
    p.add_argument("--model-out", type=Path)
    p.add_argument("--task", choices=("classification", "regression"), default=None)
    p.add_argument("--family", choices=("l2", "sparse"), default="l2")
    p.add_argument("--M", dest="M", type=_positive_int, default=100, help="number of learned points")
    p.add_argument("--p", dest="p", type=_positive_int, default=None, help="projected dimension")
    p.add_argument("--K", dest="K", type=_positive_int, default=1, help="hash concatenation depth")
    p.add_argument("--r", dest="r", type=_positive_float, default=None,
                   help="bandwidth; omitted = grid search over multiples of the median distance")
    p.add_argument("--lr", type=_positive_float, default=0.01)
    p.add_argument("--lr-decay", type=_positive_float, default=0.97, help="per-epoch learning-rate factor")
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--val-fraction", type=float, default=0.1)

    p = sub.add_parser("build", help="sketch a kernel model")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--sketch-out", type=Path)
    p.add_argument("--L", dest="L", type=_positive_int, default=2000, help="rows")
    p.add_argument("--R", dest="R", type=_range_r, default=100, help="columns (range of each row hash)")

    p = sub.add_parser("query", help="estimate f_K for points with a sketch")
    _common(p)
    p.add_argument("--sketch", type=Path)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", type=Path)
    src.add_argument("--point", type=str, help="comma-separated coordinates")
    _estimator_flags(p)

    p = sub.add_parser("evaluate", help="score a sketch on a labelled dataset")
    _common(p)
    p.add_argument("--sketch", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--task", choices=("classification", "regression"), default=None)
    p.add_argument("--mode", choices=distill.DECISION_MODES, default="probability",
                   help="classification threshold: 0.5 for probabilities, 0 for logits/+-1")
    p.add_argument("--nn-spec", type=str, default=None, help="hidden sizes of a reference MLP, e.g. 512/256/128")
    p.add_argument("--flops-per-mac", type=_positive_int, default=2)
    p.add_argument("--min-metric", type=float, default=None,
                   help="fail (exit 1) if accuracy is below / MAE is above this value")
    _estimator_flags(p)

    p = sub.add_parser("verify", help="Monte-Carlo checks of the estimator guarantees")
    _common(p)
    p.add_argument("--quick", action="store_true", help="fewer trials, looser tolerances")
    p.add_argument("--sketch", type=Path, default=None, help="also validate this sketch file")
    p.add_argument("--model", type=Path, default=None, help="also validate this model file")
    p.add_argument("--suite", action="append", choices=("calibration", "unbiasedness", "mom-coverage"),
                   help="run only the named suite(s)")

    p = sub.add_parser("dataset-info", help="summarise a libsvm file")
    _common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--task", choices=("classification", "regression"), default=None)
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


_REQUIRED = {
    "distill": ("data", "teacher", "model_out"),
    "build": ("model", "sketch_out"),
    "query": ("sketch",),
    "evaluate": ("sketch", "data"),
    "dataset-info": ("data",),
}


def parse_args(argv) -> argparse.Namespace:
    """Parse flags, filling unset ones from ``--config`` when given."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in known or key in ("config", "help"):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"config key {key}: {raw!r} not in {sorted(action.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [k for k in _REQUIRED.get(args.command, ()) if getattr(args, k) is None]
    if missing:
        raise InputError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return args


# ---------------------------------------------------------------------------
# subcommands


def cmd_distill(args, out: _Out) -> int:
    ds = data_mod.load_libsvm(args.data, task=args.task)
    scores = data_mod.load_scores(args.teacher, expected=len(ds))
    if not 0 <= args.val_fraction < 1:
        raise InputError("--val-fraction must lie in [0, 1)")
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(ds))
    n_val = int(round(args.val_fraction * len(ds)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Q, y = ds.features[tr_idx], scores[tr_idx]
    validation = (ds.features[val_idx], scores[val_idx]) if n_val else None
    cfg = distill.DistillConfig(
        num_points_M=args.M, projected_dim=args.p, learning_rate=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed, optimizer=args.optimizer, momentum=args.momentum,
        lr_decay=args.lr_decay,
    )
    hashed_dim = args.p or ds.feature_dim
    r = args.r
    if r is None:
        if validation is None:
            raise InputError("bandwidth grid search needs --val-fraction > 0 (or pass --r)")
        template = KernelConfig(LshFamilyConfig(Family.parse(args.family), hashed_dim, 1.0, args.seed), args.K)
        r, scores_by_r = distill.select_bandwidth((Q, y), cfg, template, validation)
        for cand, v in scores_by_r.items():
            out.record("bandwidth", r=cand, val_mse=v)
    kernel = KernelConfig(LshFamilyConfig(Family.parse(args.family), hashed_dim, r, args.seed), args.K)
    res = distill.train((Q, y), cfg, kernel, validation=validation)
    distill.save_model(res.model, args.model_out)
    fields = {"train_mse": res.train_loss[-1], "r": r, "M": args.M}
    if validation is not None:
        fields["val_mse"] = res.val_loss[-1]
    out.record("distill", **fields)
    return 0


def cmd_build(args, out: _Out) -> int:
    model = distill.load_model(args.model)
    sk = distill.to_sketch(model, args.L, args.R, args.seed, threads=args.threads)
    sketch.save(sk, args.sketch_out)
    out.record("build", rows_L=args.L, range_R=args.R, params_count=sk.params_count,
               memory_bytes=sk.params_count * metrics.BYTES_PER_PARAM)
    return 0


def _sketch_flops(sk: sketch.RepresenterSketch) -> int:
    spec = sk.spec
    if sk.projection is None:
        return metrics.sketch_flops(0, spec.input_dim, spec.concat_K, spec.rows_L)
    d, p = sk.projection.shape
    return metrics.sketch_flops(d, p, spec.concat_K, spec.rows_L)


def _estimates(args, sk, Q) -> np.ndarray:
    return sketch.query_batch(sk, Q, args.estimator, args.groups)


def cmd_query(args, out: _Out) -> int:
    sk = sketch.load(args.sketch)
    if args.point is None and args.data is None:
        raise InputError("query needs --data or --point")
    if args.point is not None:
        try:
            Q = np.array([[float(t) for t in args.point.split(",")]])
        except ValueError:
            raise InputError(f"bad --point {args.point!r}") from None
    else:
        Q = data_mod.load_libsvm(args.data, n_features=sk.data_dim).features
    if Q.shape[1] != sk.data_dim:
        raise InputError(f"queries have {Q.shape[1]} coordinates, sketch expects {sk.data_dim}")
    est = _estimates(args, sk, Q)
    if args.format == "json-lines":
        for i, v in enumerate(est):
            out.record("estimate", row=i, value=float(v))
    else:
        for v in est:
            print(repr(float(v)), file=out.stream)
    return 0


def cmd_evaluate(args, out: _Out) -> int:
    sk = sketch.load(args.sketch)
    ds = data_mod.load_libsvm(args.data, n_features=sk.data_dim, task=args.task)
    if ds.feature_dim != sk.data_dim:
        raise InputError(f"dataset has {ds.feature_dim} features, sketch expects {sk.data_dim}")
    est = _estimates(args, sk, ds.features)
    preds = distill.decide(est, ds.task, args.mode)
    flops = _sketch_flops(sk)
    report = metrics.evaluate(preds, ds.labels, ds.task, sk.params_count, flops)
    out.record("evaluate", metric=report.metric_name, value=report.metric_value,
               params_count=report.params_count, memory_bytes=report.memory_bytes,
               memory_mb=report.memory_mb, flops=report.flops, estimator=args.estimator)
    if args.nn_spec:
        nn = metrics.MlpSpec.parse(args.nn_spec, sk.data_dim)
        nn_params = metrics.mlp_params(nn)
        nn_flops = metrics.mlp_flops(nn, args.flops_per_mac)
        rows = [
            {"model": "NN", "params": nn_params, "memory_mb": nn_params * 8 / 1e6, "flops": nn_flops},
            {"model": "RS", "params": report.params_count, "memory_mb": report.memory_mb, "flops": flops},
        ]
        out.table(rows, ["model", "params", "memory_mb", "flops"])
        out.record("reduction",
                   memory=f"{metrics.reduction_ratio(nn_params, report.params_count):.1f}x",
                   flops=f"{metrics.reduction_ratio(nn_flops, flops):.1f}x")
    if args.min_metric is not None:
        ok = (report.metric_value >= args.min_metric) if report.metric_name == "Accuracy" \
            else (report.metric_value <= args.min_metric)
        if not ok:
            print(f"error: {report.metric_name} {report.metric_value:.4f} misses threshold {args.min_metric}",
                  file=sys.stderr)
            return 1
    return 0


def cmd_verify(args, out: _Out) -> int:
    if args.sketch is not None:
        sk = sketch.load(args.sketch)
        out.record("sketch-file", path=str(args.sketch), rows_L=sk.spec.rows_L, range_R=sk.spec.range_R, ok=True)
    if args.model is not None:
        m = distill.load_model(args.model)
        out.record("model-file", path=str(args.model), M=m.num_points, ok=True)
    cfg = verify.VerifyConfig.quick(args.seed) if args.quick else verify.VerifyConfig(seed=args.seed)
    suites = args.suite or ["calibration", "unbiasedness", "mom-coverage"]
    results = []
    if "calibration" in suites:
        results.append(verify.calibration_suite(cfg))
    if "unbiasedness" in suites:
        results.extend(verify.unbiasedness_suite(cfg))
    if "mom-coverage" in suites:
        results.append(verify.mom_coverage_suite(cfg))
    failed = []
    for r in results:
        out.record("suite", name=r.name, status="PASS" if r.passed else "FAIL", detail=r.detail)
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"error: verification failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_dataset_info(args, out: _Out) -> int:
    ds = data_mod.load_libsvm(args.data, task=args.task)
    out.record("dataset", path=str(args.data), **data_mod.describe(ds))
    return 0


COMMANDS = {
    "distill": cmd_distill,
    "build": cmd_build,
    "query": cmd_query,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
    "dataset-info": cmd_dataset_info,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return 2 if exc.code not in (0, None) else 0
    except RepSketchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args, _Out(args.format))
    except RepSketchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
