"""Command line: fit, predict, explain, evaluate, plot, synth-sine.

Exit codes: 0 on success, 1 for usage or data problems, 2 for numerical
failures inside the optimizer.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time

import numpy as np

from .data import Dataset, add_noise, load_csv, load_with_schema, split_half
from .errors import DataError, SolverError
from .estimator import (CLASSIFICATION, FORMAT_VERSION, REGRESSION, FitConfig,
                        HarvestModel, fit)
from .plots import (build_node_plot, render_node_plot, render_split_metrics,
                    save_node_plot_json)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ruleblend",
                     description="Rule-ensemble regression with convex node weights")
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed for all randomized steps (default 0)")
    parser.add_argument("--na-string", default="NA",
                        help="cell value treated as missing besides the empty string")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress informational output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model and write it to JSON")
    p_fit.add_argument("--data", required=True, help="training CSV with header")
    p_fit.add_argument("--target", required=True, help="response column name")
    p_fit.add_argument("--task", choices=[REGRESSION, CLASSIFICATION],
                       default=REGRESSION)
    p_fit.add_argument("--q", type=int, default=1000, help="ensemble size (default 1000)")
    p_fit.add_argument("--max-interaction", type=int, default=2)
    p_fit.add_argument("--min-node-size", type=int, default=5)
    p_fit.add_argument("--mtry", type=int, default=None)
    p_fit.add_argument("--subsample-size", type=int, default=None)
    p_fit.add_argument("--lambda", dest="lam", type=float, default=math.inf,
                       help="weight budget; omit for unregularized")
    p_fit.add_argument("--nu", type=float, default=0.001)
    p_fit.add_argument("--out", required=True, help="model JSON path")
    p_fit.add_argument("--dump-qp", default=None,
                       help="write the reduced QP and its solution to this JSON path")

    p_pred = sub.add_parser("predict", help="predict rows of a CSV")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", default=None, help="output CSV (default stdout)")
    p_pred.add_argument("--threshold", type=float, default=0.5,
                        help="classification label threshold (default 0.5)")

    p_exp = sub.add_parser("explain", help="per-node breakdown of one prediction")
    p_exp.add_argument("--model", required=True)
    p_exp.add_argument("--data", required=True)
    p_exp.add_argument("--row", type=int, default=0, help="0-based row (default 0)")

    p_eval = sub.add_parser("evaluate", help="repeated half-split evaluation")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--target", required=True)
    p_eval.add_argument("--task", choices=[REGRESSION, CLASSIFICATION],
                        default=REGRESSION)
    p_eval.add_argument("--splits", type=int, default=10)
    p_eval.add_argument("--noise-factor", type=float, default=0.0,
                        help="training-response noise variance as a multiple of Var(y)")
    p_eval.add_argument("--q", type=int, default=1000)
    p_eval.add_argument("--max-interaction", type=int, default=2)
    p_eval.add_argument("--min-node-size", type=int, default=5)
    p_eval.add_argument("--lambda", dest="lam", type=float, default=math.inf)
    p_eval.add_argument("--out", default=None, help="report JSON path")
    p_eval.add_argument("--figure", default=None,
                        help="also render the per-split metric chart to this file")

    p_plot = sub.add_parser("plot", help="selected-node diagram")
    p_plot.add_argument("--model", required=True)
    p_plot.add_argument("--data", default=None,
                        help="training CSV; enables containment edges and --row")
    p_plot.add_argument("--row", type=int, default=None,
                        help="0-based row of --data to highlight")
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--format", choices=["json", "svg"], default="json")

    p_sine = sub.add_parser("synth-sine", help="write the synthetic sine benchmark")
    p_sine.add_argument("--n", type=int, default=1000)
    p_sine.add_argument("--out", required=True)
    return parser


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


# ---- commands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    ds = load_csv(args.data, args.target, na_string=args.na_string)
    config = FitConfig(q=args.q, max_interaction=args.max_interaction,
                       min_node_size=args.min_node_size, mtry=args.mtry,
                       subsample_size=args.subsample_size, lam=args.lam,
                       nu=args.nu, seed=args.seed, task=args.task)
    capture: dict | None = {} if args.dump_qp else None
    model = fit(ds, config, qp_capture=capture)
    model.save(args.out)
    if args.dump_qp:
        _write_qp_dump(capture, args.dump_qp)
        _say(args, f"wrote QP dump to {args.dump_qp}")
    diag = model.diagnostics
    _say(args, f"fit {diag['n']} rows, {diag['p']} features: "
               f"{diag['q_reached']} nodes ({diag['nonzero_weights']} selected), "
               f"loss {diag['training_loss']:.4f}, "
               f"{diag['fit_seconds']:.2f}s -> {args.out}")
    return EXIT_OK


def _write_qp_dump(capture: dict, path: str) -> None:
    payload = {"format_version": FORMAT_VERSION}
    if capture and "problem" in capture:
        problem, solution = capture["problem"], capture["solution"]
        payload.update({
            "hessian": problem.hessian.tolist(),
            "linear": problem.linear.tolist(),
            "constraint_matrix": problem.constraint_matrix.tolist(),
            "constraint_bounds": problem.constraint_bounds.tolist(),
            "meta": problem.meta,
            "solution": {
                "d": solution.d.tolist(),
                "objective": solution.objective,
                "kkt": solution.kkt,
                "iterations": solution.iterations,
                "status": solution.status,
                "multipliers": solution.multipliers.tolist(),
            },
        })
    else:
        payload["note"] = "no reduced problem was assembled (trivial nullspace)"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def cmd_predict(args) -> int:
    model = HarvestModel.load(args.model)
    ds = load_with_schema(args.data, model.schema, na_string=args.na_string)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        if model.config.task == CLASSIFICATION:
            probs, labels = model.predict_class_table(ds, threshold=args.threshold)
            writer.writerow(["prediction", "label"])
            for prob, lab in zip(probs, labels):
                writer.writerow([repr(float(prob)), int(lab)])
        else:
            preds = model.predict_table(ds)
            writer.writerow(["prediction"])
            for pred in preds:
                writer.writerow([repr(float(pred))])
    finally:
        if args.out:
            out.close()
    if args.out:
        _say(args, f"wrote {ds.n} predictions to {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = HarvestModel.load(args.model)
    ds = load_with_schema(args.data, model.schema, na_string=args.na_string)
    if not 0 <= args.row < ds.n:
        raise DataError(f"--row {args.row} is outside [0, {ds.n})")
    obs = {}
    for k, feat in enumerate(model.schema.features):
        if ds.missing[args.row, k]:
            obs[feat.name] = None
        elif feat.kind == "numeric":
            obs[feat.name] = float(ds.values[args.row, k])
        else:
            code = int(ds.values[args.row, k])
            obs[feat.name] = feat.levels[code] if 0 <= code < len(feat.levels) else object()
    explanation = model.explain(obs)
    width = max(len(r[0]) for r in explanation.rows)
    print(f"{'rule':<{width}}  {'weight':>10}  {'mean':>12}  {'size':>6}")
    for text, weight, mean, size in explanation.rows:
        print(f"{text:<{width}}  {weight:>10.6f}  {mean:>12.5f}  {size:>6d}")
    print(f"prediction: {explanation.prediction!r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = load_csv(args.data, args.target, na_string=args.na_string)
    if args.splits < 1:
        raise DataError("--splits must be at least 1")
    t0 = time.perf_counter()
    splits = []
    metric_name = "misclassification" if args.task == CLASSIFICATION else "unexplained_variance"
    for i in range(args.splits):
        derived = np.random.SeedSequence([args.seed, i]).generate_state(3)
        split_seed, noise_seed, fit_seed = (int(v) for v in derived)
        train, test = split_half(ds, split_seed)
        if args.noise_factor > 0 and args.task == REGRESSION:
            noisy = add_noise(train.response, args.noise_factor, noise_seed)
            train = Dataset(train.schema, train.values, train.missing, noisy)
        config = FitConfig(q=args.q, max_interaction=args.max_interaction,
                           min_node_size=args.min_node_size, lam=args.lam,
                           seed=fit_seed, task=args.task)
        model = fit(train, config)
        if args.task == CLASSIFICATION:
            _, labels = model.predict_class_table(test)
            metric = float(np.mean(labels != test.response))
        else:
            preds = model.predict_table(test)
            denom = float(np.sum((test.response - test.response.mean()) ** 2))
            if denom == 0:
                raise DataError("test response is constant; unexplained variance undefined")
            metric = float(np.sum((test.response - preds) ** 2) / denom)
        splits.append({
            "split": i,
            "split_seed": split_seed,
            "noise_seed": noise_seed,
            "fit_seed": fit_seed,
            metric_name: metric,
            "nonzero_weights": model.diagnostics["nonzero_weights"],
            "fit_seconds": model.diagnostics["fit_seconds"],
        })
    metrics = [s[metric_name] for s in splits]
    report = {
        "format_version": FORMAT_VERSION,
        "task": args.task,
        "metric": metric_name,
        "splits": splits,
        "mean_metric": float(np.mean(metrics)),
        "noise_factor": args.noise_factor,
        "base_seed": args.seed,
        "config": {"q": args.q, "max_interaction": args.max_interaction,
                   "min_node_size": args.min_node_size,
                   "lam": None if math.isinf(args.lam) else args.lam},
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    if args.figure:
        render_split_metrics(metrics, metric_name, args.figure)
        _say(args, f"wrote figure to {args.figure}")
    _say(args, f"{'split':>5}  {metric_name:>22}  {'selected':>8}")
    for s in splits:
        _say(args, f"{s['split']:>5}  {s[metric_name]:>22.6f}  {s['nonzero_weights']:>8}")
    _say(args, f"mean {metric_name}: {report['mean_metric']:.6f} "
               f"({report['wall_clock_seconds']:.1f}s)")
    return EXIT_OK


def cmd_plot(args) -> int:
    model = HarvestModel.load(args.model)
    train = None
    obs = None
    if args.data is not None:
        train = load_with_schema(args.data, model.schema, na_string=args.na_string)
        if args.row is not None:
            if not 0 <= args.row < train.n:
                raise DataError(f"--row {args.row} is outside [0, {train.n})")
            obs = {}
            for k, feat in enumerate(model.schema.features):
                if train.missing[args.row, k]:
                    obs[feat.name] = None
                elif feat.kind == "numeric":
                    obs[feat.name] = float(train.values[args.row, k])
                else:
                    code = int(train.values[args.row, k])
                    obs[feat.name] = feat.levels[code] if 0 <= code < len(feat.levels) else object()
    elif args.row is not None:
        raise DataError("--row needs --data")
    plot = build_node_plot(model, train=train, obs=obs)
    if args.format == "json":
        save_node_plot_json(plot, args.out)
    else:
        render_node_plot(plot, args.out)
    _say(args, f"wrote {args.format} node diagram to {args.out}")
    return EXIT_OK


def cmd_synthetic_sine(args) -> int:
    if args.n < 1:
        raise DataError("--n must be positive")
    rng = np.random.default_rng(args.seed)
    x1 = rng.uniform(0.0, 1.0, args.n)
    x2 = rng.uniform(0.0, 1.0, args.n)
    signal = np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
    y = signal + rng.normal(0.0, 0.5, args.n)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "y", "signal"])
        for row in zip(x1, x2, y, signal):
            writer.writerow([repr(float(v)) for v in row])
    _say(args, f"wrote {args.n} rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
    "synth-sine": cmd_synthetic_sine,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
