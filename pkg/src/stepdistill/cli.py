"""Command-line entry point: train, calibrate, compare, and gradcheck.

Exit codes: 0 success, 1 validation error, 2 runtime divergence (or a failed
gradient check), 3 calibration bracket failure. Every CSV body is
byte-identical across reruns; wall-clock timestamps live only in the
*_meta.txt sidecar files.
"""

import argparse
import dataclasses
import datetime
import os
import sys

import numpy as np

from . import __version__
from .calibration import AnalyticRatioProbe, TrainerRatioProbe, calibrate_lambda
from .config import (ExperimentConfig, apply_overrides, load_compare_spec, load_config,
                     serialize_config, validate_config)
from .data import generate_dataset, load_dataset
from .divergences import LOSS_IDS, loss_gradient_check
from .exceptions import (CalibrationBracketError, DivergedError, InvalidConfigError,
                         InvalidInputError, StepDistillError)
from .metrics import ApReport
from .pyramids import FeaturePyramid
from .training import checkpoint_blocks, evaluate, save_checkpoint, train


class _Parser(argparse.ArgumentParser):
    """argparse, but command-line misuse exits with the validation code (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--config", help="configuration file (key = value lines)")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stepdistill")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="run one training experiment")
    _add_common(p_train)

    p_cal = sub.add_parser("calibrate", help="binary-search the distillation coefficient")
    _add_common(p_cal)
    p_cal.add_argument("--target", type=float, required=True,
                       help="target mean ratio lambda*l_distill/l_total, in (0, 1)")
    p_cal.add_argument("--lo", type=float, default=1.0, help="bracket lower end")
    p_cal.add_argument("--hi", type=float, default=100.0, help="bracket upper end")
    p_cal.add_argument("--iters", type=int, default=200,
                       help="trainer iterations per probe")
    p_cal.add_argument("--tolerance", type=float, default=0.02, help="ratio tolerance")
    p_cal.add_argument("--max-probes", type=int, default=40)
    p_cal.add_argument("--analytic", action="store_true",
                       help="use the constant-loss analytic probe instead of the trainer")
    p_cal.add_argument("--det-loss", type=float, default=1.0,
                       help="constant detection loss for --analytic")
    p_cal.add_argument("--distill-loss", type=float, default=0.1,
                       help="constant distillation loss for --analytic")

    p_cmp = sub.add_parser("compare", help="run a variant-by-seed comparison")
    p_cmp.add_argument("spec", help="compare-spec file")
    p_cmp.add_argument("--out", help="output directory (default: comparisons)")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p_grad.add_argument("--loss", required=True, help="mse, kl, or js")
    p_grad.add_argument("--sizes", default="8x8,4x4",
                        help="pyramid scale shapes, e.g. 8x8,4x4")
    p_grad.add_argument("--epsilon", type=float, default=None,
                        help="finite-difference step (default 1e-3 for mse, 1e-4 otherwise)")
    p_grad.add_argument("--trials", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--temperature", type=float, default=1.0)
    p_grad.add_argument("--threshold", type=float, default=None,
                        help="max allowed relative error (default 1e-6 for mse, 1e-4 otherwise)")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    config = ExperimentConfig()
    if args.config:
        config = load_config(args.config, config)
    if args.set:
        config = apply_overrides(config, args.set)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out:
        config = dataclasses.replace(config, out_dir=args.out)
    validate_config(config)
    return config


def _load_scenes(config: ExperimentConfig):
    if config.dataset_file:
        return load_dataset(config.dataset_file)
    return generate_dataset(config.seed, config.dataset_count,
                            (config.image_width, config.image_height),
                            config.num_classes,
                            (config.min_objects, config.max_objects))


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _write_meta(out_dir: str, name: str, extra: str = "") -> None:
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    _write(os.path.join(out_dir, f"{name}_meta.txt"), f"created {stamp}\n{extra}")


def cmd_train(args) -> int:
    config = _resolve_config(args)
    scenes = _load_scenes(config)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "config.cfg"), serialize_config(config))

    try:
        result = train(config, scenes)
    except DivergedError as err:
        if getattr(err, "run_log", None) is not None:
            _write(os.path.join(out_dir, "runlog.csv"), err.run_log.to_csv())
        _write_meta(out_dir, "run", f"diverged at step {err.step}\n")
        print(f"error: {err} (partial log preserved in {out_dir})", file=sys.stderr)
        return 2

    _write(os.path.join(out_dir, "runlog.csv"), result.run_log.to_csv())
    save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"),
                    checkpoint_blocks(result.student, result.head, result.encoder))
    eval_scenes = result.eval_scenes if result.eval_scenes else scenes
    report = evaluate(result.student, result.head, eval_scenes, config.score_threshold)
    _write(os.path.join(out_dir, "ap_report.csv"),
           ApReport.CSV_HEADER + "\n" + report.to_csv_row() + "\n")
    _write_meta(out_dir, "run")

    def show(v):
        return "undefined" if v is None else f"{v:.4f}"

    print(f"trained {config.total_steps} steps; outputs in {out_dir}")
    print(f"ap {show(report.ap)}  ap50 {show(report.ap50)}  ap75 {show(report.ap75)}  "
          f"aps {show(report.aps)}  apm {show(report.apm)}  apl {show(report.apl)}")
    return 0


def cmd_calibrate(args) -> int:
    if args.analytic:
        probe = AnalyticRatioProbe(args.det_loss, args.distill_loss)
        out_dir = args.out or "calibration"
    else:
        config = _resolve_config(args)
        probe = TrainerRatioProbe(config, iterations=args.iters)
        out_dir = args.out or config.out_dir

    result = calibrate_lambda(probe, args.target, args.lo, args.hi,
                              args.tolerance, args.max_probes)

    os.makedirs(out_dir, exist_ok=True)
    trace_lines = ["probe,lambda,ratio"]
    trace_lines.extend(f"{i},{repr(lam)},{repr(r)}" for i, (lam, r) in enumerate(result.trace))
    _write(os.path.join(out_dir, "probe_trace.csv"), "\n".join(trace_lines) + "\n")
    _write_meta(out_dir, "calibrate")

    print(f"lambda_star {result.lambda_star!r}")
    print(f"achieved_ratio {result.achieved_ratio!r}")
    print(f"probes_used {result.probes_used}")
    print(f"converged {'true' if result.converged else 'false'}")
    for warning in result.warnings:
        print(f"warning: {warning}")
    return 0


def cmd_compare(args) -> int:
    spec = load_compare_spec(args.spec)
    out_dir = args.out or "comparisons"
    os.makedirs(out_dir, exist_ok=True)

    datasets = {}
    rows = []  # (variant, seed, status, ApReport|None)
    for name in spec.variant_names:
        for seed in spec.seeds:
            config = spec.variant_config(name, seed)
            validate_config(config)
            if seed not in datasets:
                datasets[seed] = _load_scenes(config)
            try:
                result = train(config, datasets[seed])
                eval_scenes = result.eval_scenes if result.eval_scenes else datasets[seed]
                report = evaluate(result.student, result.head, eval_scenes,
                                  config.score_threshold)
                rows.append((name, seed, "ok", report))
            except DivergedError as err:
                rows.append((name, seed, f"diverged@{err.step}", None))

    rows.sort(key=lambda row: (row[0], row[1]))
    lines = ["variant,seed,status," + ApReport.CSV_HEADER]
    for name, seed, status, report in rows:
        body = report.to_csv_row() if report else ",".join(["undefined"] * 6)
        lines.append(f"{name},{seed},{status},{body}")

    # summary block: per-seed winner by final AP, then the majority winner
    wins = {name: 0 for name in spec.variant_names}
    summary = []
    for seed in sorted(set(spec.seeds)):
        scored = sorted(
            (name, report.ap) for name, s, status, report in rows
            if s == seed and status == "ok" and report is not None and report.ap is not None
        )
        if not scored:
            summary.append(f"# winner seed={seed} none")
            continue
        best_ap = max(ap for _, ap in scored)
        leaders = [name for name, ap in scored if ap == best_ap]
        wins[leaders[0]] += 1
        tie = " (tie)" if len(leaders) > 1 else ""
        summary.append(f"# winner seed={seed} {leaders[0]}{tie} ap={best_ap!r}")
    ranked = sorted(wins.items(), key=lambda item: (-item[1], item[0]))
    top_name, top_wins = ranked[0]
    tie = " (tie)" if len(ranked) > 1 and ranked[1][1] == top_wins else ""
    summary.append(f"# majority_winner {top_name}{tie} wins={top_wins} of={len(spec.seeds)}")

    csv_text = "\n".join(lines + summary) + "\n"
    _write(os.path.join(out_dir, "comparison.csv"), csv_text)
    _write_meta(out_dir, "compare")
    print(csv_text, end="")

    survivors = sum(1 for _, _, status, _ in rows if status == "ok")
    return 0 if survivors else 2


def cmd_gradcheck(args) -> int:
    if args.loss not in LOSS_IDS:
        raise InvalidInputError(f"unknown loss id {args.loss!r}, expected one of {LOSS_IDS}")
    shapes = []
    for part in args.sizes.split(","):
        try:
            r, c = part.strip().split("x")
            shapes.append((int(r), int(c)))
        except ValueError:
            raise InvalidInputError(f"--sizes: expected shapes like '8x8,4x4', got {args.sizes!r}")
    if args.trials < 1:
        raise InvalidInputError(f"--trials must be >= 1, got {args.trials}")
    threshold = args.threshold
    if threshold is None:
        threshold = 1e-6 if args.loss == "mse" else 1e-4
    epsilon = args.epsilon
    if epsilon is None:
        # mse is quadratic, so central differences carry no truncation error
        # and the largest allowed step minimizes cancellation noise
        epsilon = 1e-3 if args.loss == "mse" else 1e-4

    worst = 0.0
    worst_seed = args.seed
    worst_at = (0, 0, 0)
    for trial in range(args.trials):
        seed = args.seed + trial
        rng = np.random.default_rng(seed)
        k = FeaturePyramid([rng.standard_normal(s) for s in shapes])
        ke = FeaturePyramid([rng.standard_normal(s) for s in shapes])
        err, at = loss_gradient_check(args.loss, k, ke, epsilon,
                                      args.temperature, return_location=True)
        if err > worst:
            worst, worst_seed, worst_at = err, seed, at
    print(f"loss {args.loss}: max relative error {worst:.3e} over {args.trials} trials "
          f"(threshold {threshold:.1e})")
    if worst > threshold:
        p, r, c = worst_at
        print(f"FAIL: worst case seed {worst_seed}, scale {p}, element ({r}, {c})",
              file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "calibrate": cmd_calibrate,
        "compare": cmd_compare,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except CalibrationBracketError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except DivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (InvalidConfigError, InvalidInputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except StepDistillError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
