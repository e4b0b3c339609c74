"""Command-line experiment runner.

Subcommands: ``generate`` (build and save a dataset), ``train`` (one
training run), ``evaluate`` (score a checkpoint), ``sweep``
(labeling-ratio sweep with matched baselines), ``ablate`` (toggle
ablation grid), ``plot-data`` (long-format files for plotting).  Every
subcommand reads the same YAML config; ``--set dotted.path=value``
overrides individual keys and ``--validate`` stops after config
validation.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .data import split_dataset
from .errors import ConfigError, PointSSLError
from .experiments import (
    ExperimentConfig,
    ExperimentRunner,
    ablation_plan,
    config_hash,
    emit_plots_data,
    load_experiment_config,
    sweep_plan,
    toggle_tag,
)
from .metrics import MetricsReport, evaluate_model
from .selftrain import EpochStats, run_training
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset

logger = logging.getLogger("pointssl")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointssl",
        description="Semi-supervised point recognition experiments on synthetic grids.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="YAML experiment config")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key by dotted path (repeatable)",
        )
        p.add_argument(
            "--validate",
            action="store_true",
            help="parse and validate the config, then exit",
        )

    p = sub.add_parser("generate", help="generate a dataset and save its split")
    common(p)
    p.add_argument("--out", help="output path (default: <output_dir>/dataset.bin)")
    p.add_argument("--ratio", type=float, help="labeling ratio (default: first sweep entry)")
    p.add_argument("--split-seed", type=int, help="split seed (default: train seed)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run one training configuration")
    common(p)
    p.add_argument("--data", help="dataset file; omitted, data is generated in memory")
    p.add_argument("--ratio", type=float, help="labeling ratio when generating")
    p.add_argument("--split-seed", type=int, help="split seed when generating")
    p.add_argument("--out", help="checkpoint path (default: <output_dir>/model.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a stored dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--out", help="also write the report as JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="labeling-ratio sweep with matched baselines")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="toggle ablation grid at the ablation ratio")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot-data", help="emit plot-ready files from a results directory")
    common(p)
    p.add_argument("--results", help="results directory (default: <output_dir>/sweep)")
    p.set_defaults(func=cmd_plot_data)

    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig | None:
    """Load the config; with --validate, report and signal completion."""
    config = load_experiment_config(args.config, args.overrides)
    if args.validate:
        print(f"config OK (hash {config_hash(config)})")
        return None
    return config


def _progress(stats: EpochStats) -> None:
    parts = [f"epoch {stats.epoch:4d} [{stats.phase}]"]
    parts.append("cls " + "/".join(f"{v:.4f}" for v in stats.labeled_cls))
    if stats.pseudo_class_counts:
        totals = [sum(row) for row in stats.pseudo_class_counts]
        parts.append("pseudo " + "/".join(str(t) for t in totals))
    parts.append("val_f1 " + "/".join(f"{v:.2f}" for v in stats.val_macro_f1))
    logger.debug(" ".join(parts))


def _print_report(report: MetricsReport, heading: str) -> None:
    print(heading)
    print(
        f"  detection      P {report.detection.precision:6.2f}  "
        f"R {report.detection.recall:6.2f}  F1 {report.detection.f1:6.2f}"
    )
    print(
        f"  classification P {report.macro_precision:6.2f}  "
        f"R {report.macro_recall:6.2f}  F1 {report.macro_f1:6.2f}  (macro)"
    )
    for class_id, prf in enumerate(report.per_class):
        marker = "" if class_id in report.evaluated_classes else "  [not in average]"
        print(
            f"    class {class_id}: P {prf.precision:6.2f}  R {prf.recall:6.2f}  "
            f"F1 {prf.f1:6.2f}  tp={prf.tp} fp={prf.fp} fn={prf.fn}{marker}"
        )


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    from .data import generate_dataset

    ratio = args.ratio if args.ratio is not None else config.sweep[0]
    split_seed = args.split_seed if args.split_seed is not None else config.train.seed
    out = Path(args.out) if args.out else Path(config.output_dir) / "dataset.bin"
    samples = generate_dataset(config.dataset)
    split = split_dataset(
        samples,
        config.dataset,
        labeling_ratio=ratio,
        val_frac=config.val_frac,
        test_frac=config.test_frac,
        seed=split_seed,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(split, out)
    logger.info(
        "dataset: %d labeled, %d unlabeled, %d val, %d test -> %s",
        len(split.labeled),
        len(split.unlabeled),
        len(split.validation),
        len(split.test),
        out,
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    from .data import generate_dataset

    if args.data:
        split = load_dataset(args.data)
        if split.config.num_classes != config.dataset.num_classes:
            raise ConfigError(
                f"dataset file has {split.config.num_classes} classes, "
                f"config expects {config.dataset.num_classes}"
            )
    else:
        ratio = args.ratio if args.ratio is not None else config.sweep[0]
        split_seed = args.split_seed if args.split_seed is not None else config.train.seed
        samples = generate_dataset(config.dataset)
        split = split_dataset(
            samples,
            config.dataset,
            labeling_ratio=ratio,
            val_frac=config.val_frac,
            test_frac=config.test_frac,
            seed=split_seed,
        )
    logger.info(
        "training with toggles %s on %d labeled / %d unlabeled samples",
        toggle_tag(config.train.toggles),
        len(split.labeled),
        len(split.unlabeled),
    )
    result = run_training(split, config.arch, config.train, progress=_progress)
    out = Path(args.out) if args.out else Path(config.output_dir) / "model.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.arch, result.params)
    history_path = out.with_suffix(out.suffix + ".history.json")
    history_path.write_text(
        json.dumps(
            {
                "selected": result.selected,
                "config_hash": config_hash(config),
                "epochs": [asdict(stats) for stats in result.history],
            },
            indent=2,
        )
        + "\n"
    )
    test_report = evaluate_model(
        result.params,
        result.arch,
        split.test,
        min_score=config.train.eval_min_score,
        distance_threshold=config.train.eval_distance_threshold,
    )
    logger.info("selected model: %s; checkpoint %s; history %s", result.selected, out, history_path)
    _print_report(result.val_report, "validation")
    _print_report(test_report, "test")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    split = load_dataset(args.data)
    arch, params, _ = load_checkpoint(args.checkpoint)
    samples = split.validation if args.split == "val" else split.test
    report = evaluate_model(
        params,
        arch,
        samples,
        min_score=config.train.eval_min_score,
        distance_threshold=config.train.eval_distance_threshold,
    )
    _print_report(report, f"{args.split} ({len(samples)} samples)")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(asdict(report), indent=2) + "\n")
    return 0


def _run_and_summarize(config: ExperimentConfig, plan, subdir: str) -> int:
    runner = ExperimentRunner(config, subdir)
    logger.info("%d runs -> %s", len(plan), runner.out_dir)
    runner.run_plan(plan)
    cells: dict[tuple[float, str], list[float]] = {}
    for record in runner.records:
        delta = record.deltas.get("test")
        if delta is not None:
            cells.setdefault((record.labeling_ratio, toggle_tag(record.toggles)), []).append(
                delta[1]
            )
    for (ratio, tag), deltas in sorted(cells.items()):
        mean = sum(deltas) / len(deltas)
        logger.info(
            "ratio %.0f%% %-12s test cls ΔF1 %+.2f (n=%d)", 100 * ratio, tag, mean, len(deltas)
        )
    print(f"results written to {runner.out_dir}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    return _run_and_summarize(config, sweep_plan(config), "sweep")


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    return _run_and_summarize(config, ablation_plan(config), "ablation")


def cmd_plot_data(args: argparse.Namespace) -> int:
    config = _load(args)
    if config is None:
        return 0
    results_dir = Path(args.results) if args.results else Path(config.output_dir) / "sweep"
    files = emit_plots_data(results_dir)
    print(f"wrote {', '.join(files)} under {results_dir / 'plots'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PointSSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
