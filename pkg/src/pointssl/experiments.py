"""Experiment orchestration: configs, run plans, and result files.

A single YAML config describes the dataset, the model, the training
hyperparameters, and the experiment grid (labeling-ratio sweep, toggle
ablations, seed repeats).  From it this module builds run plans, trains
every (ratio, toggles, seed) cell together with its matched supervised
baseline, and writes:

* ``results.csv``: fixed columns, deterministic order, byte-identical
  across reruns of the same config.
* ``results.json``: the same rows plus the config hash.
* ``metadata.json``: timestamps, host info, config echo; everything
  non-reproducible is quarantined here.
* ``history/<run_id>.json``: per-epoch training traces per run.

Baselines share the dataset seed and split seed with their SSL partner,
so per-cell F1 deltas compare models that saw identical data.  A delta
is written only when that matched baseline exists; otherwise it stays
null rather than being backfilled from a near-miss.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .data import DatasetConfig, FeatureGridSample, generate_dataset, split_dataset
from .errors import ConfigError, PointSSLError
from .metrics import MetricsReport, evaluate_model
from .model import ModelArch
from .selftrain import EpochStats, SSLToggles, TrainConfig, TrainingResult, run_training

RESULT_COLUMNS = (
    "run_id",
    "labeling_ratio",
    "tsml",
    "ct",
    "da",
    "seed",
    "split",
    "det_p",
    "det_r",
    "det_f1",
    "cls_p",
    "cls_r",
    "cls_f1",
    "delta_det_f1",
    "delta_cls_f1",
)

# External vocabulary for toggle combos in configs and run ids.
_TOGGLE_NAMES = {
    "tsml": "mutual_learning",
    "ct": "co_teaching",
    "da": "dist_align",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, resolved and validated."""

    dataset: DatasetConfig
    arch: ModelArch
    train: TrainConfig
    sweep: tuple[float, ...]
    ablation: tuple[tuple[str, ...], ...]
    ablation_ratio: float
    repeats: int
    output_dir: str
    val_frac: float = 0.2
    test_frac: float = 0.2

    def validate(self) -> None:
        self.dataset.validate()
        self.arch.validate()
        self.train.validate()
        if self.repeats < 1:
            raise ConfigError(f"experiment.repeats must be >= 1, got {self.repeats}")
        if not self.sweep:
            raise ConfigError("experiment.sweep must list at least one labeling ratio")
        for ratio in list(self.sweep) + [self.ablation_ratio]:
            if not 0.0 < ratio <= 1.0:
                raise ConfigError(f"labeling ratio {ratio} outside (0, 1]")
        for combo in self.ablation:
            toggles_from_names(combo)  # raises on unknown names or bad combos
        if self.arch.num_classes != self.dataset.num_classes:
            raise ConfigError("arch num_classes must match dataset")
        if self.arch.feature_dim != self.dataset.feature_dim:
            raise ConfigError("arch feature_dim must match dataset")


def toggles_from_names(names: Sequence[str]) -> SSLToggles:
    """Build toggles from external names ('tsml', 'ct', 'da')."""
    fields = {}
    for name in names:
        if name not in _TOGGLE_NAMES:
            raise ConfigError(
                f"unknown toggle {name!r}; valid names: {sorted(_TOGGLE_NAMES)}"
            )
        fields[_TOGGLE_NAMES[name]] = True
    toggles = SSLToggles(
        mutual_learning=fields.get("mutual_learning", False),
        co_teaching=fields.get("co_teaching", False),
        dist_align=fields.get("dist_align", False),
    )
    toggles.validate()
    return toggles


def toggle_tag(toggles: SSLToggles) -> str:
    """Short deterministic name for a toggle combination."""
    parts = []
    if toggles.mutual_learning:
        parts.append("tsml")
    if toggles.co_teaching:
        parts.append("ct")
    if toggles.dist_align:
        parts.append("da")
    return "+".join(parts) if parts else "base"


def _apply_override(raw: dict, dotted: str, value: object) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def parse_overrides(pairs: Sequence[str]) -> list[tuple[str, object]]:
    """Parse 'dotted.path=value' strings; values go through YAML."""
    out = []
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form dotted.path=value")
        key, _, value = pair.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"override {pair!r} has an empty key")
        try:
            out.append((key, yaml.safe_load(value)))
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {pair!r} has an unparseable value: {exc}") from exc
    return out


def _build_section(name: str, cls: type, fields: dict) -> object:
    try:
        return cls(**fields)
    except TypeError as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from exc


def load_experiment_config(
    path: str | Path, overrides: Sequence[str] = ()
) -> ExperimentConfig:
    """Read a YAML experiment config, apply overrides, validate.

    The file has four sections: ``dataset``, ``arch``, ``train``,
    ``experiment``.  Overrides are 'dotted.path=value' strings applied
    to the raw tree before construction, so ``train.lr=0.001`` and
    ``experiment.repeats=2`` both work.  YAML syntax errors surface with
    their line numbers; semantic errors name the offending section.key.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    for key, value in parse_overrides(overrides):
        _apply_override(raw, key, value)

    known = {"dataset", "arch", "train", "experiment"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; valid: {sorted(known)}")

    dataset_raw = dict(raw.get("dataset", {}))
    if "class_frequencies" in dataset_raw:
        dataset_raw["class_frequencies"] = tuple(dataset_raw["class_frequencies"])
    dataset = _build_section("dataset", DatasetConfig, dataset_raw)

    arch_raw = dict(raw.get("arch", {}))
    for derived in ("num_classes", "feature_dim"):
        if derived in arch_raw:
            raise ConfigError(f"arch.{derived} is derived from the dataset section; remove it")
    arch = _build_section(
        "arch",
        ModelArch,
        {
            "num_classes": dataset.num_classes,
            "feature_dim": dataset.feature_dim,
            **arch_raw,
        },
    )

    train_raw = dict(raw.get("train", {}))
    toggle_names = train_raw.pop("toggles", ["tsml", "ct", "da"])
    if not isinstance(toggle_names, (list, tuple)):
        raise ConfigError("train.toggles must be a list of toggle names")
    train = _build_section(
        "train", TrainConfig, {**train_raw, "toggles": toggles_from_names(toggle_names)}
    )

    exp_raw = dict(raw.get("experiment", {}))
    sweep = tuple(float(r) for r in exp_raw.pop("sweep", (0.05, 0.1, 0.2)))
    if not sweep:
        # checked before ablation_ratio defaults to the first sweep entry
        raise ConfigError("experiment.sweep must list at least one labeling ratio")
    ablation_raw = exp_raw.pop(
        "ablation", [["tsml"], ["tsml", "ct"], ["tsml", "da"], ["tsml", "ct", "da"]]
    )
    ablation = tuple(tuple(str(n) for n in combo) for combo in ablation_raw)
    config = _build_section(
        "experiment",
        ExperimentConfig,
        {
            "dataset": dataset,
            "arch": arch,
            "train": train,
            "sweep": sweep,
            "ablation": ablation,
            "ablation_ratio": float(exp_raw.pop("ablation_ratio", sweep[0])),
            "repeats": int(exp_raw.pop("repeats", 5)),
            "output_dir": str(exp_raw.pop("output_dir", "runs")),
            **exp_raw,
        },
    )
    config.validate()
    return config


def config_hash(config: ExperimentConfig) -> str:
    """12-hex-digit digest of the fully resolved config."""
    canonical = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    """One trained model's scores, linked to its provenance."""

    run_id: str
    config_digest: str
    labeling_ratio: float
    toggles: SSLToggles
    seed: int
    selected: str
    val: MetricsReport
    test: MetricsReport
    # split name -> (delta det f1, delta cls f1); None until a matched
    # baseline exists, and never fabricated without one
    deltas: dict[str, tuple[float, float] | None]
    history_path: str


def run_id_for(ratio: float, toggles: SSLToggles, seed: int) -> str:
    return f"r{int(round(ratio * 1000)):04d}_{toggle_tag(toggles)}_s{seed}"


def grid_plan(
    ratios: Sequence[float],
    toggle_sets: Sequence[SSLToggles],
    seeds: Sequence[int],
) -> list[tuple[float, SSLToggles, int]]:
    """One baseline per (ratio, seed) plus one run per grid cell.

    The baseline (all toggles off) is shared across toggle sets at the
    same ratio and seed, so a grid of R ratios, T toggle sets, and S
    seeds yields R*S baseline runs and R*T*S SSL runs.
    """
    base = SSLToggles(mutual_learning=False, co_teaching=False, dist_align=False)
    plan = []
    for ratio in ratios:
        for seed in seeds:
            plan.append((ratio, base, seed))
            for toggles in toggle_sets:
                plan.append((ratio, toggles, seed))
    return plan


def _plan_seeds(config: ExperimentConfig) -> list[int]:
    return [config.train.seed + repeat for repeat in range(config.repeats)]


def sweep_plan(config: ExperimentConfig) -> list[tuple[float, SSLToggles, int]]:
    """Full-SSL runs plus matched baselines over ratios and seeds."""
    full = toggles_from_names(("tsml", "ct", "da"))
    return grid_plan(config.sweep, [full], _plan_seeds(config))


def ablation_plan(config: ExperimentConfig) -> list[tuple[float, SSLToggles, int]]:
    """Every configured toggle combo plus baselines, at the ablation ratio."""
    combos = [toggles_from_names(combo) for combo in config.ablation]
    return grid_plan([config.ablation_ratio], combos, _plan_seeds(config))


def execute_run(
    samples: Sequence[FeatureGridSample],
    config: ExperimentConfig,
    ratio: float,
    toggles: SSLToggles,
    seed: int,
) -> tuple[RunRecord, TrainingResult]:
    """Split, train, and evaluate one cell of the experiment grid."""
    split = split_dataset(
        samples,
        config.dataset,
        labeling_ratio=ratio,
        val_frac=config.val_frac,
        test_frac=config.test_frac,
        seed=seed,
    )
    train_cfg = replace(config.train, seed=seed, toggles=toggles)
    result = run_training(split, config.arch, train_cfg)
    test_report = evaluate_model(
        result.params,
        config.arch,
        split.test,
        min_score=train_cfg.eval_min_score,
        distance_threshold=train_cfg.eval_distance_threshold,
    )
    rid = run_id_for(ratio, toggles, seed)
    record = RunRecord(
        run_id=rid,
        config_digest="",  # filled by the caller, which knows the full config
        labeling_ratio=ratio,
        toggles=toggles,
        seed=seed,
        selected=result.selected,
        val=result.val_report,
        test=test_report,
        deltas={"val": None, "test": None},
        history_path=f"history/{rid}.json",
    )
    return record, result


def fill_deltas(records: Sequence[RunRecord]) -> None:
    """Attach F1 deltas vs the matched baseline, in place.

    The match key is (labeling ratio, seed); the baseline is the
    toggles-all-off run.  Records without a matched baseline keep null
    deltas.  Baselines themselves also stay null: a delta against
    oneself carries no information.
    """
    baselines: dict[tuple[float, int], RunRecord] = {}
    for record in records:
        if toggle_tag(record.toggles) == "base":
            baselines[(record.labeling_ratio, record.seed)] = record
    for record in records:
        if toggle_tag(record.toggles) == "base":
            continue
        base = baselines.get((record.labeling_ratio, record.seed))
        if base is None:
            continue
        for split_name in ("val", "test"):
            mine: MetricsReport = getattr(record, split_name)
            theirs: MetricsReport = getattr(base, split_name)
            record.deltas[split_name] = (
                mine.detection.f1 - theirs.detection.f1,
                mine.macro_f1 - theirs.macro_f1,
            )


class ExperimentRunner:
    """Executes a run plan and owns the output directory.

    The dataset is generated once (its seed lives in the config); each
    run re-splits it with its own seed.  A failure mid-plan flushes the
    records finished so far before the error propagates, so partial
    results are never lost.
    """

    def __init__(self, config: ExperimentConfig, subdir: str) -> None:
        self.config = config
        self.digest = config_hash(config)
        self.out_dir = Path(config.output_dir) / subdir
        self.records: list[RunRecord] = []
        self.histories: dict[str, list[EpochStats]] = {}
        self.failed_run: str | None = None
        self._samples: list[FeatureGridSample] | None = None

    @property
    def samples(self) -> list[FeatureGridSample]:
        if self._samples is None:
            self._samples = generate_dataset(self.config.dataset)
        return self._samples

    def run_plan(self, plan: Sequence[tuple[float, SSLToggles, int]]) -> None:
        for ratio, toggles, seed in plan:
            rid = run_id_for(ratio, toggles, seed)
            try:
                record, result = execute_run(self.samples, self.config, ratio, toggles, seed)
            except (PointSSLError, FloatingPointError) as exc:
                self.failed_run = rid
                fill_deltas(self.records)
                self.write_outputs()
                raise PointSSLError(
                    f"run {rid} failed ({exc}); partial results flushed to {self.out_dir}"
                ) from exc
            record.config_digest = self.digest
            self.records.append(record)
            self.histories[record.run_id] = result.history
        fill_deltas(self.records)
        self.write_outputs()

    def write_outputs(self) -> None:
        write_results(self.records, self.out_dir, self.digest)
        history_dir = self.out_dir / "history"
        history_dir.mkdir(parents=True, exist_ok=True)
        for record in self.records:
            payload = {
                "run_id": record.run_id,
                "config_hash": record.config_digest,
                "labeling_ratio": record.labeling_ratio,
                "toggles": asdict(record.toggles),
                "seed": record.seed,
                "selected": record.selected,
                "epochs": [asdict(stats) for stats in self.histories[record.run_id]],
            }
            _atomic_write_text(
                history_dir / f"{record.run_id}.json", json.dumps(payload, indent=2) + "\n"
            )
        metadata = {
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "unix_time": time.time(),
            "host": platform.node(),
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config_hash": self.digest,
            "config": asdict(self.config),
            "failed_run": self.failed_run,
            "files": ["results.csv", "results.json"]
            + sorted(f"history/{r.run_id}.json" for r in self.records),
        }
        _atomic_write_text(
            self.out_dir / "metadata.json", json.dumps(metadata, indent=2, sort_keys=True) + "\n"
        )


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _sort_key(record: RunRecord) -> tuple:
    t = record.toggles
    return (
        record.labeling_ratio,
        (t.mutual_learning, t.co_teaching, t.dist_align),
        record.seed,
    )


def _format_value(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def result_rows(records: Sequence[RunRecord]) -> list[dict[str, str]]:
    """Flatten records into CSV-schema rows, deterministically ordered."""
    rows = []
    for record in sorted(records, key=_sort_key):
        for split_name in ("val", "test"):
            report: MetricsReport = getattr(record, split_name)
            delta = record.deltas.get(split_name)
            rows.append(
                {
                    "run_id": record.run_id,
                    "labeling_ratio": f"{record.labeling_ratio:.6f}",
                    "tsml": str(int(record.toggles.mutual_learning)),
                    "ct": str(int(record.toggles.co_teaching)),
                    "da": str(int(record.toggles.dist_align)),
                    "seed": str(record.seed),
                    "split": split_name,
                    "det_p": _format_value(report.detection.precision),
                    "det_r": _format_value(report.detection.recall),
                    "det_f1": _format_value(report.detection.f1),
                    "cls_p": _format_value(report.macro_precision),
                    "cls_r": _format_value(report.macro_recall),
                    "cls_f1": _format_value(report.macro_f1),
                    "delta_det_f1": _format_value(delta[0] if delta else None),
                    "delta_cls_f1": _format_value(delta[1] if delta else None),
                }
            )
    return rows


def write_results(records: Sequence[RunRecord], out_dir: Path, digest: str) -> None:
    """Write results.csv and its JSON mirror, atomically.

    The CSV holds only reproducible values (timestamps live in the
    metadata sidecar), uses \\n newlines, and orders rows by (ratio,
    toggles, seed, split), so identical configs give identical bytes.
    """
    rows = result_rows(records)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _atomic_write_text(Path(out_dir) / "results.csv", buffer.getvalue())

    json_rows = []
    for row in rows:
        converted: dict[str, object] = {}
        for key, value in row.items():
            if key in ("run_id", "split"):
                converted[key] = value
            elif key in ("tsml", "ct", "da", "seed"):
                converted[key] = int(value)
            else:
                converted[key] = float(value) if value else None
        json_rows.append(converted)
    payload = {"config_hash": digest, "rows": json_rows}
    _atomic_write_text(
        Path(out_dir) / "results.json", json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def emit_plots_data(out_dir: str | Path) -> list[str]:
    """Turn a results directory into plot-ready long-format files.

    Reads results.json and the history files and writes, under plots/:
    metrics_long.csv (one row per run, split, metric), metrics_summary.csv
    (mean and sample standard deviation per cell across seeds), and
    traces_long.csv (per-epoch thresholds, pseudo-label counts, losses,
    validation F1).  Runs without pseudo-label machinery have no trace
    series; the manifest lists them.  Returns the file names written.
    """
    out_dir = Path(out_dir)
    results_path = out_dir / "results.json"
    if not results_path.exists():
        raise ConfigError(f"no results.json under {out_dir}; run sweep or ablate first")
    payload = json.loads(results_path.read_text())
    rows = payload["rows"]
    plots_dir = out_dir / "plots"

    metric_names = ("det_p", "det_r", "det_f1", "cls_p", "cls_r", "cls_f1",
                    "delta_det_f1", "delta_cls_f1")
    long_buffer = io.StringIO()
    writer = csv.writer(long_buffer, lineterminator="\n")
    writer.writerow(["labeling_ratio", "toggles", "seed", "split", "metric", "value"])
    cells: dict[tuple, list[float]] = {}
    for row in rows:
        tag_toggles = SSLToggles(
            mutual_learning=bool(row["tsml"]),
            co_teaching=bool(row["ct"]),
            dist_align=bool(row["da"]),
        )
        tag = toggle_tag(tag_toggles)
        for metric in metric_names:
            value = row[metric]
            if value is None:
                continue
            writer.writerow(
                [f"{row['labeling_ratio']:.6f}", tag, row["seed"], row["split"], metric,
                 f"{value:.6f}"]
            )
            cells.setdefault((row["labeling_ratio"], tag, row["split"], metric), []).append(value)
    _atomic_write_text(plots_dir / "metrics_long.csv", long_buffer.getvalue())

    summary_buffer = io.StringIO()
    writer = csv.writer(summary_buffer, lineterminator="\n")
    writer.writerow(["labeling_ratio", "toggles", "split", "metric", "mean", "std", "n"])
    for key in sorted(cells, key=lambda k: (k[0], k[1], k[2], k[3])):
        values = np.asarray(cells[key], dtype=np.float64)
        std = f"{values.std(ddof=1):.6f}" if len(values) > 1 else ""
        writer.writerow(
            [f"{key[0]:.6f}", key[1], key[2], key[3], f"{values.mean():.6f}", std, len(values)]
        )
    _atomic_write_text(plots_dir / "metrics_summary.csv", summary_buffer.getvalue())

    traces_buffer = io.StringIO()
    writer = csv.writer(traces_buffer, lineterminator="\n")
    writer.writerow(["run_id", "epoch", "phase", "series", "pair", "class_id", "value"])
    runs_without_traces = []
    history_files = sorted((out_dir / "history").glob("*.json")) if (out_dir / "history").exists() else []
    for history_file in history_files:
        history = json.loads(history_file.read_text())
        rid = history["run_id"]
        wrote_pseudo_series = False
        for stats in history["epochs"]:
            epoch = stats["epoch"]
            phase = stats["phase"]
            for series in ("labeled_cls", "labeled_reg", "unlabeled_cls"):
                for pair, value in enumerate(stats[series]):
                    writer.writerow([rid, epoch, phase, series, pair + 1, "", f"{value:.6f}"])
            for series in ("val_detection_f1", "val_macro_f1"):
                for pair, value in enumerate(stats[series]):
                    writer.writerow([rid, epoch, phase, series, pair + 1, "", f"{value:.6f}"])
            for pair, values in enumerate(stats["thresholds"]):
                for class_id, value in enumerate(values):
                    writer.writerow(
                        [rid, epoch, phase, "threshold", pair + 1, class_id, f"{value:.6f}"]
                    )
                wrote_pseudo_series = True
            for pair, counts in enumerate(stats["pseudo_class_counts"]):
                for class_id, count in enumerate(counts):
                    writer.writerow(
                        [rid, epoch, phase, "pseudo_count", pair + 1, class_id, str(count)]
                    )
                wrote_pseudo_series = True
        if not wrote_pseudo_series:
            runs_without_traces.append(rid)
    _atomic_write_text(plots_dir / "traces_long.csv", traces_buffer.getvalue())

    manifest = {
        "files": ["metrics_long.csv", "metrics_summary.csv", "traces_long.csv"],
        "config_hash": payload.get("config_hash"),
        "runs_without_pseudo_traces": sorted(runs_without_traces),
    }
    _atomic_write_text(
        plots_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest["files"]
