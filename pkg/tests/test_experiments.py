"""Experiment planning, config loading, and result serialization."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pointssl.errors import ConfigError, PointSSLError
from pointssl.experiments import (
    RESULT_COLUMNS,
    ExperimentConfig,
    ExperimentRunner,
    RunRecord,
    ablation_plan,
    config_hash,
    emit_plots_data,
    fill_deltas,
    grid_plan,
    load_experiment_config,
    parse_overrides,
    result_rows,
    run_id_for,
    sweep_plan,
    toggle_tag,
    toggles_from_names,
    write_results,
)
from pointssl.metrics import PRF, MetricsReport
from pointssl.selftrain import SSLToggles

BASE = SSLToggles(mutual_learning=False, co_teaching=False, dist_align=False)
FULL = SSLToggles(mutual_learning=True, co_teaching=True, dist_align=True)

MICRO_YAML = """\
dataset:
  num_classes: 2
  grid_height: 10
  grid_width: 10
  feature_dim: 3
  num_images: 8
  cells_per_image: 2.0
  class_frequencies: [0.6, 0.4]
  seed: 7
arch:
  patch_radius: 1
  hidden_dim: 4
  anchor_stride: 3
train:
  lr: 0.001
  burn_in_epochs: 1
  ssl_epochs: 1
  labeled_batch: 2
  unlabeled_batch: 2
experiment:
  sweep: [0.5]
  repeats: 2
  output_dir: "{out}"
"""


def write_micro_config(tmp_path: Path, out_name: str = "runs") -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(MICRO_YAML.format(out=tmp_path / out_name))
    return path


# ---------------------------------------------------------------- overrides


def test_parse_overrides_yaml_typed_values():
    parsed = dict(
        parse_overrides(
            [
                "train.lr=0.001",
                "experiment.repeats=3",
                "experiment.sweep=[0.1, 0.2]",
                "dataset.seed=0",
                "a.flag=true",
                "a.name=plain",
            ]
        )
    )
    assert parsed["train.lr"] == 0.001
    assert parsed["experiment.repeats"] == 3
    assert parsed["experiment.sweep"] == [0.1, 0.2]
    assert parsed["dataset.seed"] == 0
    assert parsed["a.flag"] is True
    assert parsed["a.name"] == "plain"


@pytest.mark.parametrize("bad", ["no_equals", "=value", "  =x"])
def test_parse_overrides_rejects_malformed(bad):
    with pytest.raises(ConfigError):
        parse_overrides([bad])


def test_parse_overrides_rejects_unparseable_value():
    with pytest.raises(ConfigError):
        parse_overrides(["a=[1,"])


# ---------------------------------------------------------------- config loading


def test_load_config_defaults(tmp_path):
    config = load_experiment_config(write_micro_config(tmp_path))
    assert config.sweep == (0.5,)
    assert config.ablation == (
        ("tsml",),
        ("tsml", "ct"),
        ("tsml", "da"),
        ("tsml", "ct", "da"),
    )
    assert config.ablation_ratio == 0.5
    assert config.repeats == 2
    assert config.train.toggles == FULL
    # arch class and feature counts come from the dataset section
    assert config.arch.num_classes == 2
    assert config.arch.feature_dim == 3
    assert config.arch.hidden_dim == 4


def test_load_config_overrides_reach_sections(tmp_path):
    config = load_experiment_config(
        write_micro_config(tmp_path),
        overrides=["train.lr=0.5", "experiment.repeats=1", "train.toggles=[tsml]"],
    )
    assert config.train.lr == 0.5
    assert config.repeats == 1
    assert config.train.toggles == SSLToggles(
        mutual_learning=True, co_teaching=False, dist_align=False
    )


def test_load_config_rejects_supplied_derived_arch_fields(tmp_path):
    with pytest.raises(ConfigError, match="derived"):
        load_experiment_config(write_micro_config(tmp_path), overrides=["arch.num_classes=2"])


def test_load_config_rejects_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown config section"):
        load_experiment_config(write_micro_config(tmp_path), overrides=["extras.x=1"])


def test_load_config_rejects_unknown_key_naming_section(tmp_path):
    with pytest.raises(ConfigError, match="dataset"):
        load_experiment_config(write_micro_config(tmp_path), overrides=["dataset.bogus=1"])


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_experiment_config(tmp_path / "absent.yaml")


def test_load_config_invalid_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("dataset: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_experiment_config(path)


def test_load_config_non_mapping_root(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_experiment_config(path)


def test_load_config_empty_file_missing_required_fields(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ConfigError, match="dataset"):
        load_experiment_config(path)


def test_load_config_toggles_must_be_list(tmp_path):
    with pytest.raises(ConfigError, match="toggles"):
        load_experiment_config(write_micro_config(tmp_path), overrides=["train.toggles=tsml"])


@pytest.mark.parametrize(
    "override",
    [
        "experiment.repeats=0",
        "experiment.sweep=[]",
        "experiment.sweep=[1.5]",
        "experiment.ablation=[[ct]]",
        "train.lr=0",
    ],
)
def test_load_config_validation_failures(tmp_path, override):
    with pytest.raises(ConfigError):
        load_experiment_config(write_micro_config(tmp_path), overrides=[override])


def test_config_hash_stable_and_sensitive(tmp_path):
    config_a = load_experiment_config(write_micro_config(tmp_path))
    config_b = load_experiment_config(write_micro_config(tmp_path))
    changed = load_experiment_config(write_micro_config(tmp_path), overrides=["train.lr=0.01"])
    assert config_hash(config_a) == config_hash(config_b)
    assert len(config_hash(config_a)) == 12
    assert config_hash(config_a) != config_hash(changed)


# ---------------------------------------------------------------- naming


def test_toggles_from_names_and_tags():
    cases = {
        (): "base",
        ("tsml",): "tsml",
        ("tsml", "ct"): "tsml+ct",
        ("tsml", "da"): "tsml+da",
        ("tsml", "ct", "da"): "tsml+ct+da",
    }
    for names, tag in cases.items():
        assert toggle_tag(toggles_from_names(names)) == tag


def test_toggles_from_names_rejects_unknown():
    with pytest.raises(ConfigError, match="unknown toggle"):
        toggles_from_names(["tsml", "warp"])


def test_toggles_from_names_rejects_addons_without_tsml():
    with pytest.raises(ConfigError):
        toggles_from_names(["ct"])


def test_run_id_format():
    assert run_id_for(0.05, FULL, 3) == "r0050_tsml+ct+da_s3"
    assert run_id_for(0.1, BASE, 0) == "r0100_base_s0"
    assert run_id_for(1.0, toggles_from_names(["tsml"]), 12) == "r1000_tsml_s12"


# ---------------------------------------------------------------- planning


def test_grid_plan_shares_baselines_across_toggle_sets():
    toggle_sets = [toggles_from_names(["tsml"]), FULL]
    plan = grid_plan([0.05, 0.1], toggle_sets, [0, 1, 2])
    assert len(plan) == 2 * 3 * (1 + len(toggle_sets))
    baselines = [entry for entry in plan if toggle_tag(entry[1]) == "base"]
    assert len(baselines) == 2 * 3
    assert len({(r, s) for r, _, s in baselines}) == 6


def test_sweep_plan_covers_ratios_and_repeats(tmp_path):
    config = load_experiment_config(
        write_micro_config(tmp_path),
        overrides=["experiment.sweep=[0.25, 0.5]", "experiment.repeats=3", "train.seed=10"],
    )
    plan = sweep_plan(config)
    assert len(plan) == 2 * 3 * 2
    assert {seed for _, _, seed in plan} == {10, 11, 12}
    ssl_entries = [entry for entry in plan if toggle_tag(entry[1]) != "base"]
    assert all(toggles == FULL for _, toggles, _ in ssl_entries)


def test_ablation_plan_uses_single_ratio(tmp_path):
    config = load_experiment_config(
        write_micro_config(tmp_path),
        overrides=["experiment.ablation_ratio=0.5", "experiment.repeats=2"],
    )
    plan = ablation_plan(config)
    # per seed: one baseline plus four configured combos
    assert len(plan) == 2 * (1 + 4)
    assert {ratio for ratio, _, _ in plan} == {0.5}
    tags = {toggle_tag(toggles) for _, toggles, _ in plan}
    assert tags == {"base", "tsml", "tsml+ct", "tsml+da", "tsml+ct+da"}


# ---------------------------------------------------------------- deltas and rows


def fake_report(det_f1: float, cls_f1: float) -> MetricsReport:
    det = PRF(precision=det_f1, recall=det_f1, f1=det_f1, tp=1, fp=0, fn=0)
    cls = PRF(precision=cls_f1, recall=cls_f1, f1=cls_f1, tp=1, fp=0, fn=0)
    return MetricsReport(
        detection=det,
        per_class=(cls,),
        macro_precision=cls_f1,
        macro_recall=cls_f1,
        macro_f1=cls_f1,
        evaluated_classes=(0,),
    )


def fake_record(ratio: float, toggles: SSLToggles, seed: int, det: float, cls: float) -> RunRecord:
    rid = run_id_for(ratio, toggles, seed)
    return RunRecord(
        run_id=rid,
        config_digest="d" * 12,
        labeling_ratio=ratio,
        toggles=toggles,
        seed=seed,
        selected="teacher1",
        val=fake_report(det - 1.0, cls - 1.0),
        test=fake_report(det, cls),
        deltas={"val": None, "test": None},
        history_path=f"history/{rid}.json",
    )


def test_fill_deltas_matches_on_ratio_and_seed():
    base = fake_record(0.1, BASE, 0, det=50.0, cls=40.0)
    ssl = fake_record(0.1, FULL, 0, det=60.0, cls=55.0)
    orphan = fake_record(0.1, FULL, 1, det=70.0, cls=65.0)
    fill_deltas([base, ssl, orphan])
    assert base.deltas == {"val": None, "test": None}
    assert ssl.deltas["test"] == (pytest.approx(10.0), pytest.approx(15.0))
    assert ssl.deltas["val"] == (pytest.approx(10.0), pytest.approx(15.0))
    assert orphan.deltas == {"val": None, "test": None}


def test_result_rows_order_and_format():
    records = [
        fake_record(0.1, FULL, 0, det=60.0, cls=55.0),
        fake_record(0.05, FULL, 0, det=30.0, cls=25.0),
        fake_record(0.05, BASE, 1, det=20.0, cls=15.0),
        fake_record(0.05, BASE, 0, det=25.0, cls=20.0),
    ]
    fill_deltas(records)
    rows = result_rows(records)
    assert len(rows) == 8
    assert [row["run_id"] for row in rows[:2]] == ["r0050_base_s0"] * 2
    assert [row["split"] for row in rows[:2]] == ["val", "test"]
    order = [row["run_id"] for row in rows[::2]]
    assert order == ["r0050_base_s0", "r0050_base_s1", "r0050_tsml+ct+da_s0", "r0100_tsml+ct+da_s0"]
    base_row = rows[0]
    assert base_row["delta_det_f1"] == "" and base_row["delta_cls_f1"] == ""
    assert base_row["labeling_ratio"] == "0.050000"
    assert (base_row["tsml"], base_row["ct"], base_row["da"]) == ("0", "0", "0")
    ssl_test = next(r for r in rows if r["run_id"] == "r0050_tsml+ct+da_s0" and r["split"] == "test")
    assert ssl_test["delta_det_f1"] == "5.000000"
    assert ssl_test["delta_cls_f1"] == "5.000000"


def test_write_results_deterministic_bytes(tmp_path):
    records = [
        fake_record(0.05, BASE, 0, det=25.0, cls=20.0),
        fake_record(0.05, FULL, 0, det=30.0, cls=25.0),
    ]
    fill_deltas(records)
    write_results(records, tmp_path / "a", "d" * 12)
    write_results(records, tmp_path / "b", "d" * 12)
    csv_a = (tmp_path / "a" / "results.csv").read_bytes()
    csv_b = (tmp_path / "b" / "results.csv").read_bytes()
    assert csv_a == csv_b
    header = csv_a.decode().splitlines()[0]
    assert header == ",".join(RESULT_COLUMNS)
    payload = json.loads((tmp_path / "a" / "results.json").read_text())
    assert payload["config_hash"] == "d" * 12
    base_json = payload["rows"][0]
    assert base_json["tsml"] == 0 and base_json["seed"] == 0
    assert base_json["delta_cls_f1"] is None


# ---------------------------------------------------------------- runner


@pytest.fixture(scope="module")
def micro_sweep(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("sweep")
    config = load_experiment_config(write_micro_config(tmp_path))
    runner = ExperimentRunner(config, "sweep")
    runner.run_plan(sweep_plan(config))
    return config, runner


def test_runner_executes_full_plan(micro_sweep):
    config, runner = micro_sweep
    # 1 ratio x 2 seeds x (baseline + full SSL)
    assert len(runner.records) == 4
    assert runner.failed_run is None
    tags = sorted(toggle_tag(r.toggles) for r in runner.records)
    assert tags == ["base", "base", "tsml+ct+da", "tsml+ct+da"]
    for record in runner.records:
        assert record.config_digest == runner.digest
        if toggle_tag(record.toggles) == "base":
            assert record.deltas == {"val": None, "test": None}
        else:
            assert record.deltas["test"] is not None
            assert record.deltas["val"] is not None


def test_runner_writes_results_and_histories(micro_sweep):
    config, runner = micro_sweep
    out = runner.out_dir
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 1 + 2 * len(runner.records)
    history_files = sorted(p.name for p in (out / "history").glob("*.json"))
    assert history_files == sorted(f"{r.run_id}.json" for r in runner.records)
    one = json.loads((out / "history" / history_files[0]).read_text())
    assert set(one) == {
        "run_id", "config_hash", "labeling_ratio", "toggles", "seed", "selected", "epochs",
    }
    assert len(one["epochs"]) == config.train.burn_in_epochs + config.train.ssl_epochs
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["config_hash"] == runner.digest
    assert metadata["failed_run"] is None
    assert "results.csv" in metadata["files"]


def test_runner_rerun_identical_csv(micro_sweep, tmp_path):
    config, runner = micro_sweep
    again = ExperimentRunner(config, "sweep_rerun")
    again.run_plan(sweep_plan(config))
    first = (runner.out_dir / "results.csv").read_bytes()
    second = (again.out_dir / "results.csv").read_bytes()
    assert first == second


def test_runner_flushes_partial_results_on_failure(tmp_path):
    config = load_experiment_config(
        write_micro_config(tmp_path), overrides=["experiment.repeats=1"]
    )
    runner = ExperimentRunner(config, "broken")
    plan = [(0.5, BASE, 0), (2.0, BASE, 0)]
    with pytest.raises(PointSSLError, match="partial results flushed"):
        runner.run_plan(plan)
    assert runner.failed_run == "r2000_base_s0"
    lines = (runner.out_dir / "results.csv").read_text().splitlines()
    assert len(lines) == 1 + 2  # the completed first run only
    metadata = json.loads((runner.out_dir / "metadata.json").read_text())
    assert metadata["failed_run"] == "r2000_base_s0"


# ---------------------------------------------------------------- plot data


def test_emit_plots_data_files(micro_sweep):
    config, runner = micro_sweep
    files = emit_plots_data(runner.out_dir)
    assert files == ["metrics_long.csv", "metrics_summary.csv", "traces_long.csv"]
    plots = runner.out_dir / "plots"
    with open(plots / "metrics_long.csv", newline="") as handle:
        long_rows = list(csv.DictReader(handle))
    assert long_rows
    assert all(row["value"] != "" for row in long_rows)
    # baselines carry no delta rows
    assert not [r for r in long_rows if r["toggles"] == "base" and "delta" in r["metric"]]

    with open(plots / "metrics_summary.csv", newline="") as handle:
        summary = list(csv.DictReader(handle))
    cell = next(
        r
        for r in summary
        if r["toggles"] == "tsml+ct+da" and r["metric"] == "cls_f1" and r["split"] == "test"
    )
    assert cell["n"] == "2"
    values = [
        float(r["value"])
        for r in long_rows
        if r["toggles"] == "tsml+ct+da" and r["metric"] == "cls_f1" and r["split"] == "test"
    ]
    assert float(cell["mean"]) == pytest.approx(np.mean(values), abs=1e-5)
    if len(values) > 1:
        assert float(cell["std"]) == pytest.approx(np.std(values, ddof=1), abs=1e-5)

    manifest = json.loads((plots / "manifest.json").read_text())
    base_ids = sorted(r.run_id for r in runner.records if toggle_tag(r.toggles) == "base")
    assert manifest["runs_without_pseudo_traces"] == base_ids

    with open(plots / "traces_long.csv", newline="") as handle:
        traces = list(csv.DictReader(handle))
    ssl_ids = {r.run_id for r in runner.records if toggle_tag(r.toggles) != "base"}
    assert {t["run_id"] for t in traces if t["series"] == "threshold"} == ssl_ids
    assert {t["run_id"] for t in traces if t["series"] == "labeled_cls"} >= ssl_ids


def test_emit_plots_data_requires_results(tmp_path):
    with pytest.raises(ConfigError, match="results.json"):
        emit_plots_data(tmp_path)
