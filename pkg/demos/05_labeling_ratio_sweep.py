"""
Sweeping the labeling ratio with the experiment runner
======================================================

The runner executes a grid of (ratio, toggle set, seed) runs, shares
one supervised baseline per (ratio, seed), fills in F1 deltas against
it, and writes deterministic CSV/JSON artifacts.  This is the same
machinery behind `pointssl sweep` and `pointssl ablate`, driven here
through the library API on a config small enough to finish in well
under a minute.
"""

import csv
import tempfile
import textwrap
from pathlib import Path

from pointssl import ExperimentRunner, emit_plots_data, load_experiment_config, sweep_plan
from pointssl.experiments import toggle_tag

# The same YAML a `pointssl sweep` invocation would take.
CONFIG = textwrap.dedent("""\
    dataset:
      num_classes: 3
      grid_height: 16
      grid_width: 16
      feature_dim: 5
      num_images: 32
      cells_per_image: 5.0
      class_frequencies: [0.5, 0.3, 0.2]
      seed: 9
    arch:
      patch_radius: 2
      hidden_dim: 12
      anchor_stride: 3
    train:
      lr: 0.001
      burn_in_epochs: 30
      ssl_epochs: 50
      labeled_batch: 2
      unlabeled_batch: 4
      seed: 0
    experiment:
      sweep: [0.1, 0.3]
      repeats: 2
      output_dir: runs/demo
""")

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = Path(tmp) / "sweep.yaml"
    cfg_path.write_text(CONFIG)
    config = load_experiment_config(cfg_path, overrides=[f"experiment.output_dir={tmp}"])
    print(f"sweep ratios {config.sweep}, {config.repeats} seeds, "
          f"toggle set {toggle_tag(config.train.toggles)!r} plus baseline")

    # run_plan executes the grid and writes results.csv/results.json,
    # per-run histories, and metadata under <output_dir>/sweep.
    runner = ExperimentRunner(config, "sweep")
    runner.run_plan(sweep_plan(config))

    out = Path(tmp) / "sweep"
    print(f"runs executed: {len(runner.records)}\n")
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'run':<22}{'split':<6}{'cls F1':>11}{'delta':>11}")
    for row in rows:
        if row["split"] != "test":
            continue
        delta = row["delta_cls_f1"] or "-"
        print(f"{row['run_id']:<22}{row['split']:<6}{row['cls_f1']:>11}{delta:>11}")

    emit_plots_data(out)
    plots = sorted(p.name for p in (out / "plots").iterdir())
    print(f"\nplot-ready tables under plots/: {plots}")
    with open(out / "plots" / "metrics_summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    print("mean test classification F1 by ratio:")
    for row in summary:
        if row["metric"] == "cls_f1" and row["split"] == "test":
            print(f"  ratio {float(row['labeling_ratio']):.2f} {row['toggles']:<12} "
                  f"mean {float(row['mean']):7.3f}  (n={row['n']})")
    print("\ngains concentrate where labels are scarcest; as the ratio grows the"
          "\nbaseline catches up and two-seed deltas sink into run-to-run noise")
