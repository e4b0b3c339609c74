"""
Training the point recognizer on labeled data only
==================================================

The recognizer scores a patch around every anchor on a coarse grid and
regresses a subpixel offset.  Training matches predicted points to
annotations with a Hungarian assignment, then follows analytic
gradients.  This run keeps every semi-supervised switch off, so what
you see is the plain supervised loop: losses falling, then val and
test reports from distance-threshold matching.
"""

import numpy as np

from pointssl import (
    DatasetConfig,
    ModelArch,
    SSLToggles,
    TrainConfig,
    decode,
    evaluate_model,
    forward,
    generate_dataset,
    run_training,
    split_dataset,
)

dataset = DatasetConfig(
    num_classes=3,
    grid_height=16,
    grid_width=16,
    feature_dim=5,
    num_images=40,
    cells_per_image=4.0,
    class_frequencies=(0.5, 0.3, 0.2),
    seed=3,
)
samples = generate_dataset(dataset)
split = split_dataset(samples, dataset, labeling_ratio=1.0, seed=0)
print(f"labeled {len(split.labeled)}, val {len(split.validation)}, test {len(split.test)}")

arch = ModelArch(
    num_classes=dataset.num_classes,
    feature_dim=dataset.feature_dim,
    patch_radius=2,
    hidden_dim=12,
    anchor_stride=3,
)
config = TrainConfig(
    lr=1e-3,
    burn_in_epochs=160,
    ssl_epochs=0,
    labeled_batch=4,
    seed=0,
    toggles=SSLToggles(mutual_learning=False, co_teaching=False, dist_align=False),
)


def report_progress(stats):
    # supervised runs train a single student, so each per-pair tuple
    # in the epoch record holds one entry
    if stats.epoch % 20 == 0 or stats.epoch == config.burn_in_epochs - 1:
        print(f"epoch {stats.epoch:3d}  cls {stats.labeled_cls[0]:.4f}  "
              f"reg {stats.labeled_reg[0]:.4f}  val macro F1 {stats.val_macro_f1[0]:.3f}")


result = run_training(split, arch, config, progress=report_progress)
print(f"\nselected model: {result.selected}")

for name, part in (("val", split.validation), ("test", split.test)):
    rep = evaluate_model(result.params, arch, part,
                         min_score=config.eval_min_score,
                         distance_threshold=config.eval_distance_threshold)
    print(f"{name}: detection F1 {rep.detection.f1:.3f}  macro F1 {rep.macro_f1:.3f}  "
          f"per-class F1 {[round(c.f1, 3) for c in rep.per_class]}")

# Predictions next to ground truth for one held-out grid.
sample = max(
    split.test,
    key=lambda s: len(decode(forward(result.params, arch, s.features),
                             arch.num_classes, config.eval_min_score)),
)
preds = decode(forward(result.params, arch, sample.features),
               arch.num_classes, config.eval_min_score)
print(f"\ntest sample {sample.id!r}:")
print("  truth:", [(round(a.x, 1), round(a.y, 1), a.class_id) for a in sample.annotations])
print("  preds:", [(round(p.x, 1), round(p.y, 1), p.class_id, round(p.score, 2))
                   for p in sorted(preds, key=lambda p: -p.score)])
err = [float(min(np.hypot(p.x - a.x, p.y - a.y) for a in sample.annotations))
       for p in preds] if preds and sample.annotations else []
if err:
    print(f"  nearest-truth distance per prediction: {[round(e, 2) for e in err]}")
