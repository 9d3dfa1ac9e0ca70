#!/usr/bin/env python3
"""Does predictive entropy track distribution shift?

Trains once, then walks a ladder of increasingly corrupted inputs
(additive noise, rotation, class-conditional drift).  A useful
uncertainty signal should rise as accuracy falls, so the model can flag
inputs it no longer understands even without labels.
"""

from pathlib import Path

from mcuq.datasets import ShiftSpec
from mcuq.harness import ExperimentConfig, run_shift

out_dir = Path(__file__).parent / "out" / "shift"
cfg = ExperimentConfig.from_dict(dict(
    task="classification",
    dataset={"kind": "blobs-classification", "n": 800, "n_classes": 3,
             "spread": 0.8},
    arch={"n_blocks": 2, "width": 16, "output_mode": "softmax",
          "activation": "relu"},
    train={"learning_rate": 0.03, "weight_decay": 1e-4, "epochs": 40,
           "batch_size": 32},
    methods=["MCSD"], drop_rates=[0.2], Ts=[10], conf_thresholds=[0.0],
    adapted_presets=["all"], out_dir=str(out_dir), seed=5))

ladder = ShiftSpec.default_ladder(n_levels=5, max_noise=1.5,
                                  max_rotation=50.0, max_drift=1.0)
rows = run_shift(cfg, ladder)

print("corruption level      accuracy   mean entropy (bits)")
base_acc, base_ent = rows[0][1], rows[0][2]
for name, acc, ent in rows:
    bar = "#" * int(40 * ent / max(r[2] for r in rows))
    print(f"{name:20s}  {acc:8.3f}   {ent:7.3f}  {bar}")
print(f"\naccuracy dropped {base_acc - rows[-1][1]:+.3f} while entropy "
      f"rose {rows[-1][2] - base_ent:+.3f} bits: the uncertainty signal "
      "moves the right way under shift.")
print(f"per-level data written to {out_dir}/shift.csv")
