"""Time one training run per head at the acceptance benchmark scale."""
import time

import numpy as np

from milbench import heads, synth, trainer

cfg = synth.SynthConfig(
    feature_dim=16, num_classes=2, witness_rate=0.1, witness_mean=6.0,
    k_min=32, k_max=64, train_per_class=100, val_per_class=25,
    test_per_class=50, seed=0, with_coords=False, name="acc6",
)
data = synth.generate_dataset(cfg)
ds = data.dataset
print(f"dataset: {len(ds.split('train'))} train / {len(ds.split('val'))} val "
      f"/ {len(ds.split('test'))} test")

for kind in heads.KINDS:
    tc = trainer.TrainConfig(epochs=3, lr=1e-3, seed=0)
    t0 = time.time()
    result, _ = trainer.train_one(trainer.spec_for_dataset(kind, ds), ds, tc)
    dt = time.time() - t0
    per_epoch = dt / 3
    print(f"{kind:8s} {per_epoch:6.2f}s/epoch  test_auc@3ep {result.test_auc:.3f}")
