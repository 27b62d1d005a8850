"""Dry-run the end-to-end acceptance benchmark and time it."""
import time

import numpy as np

from milbench import heads, synth, trainer

EPOCHS = 30
LRS = (1e-3, 5e-3)
SEEDS = (0, 1, 2)

t_start = time.time()
for mu, label in ((6.0, "mu=6"), (0.0, "mu=0")):
    cfg = synth.SynthConfig(
        feature_dim=16, num_classes=2, witness_rate=0.1, witness_mean=mu,
        k_min=32, k_max=64, train_per_class=100, val_per_class=25,
        test_per_class=50, seed=0, with_coords=False, name=f"acc{mu:g}",
    )
    ds = synth.generate_dataset(cfg).dataset
    print(f"--- {label} ---")
    means = {}
    for kind in heads.KINDS:
        t0 = time.time()
        spec = trainer.spec_for_dataset(kind, ds)
        grid = trainer.grid_search(
            spec, ds, lrs=list(LRS), seeds=list(SEEDS),
            config=trainer.TrainConfig(epochs=EPOCHS),
        )
        aucs = [r.test_auc for r in grid.best_runs]
        means[kind] = float(np.mean(aucs))
        print(f"{kind:8s} best_lr {grid.best_lr:g} mean {means[kind]:.4f} "
              f"seeds {['%.3f' % a for a in aucs]} ({time.time()-t0:.1f}s)")
    if mu > 0:
        five = ("MaxMIL", "MixMIL", "LNPMIL", "ABMIL", "DSMIL")
        best_inst = max(means[k] for k in heads.INSTANCE_KINDS)
        best_emb = max(means[k] for k in heads.EMBEDDING_KINDS)
        print(f"five >= 0.90: {all(means[k] >= 0.90 for k in five)} "
              f"(min of five {min(means[k] for k in five):.4f})")
        print(f"|best_inst - best_emb| = {abs(best_inst - best_emb):.4f}")
    else:
        worst = max(abs(v - 0.5) for v in means.values())
        print(f"max |mean - 0.5| = {worst:.4f} (limit 0.1)")
print(f"total wall time {time.time() - t_start:.1f}s")
