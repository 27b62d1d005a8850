"""Dig into ABMIL/DSMIL gradient-check failures at full attention size."""
import numpy as np

from milbench import autodiff as ad
from milbench import heads, losses

gen = np.random.default_rng(0)
report = []
for kind in ("ABMIL", "DSMIL"):
    for bag in range(20):
        d = int(gen.choice([8, 16]))
        K = int(gen.integers(1, 17))
        spec = heads.ModelSpec(kind, d, 1, attention_dim=128, query_dim=128)
        params = heads.init_params(spec, seed=int(gen.integers(0, 1 << 31)))
        f = gen.normal(0, 1, (K, d))
        label = int(gen.integers(0, 2))
        res = ad.check_gradients(losses.loss_builder(spec, f, label), params.arrays)
        if res.max_rel_err >= 1e-5:
            report.append((kind, bag, d, K, label, res, params, f))

for kind, bag, d, K, label, res, params, f in report:
    print(f"{kind} bag={bag} d={d} K={K} label={label} max={res.max_rel_err:.3e}")
    for name, err in sorted(res.per_param.items(), key=lambda kv: -kv[1]):
        print(f"    {name:10s} {err:.3e}")

# deep dive into the single worst case
kind, bag, d, K, label, res, params, f = max(report, key=lambda r: r[5].max_rel_err)
print(f"\nworst: {kind} d={d} K={K} label={label}")
builder = losses.loss_builder(params.spec, f, label)
tape = builder(params.arrays)
grads = ad.param_gradients(tape)
name = max(res.per_param, key=res.per_param.get)
a = grads[name]
print(f"param {name}: |analytic| min {np.abs(a).min():.3e} max {np.abs(a).max():.3e}")

point = {k: v.copy() for k, v in params.arrays.items()}
h = 1e-5
flat = a.reshape(-1)
worst_rel, worst_idx = -1.0, None
central = np.zeros_like(flat)
arr = point[name].reshape(-1)
for i in range(flat.size):
    keep = arr[i]
    arr[i] = keep + h
    up = builder(point).output_value
    arr[i] = keep - h
    down = builder(point).output_value
    arr[i] = keep
    c = (up - down) / (2 * h)
    central[i] = c
    rel = abs(flat[i] - c) / (abs(flat[i]) + abs(c) + 1e-12)
    if rel > worst_rel:
        worst_rel, worst_idx = rel, i
print(f"worst component {worst_idx}: analytic {flat[worst_idx]:.6e} "
      f"central {central[worst_idx]:.6e} rel {worst_rel:.3e}")
