"""Inspect the marginal tail failures at L=q=8."""
import numpy as np

from milbench import autodiff as ad
from milbench import heads, losses


def run_seed(ms):
    gen = np.random.default_rng(ms)
    out = []
    for kind in heads.KINDS:
        for bag in range(20):
            d = int(gen.choice([8, 16]))
            K = int(gen.integers(1, 17))
            spec = heads.ModelSpec(kind, d, 1, attention_dim=8, query_dim=8)
            params = heads.init_params(spec, seed=int(gen.integers(0, 1 << 31)))
            f = gen.normal(0, 1, (K, d))
            label = int(gen.integers(0, 2))
            res = ad.check_gradients(losses.loss_builder(spec, f, label), params.arrays)
            if res.max_rel_err > 1e-4:
                out.append((kind, bag, d, K, label, res, params, f))
    return out


for ms in (5, 6):
    for kind, bag, d, K, label, res, params, f in run_seed(ms):
        print(f"seed {ms}: {kind} bag={bag} d={d} K={K} label={label} "
              f"max={res.max_rel_err:.3e}")
        name = max(res.per_param, key=res.per_param.get)
        builder = losses.loss_builder(params.spec, f, label)
        grads = ad.param_gradients(builder(params.arrays))
        a = grads[name].reshape(-1)
        point = {k: v.copy() for k, v in params.arrays.items()}
        arr = point[name].reshape(-1)
        h = 1e-5
        rows = []
        for i in range(a.size):
            keep = arr[i]
            arr[i] = keep + h
            up = builder(point).output_value
            arr[i] = keep - h
            down = builder(point).output_value
            arr[i] = keep
            c = (up - down) / (2 * h)
            rel = abs(a[i] - c) / (abs(a[i]) + abs(c) + 1e-12)
            rows.append((rel, i, a[i], c))
        rows.sort(reverse=True)
        for rel, i, ai, ci in rows[:3]:
            print(f"    {name}[{i}]: analytic {ai: .4e} central {ci: .4e} "
                  f"absdiff {abs(ai - ci):.2e} rel {rel:.3e}")
