"""Measure gradient-check headroom at the acceptance configuration."""
import time

import numpy as np

from milbench import autodiff as ad
from milbench import heads, losses, rng


def numpy_loss(params, features, label):
    out = heads.bag_output(params, features)
    spec = params.spec
    if spec.num_classes == 1:
        s = float(out.bag_scores[0])
        eps = ad.LOG_EPS
        return -(np.log(max(s, eps)) * label + np.log(max(1.0 - s, eps)) * (1 - label))
    s = out.bag_scores
    return -np.log(max(float(s[label]), ad.LOG_EPS))


def dual_check():
    gen = np.random.default_rng(7)
    worst = 0.0
    for kind in heads.KINDS:
        for C in (1, 3):
            for trial in range(40):
                d = int(gen.integers(2, 12))
                K = int(gen.integers(1, 17))
                spec = heads.ModelSpec(kind, d, C, attention_dim=6, query_dim=5)
                params = heads.init_params(spec, seed=int(gen.integers(0, 10000)))
                for name in params.arrays:
                    params.arrays[name] = params.arrays[name] + gen.normal(0, 0.5, params.arrays[name].shape)
                f = gen.normal(0, 1, (K, d))
                label = int(gen.integers(0, C if C > 1 else 2))
                tape = losses.make_loss_tape(params, f, label)
                got = tape.output_value
                want = numpy_loss(params, f, label)
                rel = abs(got - want) / (abs(want) + 1e-15)
                worst = max(worst, rel)
    print(f"dual-path worst rel diff: {worst:.3e}")


def k1_targeted():
    print("targeted K=1 checks:")
    gen = np.random.default_rng(3)
    for kind in heads.KINDS:
        for C in (1, 3):
            worst = 0.0
            for trial in range(25):
                d = 8
                spec = heads.ModelSpec(kind, d, C, attention_dim=128, query_dim=128)
                params = heads.init_params(spec, seed=trial)
                f = gen.normal(0, 1, (1, d))
                label = int(gen.integers(0, C if C > 1 else 2))
                res = ad.check_gradients(losses.loss_builder(spec, f, label), params.arrays)
                worst = max(worst, res.max_rel_err)
            print(f"  {kind:8s} C={C}: worst {worst:.3e}")


def acceptance_sweep(master_seeds, att, query):
    print(f"acceptance-config sweep (20 bags/head, K in [1,16], d in {{8,16}}, "
          f"L={att}, q={query}):")
    grand = 0.0
    for ms in master_seeds:
        gen = np.random.default_rng(ms)
        t0 = time.time()
        overall = {}
        for kind in heads.KINDS:
            worst = 0.0
            for bag in range(20):
                d = int(gen.choice([8, 16]))
                K = int(gen.integers(1, 17))
                C = 1
                spec = heads.ModelSpec(kind, d, C, attention_dim=att, query_dim=query)
                params = heads.init_params(spec, seed=int(gen.integers(0, 1 << 31)))
                f = gen.normal(0, 1, (K, d))
                label = int(gen.integers(0, 2))
                res = ad.check_gradients(losses.loss_builder(spec, f, label), params.arrays)
                worst = max(worst, res.max_rel_err)
            overall[kind] = worst
        dt = time.time() - t0
        bad = {k: v for k, v in overall.items() if v >= 1e-4}
        grand = max(grand, max(overall.values()))
        print(f"  seed {ms}: max {max(overall.values()):.3e} time {dt:.1f}s "
              f"{'FAIL ' + str(bad) if bad else 'ok'}")
    print(f"  grand max over seeds: {grand:.3e}")


dual_check()
k1_targeted()
acceptance_sweep(range(20), att=8, query=8)
