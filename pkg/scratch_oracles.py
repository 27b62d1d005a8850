"""Independent oracles for values frozen into unit tests.

Everything here is computed from first principles (no milbench imports)
so the frozen numbers in the tests are genuinely independent.
"""
import math

import numpy as np

# --- Adam, two steps on a 2-vector, straight from the published algorithm,
# with decoupled weight decay applied to the parameter before the update.
def adam_oracle():
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    theta = np.array([1.0, -2.0])
    grads = [np.array([0.5, -1.0]), np.array([-0.25, 0.75])]
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        print(f"adam step {t}: {theta!r} m={m!r} v={v!r}")


# --- Welch p-values by numeric integration of the t density (lgamma based).
def t_sf(t, df, n=2_000_001, span=400.0):
    xs = np.linspace(0.0, span, n)
    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    dens = np.exp(logc - ((df + 1) / 2) * np.log1p(xs * xs / df))
    tail_from_t = np.trapz(np.where(xs >= abs(t), dens, 0.0), xs)
    # correct the cut cell by clipping the grid exactly at |t|
    lo = np.searchsorted(xs, abs(t))
    xs2 = np.concatenate(([abs(t)], xs[lo:]))
    dens2 = np.exp(logc - ((df + 1) / 2) * np.log1p(xs2 * xs2 / df))
    return float(np.trapz(dens2, xs2))


def welch_oracle():
    cases = [
        ([90.0, 91.0, 92.0], [94.0, 95.0, 96.5]),
        ([1.0, 2.0, 3.0, 4.0], [1.5, 2.5, 3.5]),
        ([10.0, 10.5, 11.0, 10.2, 9.9], [12.0, 11.5, 13.0]),
    ]
    for a, b in cases:
        a, b = np.asarray(a), np.asarray(b)
        va, vb = a.var(ddof=1), b.var(ddof=1)
        na, nb = len(a), len(b)
        se2 = va / na + vb / nb
        t = (a.mean() - b.mean()) / math.sqrt(se2)
        df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
        p = 2.0 * t_sf(t, df)
        print(f"welch {list(a)} vs {list(b)}: t={t!r} df={df!r} p={p!r}")
    # sanity anchors with known table values
    print(f"t_sf(1.959964, 1e6)*2 = {2 * t_sf(1.959964, 1e6):!r}"
          if False else f"anchor p(z=1.96) ~ {2 * t_sf(1.959964, 100000):.6f}")


# --- mid-rank AUC by brute-force pair counting.
def auc_oracle():
    cases = [
        ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]),
        ([0.5, 0.5, 0.2, 0.8], [0, 1, 0, 1]),
        ([0.3, 0.3, 0.3, 0.3], [0, 1, 0, 1]),
    ]
    for scores, labels in cases:
        s, y = np.asarray(scores), np.asarray(labels)
        pos, neg = s[y == 1], s[y == 0]
        wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
        print(f"auc {scores} {labels}: {wins / (len(pos) * len(neg))!r}")


# --- pooled values for the fixed bag scores [[0.2],[0.6],[0.4]].
def pooling_oracle():
    y = np.array([0.2, 0.6, 0.4])
    print(f"mean {y.mean()!r} max {y.max()!r}")
    alpha = 0.5  # sigmoid(0)
    print(f"mix(raw=0) {y.mean() + alpha * (y.max() - y.mean())!r}")
    a = math.log(2.0)  # softplus(0)
    w = np.exp(a * y - (a * y).max())
    w = w / w.sum()
    print(f"auto(raw=0) {float(w @ y)!r} weights {w!r}")
    p = 1.0 + math.log(2.0)
    print(f"lnp(raw=0) {float(((y ** p).mean()) ** (1 / p))!r}")
    # attention with a fixed 2-feature bag and unit weight vector
    f = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    att_w = np.array([0.5, -0.25])
    logits = f @ att_w
    e = np.exp(logits - logits.max())
    aw = e / e.sum()
    print(f"atten weights {aw!r} pooled {float(aw @ y)!r}")


adam_oracle()
welch_oracle()
auc_oracle()
pooling_oracle()
