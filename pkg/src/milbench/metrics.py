"""Ranking metrics, Welch's t-test, and benchmark report assembly.

AUC uses the rank-sum (Mann-Whitney) form with mid-ranks for ties,
which equals the pairwise count (ties worth 1/2) exactly in float64.
Welch's unequal-variance t-test gets its two-sided p-value from the
regularized incomplete beta function, evaluated with a continued
fraction (modified Lentz), via p = I_x(nu/2, 1/2) at x = nu/(nu+t^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .heads import KINDS


def binary_auc(scores, labels) -> float:
    """Area under the ROC curve for binary 0/1 labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError(f"scores and labels must be equal-length vectors, got "
                         f"{scores.shape} and {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("AUC needs finite scores")
    pos = labels == 1
    neg = labels == 0
    if not np.array_equal(pos | neg, np.ones_like(pos)):
        bad = sorted({int(v) for v in labels[~(pos | neg)]})
        raise ValueError(f"binary AUC needs 0/1 labels, got {bad}")
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # mid-rank, 1-based
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auc(scores, labels, return_per_class: bool = False):
    """Unweighted mean of one-vs-rest AUCs over all C columns."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ValueError(f"macro AUC needs an n x C score matrix with C >= 2, got {scores.shape}")
    per_class = []
    for cls in range(scores.shape[1]):
        is_cls = (labels == cls).astype(int)
        if is_cls.sum() == 0:
            raise ValueError(f"macro AUC undefined: class {cls} absent from labels")
        if is_cls.sum() == len(labels):
            raise ValueError(f"macro AUC undefined: only class {cls} present")
        per_class.append(binary_auc(scores[:, cls], is_cls))
    mean = float(np.mean(per_class))
    return (mean, per_class) if return_per_class else mean


# ---------------------------------------------------------------------------
# Welch's t-test.


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p_value: float


def welch_t_test(xs, ys) -> WelchResult:
    """Two-sided Welch's t-test (unequal variances).

    The degrees of freedom follow Welch-Satterthwaite; both samples
    need n >= 2, and at least one needs nonzero variance.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or ys.ndim != 1 or len(xs) < 2 or len(ys) < 2:
        raise ValueError("Welch's t-test needs two 1-D samples with n >= 2")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("Welch's t-test needs finite samples")
    vx = float(xs.var(ddof=1)) / len(xs)
    vy = float(ys.var(ddof=1)) / len(ys)
    if vx + vy == 0.0:
        raise ValueError("Welch's t-test undefined: both samples have zero variance")
    t = (float(xs.mean()) - float(ys.mean())) / math.sqrt(vx + vy)
    dof = (vx + vy) ** 2 / (vx**2 / (len(xs) - 1) + vy**2 / (len(ys) - 1))
    p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return WelchResult(t=t, dof=dof, p_value=p)


# ---------------------------------------------------------------------------
# Report assembly.


SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class RunPoint:
    """One (method, dataset tag, seed) measurement on the report scale."""

    method: str
    tag: str
    seed: int
    value: float


@dataclass
class Cell:
    mean: float
    std: float
    n: int
    p_value: float | None = None  # None for the reference method or n < 2
    is_ref: bool = False


@dataclass
class Summary:
    methods: list[str]
    tags: list[str]
    cells: dict[tuple[str, str], Cell] = field(default_factory=dict)
    averages: dict[str, Cell] = field(default_factory=dict)
    ref_method: str = ""


def _method_order(methods) -> list[str]:
    known = {k: i for i, k in enumerate(KINDS)}
    return sorted(methods, key=lambda m: (known.get(m, len(known)), m))


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def summarize(points: list[RunPoint]) -> Summary:
    """Aggregate per-run values into the report table.

    Per (method, tag): mean and sample std.  The reference method has
    the best mean over tags (ties break by canonical method order);
    every other method gets a per-tag two-sided Welch p-value against
    the reference's runs on the same tag (None when either side has
    fewer than two runs or the test is degenerate).
    """
    if not points:
        raise ValueError("no run points to summarize")
    methods = _method_order({p.method for p in points})
    tags = sorted({p.tag for p in points})
    values: dict[tuple[str, str], list[float]] = {}
    for p in sorted(points, key=lambda p: (p.method, p.tag, p.seed)):
        values.setdefault((p.method, p.tag), []).append(p.value)

    summary = Summary(methods=methods, tags=tags)
    tag_means: dict[str, list[float]] = {m: [] for m in methods}
    for method in methods:
        for tag in tags:
            vals = values.get((method, tag))
            if not vals:
                raise ValueError(f"method {method!r} has no runs for tag {tag!r}")
            mean, std = _mean_std(vals)
            summary.cells[(method, tag)] = Cell(mean=mean, std=std, n=len(vals))
            tag_means[method].append(mean)
        avg_mean, avg_std = _mean_std(tag_means[method])
        summary.averages[method] = Cell(mean=avg_mean, std=avg_std, n=len(tags))

    ref = max(methods, key=lambda m: (summary.averages[m].mean, -methods.index(m)))
    summary.ref_method = ref
    summary.averages[ref].is_ref = True
    for method in methods:
        for tag in tags:
            cell = summary.cells[(method, tag)]
            if method == ref:
                cell.is_ref = True
                continue
            ref_vals = values[(ref, tag)]
            vals = values[(method, tag)]
            if len(ref_vals) < 2 or len(vals) < 2:
                continue
            try:
                cell.p_value = welch_t_test(ref_vals, vals).p_value
            except ValueError:
                cell.p_value = None
    return summary


def _fmt_mean_std(cell: Cell) -> str:
    return f"{cell.mean:.1f} ± {cell.std:.1f}"


def _fmt_p(cell: Cell) -> str:
    if cell.is_ref:
        return "Ref."
    if cell.p_value is None:
        return "N/A"
    star = "*" if cell.p_value < SIGNIFICANCE_LEVEL else ""
    return f"{cell.p_value:.4f}{star}"


def render_markdown(summary: Summary) -> str:
    """One table per tag (plus an average table for several tags)."""
    out = []
    for tag in summary.tags:
        out.append(f"## {tag}\n")
        out.append("| Method | AUC | n | p vs Ref. |")
        out.append("| --- | --- | --- | --- |")
        for method in summary.methods:
            cell = summary.cells[(method, tag)]
            out.append(f"| {method} | {_fmt_mean_std(cell)} | {cell.n} | {_fmt_p(cell)} |")
        out.append("")
    if len(summary.tags) > 1:
        out.append("## Average over datasets\n")
        out.append("| Method | AUC | p vs Ref. |")
        out.append("| --- | --- | --- |")
        for method in summary.methods:
            cell = summary.averages[method]
            marker = "Ref." if cell.is_ref else "-"
            out.append(f"| {method} | {_fmt_mean_std(cell)} | {marker} |")
        out.append("")
    return "\n".join(out) + "\n" if out else ""


def render_csv(summary: Summary) -> str:
    """Long-format aggregate table with full-precision values."""
    lines = ["tag,method,n,mean,std,p_value,marker"]
    for tag in summary.tags:
        for method in summary.methods:
            cell = summary.cells[(method, tag)]
            if cell.is_ref:
                p, marker = "", "ref"
            elif cell.p_value is None:
                p, marker = "", ""
            else:
                p = repr(cell.p_value)
                marker = "*" if cell.p_value < SIGNIFICANCE_LEVEL else ""
            lines.append(f"{tag},{method},{cell.n},{repr(cell.mean)},{repr(cell.std)},{p},{marker}")
    return "\n".join(lines) + "\n"


def render_boxplot_csv(points: list[RunPoint]) -> str:
    """Per-run values for box plots, one row per (tag, method, seed)."""
    lines = ["tag,method,seed,value"]
    known = {k: i for i, k in enumerate(KINDS)}
    for p in sorted(points, key=lambda p: (p.tag, known.get(p.method, len(known)), p.method, p.seed)):
        lines.append(f"{p.tag},{p.method},{p.seed},{repr(p.value)}")
    return "\n".join(lines) + "\n"
