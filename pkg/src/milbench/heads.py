"""Bag classification heads over precomputed instance features.

A bag is a K x d matrix of instance features.  Instance-based heads
score every instance with a shared linear classifier and reduce the
K x C score matrix with a pooling operator:

    MeanMIL   (1/K) sum_k y_k
    MaxMIL    max_k y_k                      (ties -> lowest index)
    MixMIL    alpha * max + (1 - alpha) * mean,  alpha = sigmoid(a)
    AutoMIL   sum_k y_k * softmax_k(alpha * y)_k, alpha = softplus(a)
    LNPMIL    ((1/K) sum_k |y_k|^p)^(1/p),   p = 1 + softplus(p~)
    AttenMIL  sum_k y_k * softmax_k(w_k),    w_k from a d -> 1 layer

MixMIL's non-max branch defaults to the mean so the operator stays a
convex combination on [min, max]; ``mix_literal_sum`` switches it to the
bare sum.  Embedding-based heads (ABMIL, DSMIL) aggregate the features
themselves and classify the aggregate.

All reductions over instances resolve ties to the lowest index, and all
class ids are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import LOG_EPS, sigmoid, softmax_rows, softplus

INSTANCE_KINDS = ("MeanMIL", "MaxMIL", "MixMIL", "AutoMIL", "LNPMIL", "AttenMIL")
EMBEDDING_KINDS = ("ABMIL", "DSMIL")
KINDS = INSTANCE_KINDS + EMBEDDING_KINDS

_CANONICAL = {k.lower(): k for k in KINDS}


def canonical_kind(name: str) -> str:
    """Resolve a case-insensitive head name to its canonical spelling."""
    try:
        return _CANONICAL[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown head kind: {name!r} (choose from {', '.join(KINDS)})") from None


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of one head.

    ``num_classes`` is the classifier output width: 1 means a single
    sigmoid score (binary), >= 2 means row-softmax scores.  For a
    two-class dataset use num_classes=1.
    """

    kind: str
    feature_dim: int
    num_classes: int = 1
    attention_dim: int = 128  # ABMIL hidden width L
    query_dim: int = 128  # DSMIL query width
    mix_literal_sum: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        for label, value in (
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
            ("attention_dim", self.attention_dim),
            ("query_dim", self.query_dim),
        ):
            if int(value) < 1:
                raise ValueError(f"{label} must be >= 1, got {value}")


@dataclass
class ModelParams:
    """Named parameter arrays for one head, in a fixed draw order."""

    spec: ModelSpec
    arrays: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})


@dataclass
class BagOutput:
    """Forward result for one bag.

    ``weights`` are the pooling/attention weights when the operator is a
    weighted sum over instances ((K,) shared across classes or (K, C)
    per class), or None when it is not (LNPMIL's power mean).
    ``critical_index`` is DSMIL's selected instance (for C > 1, the one
    backing the top-scoring class).
    """

    bag_scores: np.ndarray
    instance_scores: np.ndarray
    weights: np.ndarray | None = None
    critical_index: int | None = None


def _array_specs(spec: ModelSpec) -> list[tuple[str, tuple[int, int], bool]]:
    """(name, shape, is_weight) per array; is_weight=False arrays init to 0."""
    d, c = spec.feature_dim, spec.num_classes
    if spec.kind in INSTANCE_KINDS:
        out = [("inst_w", (d, c), True), ("inst_b", (1, c), False)]
        if spec.kind in ("MixMIL", "AutoMIL"):
            out.append(("pool_alpha", (1, 1), False))
        elif spec.kind == "LNPMIL":
            out.append(("pool_p", (1, 1), False))
        elif spec.kind == "AttenMIL":
            out += [("att_w", (d, 1), True), ("att_b", (1, 1), False)]
        return out
    if spec.kind == "ABMIL":
        ell = spec.attention_dim
        return [
            ("att_V", (d, ell), True),
            ("att_w", (ell, 1), True),
            ("bag_w", (d, c), True),
            ("bag_b", (1, c), False),
        ]
    # DSMIL
    q = spec.query_dim
    return [
        ("inst_w", (d, c), True),
        ("inst_b", (1, c), False),
        ("query_w", (d, q), True),
        ("value_w", (d, d), True),
        ("bag_w", (d, c), True),
        ("bag_b", (1, c), False),
    ]


def param_count(spec: ModelSpec) -> int:
    """Exact trainable scalar count."""
    d, c = spec.feature_dim, spec.num_classes
    base = c * (d + 1)
    if spec.kind in ("MeanMIL", "MaxMIL"):
        return base
    if spec.kind in ("MixMIL", "AutoMIL", "LNPMIL"):
        return base + 1
    if spec.kind == "AttenMIL":
        return base + d + 1
    if spec.kind == "ABMIL":
        ell = spec.attention_dim
        return ell * d + ell + base
    return spec.query_dim * d + d * d + 2 * base  # DSMIL


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Draw parameters from the init stream of ``seed``.

    Weight matrices are uniform on +/- 1/sqrt(fan_in); biases and the
    raw pooling parameters start at 0 (so softplus-reparameterized
    values start at log 2).
    """
    gen = rng.stream(seed, rng.PURPOSE_INIT, 0)
    arrays: dict[str, np.ndarray] = {}
    for name, shape, is_weight in _array_specs(spec):
        if is_weight:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(gen, -bound, bound, shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(spec, arrays)


# ---------------------------------------------------------------------------
# Reparameterized pooling parameters.


def mix_alpha(params: ModelParams) -> float:
    return float(sigmoid(params.arrays["pool_alpha"])[0, 0])


def auto_alpha(params: ModelParams) -> float:
    return float(softplus(params.arrays["pool_alpha"])[0, 0])


def lnp_p(params: ModelParams) -> float:
    return 1.0 + float(softplus(params.arrays["pool_p"])[0, 0])


# ---------------------------------------------------------------------------
# Forward pieces (plain numpy; the recorded-graph twins live in losses.py).


def instance_scores(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """K x C instance scores: sigmoid for C=1, row softmax otherwise."""
    spec = params.spec
    logits = features @ params.arrays["inst_w"] + params.arrays["inst_b"]
    return sigmoid(logits) if spec.num_classes == 1 else softmax_rows(logits)


def predict_multiclass(scores: np.ndarray) -> int:
    """Hard class prediction from K x C instance scores (C >= 2).

    The representative instance m maximizes the instance's best score
    among the non-first classes (columns 1..C-1); the prediction is the
    argmax class of row m.  Both argmaxes resolve ties to the lowest
    index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ValueError(f"need a K x C score matrix with C >= 2, got shape {scores.shape}")
    m = int(np.argmax(scores[:, 1:].max(axis=1)))
    return int(np.argmax(scores[m]))


def _softmax_vec(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _mix_max_branch(scores: np.ndarray) -> np.ndarray:
    """Max branch of MixMIL: per-column max for C=1, else the scores of
    the representative instance from the multi-class rule."""
    if scores.shape[1] == 1:
        return scores.max(axis=0)
    m = int(np.argmax(scores[:, 1:].max(axis=1)))
    return scores[m].copy()


def pool(
    params: ModelParams,
    scores: np.ndarray,
    features: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Reduce K x C instance scores to (C,) pooled scores.

    Returns (pooled, weights); see BagOutput for the weights contract.
    AttenMIL needs ``features`` to compute its attention logits.
    """
    spec = params.spec
    kind = spec.kind
    k = scores.shape[0]
    if kind == "MeanMIL":
        return scores.mean(axis=0), np.full(k, 1.0 / k)
    if kind == "MaxMIL":
        idx = np.argmax(scores, axis=0)
        weights = np.zeros_like(scores)
        weights[idx, np.arange(scores.shape[1])] = 1.0
        return scores.max(axis=0), weights[:, 0] if scores.shape[1] == 1 else weights
    if kind == "MixMIL":
        alpha = mix_alpha(params)
        rest = scores.sum(axis=0) if spec.mix_literal_sum else scores.mean(axis=0)
        # rest + alpha * (max - rest), so a bag where the branches agree
        # (K = 1) is exactly independent of alpha.
        pooled = rest + alpha * (_mix_max_branch(scores) - rest)
        if scores.shape[1] == 1:
            m = int(np.argmax(scores[:, 0]))
        else:
            m = int(np.argmax(scores[:, 1:].max(axis=1)))
        onehot = np.zeros(k)
        onehot[m] = 1.0
        base = np.ones(k) if spec.mix_literal_sum else np.full(k, 1.0 / k)
        return pooled, alpha * onehot + (1.0 - alpha) * base
    if kind == "AutoMIL":
        alpha = auto_alpha(params)
        weights = softmax_rows((alpha * scores).T).T  # softmax down each column
        pooled = (weights * scores).sum(axis=0)
        return pooled, weights[:, 0] if scores.shape[1] == 1 else weights
    if kind == "LNPMIL":
        p = lnp_p(params)
        # Log-domain power mean normalized by the per-class top score, so
        # large p cannot overflow and a single-instance bag does not depend
        # on p at all.  Magnitudes below the log clamp count as the clamp.
        mags = np.abs(scores)
        top = mags.max(axis=0)
        ratios = np.log(np.maximum(mags, LOG_EPS)) - np.log(np.maximum(top, LOG_EPS))
        mean_r = np.exp(p * ratios).mean(axis=0)
        pooled = top * np.exp(np.log(np.maximum(mean_r, LOG_EPS)) / p)
        return pooled, None
    if kind == "AttenMIL":
        if features is None:
            raise ValueError("AttenMIL pooling needs the bag features")
        # att_b shifts every logit equally, which softmax cannot see, so
        # it stays out of the computation (it is still a real parameter).
        logits = (features @ params.arrays["att_w"])[:, 0]
        weights = _softmax_vec(logits)
        return weights @ scores, weights
    raise ValueError(f"{kind} is not an instance-pooling head")


def _renormalize(scores: np.ndarray) -> np.ndarray:
    total = scores.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("cannot renormalize non-positive class scores")
    return scores / total


def _abmil_output(params: ModelParams, features: np.ndarray) -> BagOutput:
    a = params.arrays
    att_logits = (np.tanh(features @ a["att_V"]) @ a["att_w"])[:, 0]
    weights = _softmax_vec(att_logits)
    embedding = weights @ features
    logits = embedding @ a["bag_w"] + a["bag_b"][0]
    inst_logits = features @ a["bag_w"] + a["bag_b"]
    if params.spec.num_classes == 1:
        bag = sigmoid(logits[np.newaxis, :])[0]
        inst = sigmoid(inst_logits)
    else:
        bag = _softmax_vec(logits)
        inst = softmax_rows(inst_logits)
    return BagOutput(bag_scores=bag, instance_scores=inst, weights=weights)


def _dsmil_output(params: ModelParams, features: np.ndarray) -> BagOutput:
    a = params.arrays
    spec = params.spec
    inst = instance_scores(params, features)
    queries = features @ a["query_w"]
    values = features @ a["value_w"]
    c = spec.num_classes
    bag = np.empty(c)
    weights = np.empty((features.shape[0], c))
    criticals = np.empty(c, dtype=int)
    for cls in range(c):
        m = int(np.argmax(inst[:, cls]))
        criticals[cls] = m
        u = _softmax_vec(queries @ queries[m])
        weights[:, cls] = u
        embedding = u @ values
        logits = embedding @ a["bag_w"] + a["bag_b"][0]
        head = sigmoid(logits[np.newaxis, :])[0] if c == 1 else _softmax_vec(logits)
        bag[cls] = 0.5 * (inst[m, cls] + head[cls])
    if c == 1:
        return BagOutput(bag_scores=bag, instance_scores=inst, weights=weights[:, 0],
                         critical_index=int(criticals[0]))
    top = int(np.argmax(bag))
    return BagOutput(bag_scores=_renormalize(bag), instance_scores=inst,
                     weights=weights, critical_index=int(criticals[top]))


def bag_output(params: ModelParams, features: np.ndarray) -> BagOutput:
    """Score one bag.  ``features`` is K x d with K >= 1."""
    features = np.asarray(features, dtype=np.float64)
    spec = params.spec
    if features.ndim != 2 or features.shape[1] != spec.feature_dim:
        raise ValueError(
            f"features must be K x {spec.feature_dim}, got shape {features.shape}"
        )
    if features.shape[0] < 1:
        raise ValueError("a bag needs at least one instance")
    if spec.kind == "ABMIL":
        return _abmil_output(params, features)
    if spec.kind == "DSMIL":
        return _dsmil_output(params, features)
    inst = instance_scores(params, features)
    pooled, weights = pool(params, inst, features)
    bag = pooled if spec.num_classes == 1 else _renormalize(pooled)
    return BagOutput(bag_scores=bag, instance_scores=inst, weights=weights)


def positive_score(out: BagOutput) -> float:
    """Scalar ranking score: the sigmoid score for C=1, else the
    complement of the first class (how non-first the bag looks)."""
    if out.bag_scores.shape[0] == 1:
        return float(out.bag_scores[0])
    return 1.0 - float(out.bag_scores[0])
