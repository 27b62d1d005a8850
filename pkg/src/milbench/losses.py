"""Recorded-graph losses for every head.

These mirror the plain-numpy forward paths in heads.py op for op; a
property test holds the two implementations together.  Argmax choices
(column max winners, DSMIL critical instances, MixMIL's representative
instance) are piecewise constant in the parameters, so the graph treats
them as data-dependent constants and routes gradients through the
selected rows only.

Binary heads (num_classes=1) train with binary cross-entropy on the bag
score.  Multi-class heads renormalize their pooled per-class scores to
a distribution and train with negative log likelihood; ABMIL's softmax
output is already normalized, so renormalization is the identity there.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .heads import EMBEDDING_KINDS, ModelParams, ModelSpec


def _onehot(tape: ad.Tape, index: int, width: int) -> ad.Node:
    row = np.zeros((1, width))
    row[0, index] = 1.0
    return tape.constant(row)


def _instance_scores(tape, nodes, spec, f):
    logits = ad.add(ad.matmul(f, nodes["inst_w"]), nodes["inst_b"])
    return ad.sigmoid_op(logits) if spec.num_classes == 1 else ad.row_softmax(logits)


def _pool(tape, nodes, spec, scores, f) -> ad.Node:
    """Pooled 1 x C scores for the instance-based kinds."""
    kind = spec.kind
    if kind == "MeanMIL":
        return ad.column_mean(scores)
    if kind == "MaxMIL":
        return ad.column_max(scores)
    if kind == "MixMIL":
        alpha = ad.sigmoid_op(nodes["pool_alpha"])
        if spec.num_classes == 1:
            max_branch = ad.column_max(scores)
        else:
            m = int(np.argmax(scores.value[:, 1:].max(axis=1)))
            max_branch = ad.take_row(scores, m)
        if spec.mix_literal_sum:
            rest = ad.scale(ad.column_mean(scores), float(scores.shape[0]))
        else:
            rest = ad.column_mean(scores)
        # rest + alpha * (max - rest): when the branches agree (K = 1) the
        # difference is exactly zero and the loss does not depend on alpha.
        return rest + (max_branch - rest) * alpha
    if kind == "AutoMIL":
        alpha = ad.softplus_op(nodes["pool_alpha"])
        weights = ad.col_softmax(ad.scale(scores, alpha))
        return ad.weighted_sum(weights, scores)
    if kind == "LNPMIL":
        p = ad.add(tape.constant([[1.0]]), ad.softplus_op(nodes["pool_p"]))
        # Log-domain power mean normalized by the per-class top score.
        # log(x) - log(x) is exactly zero, so a single-instance bag is
        # exactly independent of p; large p cannot overflow either.
        mags = ad.absolute(scores)
        top = ad.column_max(mags)
        ratios = ad.add(ad.log(mags), ad.scale(ad.log(top), -1.0))
        mean_r = ad.column_mean(ad.exp(ad.scale(ratios, p)))
        root = ad.exp(ad.scale(ad.log(mean_r), ad.power(p, -1.0)))
        return ad.weighted_sum(top, root)
    if kind == "AttenMIL":
        # att_b shifts every logit equally, which softmax cannot see, so
        # the graph leaves it out; its gradient is exactly zero.
        logits = ad.matmul(f, nodes["att_w"])
        return ad.weighted_sum(ad.col_softmax(logits), scores)
    raise ValueError(f"{kind} is not an instance-pooling head")


def _abmil_bag_logits(tape, nodes, f) -> ad.Node:
    hidden = ad.tanh(ad.matmul(f, nodes["att_V"]))
    att = ad.matmul(hidden, nodes["att_w"])
    weights = ad.col_softmax(att)
    embedding = ad.weighted_sum(weights, f)
    return ad.add(ad.matmul(embedding, nodes["bag_w"]), nodes["bag_b"])


def _dsmil_class_scores(tape, nodes, spec, f) -> ad.Node:
    """DSMIL bag scores as a 1 x C node (C = 1 gives the binary score)."""
    logits = ad.add(ad.matmul(f, nodes["inst_w"]), nodes["inst_b"])
    inst = ad.sigmoid_op(logits) if spec.num_classes == 1 else ad.row_softmax(logits)
    inst_max = ad.column_max(inst)
    queries = ad.matmul(f, nodes["query_w"])
    values = ad.matmul(f, nodes["value_w"])
    per_class = []
    for cls in range(spec.num_classes):
        m = int(np.argmax(inst.value[:, cls]))
        query_m = ad.take_row(queries, m)
        sims = ad.matmul(queries, ad.transpose(query_m))
        attention = ad.col_softmax(sims)
        embedding = ad.weighted_sum(attention, values)
        bag_logits = ad.add(ad.matmul(embedding, nodes["bag_w"]), nodes["bag_b"])
        if spec.num_classes == 1:
            head_score = ad.sigmoid_op(bag_logits)
        else:
            head_score = ad.dot(ad.row_softmax(bag_logits), _onehot(tape, cls, spec.num_classes))
        inst_part = ad.dot(inst_max, _onehot(tape, cls, spec.num_classes))
        per_class.append(ad.scale(ad.add(inst_part, head_score), 0.5))
    if spec.num_classes == 1:
        return per_class[0]
    total = ad.scale(_onehot(tape, 0, spec.num_classes), per_class[0])
    for cls in range(1, spec.num_classes):
        total = total + ad.scale(_onehot(tape, cls, spec.num_classes), per_class[cls])
    return total


def _bce(tape, score: ad.Node, label: int) -> ad.Node:
    one = tape.constant([[1.0]])
    y = float(label)
    return -(ad.log(score) * y + ad.log(one - score) * (1.0 - y))


def _nll(tape, class_scores: ad.Node, label: int, *, renormalize: bool) -> ad.Node:
    width = class_scores.shape[1]
    if not 0 <= label < width:
        raise ValueError(f"label {label} out of range for {width} classes")
    if renormalize:
        total = ad.dot(class_scores, tape.constant(np.ones((1, width))))
        class_scores = ad.scale(class_scores, ad.power(total, -1.0))
    return -ad.log(ad.dot(class_scores, _onehot(tape, label, width)))


def build_bag_loss(tape: ad.Tape, nodes: dict[str, ad.Node], spec: ModelSpec,
                   features: ad.Node, label: int) -> ad.Node:
    if spec.kind == "ABMIL":
        logits = _abmil_bag_logits(tape, nodes, features)
        if spec.num_classes == 1:
            return _bce(tape, ad.sigmoid_op(logits), label)
        return _nll(tape, ad.row_softmax(logits), label, renormalize=False)
    if spec.kind == "DSMIL":
        scores = _dsmil_class_scores(tape, nodes, spec, features)
        if spec.num_classes == 1:
            return _bce(tape, scores, label)
        return _nll(tape, scores, label, renormalize=True)
    inst = _instance_scores(tape, nodes, spec, features)
    pooled = _pool(tape, nodes, spec, inst, features)
    if spec.num_classes == 1:
        return _bce(tape, pooled, label)
    return _nll(tape, pooled, label, renormalize=True)


def make_loss_tape(params: ModelParams, features: np.ndarray, label: int) -> ad.Tape:
    """Record the full per-bag loss; returns the finalized tape."""
    tape = ad.Tape()
    nodes = {name: tape.param(name, arr) for name, arr in params.arrays.items()}
    f = tape.constant(features)
    loss = build_bag_loss(tape, nodes, params.spec, f, label)
    return tape.finalize(loss)


def loss_builder(spec: ModelSpec, features: np.ndarray, label: int) -> Callable[[dict[str, np.ndarray]], ad.Tape]:
    """Adapter for check_gradients: arrays dict -> finalized tape."""

    def build(arrays: dict[str, np.ndarray]) -> ad.Tape:
        return make_loss_tape(ModelParams(spec, dict(arrays)), features, label)

    return build
