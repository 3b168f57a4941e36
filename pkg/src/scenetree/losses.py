"""Training objective: per-pixel label loss over all streams plus the fused
prediction, a max-margin hinge on teacher-forced merge scores, cross-entropy
on merge relations, and a squared-norm penalty on weight matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .params import is_weight


@dataclass
class LossReport:
    """Scalar loss terms for one iteration (batch means)."""

    j_c: float
    j_struc: float
    j_rel: float
    reg: float

    @property
    def total(self):
        return self.j_c + self.j_struc + self.j_rel + self.reg

    def to_record(self, iteration, epoch):
        return {"iter": iteration, "epoch": epoch, "j_c": self.j_c,
                "j_struc": self.j_struc, "j_rel": self.j_rel, "reg": self.reg,
                "total": self.total}


def semantic_label_loss(tape, score_maps, target):
    """Mean stream cross-entropy plus fused cross-entropy.

    Each term is the mean over pixels of -log p(target label); the E stream
    terms are averaged and the fused term added on top.
    """
    target = np.asarray(target)
    k1 = score_maps.fused.shape[0]
    if target.shape != score_maps.spatial:
        raise ContractError(
            f"label map {target.shape} does not match scores {score_maps.spatial}")
    if target.min() < 0 or target.max() >= k1:
        raise ContractError(
            f"target label {int(target.max())} outside [0, {k1 - 1}]")

    stream_total = None
    for probs in score_maps.stream_probs:
        term = tape.neg(tape.mean(tape.log(tape.gather_channel(probs, target))))
        stream_total = term if stream_total is None else tape.add(stream_total, term)
    stream_mean = tape.const_mul(stream_total, 1.0 / score_maps.num_streams)
    fused_term = tape.neg(tape.mean(tape.log(
        tape.gather_channel(score_maps.fused, target))))
    return tape.add(stream_mean, fused_term)


def structure_loss(tape, trace, margin):
    """Hinge on merge scores: mean over steps of
    max(0, best incorrect q - correct q + margin).

    ``trace`` is a sequence of (correct_q, [incorrect_q, ...]) score tensors
    from a teacher-forced pass; steps without incorrect candidates contribute
    zero but still count in the mean.
    """
    if len(trace) == 0:
        raise ContractError("structure_loss: empty teacher trace")
    total = None
    for correct_q, incorrect_qs in trace:
        if len(incorrect_qs) == 0:
            continue
        best_bad = tape.maximum_of(incorrect_qs)
        gap = tape.const_add(tape.sub(best_bad, correct_q), margin)
        term = tape.relu(gap)
        total = term if total is None else tape.add(total, term)
    if total is None:
        return tape.leaf(np.asarray(0.0))
    return tape.const_mul(total, 1.0 / len(trace))


def relation_loss(tape, predictions):
    """Mean cross-entropy over supervised merges.

    ``predictions`` is a sequence of (relation distribution tensor,
    ground-truth relation id).
    """
    if len(predictions) == 0:
        raise ContractError("relation_loss: no supervised merges")
    total = None
    for y, gt in predictions:
        if not 0 <= int(gt) < y.data.size:
            raise ContractError(
                f"relation id {gt} outside vocabulary of {y.data.size}")
        term = tape.neg(tape.log(tape.index(y, int(gt))))
        total = term if total is None else tape.add(total, term)
    return tape.const_mul(total, 1.0 / len(predictions))


def regularizer(tape, nodes, lam):
    """lam/2 times the squared norm of weight matrices and kernels; biases
    and fusion logits are excluded."""
    if lam < 0:
        raise ContractError(f"regularizer: lambda must be >= 0, got {lam}")
    total = None
    for name, node in nodes.items():
        if not is_weight(name):
            continue
        term = tape.sum(tape.square(node))
        total = term if total is None else tape.add(total, term)
    if total is None or lam == 0.0:
        return tape.leaf(np.asarray(0.0))
    return tape.const_mul(total, lam / 2.0)
