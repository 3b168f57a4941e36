"""Evaluation: pixel/class/IoU segmentation scores and subtree-based tree
scores.

Tree scoring enumerates every subtree of the prediction.  A leaf is correct
when its category occurs among the ground-truth leaves; an internal node is
relation-correct when both children are and a ground-truth node spans the
same leaf-category multiset with the same relation.  Structural correctness
is the same recursion with relation labels ignored.  Relation accuracy is
the correct fraction over all prediction subtrees; mean relation accuracy
averages per-relation recall over ground-truth merge nodes, which keeps the
score honest under heavily imbalanced relation frequencies.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


# ---------------------------------------------------------------------------
# segmentation


def confusion_matrix(pred, gt, num_labels):
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction size {pred.shape} != gt {gt.shape}")
    cm = np.zeros((num_labels, num_labels), dtype=np.int64)
    np.add.at(cm, (gt, pred), 1)
    return cm


def metrics_from_confusion(cm):
    """(pixel_acc, mean_acc, per-class IoU, mean IoU) from a confusion matrix.

    Classes absent from both prediction and ground truth are excluded from
    the means; per-class accuracy only exists for classes present in the
    ground truth.
    """
    gt_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    tp = np.diag(cm)
    total = cm.sum()
    pixel_acc = tp.sum() / total if total else 0.0

    class_acc = {}
    for k in np.nonzero(gt_count)[0]:
        class_acc[int(k)] = tp[k] / gt_count[k]
    mean_acc = float(np.mean(list(class_acc.values()))) if class_acc else 0.0

    per_class_iou = {}
    for k in range(cm.shape[0]):
        union = gt_count[k] + pred_count[k] - tp[k]
        if union == 0:
            continue
        per_class_iou[int(k)] = float(tp[k] / union)
    mean_iou = float(np.mean(list(per_class_iou.values()))) if per_class_iou \
        else 0.0
    return float(pixel_acc), mean_acc, per_class_iou, mean_iou


def segmentation_metrics(pred, gt, num_labels=None):
    """Scores for one prediction/ground-truth label map pair."""
    if num_labels is None:
        num_labels = int(max(np.max(pred), np.max(gt))) + 1
    return metrics_from_confusion(confusion_matrix(pred, gt, num_labels))


class SegmentationAccumulator:
    """Dataset-level scores from one pooled confusion matrix."""

    def __init__(self, num_labels):
        self.cm = np.zeros((num_labels, num_labels), dtype=np.int64)

    def add(self, pred, gt):
        self.cm += confusion_matrix(pred, gt, self.cm.shape[0])

    def results(self):
        return metrics_from_confusion(self.cm)


# ---------------------------------------------------------------------------
# trees


@dataclass
class TreeScore:
    """Subtree correctness counts for one prediction/ground-truth pair."""

    nodes_total: int
    relation_correct: int
    structural_correct: int
    per_relation: dict            # relation id -> [correct, total] over gt merges

    @property
    def relation_fraction(self):
        return self.relation_correct / self.nodes_total

    @property
    def structural_fraction(self):
        return self.structural_correct / self.nodes_total


def _leaf_multiset(node):
    if node.is_leaf:
        return Counter({node.category: 1})
    return _leaf_multiset(node.left) + _leaf_multiset(node.right)


def tree_metrics(pred, gt):
    """Score a predicted semantic tree against the ground-truth tree."""
    gt_leaf_cats = set(gt.leaves())
    gt_spans = {}
    for node in gt.internal_postorder():
        key = frozenset(_leaf_multiset(node).items())
        gt_spans.setdefault(key, []).append(node.relation)

    per_relation = {}
    for rels in gt_spans.values():
        for rel in rels:
            per_relation.setdefault(rel, [0, 0])[1] += 1

    stats = {"total": 0, "rel_ok": 0, "struct_ok": 0}
    matched = {}   # (span key, relation) -> count of relation-ok pred nodes

    def walk(node):
        stats["total"] += 1
        if node.is_leaf:
            ok = node.category in gt_leaf_cats
            if ok:
                stats["rel_ok"] += 1
                stats["struct_ok"] += 1
            return Counter({node.category: 1}), ok, ok
        lms, lrel, lstruct = walk(node.left)
        rms, rrel, rstruct = walk(node.right)
        ms = lms + rms
        key = frozenset(ms.items())
        span_rels = gt_spans.get(key)
        struct_ok = lstruct and rstruct and span_rels is not None
        rel_ok = (lrel and rrel and span_rels is not None
                  and node.relation in span_rels)
        if struct_ok:
            stats["struct_ok"] += 1
        if rel_ok:
            stats["rel_ok"] += 1
            matched[(key, node.relation)] = matched.get((key, node.relation),
                                                        0) + 1
        return ms, rel_ok, struct_ok

    walk(pred.root)

    for key, rels in gt_spans.items():
        for rel in set(rels):
            hits = min(matched.get((key, rel), 0), rels.count(rel))
            per_relation[rel][0] += hits

    return TreeScore(stats["total"], stats["rel_ok"], stats["struct_ok"],
                     per_relation)


def mean_relation_accuracy(per_relation):
    """Mean of per-relation-category accuracies over categories with any
    ground-truth merges."""
    accs = [correct / total for correct, total in per_relation.values()
            if total > 0]
    if not accs:
        raise ContractError("no ground-truth relation instances")
    return float(np.mean(accs))


class TreeAccumulator:
    """Mean per-tree fractions plus pooled per-relation tallies."""

    def __init__(self):
        self.relation_fractions = []
        self.structural_fractions = []
        self.per_relation = {}

    def add(self, score):
        self.relation_fractions.append(score.relation_fraction)
        self.structural_fractions.append(score.structural_fraction)
        for rel, (correct, total) in score.per_relation.items():
            bucket = self.per_relation.setdefault(rel, [0, 0])
            bucket[0] += correct
            bucket[1] += total

    def results(self):
        structure_acc = float(np.mean(self.structural_fractions)) \
            if self.structural_fractions else 0.0
        relation_acc = float(np.mean(self.relation_fractions)) \
            if self.relation_fractions else 0.0
        per_rel_acc = {rel: c / t for rel, (c, t) in self.per_relation.items()
                       if t > 0}
        mean_rel = mean_relation_accuracy(self.per_relation) \
            if any(t for _c, t in self.per_relation.values()) else 0.0
        return structure_acc, relation_acc, mean_rel, per_rel_acc


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    pixel_acc: float
    mean_acc: float
    mean_iou: float
    per_class_iou: dict = field(default_factory=dict)
    structure_acc: float = 0.0
    relation_acc: float = 0.0
    mean_relation_acc: float = 0.0
    per_relation_acc: dict = field(default_factory=dict)

    def to_dict(self, category_names=None, relation_names=None):
        def named(d, names):
            if names is None:
                return {str(k): v for k, v in d.items()}
            return {names[k]: v for k, v in d.items()}

        return {
            "pixel_acc": self.pixel_acc,
            "mean_acc": self.mean_acc,
            "mean_iou": self.mean_iou,
            "per_class_iou": named(self.per_class_iou, category_names),
            "structure_acc": self.structure_acc,
            "relation_acc": self.relation_acc,
            "mean_relation_acc": self.mean_relation_acc,
            "per_relation_acc": named(self.per_relation_acc, relation_names),
        }

    def to_json(self, category_names=None, relation_names=None):
        return json.dumps(self.to_dict(category_names, relation_names),
                          indent=1)

    def to_csv(self, category_names=None, relation_names=None):
        rows = ["kind,name,value"]
        blob = self.to_dict(category_names, relation_names)
        for key in ("pixel_acc", "mean_acc", "mean_iou", "structure_acc",
                    "relation_acc", "mean_relation_acc"):
            rows.append(f"summary,{key},{blob[key]}")
        for name, value in blob["per_class_iou"].items():
            rows.append(f"class_iou,{name},{value}")
        for name, value in blob["per_relation_acc"].items():
            rows.append(f"relation_acc,{name},{value}")
        return "\n".join(rows) + "\n"
