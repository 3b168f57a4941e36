"""Recursive region-merging network.

Region features are mapped into a shared transition space; pairs of active
nodes are scored for merging through combiner -> interpreter -> scorer, and
the interpreter also feeds a relation classifier.  Greedy parsing repeatedly
merges the highest-scoring pair until a single root region remains.  Pairs
are direction-sensitive (relations like "ride" are not symmetric), so
inference evaluates both orientations of every pair and keeps the better one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def context_features(mask_a, mask_b, image_shape=None):
    """Spatial context of two regions as [b_ang, b_dis, b_scal], each in [-1, 1].

    b_ang is the cosine of the angle between the centroid-a -> centroid-b
    vector and the horizontal axis (0 when the centroids coincide), b_dis
    rescales the centroid distance by the image diagonal into [-1, 1], and
    b_scal is the bounded area ratio (area_a - area_b) / (area_a + area_b).
    Swapping the regions negates b_ang and b_scal and preserves b_dis.
    """
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    if not mask_a.any() or not mask_b.any():
        raise ContractError("context_features: empty region mask")
    if image_shape is None:
        image_shape = mask_a.shape
    h, w = image_shape

    ra, ca = np.nonzero(mask_a)
    rb, cb = np.nonzero(mask_b)
    center_a = (ra.mean(), ca.mean())
    center_b = (rb.mean(), cb.mean())
    dx = center_b[1] - center_a[1]
    dy = center_b[0] - center_a[0]
    gamma = float(np.hypot(dx, dy))
    b_ang = 0.0 if gamma == 0.0 else dx / gamma
    b_dis = 2.0 * gamma / float(np.hypot(h, w)) - 1.0
    area_a, area_b = ra.size, rb.size
    b_scal = (area_a - area_b) / (area_a + area_b)
    return np.array([b_ang, b_dis, b_scal])


def transition(tape, nodes, v):
    """Map a pooled region feature into the transition space."""
    return tape.tanh(tape.affine(v, nodes["rsnn.tran.weight"],
                                 nodes["rsnn.tran.bias"]))


def combine(tape, nodes, x_left, x_right):
    """Parent feature from two child features; output keeps the child
    dimensionality so merging can recurse."""
    joint = tape.concat([x_left, x_right])
    return tape.tanh(tape.affine(joint, nodes["rsnn.com.weight"],
                                 nodes["rsnn.com.bias"]))


def interpret(tape, nodes, x_merged, context):
    """Relation feature from the merged representation and spatial context."""
    joint = tape.concat([x_merged, tape.leaf(context)])
    return tape.tanh(tape.affine(joint, nodes["rsnn.int.weight"],
                                 nodes["rsnn.int.bias"]))


def categorize(tape, nodes, g):
    """Relation probability distribution for a merge."""
    return tape.softmax(tape.affine(g, nodes["rsnn.cat.weight"],
                                    nodes["rsnn.cat.bias"]), axis=0)


def merge_score(tape, nodes, g):
    """Merging confidence: raw logit h and q = sigmoid(h)."""
    h = tape.index(tape.affine(g, nodes["rsnn.score.weight"],
                               nodes["rsnn.score.bias"]), 0)
    return h, tape.sigmoid(h)


@dataclass
class ParseNode:
    nid: int
    mask: np.ndarray
    x: object                     # Tensor in transition space
    category: int = None          # leaves only
    left: int = None              # internal only
    right: int = None
    relation: int = None
    y: np.ndarray = None          # relation distribution
    q: float = None
    context: np.ndarray = None

    @property
    def is_leaf(self):
        return self.category is not None


@dataclass
class ParseTree:
    root: int
    nodes: dict
    merges: list = field(default_factory=list)   # (left, right, q, relation)

    @property
    def num_leaves(self):
        return sum(1 for n in self.nodes.values() if n.is_leaf)


@dataclass
class PairEval:
    """One ordered-pair evaluation through the merge subnetworks."""

    context: np.ndarray
    x: object
    g: object
    y: object
    h: object
    q: object

    @property
    def q_value(self):
        return float(self.q.data)


def evaluate_pair(tape, nodes, left, right, image_shape):
    """Run the combiner/interpreter/categorizer/scorer on an ordered pair."""
    ctx = context_features(left.mask, right.mask, image_shape)
    x = combine(tape, nodes, left.x, right.x)
    g = interpret(tape, nodes, x, ctx)
    y = categorize(tape, nodes, g)
    h, q = merge_score(tape, nodes, g)
    return PairEval(ctx, x, g, y, h, q)


def build_leaves(tape, nodes, entities, pi, feats=None):
    """Parse leaves from pooled entities, ordered by category id.

    With exactly one foreground entity and no background region, a synthetic
    background leaf is added (pooled over the complement when it is nonempty,
    zero features and the full-image mask otherwise) so a root merge exists.
    """
    if len(entities) == 0:
        raise ContractError("greedy_parse: no entities")
    leaves = []
    for nid, cat in enumerate(entities.categories):
        x = transition(tape, nodes, entities.features[cat])
        leaves.append(ParseNode(nid, entities.masks[cat], x, category=cat))
    if len(leaves) == 1 and leaves[0].category != 0:
        complement = ~leaves[0].mask
        if complement.any() and feats is not None:
            vec = tape.masked_lse(feats, complement, pi)
            mask = complement
        else:
            d_feat = nodes["rsnn.tran.weight"].shape[0]
            vec = tape.leaf(np.zeros(d_feat))
            mask = np.ones_like(leaves[0].mask) if not complement.any() \
                else complement
        x = transition(tape, nodes, vec)
        leaves.append(ParseNode(1, mask, x, category=0))
        leaves.sort(key=lambda n: n.category)
        for nid, leaf in enumerate(leaves):
            leaf.nid = nid
    return leaves


def greedy_parse(tape, nodes, entities, pi, feats=None):
    """Greedily merge entity regions into a full scene tree.

    Every step evaluates all unordered active pairs in both orientations,
    keeps the orientation with higher q per pair, then merges the globally
    best pair.  Ties break toward the lowest (left id, right id).  The merge
    relation is the argmax of the pair's relation distribution.
    """
    leaves = build_leaves(tape, nodes, entities, pi, feats)
    image_shape = leaves[0].mask.shape
    all_nodes = {leaf.nid: leaf for leaf in leaves}
    active = dict(all_nodes)
    merges = []
    next_id = len(leaves)

    while len(active) > 1:
        best = None   # (q, (left, right), eval)
        ids = sorted(active)
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                i, j = ids[ai], ids[bi]
                fwd = evaluate_pair(tape, nodes, active[i], active[j], image_shape)
                rev = evaluate_pair(tape, nodes, active[j], active[i], image_shape)
                if rev.q_value > fwd.q_value:
                    oriented, pair = rev, (j, i)
                else:
                    oriented, pair = fwd, (i, j)
                key = (-oriented.q_value, pair)
                if best is None or key < best[0]:
                    best = (key, pair, oriented)
        _, (li, ri), ev = best
        relation = int(np.argmax(ev.y.data))
        node = ParseNode(next_id, active[li].mask | active[ri].mask, ev.x,
                         left=li, right=ri, relation=relation,
                         y=ev.y.data.copy(), q=ev.q_value, context=ev.context)
        all_nodes[next_id] = node
        merges.append((li, ri, ev.q_value, relation))
        del active[li], active[ri]
        active[next_id] = node
        next_id += 1

    return ParseTree(root=next_id - 1 if merges else leaves[0].nid,
                     nodes=all_nodes, merges=merges)


def tree_to_json(tree, category_names, relation_names):
    """Nested dict per node: {category} leaves, {relation, q, children} merges."""
    def render(nid):
        node = tree.nodes[nid]
        if node.is_leaf:
            return {"category": category_names[node.category]}
        return {
            "relation": relation_names[node.relation],
            "q": node.q,
            "children": [render(node.left), render(node.right)],
        }

    return render(tree.root)


def tree_to_dot(tree, category_names, relation_names):
    """Graphviz DOT text for a parse tree."""
    lines = ["digraph parse_tree {", "  node [shape=box];"]
    for nid in sorted(tree.nodes):
        node = tree.nodes[nid]
        if node.is_leaf:
            label = category_names[node.category]
            lines.append(f'  n{nid} [label="{label}"];')
        else:
            label = f"{relation_names[node.relation]}\\nq={node.q:.3f}"
            lines.append(f'  n{nid} [label="{label}" shape=ellipse];')
            lines.append(f"  n{nid} -> n{node.left};")
            lines.append(f"  n{nid} -> n{node.right};")
    lines.append("}")
    return "\n".join(lines) + "\n"
