"""Weakly-, semi-, and fully-supervised training.

The weak path treats the pixel label map as a latent variable: each epoch
re-estimates an intermediate label map per image by biasing the current
per-stream log-probabilities toward the categories named in the sentence
tree (absent categories are suppressed outright), then minimizes the full
objective with those maps fixed.  Merge supervision is teacher-forced: the
correct merge sequence comes from the semantic tree while every other active
pair is scored as a margin competitor.

Semi mode mixes strongly annotated samples (ground-truth maps, no map
estimation) with weak ones by alternating mini-batches, which realizes a
1:1 weighting of the two loss sources.  Full mode uses ground-truth maps for
every sample and skips map estimation entirely.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import scorer as scorer_mod
from .errors import (CheckpointError, ConfigError, ContractError,
                     NumericError, TrainingDiverged)
from .losses import (LossReport, regularizer, relation_loss,
                     semantic_label_loss, structure_loss)
from .metrics import (EvalReport, SegmentationAccumulator, TreeAccumulator,
                      tree_metrics)
from .params import ModelConfig, ModelParams, init_params, is_weight
from .rsnn import ParseNode, evaluate_pair, greedy_parse, transition
from .sentences import SemanticTree, SemNode, sentence_to_tree
from .tape import Tape, sgd_step

log = logging.getLogger("scenetree.training")

MODES = ("weak", "semi", "full")


@dataclass
class TrainConfig:
    mode: str = "weak"
    epochs: int = 25
    batch_size: int = 8
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    margin: float = 0.5
    pi: float = 1.0
    rho_fg: float = 0.20
    rho_bg: float = 0.40
    lambda_: float = 5e-4
    seed: int = 0
    strong_fraction: float = 0.5
    use_relation_loss: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("rho_fg", "rho_bg", "strong_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    @property
    def regularizer_active(self):
        # with optimizer weight decay on, the explicit norm penalty stays off
        # to avoid regularizing twice
        return self.weight_decay == 0.0


_CONFIG_KEYS = {("lambda" if f.name == "lambda_" else f.name): f.name
                for f in fields(TrainConfig)}


def parse_config(text):
    """Flat ``key = value`` config text; unknown keys are an error."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        field_name = _CONFIG_KEYS[key]
        kind = TrainConfig.__dataclass_fields__[field_name].type
        try:
            if kind == "bool":
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                parsed = value.lower() == "true"
            elif kind == "int":
                parsed = int(value)
            elif kind == "float":
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {value!r}") \
                from exc
        values[field_name] = parsed
    return TrainConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# Algorithm: intermediate label map estimation (E-step)


def estimate_intermediate_map(score_maps, entities, rho_fg, rho_bg):
    """Bias per-scale log-probabilities toward present categories and take
    the cross-scale argmax.

    For every scale (each stream plus the fused map) and every present
    category k, the bias is the rho_k-th smallest gap to the per-pixel
    running best, so roughly rho_k pixels become competitive for k; absent
    categories get -inf.  Background (0) is always treated as present.
    rho_k is round(rho_fg * M) for foreground and round(rho_bg * M) for
    background, clamped to at most M; a value below 1 leaves the scale
    unbiased for that category.
    """
    present = {0} | {int(e) for e in entities}
    fused = score_maps.fused.data if hasattr(score_maps.fused, "data") \
        else np.asarray(score_maps.fused)
    k1, h, w = fused.shape
    if any(not 0 <= e < k1 for e in present):
        raise ContractError(f"entity ids {sorted(present)} outside [0, {k1 - 1}]")
    m = h * w
    volumes = [p.data if hasattr(p, "data") else np.asarray(p)
               for p in score_maps.stream_probs] + [fused]
    present_idx = sorted(present)
    total = np.zeros((k1, h, w))
    with np.errstate(divide="ignore"):
        for vol in volumes:
            g = np.log(vol)
            g_max = g[present_idx].max(axis=0)
            biased = np.full_like(g, -np.inf)
            for k in range(k1):
                if k not in present:
                    continue
                rho = rho_bg if k == 0 else rho_fg
                rho_k = min(m, int(np.floor(rho * m + 0.5)))
                if rho_k < 1:
                    biased[k] = g[k]
                    continue
                delta = np.sort((g_max - g[k]).reshape(-1))
                with np.errstate(invalid="ignore"):
                    biased[k] = g[k] + delta[rho_k - 1]
                # zero-probability pixels stay unassignable even when the
                # bias itself is infinite (degenerate saturated scores)
                biased[k][np.isnan(biased[k])] = -np.inf
            total += biased
    return np.argmax(total, axis=0).astype(np.int64)


# ---------------------------------------------------------------------------
# teacher-forced merge sequences


@dataclass
class MergeStep:
    left: int
    right: int
    relation: int
    candidates: list            # unordered (i, j) pairs active at this step


@dataclass
class MergeSequence:
    leaf_categories: list       # node id -> category for ids < num_leaves
    steps: list


def extract_merge_sequence(tree, available):
    """Correct merge order (post-order over the tree) plus the full candidate
    set of active unordered pairs at every step."""
    leaves = tree.leaves()
    for cat in leaves:
        if cat not in available:
            raise ContractError(
                f"tree leaf category {cat} missing from available entities")
    node_ids = {}
    next_id = 0

    def assign_leaf_ids(node):
        nonlocal next_id
        if node.is_leaf:
            node_ids[id(node)] = next_id
            next_id += 1
        else:
            assign_leaf_ids(node.left)
            assign_leaf_ids(node.right)

    assign_leaf_ids(tree.root)
    active = set(range(next_id))
    steps = []
    for node in tree.internal_postorder():
        li = node_ids[id(node.left)]
        ri = node_ids[id(node.right)]
        ids = sorted(active)
        candidates = [(ids[a], ids[b]) for a in range(len(ids))
                      for b in range(a + 1, len(ids))]
        steps.append(MergeStep(li, ri, node.relation, candidates))
        active.discard(li)
        active.discard(ri)
        node_ids[id(node)] = next_id
        active.add(next_id)
        next_id += 1
    return MergeSequence(leaves, steps)


def _leaf_nodes_for_tree(tape, nodes, entities, tree, feats, pi):
    """ParseNodes for the tree's leaves, synthesizing a background region
    from the foreground complement if the map assigned it no pixels."""
    cats = set(tree.leaves())
    if 0 in cats and 0 not in entities.features:
        union = None
        for mask in entities.masks.values():
            union = mask.copy() if union is None else (union | mask)
        complement = ~union
        if complement.any() and feats is not None:
            entities.features[0] = tape.masked_lse(feats, complement, pi)
            entities.masks[0] = complement
        else:
            d_feat = nodes["rsnn.tran.weight"].shape[0]
            entities.features[0] = tape.leaf(np.zeros(d_feat))
            entities.masks[0] = np.ones_like(union)
        entities.counts[0] = int(entities.masks[0].sum())
    leaf_nodes = []
    for i, cat in enumerate(tree.leaves()):
        x = transition(tape, nodes, entities.features[cat])
        leaf_nodes.append(ParseNode(i, entities.masks[cat], x, category=cat))
    return leaf_nodes


def teacher_forced_pass(tape, nodes, entities, tree, feats, pi):
    """Score the ground-truth merge sequence against all competitors.

    Returns (structure trace, relation predictions): per step the correct
    pair's q in its ground-truth orientation plus both orientations of every
    other active pair, and the correct merge's relation distribution paired
    with the supervised relation id.
    """
    seq = extract_merge_sequence(tree, set(entities.features) | {0}
                                 if 0 in tree.leaf_set()
                                 else set(entities.features))
    leaf_nodes = _leaf_nodes_for_tree(tape, nodes, entities, tree, feats, pi)
    image_shape = leaf_nodes[0].mask.shape
    alive = {n.nid: n for n in leaf_nodes}
    next_id = len(leaf_nodes)
    trace = []
    relations = []
    for step in seq.steps:
        correct = evaluate_pair(tape, nodes, alive[step.left],
                                alive[step.right], image_shape)
        incorrect = []
        for i, j in step.candidates:
            if {i, j} == {step.left, step.right}:
                continue
            incorrect.append(evaluate_pair(tape, nodes, alive[i], alive[j],
                                           image_shape).q)
            incorrect.append(evaluate_pair(tape, nodes, alive[j], alive[i],
                                           image_shape).q)
        trace.append((correct.q, incorrect))
        relations.append((correct.y, step.relation))
        merged = ParseNode(next_id, alive[step.left].mask | alive[step.right].mask,
                           correct.x, left=step.left, right=step.right,
                           relation=step.relation)
        del alive[step.left], alive[step.right]
        alive[next_id] = merged
        next_id += 1
    return trace, relations


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_MAGIC = b"CRSN"
CHECKPOINT_VERSION = 1


def save_checkpoint(params, path):
    """Binary checkpoint; written to a temp file and atomically renamed."""
    entries = dict(params.tensors)
    entries["hyper.pi"] = np.asarray(float(params.pi))
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(entries))
    for name in sorted(entries):
        arr = np.array(entries[name], dtype=np.float64, order="C")
        encoded = name.encode("utf-8")
        buf += struct.pack("<I", len(encoded))
        buf += encoded
        buf += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    view = memoryview(raw)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank \
            else ()
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * size, f"tensor {name}"),
                             dtype="<f8").reshape(dims).copy()
        entries[name] = data
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    pi = float(entries.pop("hyper.pi", 1.0))
    return ModelParams(entries, pi=pi)


# ---------------------------------------------------------------------------
# training loop


def _weak_tree(sample, dataset):
    return sentence_to_tree(sample.parse, dataset.synonyms, dataset.vocab,
                            dataset.categories)


def _image_losses(tape, nodes, sample, target, tree, config):
    maps, feats = scorer_mod.forward(tape, nodes, sample.image)
    j_c = semantic_label_loss(tape, maps, target)
    entities = scorer_mod.pool_entity_features(tape, feats, target, config.pi)
    trace, relations = teacher_forced_pass(tape, nodes, entities, tree, feats,
                                           config.pi)
    j_s = structure_loss(tape, trace, config.margin)
    if config.use_relation_loss and relations:
        j_r = relation_loss(tape, relations)
    else:
        j_r = tape.leaf(np.asarray(0.0))
    return j_c, j_s, j_r


def _mean(tape, terms):
    total = terms[0]
    for t in terms[1:]:
        total = tape.add(total, t)
    return tape.const_mul(total, 1.0 / len(terms))


def train(dataset, config, checkpoint_path=None, log_path=None,
          val_dataset=None, val_log_path=None, map_threads=1):
    """EM training; returns (ModelParams, list of per-iteration records).

    Weak samples never touch ground-truth label maps: their supervision is
    the sentence-derived tree plus the estimated intermediate maps.  On a
    non-finite loss the last completed epoch's parameters are saved (when a
    checkpoint path is given) and TrainingDiverged is raised.  ``map_threads``
    parallelizes the per-epoch map estimation over images (read-only
    parameters, per-image results, so the outcome is thread-count
    independent); the gradient step itself stays sequential.
    """
    samples = list(dataset)
    if not samples:
        raise ContractError("empty dataset")
    model_cfg = ModelConfig(num_classes=dataset.num_classes,
                            num_relations=len(dataset.relations),
                            pi=config.pi)
    params = init_params(model_cfg, seed=config.seed)
    velocity = {}
    rng = np.random.default_rng(np.random.PCG64(config.seed))

    if config.mode == "weak":
        strong = np.zeros(len(samples), dtype=bool)
    elif config.mode == "full":
        strong = np.ones(len(samples), dtype=bool)
    else:
        if len(samples) < 2:
            raise ContractError("semi mode needs at least 2 samples")
        n_strong = int(round(config.strong_fraction * len(samples)))
        n_strong = min(max(n_strong, 1), len(samples) - 1)
        strong = np.zeros(len(samples), dtype=bool)
        strong[rng.permutation(len(samples))[:n_strong]] = True

    trees = [sample.tree if strong[i] else _weak_tree(sample, dataset)
             for i, sample in enumerate(samples)]

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    val_fh = open(val_log_path, "w", encoding="utf-8") if val_log_path else None
    records = []
    last_good = params.copy()
    iteration = 0

    def abort(reason):
        if checkpoint_path:
            save_checkpoint(last_good, checkpoint_path)
        raise TrainingDiverged(
            f"{reason}; last good checkpoint "
            f"{'saved to ' + str(checkpoint_path) if checkpoint_path else 'kept in memory'}",
            checkpoint_path)

    try:
        for epoch in range(config.epochs):
            # E-step: re-estimate intermediate maps for weak samples with the
            # parameters as of the epoch start.  A degenerate state (blown-up
            # scores collapsing the map until a tree entity loses all its
            # pixels) is a divergence symptom just like a non-finite loss.
            try:
                targets = _estimate_targets(samples, trees, strong, params,
                                            config, map_threads)
            except NumericError as exc:
                abort(f"numeric failure in epoch {epoch} map estimation: {exc}")

            batches = _plan_batches(strong, config, rng)
            for batch in batches:
                tape = Tape()
                nodes = params.bind(tape)
                j_cs, j_ss, j_rs = [], [], []
                try:
                    for i in batch:
                        j_c, j_s, j_r = _image_losses(
                            tape, nodes, samples[i], targets[i], trees[i],
                            config)
                        j_cs.append(j_c)
                        j_ss.append(j_s)
                        j_rs.append(j_r)
                    j_c_m, j_s_m, j_r_m = (_mean(tape, j_cs), _mean(tape, j_ss),
                                           _mean(tape, j_rs))
                    reg = regularizer(
                        tape, nodes,
                        config.lambda_ if config.regularizer_active else 0.0)
                    total = tape.add(tape.add(tape.add(j_c_m, j_s_m), j_r_m),
                                     reg)
                    if not np.isfinite(total.data):
                        abort(f"non-finite loss at iteration {iteration}")
                    grads_by_node = tape.backward(total)
                except NumericError as exc:
                    abort(f"numeric failure at iteration {iteration}: {exc}")
                except ContractError as exc:
                    abort(f"degenerate state at iteration {iteration}: {exc}")
                grads = {}
                for name, node in nodes.items():
                    g = grads_by_node[node.nid]
                    grads[name] = g if g is not None \
                        else np.zeros_like(params.tensors[name])
                new_tensors = sgd_step(params.tensors, grads, velocity,
                                       lr=config.lr, momentum=config.momentum,
                                       weight_decay=config.weight_decay,
                                       decay_filter=is_weight)
                params = ModelParams(new_tensors, pi=params.pi)
                report = LossReport(float(j_c_m.data), float(j_s_m.data),
                                    float(j_r_m.data), float(reg.data))
                record = report.to_record(iteration, epoch)
                records.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                iteration += 1
            last_good = params.copy()
            if checkpoint_path:
                save_checkpoint(params, checkpoint_path)
            if val_dataset is not None:
                val_report = evaluate_model(params, val_dataset)
                if val_fh:
                    blob = val_report.to_dict(dataset.categories,
                                              dataset.relations)
                    blob["epoch"] = epoch
                    val_fh.write(json.dumps(blob) + "\n")
    finally:
        if log_fh:
            log_fh.close()
        if val_fh:
            val_fh.close()
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path)
    return params, records


def _estimate_targets(samples, trees, strong, params, config, map_threads):
    """Per-image target maps: ground truth for strong samples, estimated
    intermediate maps for weak ones."""
    def one(i):
        if strong[i]:
            return samples[i].label_map
        maps, _feats = scorer_mod.score_image(params, samples[i].image)
        return estimate_intermediate_map(maps, trees[i].leaf_set(),
                                         config.rho_fg, config.rho_bg)

    if map_threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=map_threads) as pool:
            results = list(pool.map(one, range(len(samples))))
        return dict(enumerate(results))
    return {i: one(i) for i in range(len(samples))}


def _plan_batches(strong, config, rng):
    """Shuffled index batches; semi mode alternates strong/weak batches."""
    def chunks(indices):
        return [indices[i:i + config.batch_size]
                for i in range(0, len(indices), config.batch_size)]

    if config.mode in ("weak", "full"):
        order = rng.permutation(len(strong)).tolist()
        return chunks(order)
    strong_ids = [int(i) for i in rng.permutation(np.nonzero(strong)[0])]
    weak_ids = [int(i) for i in rng.permutation(np.nonzero(~strong)[0])]
    strong_batches = chunks(strong_ids)
    weak_batches = chunks(weak_ids)
    out = []
    for s, w in zip(strong_batches, weak_batches):
        out.extend([s, w])
    longer = strong_batches if len(strong_batches) > len(weak_batches) \
        else weak_batches
    out.extend(longer[min(len(strong_batches), len(weak_batches)):])
    return out


# ---------------------------------------------------------------------------
# inference + evaluation


def parse_image(params, image):
    """Label an image and greedily parse its regions into a scene tree."""
    tape = Tape()
    nodes = params.bind(tape)
    maps, feats = scorer_mod.forward(tape, nodes, image)
    label_map = scorer_mod.predict_labels(maps)
    entities = scorer_mod.pool_entity_features(tape, feats, label_map,
                                               params.pi)
    tree = greedy_parse(tape, nodes, entities, params.pi, feats)
    return label_map, tree


def parse_tree_to_semantic(tree):
    """Drop scores/features, keeping categories and relations."""
    def convert(nid):
        node = tree.nodes[nid]
        if node.is_leaf:
            return SemNode(category=node.category)
        return SemNode(relation=node.relation, left=convert(node.left),
                       right=convert(node.right))

    return SemanticTree(convert(tree.root))


def evaluate_model(params, dataset):
    """Segmentation and tree metrics of a model over a dataset."""
    seg = SegmentationAccumulator(len(dataset.categories))
    trees = TreeAccumulator()
    for sample in dataset:
        label_map, ptree = parse_image(params, sample.image)
        seg.add(label_map, sample.label_map)
        trees.add(tree_metrics(parse_tree_to_semantic(ptree), sample.tree))
    pixel_acc, mean_acc, per_iou, mean_iou = seg.results()
    structure_acc, relation_acc, mean_rel, per_rel = trees.results()
    return EvalReport(pixel_acc=pixel_acc, mean_acc=mean_acc,
                      mean_iou=mean_iou, per_class_iou=per_iou,
                      structure_acc=structure_acc, relation_acc=relation_acc,
                      mean_relation_acc=mean_rel, per_relation_acc=per_rel)
