"""Deterministic synthetic scene dataset.

Each sample composites one or two textured parametric shapes onto a
background, derives the ground-truth label map from the painter's order,
derives the ground-truth semantic tree from the placement geometry, and
realizes a descriptive sentence (with its gold bracketed parse) from a fixed
template grammar.  All placement geometry is integer-only so samples are
bit-identical across platforms; every item is generated from its own
splitmix-derived seed.

On-disk layout: ``img_<id>.ppm`` (binary P6), ``lab_<id>.pgm`` (binary P5,
pixel value = category id), ``tree_<id>.json``, one ``sentences.tsv`` of
(id, sentence, parse) rows, ``synonyms.json``, ``relations.json``, and a
``manifest.json`` with the spec, its hash, and the sample ids.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DatasetError
from .sentences import RelationVocab, SemanticTree, SemNode, SynonymMap

log = logging.getLogger("scenetree.datagen")

PALETTE = [
    ("person", (205, 65, 60), ["person", "man", "woman", "boy", "girl"]),
    ("vehicle", (60, 85, 205), ["vehicle", "car", "bus", "truck", "van"]),
    ("animal", (205, 175, 60), ["animal", "cat", "dog", "horse", "sheep"]),
    ("furniture", (150, 65, 170), ["furniture", "chair", "table", "sofa",
                                   "bench"]),
    ("plant", (60, 175, 75), ["plant", "tree", "bush", "flower", "shrub"]),
]
BACKGROUND_COLOR = (112, 116, 112)

DEFAULT_RELATIONS = ["beside", "on", "in front of", "behind", "others"]
DEFAULT_PATTERNS = [
    ["*", "beside", "*", "beside"],
    ["*", "stand beside", "*", "beside"],
    ["*", "on", "*", "on"],
    ["*", "sit on", "*", "on"],
    ["*", "lie on", "*", "on"],
    ["*", "before", "*", "in front of"],
    ["*", "stand before", "*", "in front of"],
    ["*", "behind", "*", "behind"],
    ["*", "hide behind", "*", "behind"],
]

# (verb, preposition) realizations per relation; all survive POS filtering
PAIR_TEMPLATES = {
    "beside": [("is", "beside"), ("stands", "beside")],
    "on": [("is", "on"), ("sits", "on"), ("lies", "on")],
    "in front of": [("is", "before"), ("stands", "before")],
    "behind": [("is", "behind"), ("hides", "behind")],
    "others": [("is", "near"), ("stands", "near")],
}
SINGLE_TEMPLATES = [("stands", "on", "grass"), ("is", "on", "road"),
                    ("sits", "on", "floor"), ("stands", "on", "ground")]
ADJECTIVES = ["small", "big", "dark", "pale"]

_MASK64 = (1 << 64) - 1


def splitmix64(seed, index):
    """Per-item seed derivation; one splitmix64 round over seed + index."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class SceneSpec:
    """Generator configuration; hashed into the manifest."""

    size: int = 64
    num_classes: int = 5
    seed: int = 0
    two_object_fraction: float = 0.75
    relation_weights: dict = None

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(PALETTE):
            raise ContractError(
                f"num_classes must be in [2, {len(PALETTE)}], got {self.num_classes}")
        if self.size < 32:
            raise ContractError(f"image size must be >= 32, got {self.size}")
        if self.relation_weights is None:
            pair_rels = [r for r in DEFAULT_RELATIONS]
            self.relation_weights = {r: 1.0 / len(pair_rels) for r in pair_rels}

    @property
    def categories(self):
        return ["background"] + [PALETTE[i][0] for i in range(self.num_classes)]

    @property
    def relations(self):
        return list(DEFAULT_RELATIONS)

    def synonym_table(self):
        table = {}
        for name, _color, words in PALETTE[:self.num_classes]:
            for w in words:
                table[w] = name
        return table

    def vocab(self):
        return RelationVocab(self.relations, DEFAULT_PATTERNS)

    def to_dict(self):
        return {"size": self.size, "num_classes": self.num_classes,
                "seed": self.seed,
                "two_object_fraction": self.two_object_fraction,
                "relation_weights": self.relation_weights}

    @classmethod
    def from_dict(cls, blob):
        return cls(size=blob["size"], num_classes=blob["num_classes"],
                   seed=blob["seed"],
                   two_object_fraction=blob["two_object_fraction"],
                   relation_weights=blob["relation_weights"])

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# PPM / PGM io


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def write_pgm(path, values):
    values = np.asarray(values, dtype=np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(values.tobytes())


def _read_netpbm(path, magic):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != magic:
        raise DatasetError(f"{path}: expected {magic.decode()} file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DatasetError(f"{path}: only maxval 255 supported")
    return raw[pos:], w, h


def read_ppm(path):
    body, w, h = _read_netpbm(path, b"P6")
    if len(body) < 3 * w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:3 * w * h], dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path):
    body, w, h = _read_netpbm(path, b"P5")
    if len(body) < w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# shapes (integer-only raster masks inside a bounding box)


def _ellipse(mask, cy, cx, ry, rx):
    h, w = mask.shape
    ry, rx = max(ry, 1), max(rx, 1)
    ys = np.arange(h).reshape(-1, 1)
    xs = np.arange(w).reshape(1, -1)
    mask |= ((ys - cy) ** 2 * rx * rx + (xs - cx) ** 2 * ry * ry
             <= ry * ry * rx * rx)


def _rect(mask, y0, y1, x0, x1):
    h, w = mask.shape
    mask[max(y0, 0):min(y1, h), max(x0, 0):min(x1, w)] = True


def shape_mask(family, h, w):
    """Bounding-box mask for one shape family."""
    m = np.zeros((h, w), dtype=bool)
    if family == "person":
        _ellipse(m, h // 6, w // 2, h // 6, w // 4)          # head
        _ellipse(m, (2 * h) // 3, w // 2, h // 3, w // 3)    # torso
    elif family == "vehicle":
        _rect(m, h // 4, (3 * h) // 4, 0, w)                 # body
        _rect(m, 0, h // 4, w // 4, (3 * w) // 4)            # cabin
        _ellipse(m, (7 * h) // 8, w // 4, h // 8, w // 8)    # wheels
        _ellipse(m, (7 * h) // 8, (3 * w) // 4, h // 8, w // 8)
    elif family == "animal":
        _ellipse(m, (3 * h) // 5, (2 * w) // 5, h // 3, (2 * w) // 5)  # body
        _ellipse(m, h // 4, (4 * w) // 5, h // 5, w // 6)    # head
        _rect(m, (3 * h) // 5, h, w // 6, w // 3)            # legs
        _rect(m, (3 * h) // 5, h, (3 * w) // 5, (3 * w) // 4)
    elif family == "furniture":
        _rect(m, 0, h // 3, 0, w)                            # top
        _rect(m, h // 3, h, w // 8, w // 4)                  # legs
        _rect(m, h // 3, h, (3 * w) // 4, (7 * w) // 8)
    elif family == "plant":
        _ellipse(m, h // 3, w // 2, h // 3, w // 3)          # crown
        _rect(m, (2 * h) // 3, h, (2 * w) // 5, (3 * w) // 5)  # trunk
    else:
        raise ContractError(f"unknown shape family {family!r}")
    return m


def _box_size(family, size, rng):
    base = (5 * size) // 16 + int(rng.integers(-size // 16, size // 16 + 1))
    base = max(base, 10)
    if family == "person":
        return base, max((base * 2) // 4, 6)
    if family == "vehicle":
        return max((base * 3) // 5, 6), base
    if family == "animal":
        return max((base * 2) // 3, 6), base
    if family == "furniture":
        return max((base * 3) // 4, 6), base
    return base, max((base * 3) // 4, 6)  # plant


def relation_from_geometry(box_a, box_b, a_on_top):
    """Relation implied by two bounding boxes and the painter's order.

    Boxes are (y0, y1, x0, x1) with exclusive upper bounds.  Overlap means a
    depth relation; vertical adjacency with shared x-extent means "on";
    horizontal adjacency with shared y-extent means "beside"; anything else
    is "others".
    """
    ay0, ay1, ax0, ax1 = box_a
    by0, by1, bx0, bx1 = box_b
    x_overlap = min(ax1, bx1) - max(ax0, bx0)
    y_overlap = min(ay1, by1) - max(ay0, by0)
    if x_overlap > 0 and y_overlap > 0:
        return "in front of" if a_on_top else "behind"
    if x_overlap > 0 and 0 <= by0 - ay1 <= 2:
        return "on"
    if y_overlap > 0 and 0 <= max(ax0, bx0) - min(ax1, bx1) <= 3:
        return "beside"
    return "others"


def _place_pair(relation, dims_a, dims_b, size, rng):
    """Integer bounding boxes realizing one target relation, or None."""
    ha, wa = dims_a
    hb, wb = dims_b

    def rint(lo, hi):
        if hi < lo:
            return None
        return int(rng.integers(lo, hi + 1))

    if relation == "beside":
        baseline = rint((3 * size) // 5, size - 2)
        if baseline is None or baseline - max(ha, hb) < 1:
            return None
        gap = rint(1, 3)
        a_left = bool(rng.integers(0, 2))
        wl = wa if a_left else wb
        x0l = rint(1, size - (wa + wb + gap) - 1)
        if x0l is None:
            return None
        box_l = (baseline - (ha if a_left else hb), baseline, x0l, x0l + wl)
        x0r = x0l + wl + gap
        box_r = (baseline - (hb if a_left else ha), baseline, x0r,
                 x0r + (wb if a_left else wa))
        box_a, box_b = (box_l, box_r) if a_left else (box_r, box_l)
        return box_a, box_b, True
    if relation == "on":
        if ha + hb + 2 >= size:
            return None
        by0 = rint(ha + 1, size - hb - 1)
        if by0 is None:
            return None
        bx0 = rint(1, size - wb - 1)
        if bx0 is None:
            return None
        lo = bx0 - wa // 3
        hi = bx0 + wb - (2 * wa) // 3
        ax0 = rint(max(lo, 1), min(hi, size - wa - 1))
        if ax0 is None:
            return None
        box_a = (by0 - ha, by0, ax0, ax0 + wa)
        box_b = (by0, by0 + hb, bx0, bx0 + wb)
        if min(box_a[3], box_b[3]) - max(box_a[2], box_b[2]) < 1:
            return None
        return box_a, box_b, True
    if relation in ("in front of", "behind"):
        by0 = rint(1, size - hb - 1)
        bx0 = rint(1, size - wb - 1)
        if by0 is None or bx0 is None:
            return None
        dy = rint(hb // 4, hb // 2)
        dx = rint(wb // 3, (2 * wb) // 3) * (1 if rng.integers(0, 2) else -1)
        ay0 = by0 + dy
        ax0 = bx0 + dx
        box_a = (ay0, ay0 + ha, ax0, ax0 + wa)
        if not (0 < box_a[0] and box_a[1] < size and 0 < box_a[2]
                and box_a[3] < size):
            return None
        box_b = (by0, by0 + hb, bx0, bx0 + wb)
        x_overlap = min(box_a[3], box_b[3]) - max(box_a[2], box_b[2])
        y_overlap = min(box_a[1], box_b[1]) - max(box_a[0], box_b[0])
        if x_overlap < 2 or y_overlap < 2:
            return None
        return box_a, box_b, relation == "in front of"
    # others: far apart
    ay0 = rint(1, size - ha - 1)
    ax0 = rint(1, size - wa - 1)
    by0 = rint(1, size - hb - 1)
    bx0 = rint(1, size - wb - 1)
    if None in (ay0, ax0, by0, bx0):
        return None
    box_a = (ay0, ay0 + ha, ax0, ax0 + wa)
    box_b = (by0, by0 + hb, bx0, bx0 + wb)
    if relation_from_geometry(box_a, box_b, True) != "others":
        return None
    gap_x = max(box_a[2], box_b[2]) - min(box_a[3], box_b[3])
    gap_y = max(box_a[0], box_b[0]) - min(box_a[1], box_b[1])
    if max(gap_x, gap_y) < size // 8:
        return None
    return box_a, box_b, True


def _render(size, placed, rng):
    """Painter's order: background gradient, then shapes bottom-to-top."""
    label = np.zeros((size, size), dtype=np.uint8)
    image = np.zeros((size, size, 3), dtype=np.int32)
    jitter = [int(rng.integers(-12, 13)) for _ in range(3)]
    rows = np.arange(size).reshape(-1, 1)
    for c in range(3):
        image[:, :, c] = BACKGROUND_COLOR[c] + jitter[c] + rows * 8 // size - 4
    for cat, family, box, mask in placed:
        color = PALETTE[cat - 1][1]
        shade = [int(rng.integers(-25, 26)) for _ in range(3)]
        y0, y1, x0, x1 = box
        ys, xs = np.nonzero(mask)
        gy, gx = ys + y0, xs + x0
        texture = ((gy // 3 + gx // 3) % 3 == 0)
        for c in range(3):
            base = min(max(color[c] + shade[c], 0), 255)
            vals = np.full(gy.size, base, dtype=np.int32)
            vals[texture] = (vals[texture] * 3) // 4
            image[gy, gx, c] = vals
        label[gy, gx] = cat
    return np.clip(image, 0, 255).astype(np.uint8), label


def _noun_for(cat_name, rng):
    words = next(words for name, _c, words in PALETTE if name == cat_name)
    return words[int(rng.integers(0, len(words)))]


def _np_phrase(noun, rng):
    adj = None
    if rng.integers(0, 100) < 30:
        adj = ADJECTIVES[int(rng.integers(0, len(ADJECTIVES)))]
    first = adj if adj is not None else noun
    det = "an" if first[0] in "aeiou" else "a"
    if adj is not None:
        return f"{det} {adj} {noun}", f"(DT {det}) (JJ {adj}) (NN {noun})"
    return f"{det} {noun}", f"(DT {det}) (NN {noun})"


def _sentence_pair(cat_a, cat_b, relation, rng):
    verb, prep = PAIR_TEMPLATES[relation][
        int(rng.integers(0, len(PAIR_TEMPLATES[relation])))]
    noun_a = _noun_for(cat_a, rng)
    noun_b = _noun_for(cat_b, rng)
    text_a, parse_a = _np_phrase(noun_a, rng)
    text_b, parse_b = _np_phrase(noun_b, rng)
    sentence = f"{text_a} {verb} {prep} {text_b}"
    parse = (f"(S (NP {parse_a}) (VP (VBZ {verb}) (PP (IN {prep})"
             f" (NP {parse_b}))))")
    return sentence, parse


def _sentence_single(cat_a, rng):
    verb, prep, scenery = SINGLE_TEMPLATES[
        int(rng.integers(0, len(SINGLE_TEMPLATES)))]
    noun_a = _noun_for(cat_a, rng)
    text_a, parse_a = _np_phrase(noun_a, rng)
    sentence = f"{text_a} {verb} {prep} the {scenery}"
    parse = (f"(S (NP {parse_a}) (VP (VBZ {verb}) (PP (IN {prep})"
             f" (NP (DT the) (NN {scenery})))))")
    return sentence, parse


def build_sample(spec, index):
    """One deterministic sample, or None if placement keeps failing."""
    rng = np.random.default_rng(np.random.PCG64(splitmix64(spec.seed, index)))
    relations = spec.relations
    rel_names = [r for r in relations]
    weights = np.array([spec.relation_weights[r] for r in rel_names])
    weights = weights / weights.sum()
    vocab = spec.vocab()
    others = vocab.others_id

    # the target relation and categories are drawn once so that placement
    # rejections cannot bias the emitted relation histogram
    two = rng.random() < spec.two_object_fraction
    cats = 1 + rng.permutation(spec.num_classes)[:2 if two else 1]
    if not two:
        family = PALETTE[cats[0] - 1][0]
        for _attempt in range(100):
            h, w = _box_size(family, spec.size, rng)
            y0 = int(rng.integers(1, spec.size - h - 1))
            x0 = int(rng.integers(1, spec.size - w - 1))
            mask = shape_mask(family, h, w)
            image, label = _render(spec.size, [(cats[0], family,
                                                (y0, y0 + h, x0, x0 + w), mask)],
                                   rng)
            if (label == cats[0]).sum() < 12 or (label == 0).sum() < 12:
                continue
            tree = SemanticTree(SemNode(relation=others,
                                        left=SemNode(category=int(cats[0])),
                                        right=SemNode(category=0)))
            sentence, parse = _sentence_single(family, rng)
            return image, label, tree, sentence, parse
        return None

    relation = rel_names[int(rng.choice(len(rel_names), p=weights))]
    fam_a = PALETTE[cats[0] - 1][0]
    fam_b = PALETTE[cats[1] - 1][0]
    for _attempt in range(100):
        dims_a = _box_size(fam_a, spec.size, rng)
        dims_b = _box_size(fam_b, spec.size, rng)
        placed = _place_pair(relation, dims_a, dims_b, spec.size, rng)
        if placed is None:
            continue
        box_a, box_b, a_on_top = placed
        if relation_from_geometry(box_a, box_b, a_on_top) != relation:
            continue
        mask_a = shape_mask(fam_a, *dims_a)
        mask_b = shape_mask(fam_b, *dims_b)
        order = [(int(cats[1]), fam_b, box_b, mask_b),
                 (int(cats[0]), fam_a, box_a, mask_a)]
        if not a_on_top:
            order.reverse()
        image, label = _render(spec.size, order, rng)
        counts = [(label == c).sum() for c in (cats[0], cats[1], 0)]
        if min(counts) < 12:
            continue
        rel_id = vocab.index[relation]
        pair = SemNode(relation=rel_id, left=SemNode(category=int(cats[0])),
                       right=SemNode(category=int(cats[1])))
        tree = SemanticTree(SemNode(relation=others, left=pair,
                                    right=SemNode(category=0)))
        sentence, parse = _sentence_pair(fam_a, fam_b, relation, rng)
        return image, label, tree, sentence, parse
    return None


def generate(spec, n, out_dir):
    """Write an n-sample dataset; returns (ids, relation histogram)."""
    if n < 1:
        raise ContractError(f"sample count must be >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    histogram = {r: 0 for r in spec.relations}
    sentence_rows = []
    for index in range(n):
        built = build_sample(spec, index)
        if built is None:
            log.warning("skipping unplaceable sample %d after 100 attempts",
                        index)
            continue
        image, label, tree, sentence, parse = built
        sid = f"{index:05d}"
        ids.append(sid)
        write_ppm(out / f"img_{sid}.ppm", image)
        write_pgm(out / f"lab_{sid}.pgm", label)
        blob = tree.to_dict(spec.categories, spec.relations)
        (out / f"tree_{sid}.json").write_text(json.dumps(blob), encoding="utf-8")
        sentence_rows.append(f"{sid}\t{sentence}\t{parse}")
        for node in tree.internal_postorder():
            histogram[spec.relations[node.relation]] += 1
    (out / "sentences.tsv").write_text("\n".join(sentence_rows) + "\n",
                                       encoding="utf-8")
    (out / "synonyms.json").write_text(json.dumps(spec.synonym_table(),
                                                  indent=1), encoding="utf-8")
    (out / "relations.json").write_text(json.dumps(spec.vocab().to_dict(),
                                                   indent=1), encoding="utf-8")
    manifest = {"format": 1, "spec": spec.to_dict(), "spec_hash": spec.digest(),
                "categories": spec.categories, "relations": spec.relations,
                "ids": ids}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1),
                                       encoding="utf-8")
    return ids, histogram


# ---------------------------------------------------------------------------
# loading


@dataclass
class SceneSample:
    """Lazy view of one stored sample; artifacts validate when read."""

    sample_id: str
    root: Path
    num_classes: int
    categories: list
    relations: list
    sentence: str = None
    parse: str = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def image_u8(self):
        if "image" not in self._cache:
            self._cache["image"] = read_ppm(self.root / f"img_{self.sample_id}.ppm")
        return self._cache["image"]

    @property
    def image(self):
        return self.image_u8.astype(np.float64) / 255.0

    @property
    def label_map(self):
        if "label" not in self._cache:
            path = self.root / f"lab_{self.sample_id}.pgm"
            label = read_pgm(path).astype(np.int64)
            if label.max() > self.num_classes:
                raise DatasetError(
                    f"{path}: label value {int(label.max())} exceeds"
                    f" category count {self.num_classes}")
            self._cache["label"] = label
        return self._cache["label"]

    @property
    def tree(self):
        if "tree" not in self._cache:
            path = self.root / f"tree_{self.sample_id}.json"
            try:
                blob = json.loads(path.read_text(encoding="utf-8"))
            except OSError as exc:
                raise DatasetError(f"cannot read {path}: {exc}") from exc
            self._cache["tree"] = SemanticTree.from_dict(
                blob, self.categories, self.relations)
        return self._cache["tree"]

    def check_consistency(self):
        """Label-map categories must equal the tree's leaf set."""
        present = set(int(v) for v in np.unique(self.label_map))
        if present != self.tree.leaf_set():
            raise DatasetError(
                f"sample {self.sample_id}: label map categories {present}"
                f" != tree leaves {self.tree.leaf_set()}")


class Dataset:
    """Ordered collection of SceneSamples plus the palette and vocab."""

    def __init__(self, root, manifest, synonyms, vocab):
        self.root = Path(root)
        self.manifest = manifest
        self.categories = manifest["categories"]
        self.relations = manifest["relations"]
        self.synonyms = synonyms
        self.vocab = vocab
        sentences = {}
        parses = {}
        tsv = self.root / "sentences.tsv"
        if tsv.exists():
            for line in tsv.read_text(encoding="utf-8").splitlines():
                if not line:
                    continue
                parts = line.split("\t")
                sentences[parts[0]] = parts[1] if len(parts) > 2 else ""
                parses[parts[0]] = parts[-1]
        self.samples = [
            SceneSample(sid, self.root, len(self.categories) - 1,
                        self.categories, self.relations,
                        sentence=sentences.get(sid), parse=parses.get(sid))
            for sid in manifest["ids"]
        ]

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def num_classes(self):
        return len(self.categories) - 1


def load(path):
    """Open a generated dataset directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != 1:
        raise DatasetError(f"{manifest_path}: unsupported format"
                           f" {manifest.get('format')!r}")
    synonyms = SynonymMap.load(root / "synonyms.json", manifest["categories"])
    vocab = RelationVocab.load(root / "relations.json")
    return Dataset(root, manifest, synonyms, vocab)
