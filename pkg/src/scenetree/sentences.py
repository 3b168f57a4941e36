"""From descriptive sentences to regularized semantic trees.

Input sentences arrive as POS-tagged bracketed constituency parses (one per
line, prefixed with an image id and a tab).  The pipeline keeps nouns as
entity candidates and verbs/prepositions as relation candidates, maps nouns
onto defined categories through a configurable synonym map, extracts
(entity, relation-phrase, entity) triplets by nearest-entity pairing, and
assembles a binary semantic tree whose leaves are category ids and whose
internal nodes are relation ids.  Every tree ends with a background leaf
attached under the catch-all relation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import BracketParseError, ContractError, TreeConversionError

NOUN_TAGS = frozenset({"NN", "NNS", "NNP", "NNPS"})
RELATION_TAGS = frozenset({"VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "IN", "TO"})

DEFAULT_LEMMAS = {
    "is": "be", "are": "be", "was": "be", "were": "be", "been": "be",
    "being": "be", "am": "be",
    "riding": "ride", "sitting": "sit", "standing": "stand", "lying": "lie",
    "hiding": "hide", "flying": "fly", "walking": "walk", "playing": "play",
    "holding": "hold", "parked": "park",
}


def lemmatize(word, exceptions=None):
    """Lowercase, apply the exceptions table, then strip a plural/3rd-person
    trailing 's' (but not 'ss')."""
    w = word.lower()
    table = DEFAULT_LEMMAS if exceptions is None else {**DEFAULT_LEMMAS,
                                                       **exceptions}
    if w in table:
        return table[w]
    if w.endswith("s") and not w.endswith("ss") and len(w) > 2:
        return w[:-1]
    return w


# ---------------------------------------------------------------------------
# constituency trees


@dataclass
class PhraseNode:
    label: str
    children: list


@dataclass
class WordNode:
    pos: str
    word: str


def read_bracketed(text):
    """Parse one Penn-style bracketed tree; errors carry the byte offset."""
    tokens = _tokenize(text)
    if not tokens:
        raise BracketParseError("empty input", 0)
    tree, index = _parse_node(tokens, 0)
    if index != len(tokens):
        raise BracketParseError("trailing content after tree", tokens[index][1])
    return tree


def _tokenize(text):
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append((ch, i))
            i += 1
        else:
            start = i
            while i < len(text) and not text[i].isspace() and text[i] not in "()":
                i += 1
            tokens.append((text[start:i], start))
    return tokens


def _parse_node(tokens, index):
    tok, off = tokens[index]
    if tok != "(":
        raise BracketParseError("expected '('", off)
    index += 1
    if index >= len(tokens):
        raise BracketParseError("unterminated node", off)
    label, label_off = tokens[index]
    if label in "()":
        raise BracketParseError("expected node label", label_off)
    index += 1
    if index >= len(tokens):
        raise BracketParseError("unterminated node", label_off)
    tok, off = tokens[index]
    if tok == "(":
        children = []
        while tokens[index][0] == "(":
            child, index = _parse_node(tokens, index)
            children.append(child)
            if index >= len(tokens):
                raise BracketParseError("missing ')'", tokens[-1][1])
        tok, off = tokens[index]
        if tok != ")":
            raise BracketParseError("expected ')'", off)
        return PhraseNode(label, children), index + 1
    if tok == ")":
        raise BracketParseError("node has no word or children", off)
    word = tok
    index += 1
    if index >= len(tokens) or tokens[index][0] != ")":
        raise BracketParseError("expected ')' after word",
                                tokens[min(index, len(tokens) - 1)][1])
    return WordNode(label, word), index + 1


def print_bracketed(tree):
    """Canonical single-space bracketed form; inverse of read_bracketed."""
    if isinstance(tree, WordNode):
        return f"({tree.pos} {tree.word})"
    inner = " ".join(print_bracketed(c) for c in tree.children)
    return f"({tree.label} {inner})"


def filter_pos(tree):
    """Keep only noun leaves and verb/preposition leaves; collapse unary
    chains and prune emptied subtrees.  Returns None if nothing survives."""
    if isinstance(tree, WordNode):
        keep = tree.pos in NOUN_TAGS or tree.pos in RELATION_TAGS
        return WordNode(tree.pos, tree.word) if keep else None
    kept = [sub for sub in (filter_pos(c) for c in tree.children)
            if sub is not None]
    if not kept:
        return None
    if len(kept) == 1:
        return kept[0]
    return PhraseNode(tree.label, kept)


# ---------------------------------------------------------------------------
# canonical trees (entity / relation-word leaves)


@dataclass
class EntityLeaf:
    category: int


@dataclass
class RelationLeaf:
    word: str
    lemma: str


class SynonymMap:
    """word -> category id over a fixed category palette."""

    def __init__(self, word_to_category, categories):
        self.categories = list(categories)
        index = {name: i for i, name in enumerate(self.categories)}
        self.mapping = {}
        for word, cat in word_to_category.items():
            if cat not in index:
                raise ContractError(f"synonym target {cat!r} is not a category")
            self.mapping[word.lower()] = index[cat]

    @classmethod
    def load(cls, path, categories):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), categories)

    def category_id(self, word):
        return self.mapping.get(word.lower())


def canonicalize_entities(tree, synonyms, lemma_exceptions=None):
    """Map noun leaves to category ids (dropping unmapped nouns) and keep
    relation words as lemmatized leaves.  Returns None when nothing maps."""
    if tree is None:
        return None
    if isinstance(tree, WordNode):
        if tree.pos in NOUN_TAGS:
            cat = synonyms.category_id(tree.word)
            return EntityLeaf(cat) if cat is not None else None
        return RelationLeaf(tree.word, lemmatize(tree.word, lemma_exceptions))
    kept = [sub for sub in (canonicalize_entities(c, synonyms, lemma_exceptions)
                            for c in tree.children) if sub is not None]
    if not kept:
        return None
    if len(kept) == 1:
        return kept[0]
    return PhraseNode(tree.label, kept)


def canonical_leaves(tree):
    if tree is None:
        return []
    if isinstance(tree, (EntityLeaf, RelationLeaf)):
        return [tree]
    out = []
    for child in tree.children:
        out.extend(canonical_leaves(child))
    return out


# ---------------------------------------------------------------------------
# relation vocabulary


class RelationVocab:
    """Ordered relation names (catch-all "others" last) plus the triplet
    pattern table (entity class, lemma phrase, entity class) -> relation."""

    OTHERS = "others"

    def __init__(self, relations, patterns=(), lemma_exceptions=None):
        relations = list(relations)
        if relations.count(self.OTHERS) != 1 or relations[-1] != self.OTHERS:
            raise ContractError(
                'relation vocabulary must contain "others" exactly once, last')
        self.relations = relations
        self.index = {name: i for i, name in enumerate(relations)}
        self.lemma_exceptions = dict(lemma_exceptions or {})
        self.patterns = {}
        for c1, phrase, c2, rel in patterns:
            if rel not in self.index:
                raise ContractError(f"pattern maps to unknown relation {rel!r}")
            self.patterns[(c1, phrase, c2)] = self.index[rel]

    @classmethod
    def from_dict(cls, blob):
        return cls(blob["relations"], blob.get("patterns", ()),
                   blob.get("lemmas"))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {"relations": self.relations,
                "patterns": [[c1, ph, c2, self.relations[rid]]
                             for (c1, ph, c2), rid in self.patterns.items()],
                "lemmas": self.lemma_exceptions}

    @property
    def others_id(self):
        return self.index[self.OTHERS]

    def match(self, left_class, phrase, right_class):
        """Most-specific pattern first; unmatched phrases map to "others"."""
        candidates = [(left_class, phrase, right_class),
                      (left_class, phrase, "*"),
                      ("*", phrase, right_class),
                      ("*", phrase, "*")]
        for key in candidates:
            if key[0] is not None and key[2] is not None and key in self.patterns:
                return self.patterns[key]
        return self.others_id


# ---------------------------------------------------------------------------
# semantic trees


@dataclass(frozen=True)
class SemNode:
    category: int = None
    relation: int = None
    left: "SemNode" = None
    right: "SemNode" = None

    @property
    def is_leaf(self):
        return self.category is not None


@dataclass
class SemanticTree:
    root: SemNode

    def leaves(self):
        out = []

        def walk(node):
            if node.is_leaf:
                out.append(node.category)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def leaf_set(self):
        return set(self.leaves())

    def internal_postorder(self):
        out = []

        def walk(node):
            if node.is_leaf:
                return
            walk(node.left)
            walk(node.right)
            out.append(node)

        walk(self.root)
        return out

    def relations(self):
        return [n.relation for n in self.internal_postorder()]

    def num_leaves(self):
        return len(self.leaves())

    def to_dict(self, category_names, relation_names):
        def render(node):
            if node.is_leaf:
                return {"category": category_names[node.category]}
            return {"relation": relation_names[node.relation],
                    "children": [render(node.left), render(node.right)]}

        return render(self.root)

    @classmethod
    def from_dict(cls, blob, category_names, relation_names):
        cat_index = {n: i for i, n in enumerate(category_names)}
        rel_index = {n: i for i, n in enumerate(relation_names)}

        def build(b):
            if "category" in b:
                return SemNode(category=cat_index[b["category"]])
            left, right = b["children"]
            return SemNode(relation=rel_index[b["relation"]],
                           left=build(left), right=build(right))

        return cls(build(blob))


@dataclass
class _Span:
    node: SemNode
    category: int        # leaf category, None once merged
    lo: int
    hi: int


def build_semantic_tree(canonical_tree, vocab, categories,
                        background_id=0):
    """Assemble the semantic tree from a canonicalized sentence tree.

    Relation-word runs pair the nearest entity on their left with the nearest
    on their right (merged regions count as entities at their span).  Runs
    lacking a side are discarded.  Leftover entities join left-branching with
    "others", and a background leaf is attached last, also with "others".
    """
    leaves = canonical_leaves(canonical_tree)
    spans = [_Span(SemNode(category=leaf.category), leaf.category, i, i)
             for i, leaf in enumerate(leaves) if isinstance(leaf, EntityLeaf)]
    if not spans:
        raise TreeConversionError("no defined entities in sentence tree")

    runs = []
    i = 0
    while i < len(leaves):
        if isinstance(leaves[i], RelationLeaf):
            j = i
            while j < len(leaves) and isinstance(leaves[j], RelationLeaf):
                j += 1
            runs.append((i, j - 1, [leaves[k].lemma for k in range(i, j)]))
            i = j
        else:
            i += 1

    active = list(spans)
    for start, end, lemmas in runs:
        lefts = [s for s in active if s.hi < start]
        rights = [s for s in active if s.lo > end]
        if not lefts or not rights:
            continue
        left = max(lefts, key=lambda s: s.hi)
        right = min(rights, key=lambda s: s.lo)
        phrase_lemmas = list(lemmas)
        while len(phrase_lemmas) > 1 and phrase_lemmas[0] == "be":
            phrase_lemmas = phrase_lemmas[1:]
        phrase = " ".join(phrase_lemmas)
        left_cls = categories[left.category] if left.category is not None else None
        right_cls = categories[right.category] if right.category is not None \
            else None
        rel = vocab.match(left_cls, phrase, right_cls)
        merged = SemNode(relation=rel, left=left.node, right=right.node)
        active.remove(left)
        active.remove(right)
        active.append(_Span(merged, None, min(left.lo, right.lo),
                            max(left.hi, right.hi)))
        active.sort(key=lambda s: s.lo)

    active.sort(key=lambda s: s.lo)
    node = active[0].node
    for span in active[1:]:
        node = SemNode(relation=vocab.others_id, left=node, right=span.node)
    if background_id not in {leaf.category for leaf in leaves
                             if isinstance(leaf, EntityLeaf)}:
        node = SemNode(relation=vocab.others_id, left=node,
                       right=SemNode(category=background_id))
    return SemanticTree(node)


def sentence_to_tree(parse_text, synonyms, vocab, categories):
    """Full pipeline: bracketed parse -> filtered -> canonical -> semantic."""
    tree = read_bracketed(parse_text)
    filtered = filter_pos(tree)
    canonical = canonicalize_entities(filtered, synonyms, vocab.lemma_exceptions)
    return build_semantic_tree(canonical, vocab, categories)


def read_parse_file(path):
    """Yield (image id, bracketed parse) from a TSV of id[, sentence], parse."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ContractError(
                    f"{path}:{line_no}: expected 'id<TAB>[sentence<TAB>]parse'")
            yield parts[0], parts[-1]
