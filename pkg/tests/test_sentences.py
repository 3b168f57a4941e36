import pytest

from scenetree.errors import (BracketParseError, ContractError,
                              TreeConversionError)
from scenetree.sentences import (EntityLeaf, PhraseNode, RelationLeaf,
                                 RelationVocab, SemanticTree, SemNode,
                                 SynonymMap, WordNode, build_semantic_tree,
                                 canonical_leaves, canonicalize_entities,
                                 filter_pos, lemmatize, print_bracketed,
                                 read_bracketed, read_parse_file,
                                 sentence_to_tree)

CATEGORIES = ["background", "person", "motorcycle", "cat", "sheep", "sofa",
              "aeroplane"]
SYNONYMS = {
    "man": "person", "woman": "person", "person": "person",
    "motorcycle": "motorcycle", "motorbike": "motorcycle",
    "cat": "cat", "kitten": "cat",
    "sheep": "sheep", "sofa": "sofa", "aeroplane": "aeroplane",
    "plane": "aeroplane",
}
RELATIONS = ["beside", "lie", "hold", "ride", "behind", "sit on",
             "in front of", "on", "others"]
PATTERNS = [
    ["*", "beside", "*", "beside"],
    ["*", "lie on", "*", "lie"],
    ["*", "hold", "*", "hold"],
    ["person", "ride", "*", "ride"],
    ["*", "behind", "*", "behind"],
    ["*", "sit on", "*", "sit on"],
    ["*", "before", "*", "in front of"],
    ["*", "on", "*", "on"],
]


@pytest.fixture
def vocab():
    return RelationVocab(RELATIONS, PATTERNS)


@pytest.fixture
def synonyms():
    return SynonymMap(SYNONYMS, CATEGORIES)


class TestReadBracketed:
    def test_single_leaf(self):
        tree = read_bracketed("(NN dog)")
        assert isinstance(tree, WordNode)
        assert tree.pos == "NN" and tree.word == "dog"

    def test_hand_drawn_structure(self):
        tree = read_bracketed("(S (NP (DT a) (NN man)) (VP (VBZ rides)))")
        assert isinstance(tree, PhraseNode) and tree.label == "S"
        np_, vp = tree.children
        assert np_.label == "NP" and len(np_.children) == 2
        assert vp.children[0].word == "rides"
        words = []

        def collect(node):
            if isinstance(node, WordNode):
                words.append(node.word)
            else:
                for c in node.children:
                    collect(c)

        collect(tree)
        assert words == ["a", "man", "rides"]

    def test_double_paren_error_offset(self):
        with pytest.raises(BracketParseError) as exc:
            read_bracketed("((")
        assert exc.value.offset == 1

    @pytest.mark.parametrize("text", ["", "(NN dog", "(NN dog) extra",
                                      "(NN dog))", "()", "(S)"])
    def test_malformed_inputs(self, text):
        with pytest.raises(BracketParseError):
            read_bracketed(text)

    def test_round_trip_canonical_form(self):
        text = "(S (NP (DT a) (JJ red) (NN car)) (VP (VBZ is) (PP (IN beside) (NP (DT a) (NN tree)))))"
        tree = read_bracketed(text)
        printed = print_bracketed(tree)
        assert printed == text
        assert print_bracketed(read_bracketed(printed)) == printed


class TestFilterPos:
    def test_collapses_to_single_noun(self):
        tree = read_bracketed("(NP (DT a) (JJ red) (NN car))")
        out = filter_pos(tree)
        assert isinstance(out, WordNode) and out.word == "car"

    def test_all_adjectives_becomes_empty(self):
        tree = read_bracketed("(ADJP (JJ red) (JJ tall))")
        assert filter_pos(tree) is None

    def test_keeps_nouns_verbs_prepositions(self):
        # mirrors the riding-example conversion: only nouns and verb/prep
        # leaves survive, in sentence order
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ is) (VP (VBG riding)"
                " (NP (DT a) (NN motorcycle)))))")
        out = filter_pos(read_bracketed(text))
        leaves = []

        def collect(node):
            if isinstance(node, WordNode):
                leaves.append((node.pos, node.word))
            else:
                for c in node.children:
                    collect(c)

        collect(out)
        assert leaves == [("NN", "man"), ("VBZ", "is"), ("VBG", "riding"),
                          ("NN", "motorcycle")]


class TestLemmatize:
    @pytest.mark.parametrize("word,lemma", [
        ("rides", "ride"), ("riding", "ride"), ("sitting", "sit"),
        ("is", "be"), ("stands", "stand"), ("grass", "grass"),
        ("Lies", "lie"), ("on", "on"),
    ])
    def test_table_and_suffix(self, word, lemma):
        assert lemmatize(word) == lemma


class TestCanonicalize:
    def test_synonym_mapping(self, synonyms):
        out = canonicalize_entities(read_bracketed("(NN kitten)"), synonyms)
        assert isinstance(out, EntityLeaf)
        assert CATEGORIES[out.category] == "cat"

    def test_undefined_entities_dropped(self, synonyms):
        # "a sheep stands on the grass": grass is not a defined category
        text = ("(S (NP (DT a) (NN sheep)) (VP (VBZ stands) (PP (IN on)"
                " (NP (DT the) (NN grass)))))")
        out = canonicalize_entities(filter_pos(read_bracketed(text)), synonyms)
        leaves = canonical_leaves(out)
        cats = [l.category for l in leaves if isinstance(l, EntityLeaf)]
        words = [l.word for l in leaves if isinstance(l, RelationLeaf)]
        assert cats == [CATEGORIES.index("sheep")]
        assert words == ["stands", "on"]

    def test_all_nouns_unmapped_flags_empty(self, synonyms):
        out = canonicalize_entities(read_bracketed("(NP (NN grass) (NN sky))"),
                                    synonyms)
        assert out is None


def leaf(cat_name):
    return SemNode(category=CATEGORIES.index(cat_name))


def internal(rel_name, left, right):
    return SemNode(relation=RELATIONS.index(rel_name), left=left, right=right)


class TestBuildSemanticTree:
    def test_single_entity_attaches_background(self, synonyms, vocab):
        tree = sentence_to_tree("(NP (DT an) (NN aeroplane))", synonyms, vocab,
                                CATEGORIES)
        expected = SemanticTree(internal("others", leaf("aeroplane"),
                                         leaf("background")))
        assert tree == expected

    def test_riding_example(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ is) (VP (VBG riding)"
                " (NP (DT a) (NN motorcycle)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        expected = SemanticTree(internal(
            "others", internal("ride", leaf("person"), leaf("motorcycle")),
            leaf("background")))
        assert tree == expected

    def test_three_entities_one_verb(self, synonyms, vocab):
        # the verb's pair merges first, the third entity joins with
        # "others", then the background
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ rides) (NP (DT a)"
                " (NN motorcycle)) (PP (NP (DT a) (NN cat)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        expected = SemanticTree(internal(
            "others",
            internal("others",
                     internal("ride", leaf("person"), leaf("motorcycle")),
                     leaf("cat")),
            leaf("background")))
        assert tree == expected

    def test_multiword_relation(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN cat)) (VP (VBZ sits) (PP (IN on)"
                " (NP (DT a) (NN sofa)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        expected = SemanticTree(internal(
            "others", internal("sit on", leaf("cat"), leaf("sofa")),
            leaf("background")))
        assert tree == expected

    def test_copula_dropped_before_lookup(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN cat)) (VP (VBZ is) (PP (IN on)"
                " (NP (DT a) (NN sofa)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        assert tree.relations()[0] == RELATIONS.index("on")

    def test_unknown_phrase_defaults_to_others(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN cat)) (VP (VBZ is) (PP (IN near)"
                " (NP (DT a) (NN sofa)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        assert tree.relations()[0] == vocab.others_id

    def test_pattern_class_specificity(self, vocab):
        assert vocab.match("person", "ride", "motorcycle") == \
            RELATIONS.index("ride")
        assert vocab.match("cat", "ride", "sofa") == vocab.others_id

    def test_dangling_relation_words_discarded(self, synonyms, vocab):
        # sheep-on-grass: grass is dropped, leaving "stands on" with no right
        # entity; the tree falls back to sheep + background
        text = ("(S (NP (DT a) (NN sheep)) (VP (VBZ stands) (PP (IN on)"
                " (NP (DT the) (NN grass)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        expected = SemanticTree(internal("others", leaf("sheep"),
                                         leaf("background")))
        assert tree == expected

    def test_zero_entities_is_conversion_error(self, synonyms, vocab):
        with pytest.raises(TreeConversionError):
            sentence_to_tree("(NP (NN grass))", synonyms, vocab, CATEGORIES)

    def test_internal_node_count_and_leafset(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ is) (VP (VBG riding)"
                " (NP (DT a) (NN motorcycle)))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        assert len(tree.internal_postorder()) == tree.num_leaves() - 1
        assert tree.leaf_set() == {0, CATEGORIES.index("person"),
                                   CATEGORIES.index("motorcycle")}

    def test_pipeline_deterministic(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ is) (PP (IN beside)"
                " (NP (DT a) (NN cat)))))")
        a = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        b = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        assert a == b


class TestVocabAndSerialization:
    def test_others_must_be_last_and_unique(self):
        with pytest.raises(ContractError):
            RelationVocab(["others", "on"])
        with pytest.raises(ContractError):
            RelationVocab(["on", "others", "others"])
        with pytest.raises(ContractError):
            RelationVocab(["on", "beside"])

    def test_vocab_round_trip(self, vocab):
        again = RelationVocab.from_dict(vocab.to_dict())
        assert again.relations == vocab.relations
        assert again.patterns == vocab.patterns

    def test_tree_json_round_trip(self, synonyms, vocab):
        text = ("(S (NP (DT a) (NN man)) (VP (VBZ is) (VBG riding)"
                " (NP (DT a) (NN motorcycle))))")
        tree = sentence_to_tree(text, synonyms, vocab, CATEGORIES)
        blob = tree.to_dict(CATEGORIES, RELATIONS)
        again = SemanticTree.from_dict(blob, CATEGORIES, RELATIONS)
        assert again == tree

    def test_read_parse_file_formats(self, tmp_path):
        path = tmp_path / "sentences.tsv"
        path.write_text("img0\t(NN cat)\nimg1\ta cat\t(NN cat)\n",
                        encoding="utf-8")
        rows = list(read_parse_file(path))
        assert rows == [("img0", "(NN cat)"), ("img1", "(NN cat)")]
        bad = tmp_path / "bad.tsv"
        bad.write_text("no-tabs-here\n", encoding="utf-8")
        with pytest.raises(ContractError):
            list(read_parse_file(bad))
