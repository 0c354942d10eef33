# test_fixtures.py
"""
Toy corpus generator, alternate annotation and fixture export
"""
import pytest

from sdparser.core import is_projective, validate_tree
from sdparser.corpus_io import read_conll_file, read_sd_graph
from sdparser.errors import ConfigError
from sdparser.fixtures import (
    ToyGrammar,
    alternate_annotation,
    export_fixtures,
    generate_corpus,
    transform_fixture_set,
)

from tests.conftest import make_sentence


def test_generation_is_deterministic():
    assert generate_corpus(count=20, seed=4) == generate_corpus(count=20, seed=4)
    assert generate_corpus(count=20, seed=4) != generate_corpus(count=20, seed=5)
    assert generate_corpus(ToyGrammar(seed=9), count=5) == generate_corpus(count=5, seed=9)


def test_generated_trees_are_valid_and_projective():
    for sentence in generate_corpus(count=100, seed=1):
        assert validate_tree(sentence.gold_tree, len(sentence)).valid
        assert is_projective(sentence.gold_tree)
        assert sentence.gold_tree.labels.count("root") == 1


def test_grammar_probabilities_shape_the_corpus():
    bare = ToyGrammar(p_determiner=0.0, p_adjective=0.0, p_object=0.0, p_prep=0.0, p_coord=0.0, p_punct=0.0)
    for sentence in generate_corpus(bare, count=10):
        assert sentence.gold_tree.labels == ("nsubj", "root")
    coordinated = ToyGrammar(p_coord=1.0)
    assert all("cc" in s.gold_tree.labels for s in generate_corpus(coordinated, count=10))


def test_generator_errors():
    with pytest.raises(ConfigError):
        generate_corpus(count=0)
    with pytest.raises(ConfigError):
        generate_corpus(ToyGrammar(vocabulary={"NN": ("dog",)}), count=1)


def test_alternate_annotation_heads_coordination_on_the_conjunction():
    sentence = make_sentence("dogs ran and barked .", "NNS VBD CC VBD .", (2, 0, 2, 2, 2),
                             "nsubj root cc conj punct")
    tree = alternate_annotation(sentence)
    assert tree.heads == (2, 3, 0, 3, 3)
    assert tree.labels == ("SBJ", "CONJ", "ROOT", "CONJ", "P")


def test_alternate_annotation_is_valid_on_the_toy_corpus():
    for sentence in generate_corpus(count=60, seed=8):
        tree = alternate_annotation(sentence)
        assert validate_tree(tree, len(sentence)).valid
        assert is_projective(tree)
        assert not set(tree.labels) & {"nsubj", "dobj", "cc", "conj"}


def test_alternate_annotation_needs_a_tree():
    with pytest.raises(ConfigError):
        alternate_annotation(make_sentence("dogs bark", "NNS VBP"))


def test_export_fixtures(tmp_path):
    written = export_fixtures(tmp_path / "goldens")
    fixtures = transform_fixture_set()
    assert len(written) == 2 * len(fixtures) == 42
    for fixture, conll, sd in zip(fixtures, written[::2], written[1::2]):
        assert conll.name == f"{fixture.name}.conll"
        (sentence,) = read_conll_file(conll)
        assert sentence.gold_tree == fixture.sentence.gold_tree
        assert read_sd_graph(sd.read_text(encoding="utf-8")) == fixture.expected
