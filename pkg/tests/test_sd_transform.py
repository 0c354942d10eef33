# test_sd_transform.py
"""
Basic to CCprocessed rewriting: hand-built goldens, fixpoint behaviour and traces
"""
import pytest
from pydantic import ValidationError

from sdparser.core import DependencyArc, DependencyGraph, DependencyTree, tree_to_graph
from sdparser.errors import TreeError
from sdparser.fixtures import alternate_annotation, generate_corpus, transform_fixture_set
from sdparser.sd_transform import (
    TransformConfig,
    TransformRule,
    TransformTrace,
    apply_rule1,
    apply_rule2,
    basic_to_ccprocessed,
    collapse_conj,
    collapse_preps,
    propagate_conjuncts,
    replay_trace,
    transform_corpus,
)

from tests.conftest import make_sentence

FIXTURES = transform_fixture_set()


def arc(t, p, c):
    return DependencyArc(dep_type=t, parent=p, child=c)


def stages(sentence, config):
    """Enabled stages in pipeline order, each as a graph -> graph function"""
    enabled = []
    if config.collapse_preps:
        enabled.append(lambda g: collapse_preps(g, sentence))
    if config.collapse_conj:
        enabled.append(lambda g: collapse_conj(g, sentence))
    if config.propagate:
        enabled.append(lambda g: propagate_conjuncts(g, sentence))
    if config.rule1:
        enabled.append(lambda g: apply_rule1(g, sentence, config.rule1_mode))
    if config.rule2:
        enabled.append(lambda g: apply_rule2(g, sentence))
    return enabled


def assert_stages_idempotent(tree, sentence, config):
    graph = tree_to_graph(tree)
    for stage in stages(sentence, config):
        graph = stage(graph)
        assert stage(graph) == graph
    return graph


# ============================================================================
# Goldens
# ============================================================================

@pytest.mark.parametrize("fixture", FIXTURES, ids=lambda f: f.name)
def test_fixture_output(fixture):
    graph, trace = basic_to_ccprocessed(fixture.sentence.gold_tree, fixture.sentence, fixture.config)
    assert graph == fixture.expected
    assert set(fixture.fires) <= trace.rules_fired()
    if not fixture.fires:
        assert graph == tree_to_graph(fixture.sentence.gold_tree)


@pytest.mark.parametrize("fixture", FIXTURES, ids=lambda f: f.name)
def test_every_stage_is_idempotent(fixture):
    graph = assert_stages_idempotent(fixture.sentence.gold_tree, fixture.sentence, fixture.config)
    assert graph == fixture.expected


@pytest.mark.parametrize("fixture", FIXTURES, ids=lambda f: f.name)
def test_trace_replays_to_output(fixture):
    graph, trace = basic_to_ccprocessed(fixture.sentence.gold_tree, fixture.sentence, fixture.config)
    assert replay_trace(tree_to_graph(fixture.sentence.gold_tree), trace) == graph


def test_fixture_names_are_unique():
    names = [f.name for f in FIXTURES]
    assert len(names) == len(set(names))


def test_every_rule_fires_somewhere():
    fired = set()
    for fixture in FIXTURES:
        _, trace = basic_to_ccprocessed(fixture.sentence.gold_tree, fixture.sentence, fixture.config)
        fired |= trace.rules_fired()
    assert fired == {
        "collapse_preps", "collapse_conj", "propagate_dependent", "propagate_governor",
        "rule1", "rule1_literal", "rule2",
    }


def test_worked_example_trace(fork_sentence):
    _, trace = basic_to_ccprocessed(fork_sentence.gold_tree, fork_sentence)
    assert [step.rule_id for step in trace.steps] == [
        "collapse_preps", "collapse_conj", "propagate_dependent", "propagate_dependent",
    ]
    assert trace.steps[0].to_text() == "collapse_preps A=2 B=4 C=6 +prep_with(2->6) -prep(2->4) -pobj(4->6)"
    assert trace.steps[2].bindings == {"A": 2, "C": 8, "D": 1, "T": "nsubj"}
    assert trace.steps[3].bindings == {"A": 2, "C": 8, "D": 6, "T": "prep_with"}
    assert trace.to_text().count("\n") == 4


# ============================================================================
# Individual stages
# ============================================================================

def test_preposition_word_is_lowercased():
    sentence = make_sentence("sat ON mats", "VBD IN NNS", (0, 1, 2), "root prep pobj")
    graph = collapse_preps(tree_to_graph(sentence.gold_tree), sentence)
    assert arc("prep_on", 1, 3) in graph


def test_collapse_uses_first_pobj():
    sentence = make_sentence("went to x y", "VBD TO NN NN", (0, 1, 2, 2), "root prep pobj pobj")
    graph = collapse_preps(tree_to_graph(sentence.gold_tree), sentence)
    assert graph.arcs == {arc("root", 0, 1), arc("prep_to", 1, 3), arc("pobj", 2, 4)}


def test_conj_needs_cc_between_conjuncts():
    # cc after both conjuncts does not type them
    sentence = make_sentence("x y and", "NN NN CC", (0, 1, 1), "root conj cc")
    graph = tree_to_graph(sentence.gold_tree)
    assert collapse_conj(graph, sentence) == graph


def test_object_is_shared_wherever_it_sits():
    sentence = make_sentence("cooked pasta and ate", "VBD NN CC VBD", (0, 1, 1, 1), "root dobj cc conj")
    graph, trace = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert arc("dobj", 4, 2) in graph
    assert "propagate_dependent" in trace.rules_fired()


def test_modifiers_and_prepositions_are_shared():
    sentence = make_sentence("ran quickly and jumped", "VBD RB CC VBD", (0, 1, 1, 1), "root advmod cc conj")
    graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert arc("advmod", 4, 2) in graph

    sentence = make_sentence("sat on mats and slept", "VBD IN NNS CC VBD", (0, 1, 2, 1, 1), "root prep pobj cc conj")
    graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert arc("prep_on", 5, 3) in graph


def test_own_object_blocks_the_copy():
    sentence = make_sentence("ate fish and drank tea", "VBD NN CC VBD NN", (0, 1, 1, 1, 4), "root dobj cc conj dobj")
    graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert arc("dobj", 4, 2) not in graph
    assert arc("dobj", 4, 5) in graph


def test_subject_copy_is_blocked_by_any_subject_relation():
    sentence = make_sentence("I ate and it was eaten", "PRP VBD CC PRP VBD VBN", (2, 0, 2, 6, 6, 2),
                             "nsubj root cc nsubjpass auxpass conj")
    graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert arc("nsubj", 6, 1) not in graph
    assert arc("conj_and", 2, 6) in graph


def test_governor_propagation_through_collapsed_preposition():
    sentence = make_sentence("sat near cats and dogs", "VBD IN NNS CC NNS", (0, 1, 2, 3, 3),
                             "root prep pobj cc conj")
    graph, trace = basic_to_ccprocessed(sentence.gold_tree, sentence)
    assert {arc("prep_near", 1, 3), arc("prep_near", 1, 5), arc("conj_and", 3, 5)} <= graph.arcs
    assert "propagate_governor" in trace.rules_fired()


def test_root_is_not_propagated(fork_sentence):
    graph, _ = basic_to_ccprocessed(fork_sentence.gold_tree, fork_sentence)
    assert [a for a in graph.arcs if a.dep_type == "root"] == [arc("root", 0, 2)]


def test_rule1_requires_cc_after_its_head():
    sentence = make_sentence("and x y", "CC NN NN", (2, 0, 2), "cc root dep")
    graph = tree_to_graph(sentence.gold_tree)
    assert apply_rule1(graph, sentence) == graph


def test_rule1_picks_the_nearest_right_child():
    sentence = make_sentence("x and y z", "NN CC NN NN", (0, 1, 1, 1), "root cc dep dep")
    graph = apply_rule1(tree_to_graph(sentence.gold_tree), sentence)
    assert graph.arcs == {arc("root", 0, 1), arc("conj_and", 1, 3), arc("dep", 1, 4)}


def test_rule1_rejects_unknown_mode(fork_sentence):
    with pytest.raises(ValueError):
        apply_rule1(tree_to_graph(fork_sentence.gold_tree), fork_sentence, mode="strict")


def test_traces_are_optional(fork_sentence):
    graph = tree_to_graph(fork_sentence.gold_tree)
    steps = []
    assert collapse_preps(graph, fork_sentence) == collapse_preps(graph, fork_sentence, steps)
    assert len(steps) == 1


def test_invalid_tree_is_rejected(fork_sentence):
    with pytest.raises(TreeError):
        basic_to_ccprocessed(DependencyTree(heads=(0,) * 9, labels=("dep",) * 9), fork_sentence)


def test_rule_arcs_must_use_bound_tokens():
    with pytest.raises(ValidationError):
        TransformRule(rule_id="rule2", bindings={"A": 1, "B": 2}, added=(arc("prep_x", 1, 3),))


def test_empty_trace_text():
    assert TransformTrace().to_text() == ""
    assert len(TransformTrace()) == 0


# ============================================================================
# Corpus-level invariants
# ============================================================================

def test_toy_corpus_invariants():
    corpus = generate_corpus(count=60, seed=3)
    graphs = transform_corpus(corpus, [s.gold_tree for s in corpus])
    for sentence, graph in zip(corpus, graphs):
        basic = tree_to_graph(sentence.gold_tree)
        labels = {a.dep_type for a in graph.arcs}
        assert not labels & {"prep", "pobj", "cc", "conj"}
        content = {m for m in range(1, len(sentence) + 1) if sentence.pos(m) not in ("IN", "CC")}
        assert {a.child for a in graph.arcs} == content
        assert assert_stages_idempotent(sentence.gold_tree, sentence, TransformConfig()) == graph
        if not {a.dep_type for a in basic.arcs} & {"prep", "cc"}:
            assert graph == basic


def test_shared_subjects_are_recovered():
    corpus = generate_corpus(count=80, seed=5)
    coordinated = [s for s in corpus if "conj" in s.gold_tree.labels]
    assert coordinated
    for sentence in coordinated:
        graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
        subject = sentence.gold_tree.labels.index("nsubj") + 1
        second = sentence.gold_tree.labels.index("conj") + 1
        assert arc("nsubj", second, subject) in graph


def test_alternate_annotation_transforms_cleanly():
    for sentence in generate_corpus(count=30, seed=2):
        tree = alternate_annotation(sentence)
        graph, trace = basic_to_ccprocessed(tree, sentence)
        assert len(trace) == 0
        assert graph == tree_to_graph(tree)


def test_transform_corpus_keeps_order(fork_sentence):
    plain = make_sentence("dogs bark", "NNS VBP", (2, 0), "nsubj root")
    graphs = transform_corpus([plain, fork_sentence], [plain.gold_tree, fork_sentence.gold_tree])
    assert graphs[0] == tree_to_graph(plain.gold_tree)
    assert len(graphs[1]) == 8
    assert isinstance(graphs[1], DependencyGraph)
