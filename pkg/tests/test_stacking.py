# test_stacking.py
"""
Jackknife annotation, the no-cheat audit and stacked bundles
"""
import zipfile

import numpy as np
import pytest

from sdparser.core import validate_tree
from sdparser.errors import ConfigError, DataError, ModelError
from sdparser.features import TemplateConfig
from sdparser.graph_parser import GraphParser
from sdparser.learn import model_to_bytes, train_structured
from sdparser.stacking import (
    BUNDLE_PLAN,
    AnnotatedCorpus,
    ParserSpec,
    annotate_training,
    audit_no_cheat,
    build_plan,
    load_bundle,
    save_bundle,
    stacked_parse,
    stacked_parser,
    train_stacked,
)

from tests.conftest import make_sentence

FIRST = ParserSpec(config=TemplateConfig(hash_bits=16), epochs=1)
SECOND = ParserSpec(config=TemplateConfig(hash_bits=16, enable_stacking=True), epochs=1)


def run(corpus, first=FIRST, second=SECOND, k=3, jobs=1):
    plan = build_plan(corpus, k, first, second)
    annotated = annotate_training(plan, jobs)
    return train_stacked(plan, annotated), annotated


@pytest.fixture(scope="module")
def trained(toy_corpus):
    return run(toy_corpus[:9])


# ============================================================================
# Plan
# ============================================================================

def test_plan_partitions_the_corpus(toy_corpus):
    plan = build_plan(toy_corpus[:10], 3, FIRST, SECOND)
    assert [len(p) for p in plan.partitions] == [4, 3, 3]
    assert [p.part_id for p in plan.partitions] == [1, 2, 3]
    assert sorted(plan.first_models) == ["g1", "g2", "g3"]
    assert plan.partition_of(4).part_id == 2
    assert not plan.trained
    with pytest.raises(DataError):
        plan.partition_of(10)


def test_plan_rejects_bad_setups(toy_corpus):
    with pytest.raises(ConfigError):
        build_plan(toy_corpus[:6], 3, FIRST, ParserSpec(family="transition"))
    with pytest.raises(ConfigError):
        build_plan(toy_corpus[:6], 3, FIRST, SECOND, first_corpus=toy_corpus[:5])
    with pytest.raises(ConfigError):
        build_plan(toy_corpus[:6], 1, FIRST, SECOND)
    with pytest.raises(ConfigError):
        build_plan(toy_corpus[:2], 3, FIRST, SECOND)


def test_parser_spec_checks_decoder():
    # validator errors surface as pydantic ValidationError, itself a ValueError
    with pytest.raises(ValueError):
        ParserSpec(decoder="sib")
    ParserSpec(family="transition", decoder="sib")


# ============================================================================
# Training
# ============================================================================

def test_every_annotation_comes_from_the_held_out_model(trained):
    plan, annotated = trained
    assert plan.audit.violations == 0
    assert plan.audit.summary() == "audited=9 violations=0"
    for annotation in annotated.annotations:
        partition = plan.partition_of(annotation.index)
        assert annotation.producer == f"g{partition.part_id}"
        assert partition.part_id not in plan.records[annotation.producer].trained_on
        assert validate_tree(annotation.tree, len(plan.corpus[annotation.index])).valid


def test_model_records(trained):
    plan, _ = trained
    assert sorted(plan.records) == ["g", "g1", "g2", "g3", "h"]
    assert plan.records["g2"].held_out == 2
    assert plan.records["g2"].trained_on == (1, 3)
    assert plan.records["g2"].sentences == 6
    assert plan.records["h"].sentences == 9
    assert plan.records["g"].held_out is None
    assert plan.trained
    assert plan.records["g2"].training_indices == (0, 1, 2, 6, 7, 8)


def test_audit_checks_the_sentences_each_fold_trained_on(toy_corpus):
    plan = build_plan(toy_corpus[:9], 3, ParserSpec(family="oracle"), SECOND)
    annotated = annotate_training(plan)
    assert audit_no_cheat(plan, annotated).violations == 0

    # bookkeeping still claims partitions (1, 3) but sentence 4 leaked into g2's training set
    leaked = plan.records["g2"]
    plan.records["g2"] = leaked.model_copy(update={"training_indices": leaked.training_indices + (4,)})
    report = audit_no_cheat(plan, annotated)
    assert report.violations == 3
    assert {row.index for row in report.rows if row.violation} == {3, 4, 5}

    plan.records["g2"] = leaked
    plan.records.pop("g3")
    assert audit_no_cheat(plan, annotated).violations == 3


def test_stacked_parse(trained, toy_corpus):
    plan, _ = trained
    parse = stacked_parser(plan)
    for sentence in toy_corpus[20:25]:
        tree = stacked_parse(sentence, plan)
        assert validate_tree(tree, len(sentence)).valid
        assert parse(sentence) == tree


def test_concurrent_annotation_matches_serial(toy_corpus):
    serial = annotate_training(build_plan(toy_corpus[:9], 3, FIRST, SECOND), jobs=1)
    parallel = annotate_training(build_plan(toy_corpus[:9], 3, FIRST, SECOND), jobs=3)
    assert serial == parallel
    with pytest.raises(ConfigError):
        annotate_training(build_plan(toy_corpus[:9], 3, FIRST, SECOND), jobs=0)


def test_oracle_first_stage_annotates_with_gold(toy_corpus):
    plan, annotated = run(toy_corpus[:6], first=ParserSpec(family="oracle"), k=2)
    assert annotated.trees() == [s.gold_tree for s in toy_corpus[:6]]
    assert plan.final_first is None
    assert plan.audit.violations == 0
    assert stacked_parse(toy_corpus[0], plan).heads is not None


def test_transition_first_stage(toy_corpus):
    first = ParserSpec(family="transition", config=TemplateConfig(hash_bits=16), epochs=1)
    plan, annotated = run(toy_corpus[:6], first=first, k=2)
    assert plan.final_first.kind == "transition"
    assert {a.producer for a in annotated.annotations} == {"g1", "g2"}


def test_second_stage_without_stacking_is_a_plain_graph_parser(toy_corpus):
    corpus = toy_corpus[:6]
    plain_spec = ParserSpec(config=TemplateConfig(hash_bits=16), epochs=2)
    plan, _ = run(corpus, second=plain_spec, k=2)
    plain, _ = train_structured(corpus, "proj", TemplateConfig(hash_bits=16), epochs=2)
    np.testing.assert_array_equal(plan.second_model.weights, plain.weights)


def test_annotation_count_must_match_the_corpus(toy_corpus):
    plan = build_plan(toy_corpus[:9], 3, FIRST, SECOND)
    annotated = annotate_training(plan)
    short = AnnotatedCorpus(sentences=annotated.sentences[:4], annotations=annotated.annotations[:4])
    with pytest.raises(DataError):
        train_stacked(plan, short)
    with pytest.raises(DataError):
        train_stacked(plan, AnnotatedCorpus(sentences=(), annotations=()))


def test_annotated_corpus_validates_positions(toy_corpus):
    plan = build_plan(toy_corpus[:6], 2, ParserSpec(family="oracle"), SECOND)
    annotated = annotate_training(plan)
    with pytest.raises(ValueError):
        AnnotatedCorpus(sentences=annotated.sentences, annotations=annotated.annotations[::-1])


def test_untrained_plan_cannot_parse(toy_corpus):
    plan = build_plan(toy_corpus[:6], 2, FIRST, SECOND)
    with pytest.raises(ModelError):
        stacked_parse(toy_corpus[0], plan)
    with pytest.raises(ModelError):
        stacked_parser(plan)


# ============================================================================
# Bundles
# ============================================================================

def test_bundle_round_trip(trained, tmp_path, toy_corpus):
    plan, _ = trained
    loaded = load_bundle(save_bundle(plan, tmp_path / "stacked.zip"))
    assert loaded.k == 3
    assert loaded.fingerprint == plan.fingerprint
    assert loaded.records == plan.records
    assert loaded.audit.violations == 0
    assert model_to_bytes(loaded.second_model) == model_to_bytes(plan.second_model)
    assert loaded.corpus == []
    sentence = toy_corpus[25]
    assert stacked_parse(sentence, loaded) == stacked_parse(sentence, plan)


def test_bundles_are_byte_stable(trained, tmp_path):
    plan, _ = trained
    first = save_bundle(plan, tmp_path / "a.zip").read_bytes()
    second = save_bundle(plan, tmp_path / "b.zip").read_bytes()
    assert first == second


def test_retraining_gives_the_same_bundle(toy_corpus, tmp_path):
    a, _ = run(toy_corpus[:6], k=2)
    b, _ = run(toy_corpus[:6], k=2)
    assert save_bundle(a, tmp_path / "a.zip").read_bytes() == save_bundle(b, tmp_path / "b.zip").read_bytes()


def test_unreadable_bundles(tmp_path, trained):
    garbage = tmp_path / "garbage.zip"
    garbage.write_bytes(b"not a zip file")
    with pytest.raises(ModelError):
        load_bundle(garbage)
    with pytest.raises(ModelError):
        load_bundle(tmp_path / "missing.zip")

    no_plan = tmp_path / "no_plan.zip"
    with zipfile.ZipFile(no_plan, "w") as archive:
        archive.writestr("second.model", b"")
    with pytest.raises(ModelError):
        load_bundle(no_plan)

    broken = tmp_path / "broken.zip"
    with zipfile.ZipFile(broken, "w") as archive:
        archive.writestr(BUNDLE_PLAN, b"{}")
    with pytest.raises(ModelError):
        load_bundle(broken)


def test_untrained_plan_cannot_be_saved(toy_corpus, tmp_path):
    with pytest.raises(ModelError):
        save_bundle(build_plan(toy_corpus[:6], 2, FIRST, SECOND), tmp_path / "x.zip")


def test_mismatched_first_corpus_words(toy_corpus):
    other = [make_sentence("a b", "DT NN", (2, 0), "det root")] + list(toy_corpus[1:6])
    with pytest.raises(ConfigError):
        build_plan(toy_corpus[:6], 2, FIRST, SECOND, first_corpus=other)


@pytest.mark.slow
def test_oracle_stacking_is_at_least_as_accurate_as_plain_training(toy_corpus):
    config = TemplateConfig(hash_bits=18)
    plan, _ = run(toy_corpus, first=ParserSpec(family="oracle"),
                  second=ParserSpec(config=config.model_copy(update={"enable_stacking": True}), epochs=3))
    plain, _ = train_structured(toy_corpus, "proj", config, epochs=3)

    def uas(parse):
        correct = sum(a == b for s in toy_corpus for a, b in zip(parse(s).heads, s.gold_tree.heads))
        return correct / sum(len(s) for s in toy_corpus)

    assert uas(stacked_parser(plan)) >= uas(GraphParser(plain))
