# test_corpus_io.py
"""
CoNLL and SD tuple I/O, cluster lexicons, POS sidecars and jackknife partitions
"""
import io

import pytest
from pydantic import ValidationError

from sdparser.core import DependencyArc, DependencyGraph
from sdparser.corpus_io import (
    ClusterLexicon,
    corpus_fingerprint,
    decode_text,
    jackknife_partition,
    load_clusters,
    load_clusters_file,
    read_conll,
    read_conll_file,
    read_sd_graph,
    read_sd_graphs,
    read_tag_file,
    substitute_tags,
    write_conll,
    write_file,
    write_sd_graph,
    write_sd_graphs,
)
from sdparser.errors import ConfigError, DataError, FormatError
from sdparser.sd_transform import basic_to_ccprocessed

from tests.conftest import make_sentence

ROW = "{i}\t{form}\t_\tNN\tNN\t_\t{head}\t{label}\t_\t_\n"


# ============================================================================
# CoNLL-X
# ============================================================================

def test_read_golden_conll(data_dir):
    corpus = read_conll_file(data_dir / "ccprocessed_example.conll")
    assert len(corpus) == 1
    sentence = corpus[0]
    assert [t.form for t in sentence.tokens][:3] == ["I", "ate", "fish"]
    assert sentence.gold_tree.heads == (2, 0, 2, 2, 6, 4, 2, 2, 8)
    assert sentence.gold_tree.label(7) == "cc"


def test_conll_write_read_is_stable(data_dir):
    raw = (data_dir / "ccprocessed_example.conll").read_bytes()
    assert write_conll(read_conll(raw)) == raw


def test_read_accepts_text_and_streams():
    text = ROW.format(i=1, form="go", head=0, label="root") + "\n"
    assert read_conll(text) == read_conll(io.BytesIO(text.encode("utf-8")))


def test_unannotated_sentences_have_no_tree():
    text = "1\tgo\t_\tVB\tVB\t_\t_\t_\t_\t_\n\n"
    (sentence,) = read_conll(text)
    assert sentence.gold_tree is None
    assert sentence.tokens[0].lemma == ""
    assert write_conll([sentence]).decode("utf-8") == text


def test_multiple_sentences_and_extra_blank_lines():
    text = (
        ROW.format(i=1, form="a", head=0, label="root") + "\n\n\n"
        + ROW.format(i=1, form="b", head=2, label="det")
        + ROW.format(i=2, form="c", head=0, label="root")
    )
    corpus = read_conll(text)
    assert [len(s) for s in corpus] == [1, 2]


@pytest.mark.parametrize("text, line, fragment", [
    ("1\tgo\t_\tVB\tVB\t_\t0\troot\n", 1, "columns"),
    (ROW.format(i=1, form="a", head=0, label="root") + ROW.format(i=3, form="b", head=1, label="dep"), 2, "sequence"),
    (ROW.format(i=1, form="a", head="x", label="root"), 1, "not an integer"),
])
def test_malformed_conll_reports_line(text, line, fragment):
    with pytest.raises(FormatError) as error:
        read_conll(text)
    assert error.value.line_number == line
    assert fragment in str(error.value)


def test_partly_filled_head_column_is_rejected():
    text = ROW.format(i=1, form="a", head=0, label="root") + "2\tb\t_\tNN\tNN\t_\t_\t_\t_\t_\n"
    with pytest.raises(FormatError):
        read_conll(text)


def test_write_conll_with_explicit_trees(fork_sentence):
    other = fork_sentence.gold_tree.model_copy(update={"labels": ("dep",) * 9})
    (rewritten,) = read_conll(write_conll([fork_sentence], [other]))
    assert rewritten.gold_tree.labels == ("dep",) * 9
    with pytest.raises(DataError):
        write_conll([fork_sentence], [])


def test_missing_corpus_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        read_conll_file(tmp_path / "missing.conll")


def test_undecodable_bytes_are_a_data_error(tmp_path):
    data = ROW.format(i=1, form="caf\xe9", head=0, label="root").encode("latin-1")
    with pytest.raises(DataError, match="byte offset 5"):
        read_conll(data)
    with pytest.raises(DataError, match="byte offset 5"):
        read_conll(io.BytesIO(data))
    path = tmp_path / "latin1.conll"
    path.write_bytes(data)
    with pytest.raises(DataError, match="latin1.conll is not valid UTF-8"):
        read_conll_file(path)
    with pytest.raises(DataError):
        read_sd_graphs(b"root(ROOT-0, \xff-1)\n")
    with pytest.raises(DataError):
        load_clusters(b"01\t\xff\n")
    with pytest.raises(DataError):
        read_tag_file(b"\xff\n")
    assert decode_text("café".encode("utf-8")) == "café"


def test_write_file(tmp_path):
    assert write_file(tmp_path / "out.bin", b"abc").read_bytes() == b"abc"
    with pytest.raises(DataError, match="cannot write model"):
        write_file(tmp_path / "missing" / "out.bin", b"abc", "model")


def test_fingerprint_tracks_content(fork_sentence):
    assert corpus_fingerprint([fork_sentence]) == corpus_fingerprint([fork_sentence])
    retagged = fork_sentence.with_tags(["NN"] * 9)
    assert corpus_fingerprint([fork_sentence]) != corpus_fingerprint([retagged])


# ============================================================================
# SD tuples
# ============================================================================

def test_golden_sd_output(data_dir):
    (sentence,) = read_conll_file(data_dir / "ccprocessed_example.conll")
    graph, _ = basic_to_ccprocessed(sentence.gold_tree, sentence)
    expected = (data_dir / "ccprocessed_example.sd").read_text(encoding="utf-8")
    assert write_sd_graph(sentence, graph) == expected


def test_sd_graph_round_trip(data_dir):
    text = (data_dir / "ccprocessed_example.sd").read_text(encoding="utf-8")
    graph = read_sd_graph(text)
    assert len(graph) == 9
    assert DependencyArc(dep_type="conj_and", parent=2, child=8) in graph
    (sentence,) = read_conll_file(data_dir / "ccprocessed_example.conll")
    assert write_sd_graph(sentence, graph) == text


def test_forms_with_hyphens_and_commas():
    sentence = make_sentence("well-known , x", "JJ , NN")
    graph = DependencyGraph(arcs=frozenset([
        DependencyArc(dep_type="amod", parent=3, child=1),
        DependencyArc(dep_type="punct", parent=3, child=2),
    ]))
    assert read_sd_graph(write_sd_graph(sentence, graph)) == graph


def test_multi_sentence_sd_file_keeps_empty_graphs():
    sentences = [make_sentence("a", "DT"), make_sentence("b", "NN")]
    graphs = [DependencyGraph(), DependencyGraph(arcs=frozenset([DependencyArc(dep_type="root", parent=0, child=1)]))]
    data = write_sd_graphs(sentences, graphs)
    assert data == b"\nroot(ROOT-0, b-1)\n\n"
    assert read_sd_graphs(data) == graphs


def test_bad_sd_line_reports_its_number():
    with pytest.raises(FormatError) as error:
        read_sd_graph("root(ROOT-0, ate-2)\nnot a tuple\n")
    assert error.value.line_number == 2


def test_index_zero_must_be_root():
    with pytest.raises(FormatError):
        read_sd_graph("root(top-0, ate-2)")


def test_write_sd_rejects_arcs_outside_sentence():
    graph = DependencyGraph(arcs=frozenset([DependencyArc(dep_type="dep", parent=5, child=1)]))
    with pytest.raises(DataError):
        write_sd_graph(make_sentence("a b", "DT NN"), graph)


# ============================================================================
# Clusters and tags
# ============================================================================

def test_cluster_lexicon(data_dir):
    lexicon = load_clusters_file(data_dir / "clusters.txt")
    assert len(lexicon) == 6
    assert lexicon.lookup("dog") == "10"
    assert lexicon.counts["dog"] == 12
    assert "saw" not in lexicon.counts
    assert lexicon.prefix("chased", 2) == "11"
    assert lexicon.prefix("chased", 6) == "111"
    assert lexicon.lookup("unseen") == "0"


@pytest.mark.parametrize("text", ["10\n", "1x\tdog\n", "10\tdog\tmany\n"])
def test_malformed_cluster_lines(text):
    with pytest.raises(FormatError):
        load_clusters(text)


def test_cluster_lexicon_validates_bits():
    with pytest.raises(ValidationError):
        ClusterLexicon(bits={"dog": ""})


def test_substitute_tags():
    corpus = [make_sentence("dogs bark", "NNS VBP"), make_sentence("go", "VB")]
    tags = read_tag_file("NN\nVB\n\nVBP\n")
    retagged = substitute_tags(corpus, tags)
    assert [t.fpos for t in retagged[0].tokens] == ["NN", "VB"]
    assert retagged[1].pos(1) == "VBP"
    with pytest.raises(DataError):
        substitute_tags(corpus, tags[:1])
    with pytest.raises(DataError):
        substitute_tags(corpus, [["NN"], ["VB"]])


# ============================================================================
# Jackknife partitions
# ============================================================================

def test_partitions_are_contiguous_and_cover_the_corpus(toy_corpus):
    corpus = toy_corpus[:10]
    partitions = jackknife_partition(corpus, 3)
    assert [len(p) for p in partitions] == [4, 3, 3]
    assert [(p.start, p.stop) for p in partitions] == [(0, 4), (4, 7), (7, 10)]
    assert [p.part_id for p in partitions] == [1, 2, 3]
    assert [s for p in partitions for s in p.sentences] == corpus
    assert partitions[1].contains(4) and not partitions[1].contains(7)


@pytest.mark.parametrize("k", [1, 11])
def test_partition_count_must_fit(toy_corpus, k):
    with pytest.raises(ConfigError):
        jackknife_partition(toy_corpus[:10], k)
