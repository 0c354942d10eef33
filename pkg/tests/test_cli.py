# test_cli.py
"""
End-to-end runs of the sdparser command line on generated toy corpora
"""
import pytest

from sdparser.cli import main
from sdparser.corpus_io import read_conll_file, read_sd_graphs
from sdparser.evaluation import read_tradeoff_csv

FAST = ["--epochs", "1", "--hash-bits", "16"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "toy.conll"
    assert run("generate", "--count", 40, "--seed", 3, "--output", path) == 0
    return path


@pytest.fixture(scope="module")
def model_file(corpus_file):
    path = corpus_file.parent / "graph.model"
    assert run("train", "--input", corpus_file, "--model", path, *FAST) == 0
    return path


# ============================================================================
# Corpus generation and transforms
# ============================================================================

def test_generate_is_deterministic(tmp_path, corpus_file):
    again = tmp_path / "again.conll"
    alternate = tmp_path / "alternate.conll"
    assert run("generate", "--count", 40, "--seed", 3, "--output", again, "--alternate", alternate) == 0
    assert again.read_bytes() == corpus_file.read_bytes()
    assert len(read_conll_file(corpus_file)) == 40
    alt = read_conll_file(alternate)
    assert [s.tokens for s in alt] == [s.tokens for s in read_conll_file(corpus_file)]


def test_generate_needs_an_output():
    assert run("generate", "--count", 5) == 2


def test_transform_matches_golden(tmp_path, data_dir):
    output, trace = tmp_path / "out.sd", tmp_path / "trace.txt"
    assert run("transform", "--input", data_dir / "ccprocessed_example.conll",
               "--output", output, "--trace", trace) == 0
    assert output.read_bytes() == (data_dir / "ccprocessed_example.sd").read_bytes()
    assert trace.read_text().startswith("# sentence 1\ncollapse_preps A=2 B=4 C=6")


def test_transform_switches(tmp_path, data_dir):
    output = tmp_path / "out.sd"
    assert run("transform", "--input", data_dir / "ccprocessed_example.conll", "--output", output,
               "--no-collapse-preps", "--no-propagate", "--no-rule2") == 0
    (graph,) = read_sd_graphs(output.read_bytes())
    labels = {a.dep_type for a in graph.arcs}
    assert {"prep", "pobj", "conj_and"} <= labels
    assert "prep_with" not in labels
    assert [a.child for a in graph.arcs if a.dep_type == "nsubj"] == [1]


def test_fixtures_export(tmp_path, capsys):
    assert run("fixtures", "--output", tmp_path / "fixtures") == 0
    assert "fixtures=21" in capsys.readouterr().out
    assert len(list((tmp_path / "fixtures").iterdir())) == 42


# ============================================================================
# Training and parsing
# ============================================================================

def test_training_is_reproducible(tmp_path, corpus_file, model_file, capsys):
    again = tmp_path / "again.model"
    assert run("train", "--input", corpus_file, "--model", again, *FAST) == 0
    out = capsys.readouterr().out
    assert "epoch=1 uas=" in out
    assert "sentences=40 skipped=0" in out
    assert again.read_bytes() == model_file.read_bytes()


def test_transition_training_and_parsing(tmp_path, corpus_file):
    model = tmp_path / "transition.model"
    parsed = tmp_path / "parsed.conll"
    assert run("train", "--parser", "transition", "--input", corpus_file, "--model", model, *FAST) == 0
    assert run("parse", "--input", corpus_file, "--model", model, "--output", parsed) == 0
    assert len(read_conll_file(parsed)) == 40


def test_cluster_training(tmp_path, corpus_file, data_dir):
    clusters = data_dir / "clusters.txt"
    assert run("train", "--input", corpus_file, "--model", tmp_path / "c.model", "--clusters", clusters, *FAST) == 0
    assert run("train", "--parser", "transition", "--input", corpus_file, "--model", tmp_path / "t.model",
               "--clusters", clusters, *FAST) == 2


def test_parse_and_evaluate(tmp_path, corpus_file, model_file, capsys):
    parsed = tmp_path / "parsed.conll"
    assert run("parse", "--input", corpus_file, "--model", model_file, "--output", parsed, "--jobs", 2) == 0
    assert len(read_conll_file(parsed)) == 40
    assert run("evaluate", "--gold", corpus_file, "--input", parsed, "--exclude-punct", "--ccprocessed") == 0
    out = capsys.readouterr().out
    assert "uas=" in out
    assert "labeled_f1=" in out
    assert "sentences=40" in out


def test_evaluate_identical_files(corpus_file, capsys):
    assert run("evaluate", "--gold", corpus_file, "--input", corpus_file) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:2] == ["uas=1.0000", "las=1.0000"]


def test_parse_to_ccprocessed_and_score_graphs(tmp_path, corpus_file, model_file, capsys):
    graphs = tmp_path / "parsed.sd"
    gold = tmp_path / "gold.sd"
    assert run("parse", "--input", corpus_file, "--model", model_file, "--output", graphs,
               "--transform", "ccprocessed") == 0
    assert run("transform", "--input", corpus_file, "--output", gold) == 0
    assert run("evaluate", "--gold", gold, "--input", graphs) == 0
    assert "labeled_f1=" in capsys.readouterr().out
    assert run("evaluate", "--gold", gold, "--input", gold) == 0
    assert "labeled_f1=1.0000" in capsys.readouterr().out
    assert run("evaluate", "--gold", corpus_file, "--input", graphs) == 2


def test_gold_pos_source(tmp_path, corpus_file, model_file):
    output = tmp_path / "parsed.conll"
    assert run("parse", "--input", corpus_file, "--model", model_file, "--output", output,
               "--pos-source", "gold", "--gold", corpus_file) == 0
    assert run("parse", "--input", corpus_file, "--model", model_file, "--pos-source", "gold") == 2
    assert run("parse", "--input", corpus_file, "--model", model_file, "--pos-source", "tagger") == 2


# ============================================================================
# Errors
# ============================================================================

def test_usage_errors(corpus_file):
    assert run("train", "--input", corpus_file) == 2
    assert run("evaluate", "--input", corpus_file) == 2
    assert run("frobnicate") == 2
    assert run("train", "--input", corpus_file, "--model", "x.model", "--hash-bits", 40) == 2
    assert run("train", "--input", corpus_file, "--model", "x.model", "--decoder", "sib-gp", "--hash-bits", 16,
               "--epochs", 0) == 2


def test_unreadable_model(tmp_path, corpus_file):
    garbage = tmp_path / "garbage.model"
    garbage.write_bytes(b"this is not a model")
    assert run("parse", "--input", corpus_file, "--model", garbage) == 3
    assert run("parse", "--input", corpus_file, "--model", tmp_path / "missing.model") == 3


def test_malformed_input(tmp_path, model_file):
    broken = tmp_path / "broken.conll"
    broken.write_text("1\tonly\tthree\n\n")
    assert run("parse", "--input", broken, "--model", model_file) == 3


def test_input_that_is_not_utf8(tmp_path, corpus_file, model_file, capsys):
    bad = tmp_path / "latin1.conll"
    bad.write_bytes("1\tcaf\xe9\t_\tNN\tNN\t_\t0\troot\t_\t_\n\n".encode("latin-1"))
    assert run("evaluate", "--gold", bad, "--input", bad) == 3
    assert "not valid UTF-8: byte offset 5" in capsys.readouterr().err
    assert run("parse", "--input", bad, "--model", model_file) == 3
    assert run("train", "--input", bad, "--model", tmp_path / "m.model", *FAST) == 3
    assert run("transform", "--input", bad) == 3
    sidecar = tmp_path / "tags.txt"
    sidecar.write_bytes(b"\xff\xfe\n")
    assert run("parse", "--input", corpus_file, "--model", model_file, "--pos-source", f"file:{sidecar}") == 3
    clusters = tmp_path / "clusters.txt"
    clusters.write_bytes(b"0101\t\xff\n")
    assert run("train", "--input", corpus_file, "--model", tmp_path / "c.model", "--clusters", clusters, *FAST) == 3
    rows = tmp_path / "rows.csv"
    rows.write_bytes(b"\xff\xfe")
    assert run("plot", "--input", rows, "--output", tmp_path / "p.png") == 3


@pytest.mark.parametrize("decoder", ["proj", "nonproj", "sib-gp"])
@pytest.mark.parametrize("heads", [("2", "3", "2"), ("2", "0", "9"), ("2", "0", "-1")])
def test_invalid_gold_trees_fail_training(tmp_path, decoder, heads):
    rows = zip(("dogs", "chase", "cats"), ("NNS", "VBP", "NNS"), heads, ("nsubj", "root", "dobj"))
    broken = tmp_path / "broken.conll"
    broken.write_text("".join(
        f"{i}\t{form}\t_\t{tag}\t{tag}\t_\t{head}\t{label}\t_\t_\n"
        for i, (form, tag, head, label) in enumerate(rows, start=1)
    ) + "\n")
    assert run("train", "--input", broken, "--model", tmp_path / "m.model", "--decoder", decoder, *FAST) == 3
    assert run("train", "--parser", "transition", "--input", broken, "--model", tmp_path / "t.model", *FAST) == 3


def test_unwritable_outputs(tmp_path, corpus_file, model_file, data_dir):
    missing = tmp_path / "no" / "such"
    assert run("train", "--input", corpus_file, "--model", missing / "m.model", *FAST) == 3
    assert run("parse", "--input", corpus_file, "--model", model_file, "--output", missing / "out.conll") == 3
    assert run("transform", "--input", data_dir / "ccprocessed_example.conll", "--output", tmp_path / "ok.sd",
               "--trace", missing / "trace.txt") == 3
    assert run("generate", "--count", 3, "--output", tmp_path / "ok.conll", "--alternate", missing / "alt.conll") == 3
    assert run("stack-train", "--input", corpus_file, "--model", missing / "s.zip", "--first-parser", "oracle",
               *FAST) == 3
    blocker = tmp_path / "plain-file"
    blocker.write_text("")
    assert run("fixtures", "--output", blocker / "fixtures") == 3
    csv_path = tmp_path / "rows.csv"
    csv_path.write_text("name,uas,las,unlabeled_f1,labeled_f1,tokens_per_sec\na,0.9,0.8,,,100\n")
    assert run("plot", "--input", csv_path, "--output", missing / "p.png") == 3


def test_relative_model_paths_use_the_model_dir(tmp_path, corpus_file, monkeypatch):
    monkeypatch.setenv("SDPARSER_MODEL_DIR", str(tmp_path))
    assert run("train", "--input", corpus_file, "--model", "relative.model", *FAST) == 0
    assert (tmp_path / "relative.model").exists()


# ============================================================================
# Benchmarks and stacking
# ============================================================================

def test_bench_prints_a_tradeoff_row(corpus_file, model_file, capsys):
    assert run("bench", "--input", corpus_file, "--model", model_file, "--warmup", 5,
               "--include-transform", "--name", "toy") == 0
    (row,) = read_tradeoff_csv(capsys.readouterr().out)
    assert row["name"] == "toy"
    assert 0.0 <= row["uas"] <= 1.0
    assert row["labeled_f1"] is not None
    assert row["tokens_per_sec"] > 0


def test_bench_needs_more_sentences_than_warmup(tmp_path, corpus_file, model_file):
    single = tmp_path / "single.conll"
    assert run("generate", "--count", 1, "--output", single) == 0
    assert run("bench", "--input", single, "--model", model_file) == 3


def test_stacked_training_and_parsing(tmp_path, corpus_file, capsys):
    bundle = tmp_path / "stacked.zip"
    parsed = tmp_path / "stacked.conll"
    assert run("stack-train", "--input", corpus_file, "--model", bundle, "--k", 2, "--jobs", 2, *FAST) == 0
    assert "no-cheat audit: audited=40 violations=0" in capsys.readouterr().out
    assert run("stack-parse", "--input", corpus_file, "--model", bundle, "--output", parsed) == 0
    assert len(read_conll_file(parsed)) == 40


def test_stacking_with_oracle_first_stage(tmp_path, corpus_file, capsys):
    bundle = tmp_path / "oracle.zip"
    assert run("stack-train", "--input", corpus_file, "--model", bundle, "--first-parser", "oracle", *FAST) == 0
    assert "violations=0" in capsys.readouterr().out


def test_plot_from_bench_rows(tmp_path):
    csv_path = tmp_path / "tradeoff.csv"
    csv_path.write_text("name,uas,las,unlabeled_f1,labeled_f1,tokens_per_sec\na,0.9,0.8,,,100\nb,0.8,0.7,,,900\n")
    output = tmp_path / "tradeoff.png"
    assert run("plot", "--input", csv_path, "--output", output) == 0
    assert output.stat().st_size > 0
    csv_path.write_text("wrong header\n")
    assert run("plot", "--input", csv_path, "--output", output) == 3
