# conftest.py
"""
Shared fixtures: a small toy corpus, compact template settings and sentence builders
"""
from pathlib import Path

import pytest

from sdparser.core import DependencyTree, Sentence, Token
from sdparser.features import TemplateConfig
from sdparser.fixtures import generate_corpus

DATA_DIR = Path(__file__).parent / "data"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: exhaustive oracle checks and multi-epoch training runs")


def make_sentence(text: str, tags: str, heads=None, labels=None) -> Sentence:
    """Sentence from whitespace-separated words and tags, with an optional tree"""
    forms, tags = text.split(), tags.split()
    tokens = tuple(
        Token(index=i, form=form, lemma=form.lower(), cpos=tag, fpos=tag)
        for i, (form, tag) in enumerate(zip(forms, tags), start=1)
    )
    tree = None
    if heads is not None:
        tree = DependencyTree(heads=tuple(heads), labels=tuple(labels.split()))
    return Sentence(tokens=tokens, gold_tree=tree)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_corpus(count=30, seed=7)


@pytest.fixture
def small_templates() -> TemplateConfig:
    return TemplateConfig(hash_bits=18)


@pytest.fixture
def fork_sentence() -> Sentence:
    return make_sentence(
        "I ate fish with a fork and drank tea",
        "PRP VBD NN IN DT NN CC VBD NN",
        (2, 0, 2, 2, 6, 4, 2, 2, 8),
        "nsubj root dobj prep det pobj cc conj dobj",
    )
