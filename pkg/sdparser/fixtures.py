"""
Synthetic training data and hand-built transform goldens

The toy grammar produces projective Basic SD trees of the shape

    [DT] [JJ] NN VBD [[DT] [JJ] NN] [IN [DT] [JJ] NN] [CC VBD [[DT] [JJ] NN]] [.]

Nouns attach to the nearest following verb as nsubj, objects to the preceding
verb, prepositions to the main verb, and a coordinated second verb to the first
one (cc + conj). Its subject is shared, which is what propagation recovers.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .core import DependencyArc, DependencyGraph, DependencyTree, Sentence, Token
from .corpus_io import write_conll, write_file, write_sd_graph
from .errors import ConfigError, DataError
from .sd_transform import TransformConfig

DEFAULT_VOCABULARY: Dict[str, Tuple[str, ...]] = {
    "DT": ("the", "a", "every"),
    "JJ": ("big", "small", "old", "red", "quiet"),
    "NN": ("dog", "cat", "bird", "farmer", "child", "miller", "garden", "river", "apple", "book", "ball", "house"),
    "VBD": ("saw", "chased", "found", "liked", "watched", "kept", "took", "heard"),
    "IN": ("near", "with", "behind", "under"),
    "CC": ("and", "or"),
    ".": (".",),
}

ALTERNATE_LABELS = {
    "det": "NMOD",
    "amod": "NMOD",
    "nsubj": "SBJ",
    "dobj": "OBJ",
    "prep": "ADV",
    "pobj": "PMOD",
    "cc": "COORD",
    "conj": "CONJ",
    "root": "ROOT",
    "punct": "P",
}


class ToyGrammar(BaseModel):
    """Vocabulary per POS class plus the probabilities of every optional constituent"""
    model_config = ConfigDict(frozen=True)

    vocabulary: Dict[str, Tuple[str, ...]] = Field(default_factory=lambda: dict(DEFAULT_VOCABULARY))
    p_determiner: float = Field(default=0.7, ge=0.0, le=1.0)
    p_adjective: float = Field(default=0.3, ge=0.0, le=1.0)
    p_object: float = Field(default=0.7, ge=0.0, le=1.0)
    p_prep: float = Field(default=0.4, ge=0.0, le=1.0)
    p_coord: float = Field(default=0.3, ge=0.0, le=1.0)
    p_punct: float = Field(default=0.8, ge=0.0, le=1.0)
    seed: int = 1

    def words(self, tag: str) -> Tuple[str, ...]:
        words = self.vocabulary.get(tag)
        if not words:
            raise ConfigError(f"toy vocabulary has no words for {tag!r}")
        return words


class _Builder:
    """Accumulates tokens and their attachments for one sentence"""

    def __init__(self, grammar: ToyGrammar, rng: np.random.Generator):
        self.grammar = grammar
        self.rng = rng
        self.forms: List[str] = []
        self.tags: List[str] = []
        self.heads: List[int] = []
        self.labels: List[str] = []

    def chance(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def word(self, tag: str, label: str, head: int = -1) -> int:
        words = self.grammar.words(tag)
        self.forms.append(words[int(self.rng.integers(len(words)))])
        self.tags.append(tag)
        self.heads.append(head)
        self.labels.append(label)
        return len(self.forms)

    def attach(self, dependent: int, head: int) -> None:
        self.heads[dependent - 1] = head

    def noun_phrase(self, label: str) -> int:
        modifiers = []
        if self.chance(self.grammar.p_determiner):
            modifiers.append(self.word("DT", "det"))
        if self.chance(self.grammar.p_adjective):
            modifiers.append(self.word("JJ", "amod"))
        noun = self.word("NN", label)
        for modifier in modifiers:
            self.attach(modifier, noun)
        return noun

    def sentence(self) -> Sentence:
        tokens = tuple(
            Token(index=i, form=form, lemma=form, cpos=tag, fpos=tag)
            for i, (form, tag) in enumerate(zip(self.forms, self.tags), start=1)
        )
        tree = DependencyTree(heads=tuple(self.heads), labels=tuple(self.labels)).require_valid()
        return Sentence(tokens=tokens, gold_tree=tree)


def _toy_sentence(grammar: ToyGrammar, rng: np.random.Generator) -> Sentence:
    b = _Builder(grammar, rng)
    subject = b.noun_phrase("nsubj")
    verb = b.word("VBD", "root", head=0)
    b.attach(subject, verb)
    if b.chance(grammar.p_object):
        b.attach(b.noun_phrase("dobj"), verb)
    if b.chance(grammar.p_prep):
        prep = b.word("IN", "prep", head=verb)
        b.attach(b.noun_phrase("pobj"), prep)
    if b.chance(grammar.p_coord):
        b.word("CC", "cc", head=verb)
        second = b.word("VBD", "conj", head=verb)
        if b.chance(grammar.p_object):
            b.attach(b.noun_phrase("dobj"), second)
    if b.chance(grammar.p_punct):
        b.word(".", "punct", head=verb)
    return b.sentence()


def generate_corpus(grammar: Optional[ToyGrammar] = None, count: int = 100, seed: Optional[int] = None) -> List[Sentence]:
    """
    Generate a deterministic toy corpus with gold trees

    Args:
        grammar: Toy grammar, defaults to ToyGrammar()
        count: Number of sentences, at least 1
        seed: Overrides grammar.seed

    Returns:
        Sentences whose gold trees are valid and projective
    """
    grammar = grammar or ToyGrammar()
    if count < 1:
        raise ConfigError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(grammar.seed if seed is None else seed)
    corpus = [_toy_sentence(grammar, rng) for _ in range(count)]
    logger.debug(f"Generated {count} toy sentences ({sum(len(s) for s in corpus)} tokens)")
    return corpus


def alternate_annotation(sentence: Sentence) -> DependencyTree:
    """
    Re-annotate a toy tree with conjunction-headed coordination and generic labels

    The conjunction takes the first conjunct's place and heads both conjuncts;
    dependents of the first conjunct that follow the conjunction move to it.
    """
    tree = sentence.gold_tree
    if tree is None:
        raise ConfigError("alternate annotation needs a gold tree")
    heads = list(tree.heads)
    labels = [ALTERNATE_LABELS.get(label, label.upper()) for label in tree.labels]
    children = tree.children()
    for cc in range(1, len(tree) + 1):
        if tree.label(cc) != "cc":
            continue
        first = tree.head(cc)
        conjuncts = [c for c in children[first] if c > cc and tree.label(c) == "conj"]
        if first == 0 or not conjuncts:
            continue
        heads[cc - 1] = tree.head(first)
        labels[cc - 1] = "ROOT" if tree.head(first) == 0 else "COORD"
        heads[first - 1], labels[first - 1] = cc, "CONJ"
        for c in children[first]:
            if c > cc:
                heads[c - 1] = cc
    return DependencyTree(heads=tuple(heads), labels=tuple(labels)).require_valid()


# ============================================================================
# Transform goldens
# ============================================================================

class TransformFixture(BaseModel):
    """A Basic tree, the transform switches to apply and the expected graph"""
    model_config = ConfigDict(frozen=True)

    name: str
    sentence: Sentence
    expected: DependencyGraph
    config: TransformConfig = Field(default_factory=TransformConfig)
    fires: Tuple[str, ...] = Field(default=(), description="Rule ids the trace must contain")


def _sentence(text: str, tags: str, heads: Sequence[int], labels: str) -> Sentence:
    forms, tags, labels = text.split(), tags.split(), labels.split()
    tokens = tuple(
        Token(index=i, form=form, lemma=form.lower(), cpos=tag, fpos=tag)
        for i, (form, tag) in enumerate(zip(forms, tags), start=1)
    )
    return Sentence(tokens=tokens, gold_tree=DependencyTree(heads=tuple(heads), labels=tuple(labels)))


def _graph(*arcs: Tuple[str, int, int]) -> DependencyGraph:
    return DependencyGraph(arcs=frozenset(DependencyArc(dep_type=t, parent=p, child=c) for t, p, c in arcs))


def _tree_graph(sentence: Sentence) -> DependencyGraph:
    tree = sentence.gold_tree
    return _graph(*((tree.label(m), tree.head(m), m) for m in range(1, len(tree) + 1)))


def transform_fixture_set() -> List[TransformFixture]:
    """Hand-built Basic trees with their expected CCprocessed graphs"""
    fork = _sentence("I ate fish with a fork", "PRP VBD NN IN DT NN", (2, 0, 2, 2, 6, 4),
                     "nsubj root dobj prep det pobj")
    fronted = _sentence("On Monday he left", "IN NNP PRP VBD", (4, 1, 4, 0), "prep pobj nsubj root")
    golden = _sentence("I ate fish with a fork and drank tea", "PRP VBD NN IN DT NN CC VBD NN",
                       (2, 0, 2, 2, 6, 4, 2, 2, 8), "nsubj root dobj prep det pobj cc conj dobj")
    misattached = _sentence("dogs and cats bark", "NNS CC NNS VBP", (4, 1, 1, 0), "nsubj cc dep root")
    bread = _sentence("eat bread and butter", "VB NN CC NN", (0, 1, 2, 1), "root dobj cc dobj")
    fork_arcs = (("nsubj", 2, 1), ("root", 0, 2), ("dobj", 2, 3), ("prep_with", 2, 6), ("det", 6, 5))
    no_preps = TransformConfig(collapse_preps=False)
    literal = TransformConfig(rule1_mode="literal")

    plain = _sentence("The dog barked", "DT NN VBD", (2, 3, 0), "det nsubj root")
    came = _sentence("He came in", "PRP VBD IN", (2, 0, 2), "nsubj root prep")
    ran = _sentence("He ran , jumped", "PRP VBD , VBD", (2, 0, 2, 2), "nsubj root punct conj")
    return [
        TransformFixture(name="plain", sentence=plain, expected=_tree_graph(plain)),
        TransformFixture(name="prep_collapse", sentence=fork, expected=_graph(*fork_arcs), fires=("collapse_preps",)),
        TransformFixture(name="prep_no_pobj", sentence=came, expected=_tree_graph(came)),
        TransformFixture(
            name="chained_preps",
            sentence=_sentence("She sat on the bench in the park", "PRP VBD IN DT NN IN DT NN",
                               (2, 0, 2, 5, 3, 5, 8, 6), "nsubj root prep det pobj prep det pobj"),
            expected=_graph(("nsubj", 2, 1), ("root", 0, 2), ("prep_on", 2, 5), ("det", 5, 4),
                            ("prep_in", 5, 8), ("det", 8, 7)),
            fires=("collapse_preps",),
        ),
        TransformFixture(
            name="fronted_prep",
            sentence=fronted,
            expected=_graph(("prep_on", 4, 2), ("nsubj", 4, 3), ("root", 0, 4)),
            fires=("collapse_preps",),
        ),
        TransformFixture(
            name="conj_collapse",
            sentence=_sentence("dogs and cats sleep", "NNS CC NNS VBP", (4, 1, 1, 0), "nsubj cc conj root"),
            expected=_graph(("nsubj", 4, 1), ("conj_and", 1, 3), ("nsubj", 4, 3), ("root", 0, 4)),
            fires=("collapse_conj", "propagate_governor"),
        ),
        TransformFixture(
            name="two_conj_one_cc",
            sentence=_sentence("red , green and blue paint", "JJ , JJ CC JJ NN", (6, 1, 1, 1, 1, 0),
                               "amod punct conj cc conj root"),
            expected=_graph(("amod", 6, 1), ("punct", 1, 2), ("conj_and", 1, 3), ("conj_and", 1, 5),
                            ("amod", 6, 3), ("amod", 6, 5), ("root", 0, 6)),
            fires=("collapse_conj", "propagate_governor"),
        ),
        TransformFixture(
            name="ate_and_drank",
            sentence=golden,
            expected=_graph(("nsubj", 2, 1), ("nsubj", 8, 1), ("root", 0, 2), ("dobj", 2, 3), ("det", 6, 5),
                            ("prep_with", 2, 6), ("prep_with", 8, 6), ("conj_and", 2, 8), ("dobj", 8, 9)),
            fires=("collapse_preps", "collapse_conj", "propagate_dependent"),
        ),
        TransformFixture(
            name="own_subject_blocks",
            sentence=_sentence("I ate and she drank", "PRP VBD CC PRP VBD", (2, 0, 2, 5, 2),
                               "nsubj root cc nsubj conj"),
            expected=_graph(("nsubj", 2, 1), ("root", 0, 2), ("nsubj", 5, 4), ("conj_and", 2, 5)),
            fires=("collapse_conj",),
        ),
        TransformFixture(
            name="object_propagation",
            sentence=_sentence("She cooked and ate pasta", "PRP VBD CC VBD NN", (2, 0, 2, 2, 2),
                               "nsubj root cc conj dobj"),
            expected=_graph(("nsubj", 2, 1), ("root", 0, 2), ("dobj", 2, 5), ("conj_and", 2, 4),
                            ("nsubj", 4, 1), ("dobj", 4, 5)),
            fires=("collapse_conj", "propagate_dependent"),
        ),
        TransformFixture(name="conj_without_cc", sentence=ran, expected=_tree_graph(ran)),
        TransformFixture(
            name="rule1_corrected",
            sentence=misattached,
            expected=_graph(("nsubj", 4, 1), ("conj_and", 1, 3), ("root", 0, 4)),
            fires=("rule1",),
        ),
        TransformFixture(
            name="rule1_literal",
            sentence=misattached,
            expected=_graph(("nsubj", 4, 1), ("cc", 1, 2), ("conj_and", 1, 2), ("root", 0, 4)),
            config=literal,
            fires=("rule1_literal",),
        ),
        TransformFixture(name="rule1_no_right_child", sentence=bread, expected=_tree_graph(bread)),
        TransformFixture(name="rule1_literal_no_right_child", sentence=bread, expected=_tree_graph(bread), config=literal),
        TransformFixture(
            name="rule2_fires", sentence=fork, expected=_graph(*fork_arcs), config=no_preps, fires=("rule2",)
        ),
        TransformFixture(
            name="rule2_order_violation", sentence=fronted, expected=_tree_graph(fronted), config=no_preps
        ),
        TransformFixture(
            name="already_collapsed",
            sentence=_sentence("dogs and cats sleep", "NNS CC NNS VBP", (4, 1, 1, 0), "nsubj dep conj_and root"),
            expected=_graph(("nsubj", 4, 1), ("dep", 1, 2), ("conj_and", 1, 3), ("nsubj", 4, 3), ("root", 0, 4)),
            fires=("propagate_governor",),
        ),
        TransformFixture(
            name="modifier_propagation",
            sentence=_sentence("old dogs and cats sleep", "JJ NNS CC NNS VBP", (2, 5, 2, 2, 0),
                               "amod nsubj cc conj root"),
            expected=_graph(("amod", 2, 1), ("nsubj", 5, 2), ("conj_and", 2, 4), ("root", 0, 5),
                            ("amod", 4, 1), ("nsubj", 5, 4)),
            fires=("collapse_conj", "propagate_dependent", "propagate_governor"),
        ),
        TransformFixture(
            name="object_between_conjuncts",
            sentence=_sentence("He ate soup and drank", "PRP VBD NN CC VBD", (2, 0, 2, 2, 2),
                               "nsubj root dobj cc conj"),
            expected=_graph(("nsubj", 2, 1), ("root", 0, 2), ("dobj", 2, 3), ("conj_and", 2, 5),
                            ("nsubj", 5, 1), ("dobj", 5, 3)),
            fires=("collapse_conj", "propagate_dependent"),
        ),
        TransformFixture(
            name="stages_disabled",
            sentence=golden,
            expected=_tree_graph(golden),
            config=TransformConfig(collapse_preps=False, collapse_conj=False, propagate=False, rule1=False, rule2=False),
        ),
    ]


def export_fixtures(directory: Union[str, Path]) -> List[Path]:
    """
    Write every transform golden as <name>.conll (Basic tree) and <name>.sd (expected graph)

    Returns:
        Written paths in fixture order
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create fixture directory {directory}: {e}") from e
    written = []
    for fixture in transform_fixture_set():
        conll = directory / f"{fixture.name}.conll"
        write_file(conll, write_conll([fixture.sentence]), "fixture")
        sd = directory / f"{fixture.name}.sd"
        write_file(sd, write_sd_graph(fixture.sentence, fixture.expected).encode("utf-8"), "fixture")
        written.extend([conll, sd])
    logger.info(f"Exported {len(written) // 2} transform fixtures to {directory}")
    return written
