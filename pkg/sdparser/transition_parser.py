"""
Greedy arc-standard shift-reduce parsing with a static oracle
"""
from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .core import ROOT_INDEX, DependencyArc, DependencyTree, Sentence, is_projective
from .corpus_io import corpus_fingerprint
from .errors import ConfigError, DataError, OracleError, TransitionError
from .features import FeatureVector, TemplateConfig, transition_features
from .learn import Model, class_scores, require_gold_trees, train_multiclass

SHIFT = "SHIFT"
LEFT_ARC = "LEFT_ARC"
RIGHT_ARC = "RIGHT_ARC"
UNATTACHED = -1
FALLBACK_LABEL = "dep"


@dataclass(frozen=True)
class Transition:
    kind: str
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (SHIFT, LEFT_ARC, RIGHT_ARC):
            raise TransitionError(f"unknown transition kind {self.kind!r}")
        if (self.kind == SHIFT) != (self.label is None):
            raise TransitionError(f"{self.kind} {'takes no' if self.kind == SHIFT else 'needs a'} label")

    @property
    def name(self) -> str:
        return self.kind if self.label is None else f"{self.kind}:{self.label}"

    @classmethod
    def from_name(cls, name: str) -> "Transition":
        kind, _, label = name.partition(":")
        return cls(kind, label or None)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ParserConfig:
    """
    Arc-standard configuration

    heads and labels are per token (index m - 1); unattached tokens have head -1.
    """
    stack: Tuple[int, ...]
    buffer: Tuple[int, ...]
    heads: Tuple[int, ...]
    labels: Tuple[str, ...]

    @property
    def arcs(self) -> FrozenSet[DependencyArc]:
        return frozenset(
            DependencyArc(dep_type=label, parent=h, child=m)
            for m, (h, label) in enumerate(zip(self.heads, self.labels), start=1)
            if h != UNATTACHED
        )

    @property
    def terminal(self) -> bool:
        return self.stack == (ROOT_INDEX,) and not self.buffer

    def attached_children(self, node: int) -> int:
        return sum(1 for h in self.heads if h == node)

    def to_tree(self) -> DependencyTree:
        if UNATTACHED in self.heads:
            raise TransitionError("configuration still has unattached tokens")
        return DependencyTree(heads=self.heads, labels=self.labels)


def initial_config(n: int) -> ParserConfig:
    return ParserConfig(
        stack=(ROOT_INDEX,),
        buffer=tuple(range(1, n + 1)),
        heads=(UNATTACHED,) * n,
        labels=("",) * n,
    )


def _attach(config: ParserConfig, head: int, dependent: int, label: str, stack: Tuple[int, ...]) -> ParserConfig:
    heads = list(config.heads)
    labels = list(config.labels)
    heads[dependent - 1] = head
    labels[dependent - 1] = label
    return ParserConfig(stack=stack, buffer=config.buffer, heads=tuple(heads), labels=tuple(labels))


def apply(config: ParserConfig, transition: Transition) -> ParserConfig:
    """
    Apply one transition

    Args:
        config: Current configuration
        transition: SHIFT, LEFT_ARC(label) or RIGHT_ARC(label)

    Returns:
        The successor configuration
    """
    if transition.kind == SHIFT:
        if not config.buffer:
            raise TransitionError("SHIFT needs a non-empty buffer")
        return ParserConfig(
            stack=config.stack + config.buffer[:1],
            buffer=config.buffer[1:],
            heads=config.heads,
            labels=config.labels,
        )
    if len(config.stack) < 2:
        raise TransitionError(f"{transition.kind} needs at least two stack items, stack is {list(config.stack)}")
    s1, s0 = config.stack[-2], config.stack[-1]
    if transition.kind == LEFT_ARC:
        if s1 == ROOT_INDEX:
            raise TransitionError("LEFT_ARC cannot make ROOT a dependent")
        return _attach(config, s0, s1, transition.label, config.stack[:-2] + (s0,))
    return _attach(config, s1, s0, transition.label, config.stack[:-1])


def legal_transitions(config: ParserConfig) -> List[str]:
    """Transition kinds that keep the derivation on track for a single-rooted tree"""
    kinds = []
    if config.buffer:
        kinds.append(SHIFT)
    if len(config.stack) >= 2:
        s1 = config.stack[-2]
        if s1 != ROOT_INDEX:
            kinds.append(LEFT_ARC)
        if s1 != ROOT_INDEX or not config.buffer:
            kinds.append(RIGHT_ARC)
    return kinds


def _oracle_step(config: ParserConfig, gold: DependencyTree, gold_children: List[int]) -> Transition:
    if len(config.stack) >= 2:
        s1, s0 = config.stack[-2], config.stack[-1]
        if s1 != ROOT_INDEX and gold.head(s1) == s0 and config.attached_children(s1) == gold_children[s1]:
            return Transition(LEFT_ARC, gold.label(s1))
        if gold.head(s0) == s1 and config.attached_children(s0) == gold_children[s0]:
            return Transition(RIGHT_ARC, gold.label(s0))
    if not config.buffer:
        raise OracleError(f"no gold transition applies to stack {list(config.stack)}")
    return Transition(SHIFT)


def _child_counts(gold: DependencyTree) -> List[int]:
    counts = [0] * (len(gold) + 1)
    for h in gold.heads:
        counts[h] += 1
    return counts


def static_oracle(config: ParserConfig, gold: DependencyTree) -> Transition:
    """
    Gold transition for a configuration

    Args:
        config: Current configuration
        gold: Projective gold tree

    Returns:
        LEFT_ARC or RIGHT_ARC when the gold arc between the two stack tops is due
        (the dependent has collected all its gold children), otherwise SHIFT
    """
    if not is_projective(gold):
        raise OracleError("the static oracle is undefined for non-projective trees")
    return _oracle_step(config, gold, _child_counts(gold))


def oracle_transitions(gold: DependencyTree) -> List[Transition]:
    """Full static-oracle derivation of a projective tree"""
    if not is_projective(gold):
        raise OracleError("the static oracle is undefined for non-projective trees")
    counts = _child_counts(gold)
    config = initial_config(len(gold))
    sequence = []
    while not config.terminal:
        transition = _oracle_step(config, gold, counts)
        sequence.append(transition)
        config = apply(config, transition)
    return sequence


def config_features(sentence: Sentence, config: ParserConfig, template_config: TemplateConfig) -> FeatureVector:
    return transition_features(sentence, config.stack, config.buffer, config.heads, config.labels, template_config)


# ============================================================================
# Training and parsing
# ============================================================================

def oracle_instances(
    corpus: Sequence[Sentence],
    config: TemplateConfig,
) -> Tuple[List[Tuple[FeatureVector, str]], int]:
    """(features, gold transition name) for every oracle step; returns the skipped count too"""
    instances, skipped = [], 0
    for number, sentence in enumerate(corpus, start=1):
        gold = sentence.gold_tree
        if gold is None:
            raise DataError(f"training sentence {number} has no gold tree")
        if len(sentence) == 0:
            continue
        if not is_projective(gold):
            skipped += 1
            continue
        state = initial_config(len(sentence))
        for transition in oracle_transitions(gold):
            instances.append((config_features(sentence, state, config), transition.name))
            state = apply(state, transition)
    return instances, skipped


def train_transition(
    corpus: Sequence[Sentence],
    config: Optional[TemplateConfig] = None,
    epochs: int = 10,
    seed: Optional[int] = None,
    shuffle: bool = False,
) -> Model:
    """
    Train the greedy transition classifier on static-oracle derivations

    Args:
        corpus: Sentences with gold trees; non-projective ones are skipped
        config: Template configuration (only hash_bits and distance bins matter)
        epochs: Passes over the oracle instances
        seed: Seed for the optional shuffle
        shuffle: Shuffle instances each epoch

    Returns:
        Model of kind "transition"
    """
    config = config or TemplateConfig()
    if not corpus:
        raise DataError("cannot train on an empty corpus")
    require_gold_trees(corpus)
    instances, skipped = oracle_instances(corpus, config)
    if skipped:
        logger.warning(f"Skipped {skipped} non-projective sentences for transition training")
    if not instances:
        raise DataError("no projective training sentences")
    logger.info(f"Training transition classifier on {len(instances)} oracle steps, {epochs} epochs")
    classifier = train_multiclass(instances, epochs=epochs, seed=seed, hash_bits=config.hash_bits, shuffle=shuffle)
    labels = sorted({label for s in corpus if s.gold_tree is not None for label in s.gold_tree.labels})
    return Model(
        kind="transition",
        weights=classifier.weights,
        labels=tuple(labels),
        config=config,
        decoder="greedy",
        classes=classifier.classes,
        metadata={**classifier.metadata, "fingerprint": corpus_fingerprint(corpus), "skipped": skipped},
    )


def parse_greedy(sentence: Sentence, model: Model, history: Optional[List[Transition]] = None) -> DependencyTree:
    """
    Greedy arc-standard parse

    Args:
        sentence: Sentence to parse
        model: Transition classifier
        history: When given, receives every transition taken

    Returns:
        A projective tree built in exactly 2n transitions; illegal predictions fall
        back to the best-scoring legal transition
    """
    if model.kind != "transition":
        raise ConfigError(f"a {model.kind} model cannot drive the transition parser")
    ranked_classes = [Transition.from_name(name) for name in model.classes]
    fallback_label = model.labels[0] if model.labels else FALLBACK_LABEL
    state = initial_config(len(sentence))
    while not state.terminal:
        legal = legal_transitions(state)
        scores = class_scores(model.weights, config_features(sentence, state, model.config), model.class_salts)
        chosen = None
        for i in np.argsort(-scores, kind="stable"):
            if ranked_classes[i].kind in legal:
                chosen = ranked_classes[i]
                break
        if chosen is None:
            kind = legal[0]
            chosen = Transition(kind, None if kind == SHIFT else fallback_label)
        if history is not None:
            history.append(chosen)
        state = apply(state, chosen)
    return state.to_tree()


class TransitionParser:
    """Callable wrapper around parse_greedy"""

    def __init__(self, model: Model):
        if model.kind != "transition":
            raise ConfigError(f"a {model.kind} model cannot drive the transition parser")
        self.model = model

    def parse(self, sentence: Sentence, annotation: Optional[DependencyTree] = None) -> DependencyTree:
        return parse_greedy(sentence, self.model)

    __call__ = parse
