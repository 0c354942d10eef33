"""
Basic to CCprocessed rewriting

Implements an enumerated subset of the CCprocessed conventions: prep/pobj
collapsing, cc/conj typing, subject/object conjunct propagation and the two
repair rules for leftover uncollapsed cc and prep arcs. Every transform runs to
a fixpoint, so applying it twice equals applying it once.
"""
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Set, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import DependencyArc, DependencyGraph, DependencyTree, Sentence, tree_to_graph

SUBJECT_RELATIONS = ("nsubj", "nsubjpass")
OBJECT_RELATIONS = ("dobj", "iobj")
MODIFIER_RELATIONS = ("amod", "advmod")
SHARED_RELATIONS = SUBJECT_RELATIONS + OBJECT_RELATIONS + MODIFIER_RELATIONS
PREP_PREFIX = "prep_"
CONJ_PREFIX = "conj_"

Rule1Mode = Literal["corrected", "literal"]


class TransformConfig(BaseModel):
    """Stage switches for basic_to_ccprocessed"""
    model_config = ConfigDict(frozen=True)

    rule1_mode: Rule1Mode = Field(default="corrected", description="corrected: conj_B(A->C); literal: conj_B(A->B)")
    collapse_preps: bool = True
    collapse_conj: bool = True
    propagate: bool = True
    rule1: bool = True
    rule2: bool = True


class TransformRule(BaseModel):
    """One fired rewrite: bound pattern variables plus the arcs it added and removed"""
    model_config = ConfigDict(frozen=True)

    rule_id: str
    bindings: Dict[str, Union[int, str]] = Field(description="Pattern variables (token indices, relation T)")
    added: Tuple[DependencyArc, ...] = ()
    removed: Tuple[DependencyArc, ...] = ()

    @model_validator(mode="after")
    def _arcs_use_bindings(self) -> "TransformRule":
        bound = {value for value in self.bindings.values() if isinstance(value, int)}
        for arc in self.added + self.removed:
            if arc.parent not in bound or arc.child not in bound:
                raise ValueError(f"{self.rule_id}: arc {arc} references unbound tokens")
        return self

    def to_text(self) -> str:
        bindings = " ".join(f"{k}={v}" for k, v in self.bindings.items())
        changes = [f"+{a}" for a in self.added] + [f"-{a}" for a in self.removed]
        return f"{self.rule_id} {bindings} {' '.join(changes)}".rstrip()


class TransformTrace(BaseModel):
    """Ordered record of every rewrite applied to a sentence"""
    steps: List[TransformRule] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def rules_fired(self) -> Set[str]:
        return {step.rule_id for step in self.steps}

    def to_text(self) -> str:
        return "".join(step.to_text() + "\n" for step in self.steps)


def _word(sentence: Sentence, index: int) -> str:
    return sentence.form(index).lower()


def _arc(dep_type: str, parent: int, child: int) -> DependencyArc:
    return DependencyArc(dep_type=dep_type, parent=parent, child=child)


def _sorted(arcs: Iterable[DependencyArc]) -> List[DependencyArc]:
    return sorted(arcs, key=DependencyArc.sort_key)


def _rewrite(
    arcs: Set[DependencyArc],
    trace: Optional[List[TransformRule]],
    rule_id: str,
    bindings: Dict[str, Union[int, str]],
    add: Sequence[DependencyArc] = (),
    remove: Sequence[DependencyArc] = (),
) -> bool:
    """Apply the effective part of a rewrite; returns whether anything changed"""
    added = tuple(_sorted(a for a in set(add) if a not in arcs))
    removed = tuple(_sorted(a for a in set(remove) if a in arcs and a not in add))
    if not added and not removed:
        return False
    arcs.difference_update(removed)
    arcs.update(added)
    if trace is not None:
        trace.append(TransformRule(rule_id=rule_id, bindings=bindings, added=added, removed=removed))
    return True


def _graph(arcs: Set[DependencyArc]) -> DependencyGraph:
    return DependencyGraph(arcs=frozenset(arcs))


# ============================================================================
# Collapsing
# ============================================================================

def collapse_preps(
    graph: DependencyGraph,
    sentence: Sentence,
    trace: Optional[List[TransformRule]] = None,
) -> DependencyGraph:
    """
    Collapse prep(A -> B) + pobj(B -> C) into prep_b(A -> C)

    Args:
        graph: Input arcs
        sentence: Supplies the preposition word b (lowercased)
        trace: When given, receives one TransformRule per collapse

    Returns:
        Graph with no prep arc whose dependent still has a pobj child
    """
    arcs = set(graph.arcs)
    while True:
        match = None
        for prep in _sorted(a for a in arcs if a.dep_type == "prep"):
            objects = [a for a in _sorted(arcs) if a.dep_type == "pobj" and a.parent == prep.child and a.child != prep.parent]
            if objects:
                match = prep, objects[0]
                break
        if match is None:
            break
        prep, pobj = match
        a, b, c = prep.parent, prep.child, pobj.child
        _rewrite(arcs, trace, "collapse_preps", {"A": a, "B": b, "C": c},
                 add=[_arc(PREP_PREFIX + _word(sentence, b), a, c)], remove=[prep, pobj])
    return _graph(arcs)


def collapse_conj(
    graph: DependencyGraph,
    sentence: Sentence,
    trace: Optional[List[TransformRule]] = None,
) -> DependencyGraph:
    """
    Type conjuncts with their coordinating word

    cc(A -> B) plus conj(A -> C) with B between A and C becomes conj_b(A -> C);
    every plain conj child of A on B's side is typed, and the cc arc is dropped.
    """
    arcs = set(graph.arcs)
    while True:
        match = None
        for cc in _sorted(a for a in arcs if a.dep_type == "cc"):
            a, b = cc.parent, cc.child
            same_side = [x for x in _sorted(arcs)
                         if x.dep_type == "conj" and x.parent == a and (x.child - a) * (b - a) > 0]
            if any(min(a, x.child) < b < max(a, x.child) for x in same_side):
                match = cc, same_side
                break
        if match is None:
            break
        cc, conjuncts = match
        label = CONJ_PREFIX + _word(sentence, cc.child)
        bindings = {"A": cc.parent, "B": cc.child}
        bindings.update({f"C{i}": x.child for i, x in enumerate(conjuncts, start=1)})
        _rewrite(arcs, trace, "collapse_conj", bindings,
                 add=[_arc(label, cc.parent, x.child) for x in conjuncts], remove=[cc] + conjuncts)
    return _graph(arcs)


# ============================================================================
# Propagation
# ============================================================================

def _is_shared(relation: str) -> bool:
    return relation in SHARED_RELATIONS or relation.startswith(PREP_PREFIX)


def _has_relation(arcs: Set[DependencyArc], parent: int, relation: str) -> bool:
    family = SUBJECT_RELATIONS if relation in SUBJECT_RELATIONS else (relation,)
    return any(x.parent == parent and x.dep_type in family for x in arcs)


def propagate_conjuncts(
    graph: DependencyGraph,
    sentence: Optional[Sentence] = None,
    trace: Optional[List[TransformRule]] = None,
) -> DependencyGraph:
    """
    Copy relations across typed conjuncts conj_x(A -> C)

    Shared relations are subjects, objects, amod, advmod and collapsed prep_x arcs.
    Dependent side: every shared R(A -> D) with D != C gains R(C -> D), unless C
    already has R of its own (any subject relation blocks a subject copy).
    Governor side: when A is itself the dependent of a shared R(P -> A), R(P -> C)
    is added.
    """
    arcs = set(graph.arcs)
    changed = True
    while changed:
        changed = False
        for conj in _sorted(x for x in arcs if x.dep_type.startswith(CONJ_PREFIX)):
            a, c = conj.parent, conj.child
            for arc in _sorted(x for x in arcs if x.parent == a):
                d, relation = arc.child, arc.dep_type
                if d == c or not _is_shared(relation) or _has_relation(arcs, c, relation):
                    continue
                changed |= _rewrite(arcs, trace, "propagate_dependent",
                                    {"A": a, "C": c, "D": d, "T": relation}, add=[_arc(relation, c, d)])
            for arc in _sorted(x for x in arcs if x.child == a):
                p, relation = arc.parent, arc.dep_type
                if p == c or not _is_shared(relation):
                    continue
                changed |= _rewrite(arcs, trace, "propagate_governor",
                                    {"A": a, "C": c, "P": p, "T": relation}, add=[_arc(relation, p, c)])
    return _graph(arcs)


# ============================================================================
# Repair rules for leftover cc and prep arcs
# ============================================================================

def apply_rule1(
    graph: DependencyGraph,
    sentence: Sentence,
    mode: Rule1Mode = "corrected",
    trace: Optional[List[TransformRule]] = None,
) -> DependencyGraph:
    """
    Repair uncollapsed cc(A -> B) with A before B

    C is the first child of A to the right of B, reached by T(A -> C).
    corrected: add conj_b(A -> C), remove T(A -> C) and cc(A -> B).
    literal: add conj_b(A -> B), remove T(A -> C); skipped once A already has a
    typed conj arc to B.
    """
    if mode not in ("corrected", "literal"):
        raise ValueError(f"unknown rule-1 mode {mode!r}")
    arcs = set(graph.arcs)
    while True:
        match = None
        for cc in _sorted(x for x in arcs if x.dep_type == "cc"):
            a, b = cc.parent, cc.child
            if a >= b:
                continue
            if mode == "literal" and any(
                x.parent == a and x.child == b and x.dep_type.startswith(CONJ_PREFIX) for x in arcs
            ):
                continue
            right = [x for x in _sorted(arcs) if x.parent == a and x.child > b]
            if right:
                match = cc, min(right, key=lambda x: (x.child, x.dep_type))
                break
        if match is None:
            break
        cc, target = match
        a, b, c = cc.parent, cc.child, target.child
        label = CONJ_PREFIX + _word(sentence, b)
        bindings = {"A": a, "B": b, "C": c, "T": target.dep_type}
        if mode == "corrected":
            _rewrite(arcs, trace, "rule1", bindings, add=[_arc(label, a, c)], remove=[target, cc])
        else:
            _rewrite(arcs, trace, "rule1_literal", bindings, add=[_arc(label, a, b)], remove=[target])
    return _graph(arcs)


def apply_rule2(
    graph: DependencyGraph,
    sentence: Sentence,
    trace: Optional[List[TransformRule]] = None,
) -> DependencyGraph:
    """Repair uncollapsed prep(A -> B), pobj(B -> C) when A < B < C"""
    arcs = set(graph.arcs)
    while True:
        match = None
        for prep in _sorted(x for x in arcs if x.dep_type == "prep"):
            a, b = prep.parent, prep.child
            if a >= b:
                continue
            objects = [x for x in _sorted(arcs) if x.dep_type == "pobj" and x.parent == b and x.child > b]
            if objects:
                match = prep, objects[0]
                break
        if match is None:
            break
        prep, pobj = match
        a, b, c = prep.parent, prep.child, pobj.child
        _rewrite(arcs, trace, "rule2", {"A": a, "B": b, "C": c},
                 add=[_arc(PREP_PREFIX + _word(sentence, b), a, c)], remove=[prep, pobj])
    return _graph(arcs)


# ============================================================================
# Pipeline
# ============================================================================

def basic_to_ccprocessed(
    tree: DependencyTree,
    sentence: Sentence,
    config: Optional[TransformConfig] = None,
) -> Tuple[DependencyGraph, TransformTrace]:
    """
    Convert a Basic tree into a CCprocessed graph

    Args:
        tree: Valid Basic tree over the sentence
        sentence: Sentence supplying the words used in collapsed labels
        config: Stage switches and rule-1 mode

    Returns:
        (graph, trace) where replaying the trace on tree_to_graph(tree) gives graph
    """
    config = config or TransformConfig()
    tree.require_valid(len(sentence))
    steps: List[TransformRule] = []
    graph = tree_to_graph(tree)
    if config.collapse_preps:
        graph = collapse_preps(graph, sentence, steps)
    if config.collapse_conj:
        graph = collapse_conj(graph, sentence, steps)
    if config.propagate:
        graph = propagate_conjuncts(graph, sentence, steps)
    if config.rule1:
        graph = apply_rule1(graph, sentence, config.rule1_mode, steps)
    if config.rule2:
        graph = apply_rule2(graph, sentence, steps)
    return graph, TransformTrace(steps=steps)


def replay_trace(graph: DependencyGraph, trace: TransformTrace) -> DependencyGraph:
    arcs = set(graph.arcs)
    for step in trace.steps:
        arcs.difference_update(step.removed)
        arcs.update(step.added)
    return _graph(arcs)


def transform_corpus(
    corpus: Sequence[Sentence],
    trees: Sequence[DependencyTree],
    config: Optional[TransformConfig] = None,
) -> List[DependencyGraph]:
    """CCprocessed graph of every (sentence, tree) pair"""
    graphs = [basic_to_ccprocessed(tree, sentence, config)[0] for sentence, tree in zip(corpus, trees)]
    logger.debug(f"Transformed {len(graphs)} trees")
    return graphs
