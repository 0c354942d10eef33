"""
Core data model: tokens, sentences, Basic trees and CCprocessed graphs

ROOT is a virtual token with index 0. It never appears in Sentence.tokens;
head arrays use 0 to point at it, as in CoNLL files.
"""
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import TreeError

ROOT_INDEX = 0
ROOT_FORM = "ROOT"
ROOT_POS = "ROOT"


class Token(BaseModel):
    """One word of a sentence"""
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=1, description="1-based position in the sentence")
    form: str = Field(min_length=1, description="Surface string")
    lemma: str = Field(default="", description="Lemma, empty when the corpus has none")
    cpos: str = Field(default="_", description="Coarse POS tag")
    fpos: str = Field(default="_", description="Fine POS tag")


class DependencyTree(BaseModel):
    """
    Basic SD tree as parallel head and label arrays

    heads[i - 1] is the head of token i (0 = ROOT). Structural validity is checked
    by validate_tree rather than on construction, so broken predictions can still
    be represented and reported.
    """
    model_config = ConfigDict(frozen=True)

    heads: Tuple[int, ...] = Field(description="Head index per token, 0 for ROOT")
    labels: Tuple[str, ...] = Field(description="Relation label per token")

    @model_validator(mode="after")
    def _parallel_arrays(self) -> "DependencyTree":
        if len(self.heads) != len(self.labels):
            raise ValueError(f"{len(self.heads)} heads but {len(self.labels)} labels")
        return self

    def __len__(self) -> int:
        return len(self.heads)

    def head(self, m: int) -> int:
        return self.heads[m - 1]

    def label(self, m: int) -> str:
        return self.labels[m - 1]

    def children(self) -> Dict[int, List[int]]:
        """Children of every node (ROOT included), in linear order"""
        kids: Dict[int, List[int]] = {i: [] for i in range(len(self.heads) + 1)}
        for m, h in enumerate(self.heads, start=1):
            if h in kids:
                kids[h].append(m)
        return kids

    def require_valid(self, n: Optional[int] = None) -> "DependencyTree":
        verdict = validate_tree(self, len(self.heads) if n is None else n)
        if not verdict.valid:
            raise TreeError(verdict.reason)
        return self


class Sentence(BaseModel):
    """Token sequence with an optional gold Basic tree"""
    model_config = ConfigDict(frozen=True)

    tokens: Tuple[Token, ...] = Field(description="Tokens in order, indices 1..n")
    gold_tree: Optional[DependencyTree] = Field(default=None, description="Gold Basic tree when annotated")

    @model_validator(mode="after")
    def _contiguous_indices(self) -> "Sentence":
        for expected, token in enumerate(self.tokens, start=1):
            if token.index != expected:
                raise ValueError(f"token index {token.index} found where {expected} was expected")
        if self.gold_tree is not None and len(self.gold_tree) != len(self.tokens):
            raise ValueError(f"gold tree covers {len(self.gold_tree)} tokens, sentence has {len(self.tokens)}")
        return self

    def __len__(self) -> int:
        return len(self.tokens)

    def form(self, i: int) -> str:
        return ROOT_FORM if i == ROOT_INDEX else self.tokens[i - 1].form

    def pos(self, i: int) -> str:
        return ROOT_POS if i == ROOT_INDEX else self.tokens[i - 1].fpos

    def lemma(self, i: int) -> str:
        """Lemma with a lowercased-form fallback when the corpus supplies none"""
        if i == ROOT_INDEX:
            return ROOT_FORM
        token = self.tokens[i - 1]
        return token.lemma if token.lemma else token.form.lower()

    def with_tree(self, tree: Optional[DependencyTree]) -> "Sentence":
        return Sentence(tokens=self.tokens, gold_tree=tree)

    def with_tags(self, tags: List[str]) -> "Sentence":
        """Copy of the sentence whose POS columns are replaced by the given tags"""
        if len(tags) != len(self.tokens):
            raise ValueError(f"{len(tags)} tags for {len(self.tokens)} tokens")
        tokens = tuple(t.model_copy(update={"cpos": tag, "fpos": tag}) for t, tag in zip(self.tokens, tags))
        return Sentence(tokens=tokens, gold_tree=self.gold_tree)


class DependencyArc(BaseModel):
    """Typed dependency tuple <T, P, C>"""
    model_config = ConfigDict(frozen=True)

    dep_type: str = Field(min_length=1, description="Relation label T")
    parent: int = Field(ge=0, description="Parent index P, 0 for ROOT")
    child: int = Field(ge=1, description="Child index C")

    @model_validator(mode="after")
    def _no_self_loop(self) -> "DependencyArc":
        if self.parent == self.child:
            raise ValueError(f"arc {self.dep_type} attaches token {self.child} to itself")
        return self

    def sort_key(self) -> Tuple[int, int, str]:
        return (self.child, self.parent, self.dep_type)

    def __str__(self) -> str:
        return f"{self.dep_type}({self.parent}->{self.child})"


class DependencyGraph(BaseModel):
    """Set of typed arcs; a child may have several parents"""
    model_config = ConfigDict(frozen=True)

    arcs: FrozenSet[DependencyArc] = Field(default_factory=frozenset, description="Typed arcs, set semantics")

    def __len__(self) -> int:
        return len(self.arcs)

    def __contains__(self, arc: object) -> bool:
        return arc in self.arcs

    def sorted_arcs(self) -> List[DependencyArc]:
        return sorted(self.arcs, key=DependencyArc.sort_key)

    def unlabeled(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset((a.parent, a.child) for a in self.arcs)


class TreeVerdict(BaseModel):
    """Outcome of validate_tree: valid, or the first violation found"""
    model_config = ConfigDict(frozen=True)

    valid: bool
    reason: Optional[str] = None
    cycle: Tuple[int, ...] = ()


# ============================================================================
# Structural checks
# ============================================================================

def _find_cycle(heads: Tuple[int, ...]) -> Optional[List[int]]:
    n = len(heads)
    state = [0] * (n + 1)  # 0 unseen, 1 on current path, 2 done
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            cycle = path[path.index(node):]
            first = cycle.index(min(cycle))
            return cycle[first:] + cycle[:first]
        for visited in path:
            state[visited] = 2
    return None


def validate_tree(tree: DependencyTree, n: int) -> TreeVerdict:
    """
    Check that a head array forms a single-rooted tree over n tokens

    Args:
        tree: Candidate tree
        n: Sentence length

    Returns:
        TreeVerdict naming the first violation (length, range, cycle, root count)
    """
    heads = tree.heads
    if len(heads) != n:
        return TreeVerdict(valid=False, reason=f"tree has {len(heads)} heads for a sentence of {n} tokens")
    for m, h in enumerate(heads, start=1):
        if not 0 <= h <= n:
            return TreeVerdict(valid=False, reason=f"head {h} of token {m} is out of range 0..{n}")
        if h == m:
            return TreeVerdict(valid=False, reason=f"token {m} is its own head", cycle=(m,))
    cycle = _find_cycle(heads)
    if cycle is not None:
        return TreeVerdict(valid=False, reason=f"cycle through tokens {cycle}", cycle=tuple(cycle))
    roots = [m for m, h in enumerate(heads, start=1) if h == 0]
    if len(roots) != 1:
        return TreeVerdict(valid=False, reason=f"expected exactly one ROOT child, found {len(roots)}: {roots}")
    return TreeVerdict(valid=True)


def is_projective(tree: DependencyTree) -> bool:
    """True iff every token strictly inside an arc descends from that arc's head"""
    tree.require_valid()
    heads = (0,) + tree.heads

    def descends_from(node: int, ancestor: int) -> bool:
        while node != 0:
            node = heads[node]
            if node == ancestor:
                return True
        return ancestor == 0

    for m in range(1, len(heads)):
        h = heads[m]
        lo, hi = min(h, m), max(h, m)
        for between in range(lo + 1, hi):
            if not descends_from(between, h):
                return False
    return True


def tree_to_graph(tree: DependencyTree) -> DependencyGraph:
    """One arc <labels[i], heads[i], i> per token"""
    if len(tree) == 0:
        return DependencyGraph()
    tree.require_valid()
    return DependencyGraph(arcs=frozenset(
        DependencyArc(dep_type=label, parent=head, child=m)
        for m, (head, label) in enumerate(zip(tree.heads, tree.labels), start=1)
    ))
