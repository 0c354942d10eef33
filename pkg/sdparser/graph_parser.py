"""
Graph-based decoding over hashed arc, sibling and grandparent scores

Charts index tokens 1..n; ROOT (0) takes exactly one child, added on top of the
span charts. Ties go to the first maximum in chart order, which makes every
decoder deterministic.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .core import DependencyTree, Sentence
from .errors import ConfigError
from .features import SentenceFeatures, grandparent_parts, sibling_parts

if TYPE_CHECKING:
    from .learn import Model

DECODERS = ("proj", "nonproj", "sib", "sib-gp")
MAX_BRUTE_FORCE = 8
IMPROVEMENT_EPSILON = 1e-9


# ============================================================================
# Score containers
# ============================================================================

@dataclass(frozen=True)
class ArcScores:
    """
    Labeled arc scores s[h, m, l] and their label-maximized reduction

    `best[h, m]` is -inf on excluded slots (m = 0 or h = m).
    """
    labeled: np.ndarray
    labels: Tuple[str, ...]
    best: np.ndarray = field(init=False, repr=False)
    best_label: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        labeled = np.asarray(self.labeled, dtype=np.float64)
        if labeled.ndim != 3 or labeled.shape[0] != labeled.shape[1] or labeled.shape[2] != len(self.labels):
            raise ValueError(f"arc scores of shape {labeled.shape} do not match {len(self.labels)} labels")
        if not self.labels:
            raise ValueError("arc scores need at least one label")
        width = labeled.shape[0]
        valid = ~np.eye(width, dtype=bool)
        valid[:, 0] = False
        safe = np.where(valid[:, :, None], labeled, 0.0)
        if not np.all(np.isfinite(safe)):
            raise ValueError("arc scores must be finite")
        best = safe.max(axis=2)
        best[~valid] = -np.inf
        object.__setattr__(self, "labeled", safe)
        object.__setattr__(self, "best", best)
        object.__setattr__(self, "best_label", safe.argmax(axis=2))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, label: str = "dep") -> "ArcScores":
        """Single-label scores from an (n + 1, n + 1) matrix indexed [h, m]"""
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(labeled=np.nan_to_num(matrix, neginf=0.0, posinf=0.0)[:, :, None], labels=(label,))

    @property
    def n(self) -> int:
        return self.best.shape[0] - 1

    def label_of(self, h: int, m: int) -> str:
        return self.labels[int(self.best_label[h, m])]


@dataclass(frozen=True)
class SiblingScores:
    """s2[h, s, m] for consecutive modifiers s, m of h; s == h stands for NULL"""
    scores: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SiblingScores":
        return cls(np.zeros((n + 1, n + 1, n + 1)))


@dataclass(frozen=True)
class GrandparentScores:
    """s3[g, h, m] for arcs g -> h and h -> m"""
    scores: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GrandparentScores":
        return cls(np.zeros((n + 1, n + 1, n + 1)))


def _check_n(scores: ArcScores, n: Optional[int]) -> int:
    if n is None:
        n = scores.n
    if n != scores.n:
        raise ValueError(f"scores cover {scores.n} tokens, asked to decode {n}")
    if n < 1:
        raise ValueError("decoding needs at least one token")
    return n


def _tree(scores: ArcScores, heads: Sequence[int]) -> DependencyTree:
    return DependencyTree(
        heads=tuple(int(h) for h in heads),
        labels=tuple(scores.label_of(int(h), m) for m, h in enumerate(heads, start=1)),
    )


def tree_score(
    arc: ArcScores,
    heads: Sequence[int],
    sib: Optional[SiblingScores] = None,
    gp: Optional[GrandparentScores] = None,
) -> float:
    """Arc + consecutive-sibling + grandparent objective of a head array"""
    total = 0.0
    for m, h in enumerate(heads, start=1):
        total += float(arc.best[h, m])
    if sib is not None:
        for h, s, m in sibling_parts(heads):
            total += float(sib.scores[h, s, m])
    if gp is not None:
        for g, h, m in grandparent_parts(heads):
            total += float(gp.scores[g, h, m])
    return total


def _follow(stack: List[Tuple[str, int, int]], heads: List[int], splits: dict, sibling: bool) -> None:
    """Walk back-pointers, filling heads in place"""
    complete_r, complete_l, incomplete, incomplete_r, incomplete_l, sib_chart = (
        splits["cr"], splits["cl"], splits.get("i"), splits.get("ir"), splits.get("il"), splits.get("sg"),
    )
    while stack:
        kind, s, t = stack.pop()
        if s == t and kind in ("cr", "cl"):
            continue
        if kind == "cr":
            r = complete_r[s, t]
            stack += [("ir", s, r), ("cr", r, t)]
        elif kind == "cl":
            r = complete_l[s, t]
            stack += [("cl", s, r), ("il", r, t)]
        elif kind == "sg":
            r = sib_chart[s, t]
            stack += [("cr", s, r), ("cl", r + 1, t)]
        elif not sibling:
            r = incomplete[s, t]
            if kind == "ir":
                heads[t] = s
            else:
                heads[s] = t
            stack += [("cr", s, r), ("cl", r + 1, t)]
        elif kind == "ir":
            heads[t] = s
            r = incomplete_r[s, t]
            stack += [("cl", s + 1, t)] if r < 0 else [("ir", s, r), ("sg", r, t)]
        else:
            heads[s] = t
            r = incomplete_l[s, t]
            stack += [("cr", s, t - 1)] if r < 0 else [("sg", s, r), ("il", r, t)]


# ============================================================================
# First-order projective (Eisner)
# ============================================================================

def decode_projective(scores: ArcScores, n: Optional[int] = None) -> DependencyTree:
    """
    Best projective tree with a single ROOT child

    Args:
        scores: Arc scores; labels are taken from the per-arc argmax
        n: Sentence length (defaults to the size of the score matrix)

    Returns:
        The maximum-score projective DependencyTree
    """
    n = _check_n(scores, n)
    best = scores.best
    size = n + 2
    complete_r = np.zeros((size, size))
    complete_l = np.zeros((size, size))
    incomplete_r = np.full((size, size), -np.inf)
    incomplete_l = np.full((size, size), -np.inf)
    split_i = np.zeros((size, size), dtype=np.int64)
    split_cr = np.zeros((size, size), dtype=np.int64)
    split_cl = np.zeros((size, size), dtype=np.int64)

    for width in range(1, n):
        for s in range(1, n - width + 1):
            t = s + width
            joint = complete_r[s, s:t] + complete_l[s + 1:t + 1, t]
            r = int(np.argmax(joint))
            split_i[s, t] = s + r
            incomplete_r[s, t] = joint[r] + best[s, t]
            incomplete_l[s, t] = joint[r] + best[t, s]

            right = incomplete_r[s, s + 1:t + 1] + complete_r[s + 1:t + 1, t]
            r = int(np.argmax(right))
            split_cr[s, t] = s + 1 + r
            complete_r[s, t] = right[r]

            left = complete_l[s, s:t] + incomplete_l[s:t, t]
            r = int(np.argmax(left))
            split_cl[s, t] = s + r
            complete_l[s, t] = left[r]

    candidates = np.arange(1, n + 1)
    rooted = best[0, 1:n + 1] + complete_l[1, candidates] + complete_r[candidates, n]
    root = int(np.argmax(rooted)) + 1

    heads = [0] * (n + 1)
    _follow([("cl", 1, root), ("cr", root, n)], heads, {"cr": split_cr, "cl": split_cl, "i": split_i}, sibling=False)
    heads[root] = 0
    return _tree(scores, heads[1:])


# ============================================================================
# Second-order consecutive-sibling projective
# ============================================================================

def decode_projective_sibling(arc: ArcScores, sib: SiblingScores, n: Optional[int] = None) -> DependencyTree:
    """
    Best projective tree under arc plus consecutive-sibling scores

    Args:
        arc: Arc scores
        sib: Sibling scores indexed [h, s, m], s == h for the first child
        n: Sentence length

    Returns:
        The maximum-score projective DependencyTree with a single ROOT child
    """
    n = _check_n(arc, n)
    best = arc.best
    s2 = sib.scores
    size = n + 2
    complete_r = np.zeros((size, size))
    complete_l = np.zeros((size, size))
    incomplete_r = np.full((size, size), -np.inf)
    incomplete_l = np.full((size, size), -np.inf)
    sib_chart = np.full((size, size), -np.inf)
    split_ir = np.full((size, size), -1, dtype=np.int64)
    split_il = np.full((size, size), -1, dtype=np.int64)
    split_sg = np.zeros((size, size), dtype=np.int64)
    split_cr = np.zeros((size, size), dtype=np.int64)
    split_cl = np.zeros((size, size), dtype=np.int64)

    for width in range(1, n):
        for s in range(1, n - width + 1):
            t = s + width
            joint = complete_r[s, s:t] + complete_l[s + 1:t + 1, t]
            r = int(np.argmax(joint))
            split_sg[s, t] = s + r
            sib_chart[s, t] = joint[r]

            # t attaches to s; previous sibling r or none
            value = complete_l[s + 1, t] + s2[s, s, t]
            if width > 1:
                inner = incomplete_r[s, s + 1:t] + sib_chart[s + 1:t, t] + s2[s, s + 1:t, t]
                r = int(np.argmax(inner))
                if inner[r] > value:
                    value, split_ir[s, t] = inner[r], s + 1 + r
            incomplete_r[s, t] = value + best[s, t]

            # s attaches to t; previous sibling r or none
            value = complete_r[s, t - 1] + s2[t, t, s]
            if width > 1:
                inner = sib_chart[s, s + 1:t] + incomplete_l[s + 1:t, t] + s2[t, s + 1:t, s]
                r = int(np.argmax(inner))
                if inner[r] > value:
                    value, split_il[s, t] = inner[r], s + 1 + r
            incomplete_l[s, t] = value + best[t, s]

            right = incomplete_r[s, s + 1:t + 1] + complete_r[s + 1:t + 1, t]
            r = int(np.argmax(right))
            split_cr[s, t] = s + 1 + r
            complete_r[s, t] = right[r]

            left = complete_l[s, s:t] + incomplete_l[s:t, t]
            r = int(np.argmax(left))
            split_cl[s, t] = s + r
            complete_l[s, t] = left[r]

    candidates = np.arange(1, n + 1)
    rooted = best[0, 1:n + 1] + s2[0, 0, 1:n + 1] + complete_l[1, candidates] + complete_r[candidates, n]
    root = int(np.argmax(rooted)) + 1

    heads = [0] * (n + 1)
    splits = {"cr": split_cr, "cl": split_cl, "ir": split_ir, "il": split_il, "sg": split_sg}
    _follow([("cl", 1, root), ("cr", root, n)], heads, splits, sibling=True)
    heads[root] = 0
    return _tree(arc, heads[1:])


# ============================================================================
# Non-projective (Chu-Liu-Edmonds)
# ============================================================================

def _find_cycle(heads: np.ndarray) -> Optional[List[int]]:
    size = heads.shape[0]
    state = [0] * size
    state[0] = 2
    for start in range(1, size):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = int(heads[node])
        if state[node] == 1:
            return path[path.index(node):]
        for visited in path:
            state[visited] = 2
    return None


def _max_arborescence(scores: np.ndarray) -> np.ndarray:
    """Maximum spanning arborescence rooted at node 0 by recursive contraction"""
    size = scores.shape[0]
    heads = np.argmax(scores, axis=0)
    heads[0] = 0
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    cycle_nodes = np.array(cycle, dtype=np.int64)
    in_cycle = np.zeros(size, dtype=bool)
    in_cycle[cycle_nodes] = True
    rest = np.flatnonzero(~in_cycle)
    contracted = len(rest)
    reduced = np.full((contracted + 1, contracted + 1), -np.inf)
    reduced[:contracted, :contracted] = scores[np.ix_(rest, rest)]

    kept = scores[heads[cycle_nodes], cycle_nodes]
    entering = scores[np.ix_(rest, cycle_nodes)] - kept[None, :]
    enter_at = np.argmax(entering, axis=1)
    reduced[:contracted, contracted] = entering[np.arange(contracted), enter_at]
    leaving = scores[np.ix_(cycle_nodes, rest)]
    leave_from = np.argmax(leaving, axis=0)
    reduced[contracted, :contracted] = leaving[leave_from, np.arange(contracted)]
    reduced[:, 0] = -np.inf

    reduced_heads = _max_arborescence(reduced)
    result = heads.copy()
    for i, node in enumerate(rest):
        if node == 0:
            continue
        h = reduced_heads[i]
        result[node] = cycle_nodes[leave_from[i]] if h == contracted else rest[h]
    source = int(reduced_heads[contracted])
    result[cycle_nodes[enter_at[source]]] = rest[source]
    return result


def decode_nonprojective(scores: ArcScores, n: Optional[int] = None) -> DependencyTree:
    """
    Maximum spanning arborescence with exactly one ROOT child

    Args:
        scores: Arc scores
        n: Sentence length

    Returns:
        The best single-root tree; when the unconstrained optimum has several ROOT
        children, every root child is tried in turn
    """
    n = _check_n(scores, n)
    best = scores.best
    heads = _max_arborescence(best)
    if int(np.count_nonzero(heads[1:] == 0)) == 1:
        return _tree(scores, heads[1:])

    chosen, chosen_total = None, -np.inf
    columns = np.arange(1, n + 1)
    for root in range(1, n + 1):
        restricted = best.copy()
        restricted[0, :] = -np.inf
        restricted[0, root] = best[0, root]
        candidate = _max_arborescence(restricted)
        total = float(best[candidate[1:], columns].sum())
        if total > chosen_total:
            chosen, chosen_total = candidate, total
    return _tree(scores, chosen[1:])


# ============================================================================
# Grandparent-aware refinement
# ============================================================================

def _descendants(heads: Sequence[int], node: int) -> set:
    found = {node}
    changed = True
    while changed:
        changed = False
        for m, h in enumerate(heads, start=1):
            if h in found and m not in found:
                found.add(m)
                changed = True
    return found


def hill_climb_refine(
    arc: ArcScores,
    sib: Optional[SiblingScores],
    gp: Optional[GrandparentScores],
    init: DependencyTree,
    history: Optional[List[float]] = None,
) -> DependencyTree:
    """
    Greedy single-head changes and root swaps under the full arc + sibling + grandparent objective

    Args:
        arc: Arc scores
        sib: Sibling scores, optional
        gp: Grandparent scores, optional
        init: Starting tree
        history: When given, receives the objective after every accepted move
            (starting with the initial score)

    Returns:
        A valid single-root tree scoring at least as high as init
    """
    n = arc.n
    init.require_valid(n)
    heads = list(init.heads)
    current = tree_score(arc, heads, sib, gp)
    if history is not None:
        history.append(current)

    while True:
        root_child = heads.index(0) + 1
        best_gain, best_move = IMPROVEMENT_EPSILON, None
        for m in range(1, n + 1):
            if m == root_child:
                continue
            blocked = _descendants(heads, m)
            for h in range(1, n + 1):
                if h in blocked or h == heads[m - 1]:
                    continue
                candidate = heads.copy()
                candidate[m - 1] = h
                gain = tree_score(arc, candidate, sib, gp) - current
                if gain > best_gain:
                    best_gain, best_move = gain, candidate
        # root swaps: m becomes the ROOT child and the old root child takes a new head
        for m in range(1, n + 1):
            if m == root_child:
                continue
            candidate = heads.copy()
            candidate[m - 1] = 0
            blocked = _descendants(candidate, root_child)
            for h in range(1, n + 1):
                if h in blocked:
                    continue
                candidate[root_child - 1] = h
                gain = tree_score(arc, candidate, sib, gp) - current
                if gain > best_gain:
                    best_gain, best_move = gain, candidate.copy()
        if best_move is None:
            break
        heads = best_move
        current = tree_score(arc, heads, sib, gp)
        if history is not None:
            history.append(current)
    return _tree(arc, heads)


# ============================================================================
# Exhaustive oracle
# ============================================================================

def _acyclic(trees: np.ndarray) -> np.ndarray:
    count, n = trees.shape
    extended = np.concatenate([np.zeros((count, 1), dtype=np.int64), trees], axis=1)
    cursor = np.broadcast_to(np.arange(1, n + 1), (count, n)).copy()
    for _ in range(n):
        cursor = np.take_along_axis(extended, cursor, axis=1)
    return np.all(cursor == 0, axis=1)


def _projective(trees: np.ndarray) -> np.ndarray:
    """Pairwise arc-crossing test, ROOT arcs included"""
    positions = np.arange(1, trees.shape[1] + 1)
    lo = np.minimum(trees, positions)
    hi = np.maximum(trees, positions)
    crossing = (
        (lo[:, :, None] < lo[:, None, :])
        & (lo[:, None, :] < hi[:, :, None])
        & (hi[:, :, None] < hi[:, None, :])
    )
    return ~crossing.any(axis=(1, 2))


@lru_cache(maxsize=None)
def enumerate_trees(n: int, projective: bool = False) -> np.ndarray:
    """
    Every single-root dependency tree over n tokens

    Returns:
        Read-only array (count, n) of head arrays
    """
    if not 1 <= n <= MAX_BRUTE_FORCE:
        raise ValueError(f"exhaustive enumeration supports 1 <= n <= {MAX_BRUTE_FORCE}, got {n}")
    if n == 1:
        trees = np.zeros((1, 1), dtype=np.int64)
    else:
        found = []
        for root in range(1, n + 1):
            others = [m for m in range(1, n + 1) if m != root]
            choices = np.indices((n - 1,) * (n - 1)).reshape(n - 1, -1).T
            candidate = np.zeros((choices.shape[0], n), dtype=np.int64)
            for j, m in enumerate(others):
                options = np.array([h for h in range(1, n + 1) if h != m], dtype=np.int64)
                candidate[:, m - 1] = options[choices[:, j]]
            found.append(candidate[_acyclic(candidate)])
        trees = np.concatenate(found)
    if projective:
        trees = trees[_projective(trees)]
    trees.setflags(write=False)
    logger.debug(f"Enumerated {trees.shape[0]} {'projective ' if projective else ''}trees for n={n}")
    return trees


def _sibling_totals(trees: np.ndarray, s2: np.ndarray) -> np.ndarray:
    count, n = trees.shape
    totals = np.zeros(count)
    for m in range(1, n + 1):
        h = trees[:, m - 1]
        previous = h.copy()
        for s in range(1, m):
            previous = np.where((trees[:, s - 1] == h) & (h < s), s, previous)
        for s in range(n, m, -1):
            previous = np.where((trees[:, s - 1] == h) & (s < h), s, previous)
        totals += s2[h, previous, m]
    return totals


def _grandparent_totals(trees: np.ndarray, s3: np.ndarray) -> np.ndarray:
    count, n = trees.shape
    extended = np.concatenate([np.zeros((count, 1), dtype=np.int64), trees], axis=1)
    grand = np.take_along_axis(extended, trees, axis=1)
    modifiers = np.broadcast_to(np.arange(1, n + 1), (count, n))
    return np.where(trees != 0, s3[grand, trees, modifiers], 0.0).sum(axis=1)


def brute_force_decode(
    arc: ArcScores,
    sib: Optional[SiblingScores] = None,
    n: Optional[int] = None,
    projective: bool = False,
    gp: Optional[GrandparentScores] = None,
) -> DependencyTree:
    """
    Exact optimum by enumerating every single-root tree

    Args:
        arc: Arc scores
        sib: Optional sibling scores
        n: Sentence length, at most 8
        projective: Restrict the search to projective trees
        gp: Optional grandparent scores

    Returns:
        The first maximum-score tree in enumeration order
    """
    n = _check_n(arc, n)
    trees = enumerate_trees(n, projective)
    totals = arc.best[trees, np.arange(1, n + 1)].sum(axis=1)
    if sib is not None:
        totals = totals + _sibling_totals(trees, sib.scores)
    if gp is not None:
        totals = totals + _grandparent_totals(trees, gp.scores)
    return _tree(arc, trees[int(np.argmax(totals))])


# ============================================================================
# Model-driven parsing
# ============================================================================

def decode_with_weights(
    features: SentenceFeatures,
    weights: np.ndarray,
    labels: Tuple[str, ...],
    salts: np.ndarray,
    decoder: str,
) -> DependencyTree:
    """Score a cached sentence with the given weights and decode it"""
    if features.n == 0:
        return DependencyTree(heads=(), labels=())
    arc = ArcScores(labeled=features.arc_score_tensor(weights, salts), labels=labels)
    if decoder == "proj":
        return decode_projective(arc)
    if decoder == "nonproj":
        return decode_nonprojective(arc)
    sib = SiblingScores(features.sibling_score_tensor(weights))
    tree = decode_projective_sibling(arc, sib)
    if decoder == "sib":
        return tree
    if decoder == "sib-gp":
        gp = GrandparentScores(features.grandparent_score_tensor(weights))
        return hill_climb_refine(arc, sib, gp, tree)
    raise ConfigError(f"unknown decoder {decoder!r}; choose from {DECODERS}")


def check_decoder(decoder: str, config) -> None:
    if decoder not in DECODERS:
        raise ConfigError(f"unknown decoder {decoder!r}; choose from {DECODERS}")
    if decoder in ("sib", "sib-gp") and not config.enable_second_order:
        raise ConfigError(f"decoder {decoder!r} needs a model trained with sibling features")
    if decoder == "sib-gp" and not config.enable_grandparent:
        raise ConfigError("decoder 'sib-gp' needs a model trained with grandparent features")


def score_arcs(sentence: Sentence, model: "Model", annotation: Optional[DependencyTree] = None) -> ArcScores:
    """
    Labeled arc scores of a sentence under a model

    Args:
        sentence: Sentence to score
        model: Graph model (weights, labels, template config, cluster lexicon)
        annotation: First-stage tree, required when stacking features are enabled

    Returns:
        ArcScores with s[h, m, l] = w . features(h, m, l)
    """
    features = SentenceFeatures(sentence, model.config, model.lexicon, annotation)
    return ArcScores(labeled=features.arc_score_tensor(model.weights, model.label_salts), labels=model.labels)


class GraphParser:
    """Parse sentences with a graph model and one of the decoders"""

    def __init__(self, model: "Model", decoder: Optional[str] = None):
        if model.kind != "graph":
            raise ConfigError(f"a {model.kind} model cannot drive the graph parser")
        self.model = model
        self.decoder = decoder or model.decoder
        check_decoder(self.decoder, model.config)

    def features(self, sentence: Sentence, annotation: Optional[DependencyTree] = None) -> SentenceFeatures:
        return SentenceFeatures(sentence, self.model.config, self.model.lexicon, annotation)

    def parse(self, sentence: Sentence, annotation: Optional[DependencyTree] = None) -> DependencyTree:
        features = self.features(sentence, annotation)
        return decode_with_weights(
            features, self.model.weights, self.model.labels, self.model.label_salts, self.decoder
        )

    __call__ = parse
