"""
Hashed feature extraction for the graph-based and transition-based parsers

Every template is identified by a one-byte template id. A feature is the pair
(template id, feature string), hashed with 32-bit FNV-1a and masked to
`hash_bits` bits. Label-specific (and transition-class-specific) features are
the bucket XOR a hashed label salt, so a single flat weight array holds the
whole model.

Template id allocation:
    0-185    first-order arc templates: index + 24 * (2 * variant + distance flag)
    192-197  consecutive siblings
    198-199  grandparents
    200-222  stacking
    224-245  transition classifier
    254/255  class and label salts
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .core import ROOT_FORM, DependencyTree, Sentence
from .corpus_io import ClusterLexicon
from .errors import ConfigError, FeatureError

FNV_OFFSET_BASIS = 0x811C9DC5
FNV_PRIME = 0x01000193

CLASS_SALT_TID = 254
LABEL_SALT_TID = 255

START_PAD = "<S>"
END_PAD = "</S>"
NULL = "NULL"
NONE = "NONE"
NO_CHILDREN = "<none>"

# (name, slots); a slot is anchor (h, m, b) + attribute (f form, p POS) + optional offset
ARC_TEMPLATES: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("hf_hp", ("hf", "hp")),
    ("hf", ("hf",)),
    ("hp", ("hp",)),
    ("mf_mp", ("mf", "mp")),
    ("mf", ("mf",)),
    ("mp", ("mp",)),
    ("hf_hp_mf_mp", ("hf", "hp", "mf", "mp")),
    ("hp_mf_mp", ("hp", "mf", "mp")),
    ("hf_mf_mp", ("hf", "mf", "mp")),
    ("hf_hp_mp", ("hf", "hp", "mp")),
    ("hf_hp_mf", ("hf", "hp", "mf")),
    ("hf_mf", ("hf", "mf")),
    ("hp_mp", ("hp", "mp")),
    ("hp_hp+1_mp-1_mp", ("hp", "hp+1", "mp-1", "mp")),
    ("hp-1_hp_mp-1_mp", ("hp-1", "hp", "mp-1", "mp")),
    ("hp_hp+1_mp_mp+1", ("hp", "hp+1", "mp", "mp+1")),
    ("hp-1_hp_mp_mp+1", ("hp-1", "hp", "mp", "mp+1")),
    ("hp_bp_mp", ("hp", "bp", "mp")),
)
ARC_TEMPLATE_NAMES = tuple(name for name, _ in ARC_TEMPLATES)
TEMPLATES_PER_SLOT = 24

# base uses forms and POS; c4/c6 swap POS for cluster prefixes; cfull swaps forms for full bit-strings
VARIANTS = ("base", "c4", "c6", "cfull")

SIBLING_TID = 192
SIBLING_TEMPLATES = (("hp", "sp", "mp"), ("sf", "mf"), ("sp", "mp"))
GRANDPARENT_TID = 198
GRANDPARENT_TEMPLATES = (("gp", "hp", "mp"), ("gf", "mf"))
STACKING_TID = 200
TRANSITION_TID = 224


# ============================================================================
# Hashing
# ============================================================================

@lru_cache(maxsize=1 << 20)
def _fnv1a(template_id: int, feature: str) -> int:
    value = FNV_OFFSET_BASIS
    for byte in bytes([template_id]) + feature.encode("utf-8"):
        value ^= byte
        value = (value * FNV_PRIME) & 0xFFFFFFFF
    return value


def hash_feature(template_id: int, feature: str, hash_bits: int = 22) -> int:
    """
    Bucket of a (template id, feature string) pair

    Args:
        template_id: Template id, 0-255
        feature: Feature string
        hash_bits: Size of the bucket space in bits

    Returns:
        FNV-1a hash of the template byte followed by the UTF-8 string, masked to hash_bits
    """
    return _fnv1a(template_id, feature) & ((1 << hash_bits) - 1)


def label_salt(label: str, hash_bits: int) -> int:
    return hash_feature(LABEL_SALT_TID, label, hash_bits)


def class_salt(name: str, hash_bits: int) -> int:
    return hash_feature(CLASS_SALT_TID, name, hash_bits)


def _hash_parts(parts: Iterable[Tuple[int, str]], hash_bits: int) -> np.ndarray:
    mask = (1 << hash_bits) - 1
    return np.fromiter((_fnv1a(tid, s) & mask for tid, s in parts), dtype=np.int64)


# ============================================================================
# Configuration and vectors
# ============================================================================

class TemplateConfig(BaseModel):
    """Which feature families are extracted and how they are hashed"""
    model_config = ConfigDict(frozen=True)

    hash_bits: int = Field(default=22, ge=16, le=28, description="Feature space has 2^hash_bits buckets")
    enable_clusters: bool = Field(default=False, description="Brown-cluster template variants")
    enable_second_order: bool = Field(default=False, description="Consecutive-sibling parts")
    enable_grandparent: bool = Field(default=False, description="Grandparent parts")
    enable_stacking: bool = Field(default=False, description="Features from a first-stage parse")
    distance_bins: Tuple[int, ...] = Field(default=(1, 2, 3, 4, 5, 6, 11), description="Lower bounds of distance bins")
    arc_templates: Optional[Tuple[str, ...]] = Field(default=None, description="Subset of arc templates, None for all")
    cluster_prefixes: Tuple[int, int] = Field(default=(4, 6), description="Bit-prefix lengths replacing POS")

    @field_validator("distance_bins")
    @classmethod
    def _increasing_bins(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or value[0] != 1 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"distance bins must start at 1 and increase strictly: {value}")
        return value

    @field_validator("arc_templates")
    @classmethod
    def _known_templates(cls, value: Optional[Tuple[str, ...]]) -> Optional[Tuple[str, ...]]:
        if value is not None:
            unknown = [name for name in value if name not in ARC_TEMPLATE_NAMES]
            if unknown:
                raise ValueError(f"unknown arc templates: {unknown}")
        return value

    def bin_distance(self, distance: int) -> int:
        """Largest bin lower bound not exceeding the distance"""
        chosen = self.distance_bins[0]
        for bound in self.distance_bins:
            if bound <= distance:
                chosen = bound
        return chosen

    def template_indices(self) -> Tuple[int, ...]:
        if self.arc_templates is None:
            return tuple(range(len(ARC_TEMPLATES)))
        return tuple(i for i, name in enumerate(ARC_TEMPLATE_NAMES) if name in self.arc_templates)


@dataclass(frozen=True)
class FeatureVector:
    """Sparse (bucket, value) list"""
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.indices.shape != self.values.shape:
            raise FeatureError(f"{self.indices.shape[0]} indices for {self.values.shape[0]} values")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError("feature values must be finite")

    @classmethod
    def from_indices(cls, indices: np.ndarray) -> "FeatureVector":
        indices = np.asarray(indices, dtype=np.int64)
        return cls(indices=indices, values=np.ones(indices.shape[0], dtype=np.float64))

    @classmethod
    def concat(cls, vectors: Sequence["FeatureVector"]) -> "FeatureVector":
        if not vectors:
            return cls.from_indices(np.zeros(0, dtype=np.int64))
        return cls(
            indices=np.concatenate([v.indices for v in vectors]),
            values=np.concatenate([v.values for v in vectors]),
        )

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def buckets(self) -> FrozenSet[int]:
        return frozenset(int(i) for i in self.indices)

    def conjoin(self, salt: int) -> "FeatureVector":
        return FeatureVector(indices=self.indices ^ salt, values=self.values)

    def dot(self, weights: np.ndarray) -> float:
        return float(np.dot(weights[self.indices], self.values))


# ============================================================================
# Per-sentence attribute table
# ============================================================================

class _TokenTable:
    """Attribute strings for positions -1..n+1 (padding, ROOT, tokens, padding)"""

    def __init__(self, sentence: Sentence, config: TemplateConfig, lexicon: Optional[ClusterLexicon]):
        n = len(sentence)
        self.n = n
        self.form = [START_PAD] + [sentence.form(i) for i in range(n + 1)] + [END_PAD]
        self.pos = [START_PAD] + [sentence.pos(i) for i in range(n + 1)] + [END_PAD]
        self.lemma = [START_PAD] + [sentence.lemma(i) for i in range(n + 1)] + [END_PAD]
        if lexicon is not None:
            short, long_ = config.cluster_prefixes
            bits = [START_PAD, ROOT_FORM] + [lexicon.lookup(t.form) for t in sentence.tokens] + [END_PAD]
            self.bits = bits
            self.prefix_short = [b if i in (0, 1, n + 2) else b[:short] for i, b in enumerate(bits)]
            self.prefix_long = [b if i in (0, 1, n + 2) else b[:long_] for i, b in enumerate(bits)]
        else:
            self.bits = self.prefix_short = self.prefix_long = None

    def get(self, attribute: str, position: int, variant: str = "base") -> str:
        slot = min(max(position, -1), self.n + 1) + 1
        if attribute == "f":
            return self.bits[slot] if variant == "cfull" else self.form[slot]
        if attribute == "p":
            if variant == "c4":
                return self.prefix_short[slot]
            if variant == "c6":
                return self.prefix_long[slot]
            return self.pos[slot]
        return self.lemma[slot]


def _parse_slot(slot: str) -> Tuple[str, str, int]:
    anchor, attribute, offset = slot[0], slot[1], slot[2:]
    return anchor, attribute, int(offset) if offset else 0


_COMPILED_ARC_TEMPLATES = tuple(tuple(_parse_slot(s) for s in slots) for _, slots in ARC_TEMPLATES)


def _variant_applies(variant: str, slots: Tuple[Tuple[str, str, int], ...]) -> bool:
    if variant == "base":
        return True
    wanted = "f" if variant == "cfull" else "p"
    return any(attribute == wanted for _, attribute, _ in slots)


def _arc_parts(table: _TokenTable, h: int, m: int, config: TemplateConfig, variants: Sequence[str]) -> List[Tuple[int, str]]:
    n = table.n
    if not 0 <= h <= n or not 1 <= m <= n or h == m:
        raise FeatureError(f"invalid arc {h}->{m} for a sentence of {n} tokens")
    suffix = f"|{'R' if h < m else 'L'}{config.bin_distance(abs(h - m))}"
    lo, hi = min(h, m), max(h, m)
    parts: List[Tuple[int, str]] = []
    for variant in variants:
        variant_index = VARIANTS.index(variant)
        for t_index in config.template_indices():
            slots = _COMPILED_ARC_TEMPLATES[t_index]
            if not _variant_applies(variant, slots):
                continue
            if any(anchor == "b" for anchor, _, _ in slots):
                strings = [
                    "|".join(table.get(a, (h if anchor == "h" else m if anchor == "m" else b) + o, variant)
                             for anchor, a, o in slots)
                    for b in range(lo + 1, hi)
                ]
            else:
                strings = ["|".join(table.get(a, (h if anchor == "h" else m) + o, variant) for anchor, a, o in slots)]
            bare_tid = t_index + TEMPLATES_PER_SLOT * (2 * variant_index)
            for s in strings:
                parts.append((bare_tid, s))
                parts.append((bare_tid + TEMPLATES_PER_SLOT, s + suffix))
    return parts


def _table(sentence: Sentence, config: TemplateConfig, lexicon: Optional[ClusterLexicon]) -> _TokenTable:
    if config.enable_clusters and lexicon is None:
        raise ConfigError("cluster templates are enabled but no cluster lexicon was supplied")
    return _TokenTable(sentence, config, lexicon if config.enable_clusters else None)


def _arc_variants(config: TemplateConfig) -> Tuple[str, ...]:
    return VARIANTS if config.enable_clusters else ("base",)


# ============================================================================
# First-order, cluster, sibling and grandparent features
# ============================================================================

def arc_feature_strings(
    sentence: Sentence,
    h: int,
    m: int,
    config: Optional[TemplateConfig] = None,
    lexicon: Optional[ClusterLexicon] = None,
) -> List[Tuple[int, str]]:
    """Unhashed (template id, string) pairs of an arc, for inspection"""
    config = config or TemplateConfig()
    return _arc_parts(_table(sentence, config, lexicon), h, m, config, _arc_variants(config))


def arc_features(
    sentence: Sentence,
    h: int,
    m: int,
    label: Optional[str] = None,
    config: Optional[TemplateConfig] = None,
    lexicon: Optional[ClusterLexicon] = None,
) -> FeatureVector:
    """
    First-order features of the arc h -> m

    Args:
        sentence: Sentence being parsed
        h: Head index, 0 for ROOT
        m: Modifier index
        label: When given, the label-conjoined copy of every feature is appended
        config: Template configuration
        lexicon: Cluster lexicon, required when cluster templates are enabled

    Returns:
        FeatureVector with unit values
    """
    config = config or TemplateConfig()
    parts = _arc_parts(_table(sentence, config, lexicon), h, m, config, _arc_variants(config))
    vector = FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))
    if label is None:
        return vector
    return FeatureVector.concat([vector, vector.conjoin(label_salt(label, config.hash_bits))])


def cluster_features(
    sentence: Sentence,
    h: int,
    m: int,
    lexicon: ClusterLexicon,
    config: Optional[TemplateConfig] = None,
) -> FeatureVector:
    """Cluster-substituted copies of the arc templates (4-bit, 6-bit and full-string variants)"""
    config = (config or TemplateConfig()).model_copy(update={"enable_clusters": True})
    parts = _arc_parts(_TokenTable(sentence, config, lexicon), h, m, config, VARIANTS[1:])
    return FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))


def _sibling_parts(table: _TokenTable, h: int, s: Optional[int], m: int) -> List[Tuple[int, str]]:
    n = table.n
    if not 0 <= h <= n or not 1 <= m <= n or h == m:
        raise FeatureError(f"invalid arc {h}->{m} for a sentence of {n} tokens")
    if s is not None and s != h and not (min(h, m) < s < max(h, m)):
        raise FeatureError(f"sibling {s} is not between head {h} and modifier {m}")
    direction = "R" if h < m else "L"
    values = {
        "hp": table.get("p", h), "hf": table.get("f", h),
        "mp": table.get("p", m), "mf": table.get("f", m),
        "sp": NULL if s is None or s == h else table.get("p", s),
        "sf": NULL if s is None or s == h else table.get("f", s),
    }
    parts = []
    for i, slots in enumerate(SIBLING_TEMPLATES):
        value = "|".join(values[slot] for slot in slots)
        parts.append((SIBLING_TID + 2 * i, value))
        parts.append((SIBLING_TID + 2 * i + 1, f"{value}|{direction}"))
    return parts


def sibling_features(
    sentence: Sentence,
    h: int,
    m: int,
    s: Optional[int],
    config: Optional[TemplateConfig] = None,
) -> FeatureVector:
    """
    Consecutive-sibling features for modifier m of h whose previous sibling is s

    Args:
        sentence: Sentence being parsed
        h: Head index
        m: Modifier index
        s: Previous modifier of h on m's side, None (or h) for the first child
        config: Template configuration

    Returns:
        FeatureVector with one bare and one direction-conjoined entry per template
    """
    config = config or TemplateConfig()
    parts = _sibling_parts(_TokenTable(sentence, config, None), h, s, m)
    return FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))


def _sign(value: int) -> str:
    return "+" if value > 0 else "-"


def _grandparent_parts(table: _TokenTable, g: int, h: int, m: int) -> List[Tuple[int, str]]:
    n = table.n
    if g == m:
        raise FeatureError(f"grandparent {g} equals modifier {m}")
    if not 0 <= g <= n or not 1 <= h <= n or not 1 <= m <= n or len({g, h, m}) != 3:
        raise FeatureError(f"invalid grandparent chain {g}->{h}->{m}")
    pattern = f"{_sign(g - h)}{_sign(h - m)}"
    values = {
        "gp": table.get("p", g), "gf": table.get("f", g),
        "hp": table.get("p", h), "mp": table.get("p", m), "mf": table.get("f", m),
    }
    return [
        (GRANDPARENT_TID + i, "|".join(values[slot] for slot in slots) + "|" + pattern)
        for i, slots in enumerate(GRANDPARENT_TEMPLATES)
    ]


def grandparent_features(
    sentence: Sentence,
    g: int,
    h: int,
    m: int,
    config: Optional[TemplateConfig] = None,
) -> FeatureVector:
    """Grandparent features of the chain g -> h -> m, conjoined with its direction pattern"""
    config = config or TemplateConfig()
    parts = _grandparent_parts(_TokenTable(sentence, config, None), g, h, m)
    return FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))


# ============================================================================
# Stacking features
# ============================================================================

def _check_annotation(table: _TokenTable, first: DependencyTree) -> None:
    if len(first) != table.n:
        raise FeatureError(f"first-stage tree covers {len(first)} tokens, sentence has {table.n}")


def _stacking_parts(
    table: _TokenTable,
    first: DependencyTree,
    children: Dict[int, List[int]],
    h: int,
    m: int,
    config: TemplateConfig,
) -> List[Tuple[int, str]]:
    direction = "R" if h < m else "L"
    anchor = f"{table.get('p', h)}|{direction}"
    tid = STACKING_TID
    parts: List[Tuple[int, str]] = []

    # PredEdge
    predicted_head = first.head(m)
    edge = 1 if predicted_head == h else 0
    edge_label = first.label(m) if edge else "-"
    parts.append((tid, str(edge)))
    parts.append((tid + 1, f"{edge}|{edge_label}"))
    parts.append((tid + 2, f"{edge}|{edge_label}|{table.get('p', h)}|{table.get('p', m)}"))
    tid += 3

    def describe(other: Optional[int], label: Optional[str]) -> List[str]:
        if other is None:
            return [NONE] * 5
        return [
            table.get("l", other),
            table.get("p", other),
            label,
            str(config.bin_distance(abs(other - m))),
            "L" if other < m else "R",
        ]

    # previous and next predicted siblings of m
    siblings = children[predicted_head]
    position = siblings.index(m)
    previous = siblings[position - 1] if position > 0 else None
    following = siblings[position + 1] if position + 1 < len(siblings) else None
    for other in (previous, following):
        label = first.label(other) if other is not None else None
        for value in describe(other, label):
            parts.append((tid, f"{value}|{anchor}"))
            tid += 1

    # grandparent of m in the first-stage tree
    if predicted_head == 0:
        grand, grand_label = None, None
    else:
        grand, grand_label = first.head(predicted_head), first.label(predicted_head)
    for value in describe(grand, grand_label):
        parts.append((tid, f"{value}|{anchor}"))
        tid += 1

    # PredHead, only when the candidate disagrees with the first stage
    if not edge:
        parts.append((tid, f"{table.get('p', predicted_head)}|{anchor}"))
        parts.append((tid + 1, f"{table.get('l', predicted_head)}|{anchor}"))
        parts.append((tid + 2, f"{first.label(m)}|{anchor}"))
    tid += 3

    # AllChildren of h
    sequence = ",".join(f"{table.get('p', c)}/{first.label(c)}" for c in children[h]) or NO_CHILDREN
    parts.append((tid, sequence))
    parts.append((tid + 1, f"{sequence}|{table.get('p', m)}"))
    return parts


def stacking_feature_strings(
    sentence: Sentence,
    first: DependencyTree,
    h: int,
    m: int,
    config: Optional[TemplateConfig] = None,
) -> List[Tuple[int, str]]:
    config = config or TemplateConfig()
    table = _TokenTable(sentence, config, None)
    _check_annotation(table, first)
    if not 0 <= h <= table.n or not 1 <= m <= table.n or h == m:
        raise FeatureError(f"invalid arc {h}->{m} for a sentence of {table.n} tokens")
    return _stacking_parts(table, first, first.children(), h, m, config)


def stacking_features(
    sentence: Sentence,
    first: DependencyTree,
    h: int,
    m: int,
    config: Optional[TemplateConfig] = None,
) -> FeatureVector:
    """
    Features describing how the candidate arc h -> m relates to a first-stage parse

    Args:
        sentence: Sentence being parsed
        first: Tree predicted by the first-stage parser
        h: Candidate head
        m: Candidate modifier
        config: Template configuration

    Returns:
        FeatureVector covering predicted edge, predicted siblings, grandparent,
        predicted head (when the edge is not predicted) and all children of h
    """
    config = config or TemplateConfig()
    parts = stacking_feature_strings(sentence, first, h, m, config)
    return FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))


# ============================================================================
# Transition features
# ============================================================================

def transition_feature_strings(
    sentence: Sentence,
    stack: Sequence[int],
    buffer: Sequence[int],
    heads: Sequence[int],
    labels: Sequence[str],
    config: Optional[TemplateConfig] = None,
) -> List[Tuple[int, str]]:
    """
    Unhashed features of an arc-standard configuration

    heads and labels are per token (index m - 1); unattached tokens have head -1.
    """
    config = config or TemplateConfig()
    n = len(sentence)

    def token(items: Sequence[int], depth: int) -> Optional[int]:
        return items[depth] if depth < len(items) and depth >= -len(items) else None

    s0, s1 = token(stack, -1), token(stack, -2)
    b0, b1 = token(buffer, 0), token(buffer, 1)

    def form(i: Optional[int]) -> str:
        return NONE if i is None else sentence.form(i)

    def pos(i: Optional[int]) -> str:
        return NONE if i is None else sentence.pos(i)

    def child_label(i: Optional[int], leftmost: bool) -> str:
        if i is None:
            return NONE
        kids = [c for c in range(1, n + 1) if heads[c - 1] == i and (c < i if leftmost else c > i)]
        if not kids:
            return NONE
        return labels[(min(kids) if leftmost else max(kids)) - 1]

    distance = NONE if s0 is None or s1 is None else str(config.bin_distance(abs(s0 - s1)))
    s0_lc, s0_rc = child_label(s0, True), child_label(s0, False)
    s1_lc, s1_rc = child_label(s1, True), child_label(s1, False)
    values = (
        form(s0), pos(s0), f"{form(s0)}|{pos(s0)}",
        form(s1), pos(s1), f"{form(s1)}|{pos(s1)}",
        form(b0), pos(b0), f"{form(b0)}|{pos(b0)}",
        pos(b1),
        f"{pos(s0)}|{pos(s1)}", f"{form(s0)}|{form(s1)}", f"{pos(s0)}|{pos(b0)}",
        f"{pos(s1)}|{pos(s0)}|{pos(b0)}", f"{form(s0)}|{form(b0)}",
        s0_lc, s0_rc, s1_lc, s1_rc,
        f"{pos(s1)}|{pos(s0)}|{s0_lc}|{s1_rc}",
        f"{pos(s0)}|{pos(s1)}|{distance}",
        "BIAS",
    )
    return [(TRANSITION_TID + i, value) for i, value in enumerate(values)]


def transition_features(
    sentence: Sentence,
    stack: Sequence[int],
    buffer: Sequence[int],
    heads: Sequence[int],
    labels: Sequence[str],
    config: Optional[TemplateConfig] = None,
) -> FeatureVector:
    config = config or TemplateConfig()
    parts = transition_feature_strings(sentence, stack, buffer, heads, labels, config)
    return FeatureVector.from_indices(_hash_parts(parts, config.hash_bits))


# ============================================================================
# Tree factorization
# ============================================================================

def sibling_parts(heads: Sequence[int]) -> List[Tuple[int, int, int]]:
    """
    Consecutive-sibling parts of a head array

    Returns:
        One (h, s, m) per token, where s is the previous modifier of h on m's side
        (closer to h) and s == h marks the first child
    """
    n = len(heads)
    kids: Dict[int, List[int]] = {i: [] for i in range(n + 1)}
    for m, h in enumerate(heads, start=1):
        kids[h].append(m)
    parts = []
    for h in range(n + 1):
        previous = h
        for m in reversed([c for c in kids[h] if c < h]):
            parts.append((h, previous, m))
            previous = m
        previous = h
        for m in (c for c in kids[h] if c > h):
            parts.append((h, previous, m))
            previous = m
    return parts


def grandparent_parts(heads: Sequence[int]) -> List[Tuple[int, int, int]]:
    """(g, h, m) for every token whose head is not ROOT"""
    return [(heads[h - 1], h, m) for m, h in enumerate(heads, start=1) if h != 0]


# ============================================================================
# Per-sentence cache
# ============================================================================

@dataclass(frozen=True)
class PartIndex:
    """Hashed features of every part slot, flattened for vectorised scoring"""
    indices: np.ndarray
    segments: np.ndarray
    starts: np.ndarray
    stops: np.ndarray

    @classmethod
    def build(cls, size: int, slot_features: Dict[int, np.ndarray]) -> "PartIndex":
        starts = np.zeros(size, dtype=np.int64)
        stops = np.zeros(size, dtype=np.int64)
        chunks, segments = [], []
        offset = 0
        for slot in sorted(slot_features):
            idx = slot_features[slot]
            starts[slot], stops[slot] = offset, offset + idx.shape[0]
            offset += idx.shape[0]
            chunks.append(idx)
            segments.append(np.full(idx.shape[0], slot, dtype=np.int64))
        empty = np.zeros(0, dtype=np.int64)
        return cls(
            indices=np.concatenate(chunks) if chunks else empty,
            segments=np.concatenate(segments) if segments else empty,
            starts=starts,
            stops=stops,
        )

    @property
    def size(self) -> int:
        return int(self.starts.shape[0])

    def scores(self, weights: np.ndarray) -> np.ndarray:
        return np.bincount(self.segments, weights=weights[self.indices], minlength=self.size)

    def slot(self, slot: int) -> np.ndarray:
        return self.indices[self.starts[slot]:self.stops[slot]]


class SentenceFeatures:
    """
    All hashed part features of one sentence, extracted once and reused

    Arc slots are h * (n + 1) + m; sibling slots (h * (n + 1) + s) * (n + 1) + m
    with s == h for the first child; grandparent slots (g * (n + 1) + h) * (n + 1) + m.
    """

    def __init__(
        self,
        sentence: Sentence,
        config: TemplateConfig,
        lexicon: Optional[ClusterLexicon] = None,
        annotation: Optional[DependencyTree] = None,
    ):
        self.sentence = sentence
        self.config = config
        self.n = n = len(sentence)
        table = _table(sentence, config, lexicon)
        if config.enable_stacking:
            if annotation is None:
                raise ConfigError("stacking features are enabled but no first-stage annotation was supplied")
            _check_annotation(table, annotation)
        variants = _arc_variants(config)
        width = n + 1

        arcs: Dict[int, np.ndarray] = {}
        children = annotation.children() if config.enable_stacking else None
        for h in range(width):
            for m in range(1, width):
                if h == m:
                    continue
                parts = _arc_parts(table, h, m, config, variants)
                if config.enable_stacking:
                    parts += _stacking_parts(table, annotation, children, h, m, config)
                arcs[h * width + m] = _hash_parts(parts, config.hash_bits)
        self.arcs = PartIndex.build(width * width, arcs)

        self.siblings: Optional[PartIndex] = None
        if config.enable_second_order:
            siblings: Dict[int, np.ndarray] = {}
            for h in range(width):
                for m in range(1, width):
                    if h == m:
                        continue
                    inner = [h] if h == 0 else [h] + list(range(min(h, m) + 1, max(h, m)))
                    for s in inner:
                        siblings[(h * width + s) * width + m] = _hash_parts(
                            _sibling_parts(table, h, s, m), config.hash_bits
                        )
            self.siblings = PartIndex.build(width ** 3, siblings)

        self.grandparents: Optional[PartIndex] = None
        if config.enable_grandparent:
            grandparents: Dict[int, np.ndarray] = {}
            for g in range(width):
                for h in range(1, width):
                    for m in range(1, width):
                        if len({g, h, m}) == 3:
                            grandparents[(g * width + h) * width + m] = _hash_parts(
                                _grandparent_parts(table, g, h, m), config.hash_bits
                            )
            self.grandparents = PartIndex.build(width ** 3, grandparents)

    def arc_score_tensor(self, weights: np.ndarray, salts: np.ndarray) -> np.ndarray:
        """
        Labeled arc scores

        Returns:
            Array (n + 1, n + 1, L) with score[h, m, l]; invalid slots are 0
        """
        width = self.n + 1
        size = self.arcs.size
        bare = self.arcs.scores(weights)
        labeled = self.arcs.indices[None, :] ^ salts[:, None]
        segments = self.arcs.segments[None, :] + (np.arange(salts.shape[0], dtype=np.int64) * size)[:, None]
        per_label = np.bincount(
            segments.ravel(), weights=weights[labeled].ravel(), minlength=size * salts.shape[0]
        ).reshape(salts.shape[0], size)
        total = per_label + bare[None, :]
        return np.moveaxis(total.reshape(salts.shape[0], width, width), 0, -1)

    def sibling_score_tensor(self, weights: np.ndarray) -> np.ndarray:
        width = self.n + 1
        if self.siblings is None:
            return np.zeros((width, width, width))
        return self.siblings.scores(weights).reshape(width, width, width)

    def grandparent_score_tensor(self, weights: np.ndarray) -> np.ndarray:
        width = self.n + 1
        if self.grandparents is None:
            return np.zeros((width, width, width))
        return self.grandparents.scores(weights).reshape(width, width, width)

    def tree_features(self, tree: DependencyTree) -> FeatureVector:
        """Sum of part features of a tree (labeled arcs plus enabled higher-order parts)"""
        width = self.n + 1
        bits = self.config.hash_bits
        chunks = []
        for m, (h, label) in enumerate(zip(tree.heads, tree.labels), start=1):
            idx = self.arcs.slot(h * width + m)
            chunks.append(idx)
            chunks.append(idx ^ label_salt(label, bits))
        if self.siblings is not None:
            for h, s, m in sibling_parts(tree.heads):
                chunks.append(self.siblings.slot((h * width + s) * width + m))
        if self.grandparents is not None:
            for g, h, m in grandparent_parts(tree.heads):
                chunks.append(self.grandparents.slot((g * width + h) * width + m))
        if not chunks:
            return FeatureVector.from_indices(np.zeros(0, dtype=np.int64))
        return FeatureVector.from_indices(np.concatenate(chunks))
