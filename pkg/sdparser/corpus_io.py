"""
Corpus and lexicon I/O: CoNLL-X sentences, SD tuple files, Brown cluster
lexicons, POS sidecar files and sequential jackknife partitions.
"""
import hashlib
import io
import re
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sklearn.model_selection import KFold

from .core import (
    ROOT_FORM,
    ROOT_INDEX,
    DependencyArc,
    DependencyGraph,
    DependencyTree,
    Sentence,
    Token,
)
from .errors import ConfigError, DataError, FormatError

CONLL_COLUMNS = 10
ABSENT = "_"
UNK_BITS = "0"

# type(parentform-P, childform-C); forms may themselves contain '-' and ','
SD_TUPLE_PATTERN = re.compile(r"^([^()\s]+)\((.+?)-(\d+), (.+)-(\d+)\)$")
_BITS_PATTERN = re.compile(r"^[01]+$")

TextSource = Union[bytes, str, BinaryIO]


def decode_text(data: bytes, source: str = "input") -> str:
    """
    Decode UTF-8 file contents

    Raises:
        DataError: naming the source and the offset of the first bad byte
    """
    try:
        return bytes(data).decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{source} is not valid UTF-8: byte offset {e.start}: {e.reason}") from None


def _as_text(stream: TextSource, source: str = "input") -> str:
    if isinstance(stream, str):
        return stream
    if isinstance(stream, (bytes, bytearray)):
        return decode_text(stream, source)
    return decode_text(stream.read(), source)


def write_file(path: Union[str, Path], data: bytes, what: str = "output") -> Path:
    """
    Write bytes to a file

    Raises:
        DataError: when the path cannot be written (missing directory, permissions)
    """
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as e:
        raise DataError(f"cannot write {what} {path}: {e}") from e
    return path


def _blocks(text: str) -> Iterable[Tuple[int, List[Tuple[int, str]]]]:
    """Yield (block number, [(line number, line)]) for blank-line separated blocks"""
    block: List[Tuple[int, str]] = []
    number = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            if block:
                yield number, block
                number += 1
                block = []
            continue
        block.append((line_number, line))
    if block:
        yield number, block


# ============================================================================
# CoNLL-X
# ============================================================================

def _parse_int(value: str, what: str, line_number: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"{what} {value!r} is not an integer", line_number) from None


def _sentence_from_block(block: List[Tuple[int, str]]) -> Sentence:
    tokens: List[Token] = []
    heads: List[Optional[int]] = []
    labels: List[str] = []
    for line_number, line in block:
        columns = line.split("\t")
        if len(columns) != CONLL_COLUMNS:
            raise FormatError(f"expected {CONLL_COLUMNS} tab-separated columns, found {len(columns)}", line_number)
        index = _parse_int(columns[0], "token index", line_number)
        if index != len(tokens) + 1:
            raise FormatError(f"token index {index} breaks the sequence (expected {len(tokens) + 1})", line_number)
        if columns[1] == "":
            raise FormatError("empty form", line_number)
        tokens.append(Token(
            index=index,
            form=columns[1],
            lemma="" if columns[2] == ABSENT else columns[2],
            cpos=columns[3],
            fpos=columns[4],
        ))
        if columns[6] == ABSENT:
            heads.append(None)
        else:
            heads.append(_parse_int(columns[6], "head", line_number))
        labels.append(columns[7])

    gold = None
    if all(h is not None for h in heads):
        gold = DependencyTree(heads=tuple(heads), labels=tuple(labels))
    elif any(h is not None for h in heads):
        raise FormatError("head column is only partly filled", block[0][0])
    return Sentence(tokens=tuple(tokens), gold_tree=gold)


def read_conll(stream: TextSource) -> List[Sentence]:
    """
    Read CoNLL-X sentences

    Args:
        stream: Bytes, text or a binary file object

    Returns:
        Sentences, with gold trees when the head and label columns are filled
    """
    return [_sentence_from_block(block) for _, block in _blocks(_as_text(stream))]


def read_conll_file(path: Union[str, Path]) -> List[Sentence]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read corpus {path}: {e}") from e
    corpus = read_conll(decode_text(data, str(path)))
    logger.debug(f"Read {len(corpus)} sentences from {path}")
    return corpus


def write_conll(corpus: Sequence[Sentence], trees: Optional[Sequence[Optional[DependencyTree]]] = None) -> bytes:
    """
    Serialize sentences as CoNLL-X

    Args:
        corpus: Sentences to write
        trees: One tree per sentence; defaults to each sentence's gold tree

    Returns:
        UTF-8 bytes, one blank line after every sentence
    """
    if trees is None:
        trees = [s.gold_tree for s in corpus]
    if len(trees) != len(corpus):
        raise DataError(f"{len(trees)} trees for {len(corpus)} sentences")
    out = io.StringIO()
    for sentence, tree in zip(corpus, trees):
        if tree is not None and len(tree) != len(sentence):
            raise DataError(f"tree of length {len(tree)} for a sentence of {len(sentence)} tokens")
        for token in sentence.tokens:
            if tree is None:
                head, label = ABSENT, ABSENT
            else:
                head, label = str(tree.head(token.index)), tree.label(token.index)
            out.write("\t".join([
                str(token.index), token.form, token.lemma or ABSENT, token.cpos, token.fpos,
                ABSENT, head, label, ABSENT, ABSENT,
            ]))
            out.write("\n")
        out.write("\n")
    return out.getvalue().encode("utf-8")


def corpus_fingerprint(corpus: Sequence[Sentence]) -> str:
    """sha256 hex digest of the CoNLL serialization"""
    return hashlib.sha256(write_conll(corpus)).hexdigest()


# ============================================================================
# SD tuples
# ============================================================================

def write_sd_graph(sentence: Sentence, graph: DependencyGraph) -> str:
    """
    Render a graph in Stanford tuple notation

    Args:
        sentence: Sentence supplying the forms
        graph: Arcs to render

    Returns:
        One `type(parent-P, child-C)` line per arc, sorted by (child, parent, type),
        followed by a blank line
    """
    n = len(sentence)
    lines = []
    for arc in graph.sorted_arcs():
        if arc.parent > n or arc.child > n:
            raise DataError(f"arc {arc} is outside a sentence of {n} tokens")
        lines.append(f"{arc.dep_type}({sentence.form(arc.parent)}-{arc.parent}, {sentence.form(arc.child)}-{arc.child})")
    return "".join(line + "\n" for line in lines) + "\n"


def _graph_from_lines(lines: List[Tuple[int, str]]) -> DependencyGraph:
    arcs = set()
    for line_number, line in lines:
        match = SD_TUPLE_PATTERN.match(line.strip())
        if match is None:
            raise FormatError(f"unparseable dependency tuple: {line!r}", line_number)
        dep_type, parent_form, parent, _, child = match.groups()
        parent, child = int(parent), int(child)
        if parent == ROOT_INDEX and parent_form != ROOT_FORM:
            raise FormatError(f"index 0 must be rendered as {ROOT_FORM}-0: {line!r}", line_number)
        try:
            arcs.add(DependencyArc(dep_type=dep_type, parent=parent, child=child))
        except ValueError as e:
            raise FormatError(f"invalid arc in {line!r}: {e}", line_number) from None
    return DependencyGraph(arcs=frozenset(arcs))


def read_sd_graph(text: str) -> DependencyGraph:
    """Parse one sentence block of SD tuples (inverse of write_sd_graph)"""
    lines = [(number, line) for number, line in enumerate(text.splitlines(), start=1) if line.strip()]
    return _graph_from_lines(lines)


def read_sd_graphs(stream: TextSource) -> List[DependencyGraph]:
    """Parse a multi-sentence tuple file; every sentence block ends with a blank line"""
    text = _as_text(stream)
    graphs: List[DependencyGraph] = []
    block: List[Tuple[int, str]] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            graphs.append(_graph_from_lines(block))
            block = []
        else:
            block.append((line_number, line))
    if block:
        graphs.append(_graph_from_lines(block))
    return graphs


def write_sd_graphs(corpus: Sequence[Sentence], graphs: Sequence[DependencyGraph]) -> bytes:
    if len(corpus) != len(graphs):
        raise DataError(f"{len(graphs)} graphs for {len(corpus)} sentences")
    return "".join(write_sd_graph(s, g) for s, g in zip(corpus, graphs)).encode("utf-8")


# ============================================================================
# Brown clusters
# ============================================================================

class ClusterLexicon(BaseModel):
    """Word form to Brown-cluster bit-string map with a constant UNK fallback"""
    model_config = ConfigDict(frozen=True)

    bits: Dict[str, str] = Field(default_factory=dict, description="Word form to bit-string")
    counts: Dict[str, int] = Field(default_factory=dict, description="Corpus count per word, when given")

    @field_validator("bits")
    @classmethod
    def _binary_strings(cls, value: Dict[str, str]) -> Dict[str, str]:
        for word, bits in value.items():
            if not _BITS_PATTERN.match(bits):
                raise ValueError(f"bit-string {bits!r} for {word!r} must be a non-empty 0/1 string")
        return value

    def __len__(self) -> int:
        return len(self.bits)

    def lookup(self, word: str) -> str:
        return self.bits.get(word, UNK_BITS)

    def prefix(self, word: str, length: int) -> str:
        """Leading bits of the word's cluster; shorter strings are returned whole"""
        return self.lookup(word)[:length]


def load_clusters(stream: TextSource) -> ClusterLexicon:
    """
    Load a `bitstring<TAB>word[<TAB>count]` lexicon

    Args:
        stream: Bytes, text or a binary file object

    Returns:
        ClusterLexicon; later duplicates overwrite earlier ones
    """
    bits: Dict[str, str] = {}
    counts: Dict[str, int] = {}
    for line_number, line in enumerate(_as_text(stream).splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise FormatError(f"expected 2 or 3 tab-separated fields, found {len(fields)}", line_number)
        bit_string, word = fields[0], fields[1]
        if not _BITS_PATTERN.match(bit_string):
            raise FormatError(f"bit-string {bit_string!r} contains characters other than 0/1", line_number)
        bits[word] = bit_string
        if len(fields) == 3:
            counts[word] = _parse_int(fields[2], "count", line_number)
        else:
            counts.pop(word, None)
    logger.debug(f"Loaded {len(bits)} cluster entries")
    return ClusterLexicon(bits=bits, counts=counts)


def load_clusters_file(path: Union[str, Path]) -> ClusterLexicon:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read cluster lexicon {path}: {e}") from e
    return load_clusters(decode_text(data, str(path)))


# ============================================================================
# POS sidecar files
# ============================================================================

def read_tag_file(stream: TextSource) -> List[List[str]]:
    """One tag per line, blank line between sentences"""
    return [[line.strip() for _, line in block] for _, block in _blocks(_as_text(stream))]


def substitute_tags(corpus: Sequence[Sentence], tags: Sequence[Sequence[str]]) -> List[Sentence]:
    """
    Replace the POS columns of every sentence

    Args:
        corpus: Sentences to retag
        tags: One tag list per sentence, one tag per token

    Returns:
        New sentences; gold trees are kept
    """
    if len(tags) != len(corpus):
        raise DataError(f"tag source has {len(tags)} sentences, corpus has {len(corpus)}")
    retagged = []
    for number, (sentence, sentence_tags) in enumerate(zip(corpus, tags), start=1):
        if len(sentence_tags) != len(sentence):
            raise DataError(f"sentence {number}: {len(sentence_tags)} tags for {len(sentence)} tokens")
        retagged.append(sentence.with_tags(list(sentence_tags)))
    return retagged


# ============================================================================
# Jackknife partitions
# ============================================================================

class CorpusPartition(BaseModel):
    """Contiguous slice of a corpus used as one jackknife fold"""
    model_config = ConfigDict(frozen=True)

    part_id: int = Field(ge=1, description="1-based fold number")
    start: int = Field(ge=0, description="Index of the first sentence in the corpus")
    sentences: Tuple[Sentence, ...] = Field(description="Sentences of the fold, in corpus order")

    @property
    def stop(self) -> int:
        return self.start + len(self.sentences)

    def __len__(self) -> int:
        return len(self.sentences)

    def contains(self, corpus_index: int) -> bool:
        return self.start <= corpus_index < self.stop


def jackknife_partition(corpus: Sequence[Sentence], k: int) -> List[CorpusPartition]:
    """
    Split a corpus sequentially into k contiguous folds

    Args:
        corpus: Sentences in file order
        k: Number of folds, at least 2

    Returns:
        k partitions whose sizes differ by at most one, larger folds first
    """
    if k < 2:
        raise ConfigError(f"jackknife needs k >= 2, got {k}")
    if k > len(corpus):
        raise ConfigError(f"cannot split {len(corpus)} sentences into {k} partitions")
    folds = KFold(n_splits=k, shuffle=False)
    partitions = []
    for part_id, (_, held_out) in enumerate(folds.split(np.arange(len(corpus))), start=1):
        start, stop = int(held_out[0]), int(held_out[-1]) + 1
        partitions.append(CorpusPartition(part_id=part_id, start=start, sentences=tuple(corpus[start:stop])))
    return partitions
