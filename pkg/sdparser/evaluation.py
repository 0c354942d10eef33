"""
Attachment scores, CCprocessed graph F1, throughput and speed-accuracy reports
"""
import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from loguru import logger  # noqa: E402
from pydantic import BaseModel, Field, model_validator  # noqa: E402

from .core import DependencyGraph, DependencyTree, Sentence  # noqa: E402
from .errors import ConfigError, DataError, FormatError  # noqa: E402
from .sd_transform import TransformConfig, basic_to_ccprocessed  # noqa: E402

PUNCT_TAGS: FrozenSet[str] = frozenset({"``", "''", ".", ",", ":"})
DEFAULT_WARMUP = 100
TRADEOFF_COLUMNS = ("name", "uas", "las", "unlabeled_f1", "labeled_f1", "tokens_per_sec")

ParseFn = Callable[[Sentence], DependencyTree]


class TimingBreakdown(BaseModel):
    """Wall-clock split of a benchmark run (warmup excluded)"""
    parse_seconds: float = Field(ge=0.0)
    transform_seconds: float = Field(default=0.0, ge=0.0, description="0 unless the transform was timed")
    sentences: int = Field(ge=0)
    tokens: int = Field(ge=0)
    warmup: int = Field(default=0, ge=0, description="Sentences parsed before timing started")
    jobs: int = Field(default=1, ge=1)

    @property
    def total_seconds(self) -> float:
        return self.parse_seconds + self.transform_seconds

    def to_lines(self) -> str:
        return (
            f"parse_seconds={self.parse_seconds:.6f}\n"
            f"transform_seconds={self.transform_seconds:.6f}\n"
            f"total_seconds={self.total_seconds:.6f}\n"
            f"sentences={self.sentences}\n"
            f"tokens={self.tokens}\n"
            f"warmup={self.warmup}\n"
            f"jobs={self.jobs}\n"
        )


Fraction = Optional[Annotated[float, Field(ge=0.0, le=1.0)]]


class EvalReport(BaseModel):
    """Evaluation results; tree metrics, graph metrics or both"""
    uas: Fraction = None
    las: Fraction = None
    unlabeled_p: Fraction = None
    unlabeled_r: Fraction = None
    unlabeled_f1: Fraction = None
    labeled_p: Fraction = None
    labeled_r: Fraction = None
    labeled_f1: Fraction = None
    tokens_per_second: Optional[float] = Field(default=None, ge=0.0)
    tokens: int = Field(default=0, ge=0)
    sentences: int = Field(default=0, ge=0)
    timing: Optional[TimingBreakdown] = None

    @model_validator(mode="after")
    def _f1_is_harmonic_mean(self) -> "EvalReport":
        for prefix in ("unlabeled", "labeled"):
            p, r, f1 = (getattr(self, f"{prefix}_{x}") for x in ("p", "r", "f1"))
            if None in (p, r, f1):
                continue
            expected = 2 * p * r / (p + r) if p + r else 0.0
            if not math.isclose(f1, expected, abs_tol=1e-9):
                raise ValueError(f"{prefix} F1 {f1} is not the harmonic mean of P={p} and R={r}")
        return self


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


# ============================================================================
# Metrics
# ============================================================================

def attachment_scores(
    gold: Sequence[DependencyTree],
    predicted: Sequence[DependencyTree],
    corpus: Optional[Sequence[Sentence]] = None,
    exclude_punct: bool = False,
    punct_tags: FrozenSet[str] = PUNCT_TAGS,
) -> Tuple[float, float]:
    """
    Unlabeled and labeled attachment score

    Args:
        gold: Gold trees
        predicted: Predicted trees, parallel to gold
        corpus: Sentences supplying POS tags, required when excluding punctuation
        exclude_punct: Skip tokens whose fine POS tag is in punct_tags
        punct_tags: Punctuation tag set

    Returns:
        (uas, las) over all scored tokens
    """
    if len(gold) != len(predicted):
        raise DataError(f"{len(gold)} gold trees but {len(predicted)} predicted trees")
    if not gold:
        raise DataError("cannot score an empty corpus")
    if exclude_punct and corpus is None:
        raise ConfigError("excluding punctuation needs the sentences for their POS tags")
    if corpus is not None and len(corpus) != len(gold):
        raise DataError(f"{len(corpus)} sentences for {len(gold)} trees")

    scored = heads = labeled = 0
    for number, (g, p) in enumerate(zip(gold, predicted), start=1):
        if len(g) != len(p):
            raise DataError(f"sentence {number}: gold has {len(g)} tokens, prediction {len(p)}")
        for m in range(1, len(g) + 1):
            if exclude_punct and corpus[number - 1].pos(m) in punct_tags:
                continue
            scored += 1
            if g.head(m) == p.head(m):
                heads += 1
                labeled += g.label(m) == p.label(m)
    if scored == 0:
        raise DataError("no tokens left to score")
    return heads / scored, labeled / scored


def _arc_keys(graph: DependencyGraph, labeled: bool, include_root: bool) -> FrozenSet[tuple]:
    arcs = (a for a in graph.arcs if include_root or a.parent != 0)
    if labeled:
        return frozenset((a.dep_type, a.parent, a.child) for a in arcs)
    return frozenset((a.parent, a.child) for a in arcs)


def graph_f1(
    gold: Sequence[DependencyGraph],
    predicted: Sequence[DependencyGraph],
    labeled: bool = True,
    include_root: bool = True,
) -> Tuple[float, float, float]:
    """
    Micro-averaged precision, recall and F1 over typed dependency tuples

    Labeled matches need the same <T, P, C>; unlabeled matches compare <P, C>
    pairs with set semantics.
    """
    if len(gold) != len(predicted):
        raise DataError(f"{len(gold)} gold graphs but {len(predicted)} predicted graphs")
    correct = gold_total = predicted_total = 0
    for g, p in zip(gold, predicted):
        gold_keys = _arc_keys(g, labeled, include_root)
        predicted_keys = _arc_keys(p, labeled, include_root)
        correct += len(gold_keys & predicted_keys)
        gold_total += len(gold_keys)
        predicted_total += len(predicted_keys)
    precision = correct / predicted_total if predicted_total else 0.0
    recall = correct / gold_total if gold_total else 0.0
    return precision, recall, _f1(precision, recall)


def evaluate_trees(
    gold: Sequence[Sentence],
    predicted: Sequence[Sentence],
    exclude_punct: bool = False,
) -> EvalReport:
    """Tree metrics for two parallel CoNLL corpora"""
    if len(gold) != len(predicted):
        raise DataError(f"{len(gold)} gold sentences but {len(predicted)} predicted sentences")
    for number, (g, p) in enumerate(zip(gold, predicted), start=1):
        if g.gold_tree is None or p.gold_tree is None:
            raise DataError(f"sentence {number} has no tree in one of the files")
    uas, las = attachment_scores(
        [s.gold_tree for s in gold], [s.gold_tree for s in predicted], gold, exclude_punct
    )
    return EvalReport(uas=uas, las=las, tokens=sum(len(s) for s in gold), sentences=len(gold))


def evaluate_graphs(
    gold: Sequence[DependencyGraph],
    predicted: Sequence[DependencyGraph],
    include_root: bool = True,
) -> EvalReport:
    """Labeled and unlabeled F1 for two parallel lists of graphs"""
    up, ur, uf = graph_f1(gold, predicted, labeled=False, include_root=include_root)
    lp, lr, lf = graph_f1(gold, predicted, labeled=True, include_root=include_root)
    return EvalReport(
        unlabeled_p=up, unlabeled_r=ur, unlabeled_f1=uf,
        labeled_p=lp, labeled_r=lr, labeled_f1=lf,
        sentences=len(gold),
    )


# ============================================================================
# Throughput
# ============================================================================

def _timed_map(function: Callable, items: Sequence, jobs: int, clock: Callable[[], float]) -> Tuple[list, float]:
    started = clock()
    if jobs == 1:
        results = [function(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(function, items))
    return results, clock() - started


def bench_speed(
    parser: ParseFn,
    corpus: Sequence[Sentence],
    include_transform: bool = False,
    warmup: int = DEFAULT_WARMUP,
    transform_config: Optional[TransformConfig] = None,
    jobs: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[float, TimingBreakdown]:
    """
    Measure parsing throughput

    Args:
        parser: Callable turning a sentence into a Basic tree
        corpus: Sentences to parse
        include_transform: Also time the CCprocessed transform of every parse
        warmup: Leading sentences parsed before timing starts
        transform_config: Transform switches used when include_transform is set
        jobs: Worker threads; 1 gives per-core comparable numbers
        clock: Monotonic clock in seconds

    Returns:
        (tokens per second, TimingBreakdown) over the timed sentences
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be positive, got {jobs}")
    if warmup < 0:
        raise ConfigError(f"warmup must not be negative, got {warmup}")
    if len(corpus) <= warmup:
        raise DataError(
            f"corpus has {len(corpus)} sentences but {warmup} are used for warmup; supply a larger corpus"
        )
    for sentence in corpus[:warmup]:
        parser(sentence)

    timed = list(corpus[warmup:])
    trees, parse_seconds = _timed_map(parser, timed, jobs, clock)
    transform_seconds = 0.0
    if include_transform:
        _, transform_seconds = _timed_map(
            lambda pair: basic_to_ccprocessed(pair[0], pair[1], transform_config),
            list(zip(trees, timed)), jobs, clock,
        )
    breakdown = TimingBreakdown(
        parse_seconds=parse_seconds,
        transform_seconds=transform_seconds,
        sentences=len(timed),
        tokens=sum(len(s) for s in timed),
        warmup=warmup,
        jobs=jobs,
    )
    if breakdown.total_seconds <= 0:
        raise DataError("elapsed time is zero; supply a larger corpus")
    rate = breakdown.tokens / breakdown.total_seconds
    logger.info(f"Parsed {breakdown.tokens} tokens in {breakdown.total_seconds:.3f}s ({rate:.1f} tokens/s)")
    return rate, breakdown


# ============================================================================
# Reports
# ============================================================================

def format_report(report: EvalReport) -> str:
    """key=value lines for every metric that is present"""
    lines = []
    for key in ("uas", "las", "unlabeled_p", "unlabeled_r", "unlabeled_f1", "labeled_p", "labeled_r", "labeled_f1"):
        value = getattr(report, key)
        if value is not None:
            lines.append(f"{key}={value:.4f}")
    if report.tokens_per_second is not None:
        lines.append(f"tokens_per_sec={report.tokens_per_second:.4f}")
    lines.append(f"sentences={report.sentences}")
    lines.append(f"tokens={report.tokens}")
    text = "\n".join(lines) + "\n"
    if report.timing is not None:
        text += report.timing.to_lines()
    return text


def _cell(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def tradeoff_report(entries: Sequence[Tuple[str, EvalReport]]) -> str:
    """
    Speed-accuracy CSV, one row per entry in input order

    Missing metrics are written as empty cells.
    """
    if not entries:
        raise DataError("a tradeoff report needs at least one entry")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRADEOFF_COLUMNS)
    for name, report in entries:
        writer.writerow([
            name,
            _cell(report.uas),
            _cell(report.las),
            _cell(report.unlabeled_f1),
            _cell(report.labeled_f1),
            _cell(report.tokens_per_second),
        ])
    return buffer.getvalue()


def read_tradeoff_csv(text: str) -> List[Dict[str, Union[str, Optional[float]]]]:
    """Parse a tradeoff CSV back into rows of floats (None for empty cells)"""
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(rows[0]) != TRADEOFF_COLUMNS:
        raise FormatError(f"expected header {','.join(TRADEOFF_COLUMNS)}", 1)
    parsed = []
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(TRADEOFF_COLUMNS):
            raise FormatError(f"expected {len(TRADEOFF_COLUMNS)} fields, got {len(row)}", line_number)
        entry: Dict[str, Union[str, Optional[float]]] = {"name": row[0]}
        for key, cell in zip(TRADEOFF_COLUMNS[1:], row[1:]):
            try:
                entry[key] = float(cell) if cell else None
            except ValueError as e:
                raise FormatError(f"{key} is not a number: {cell!r}", line_number) from e
        parsed.append(entry)
    return parsed


def plot_tradeoff(rows: Iterable[Dict[str, Union[str, Optional[float]]]], path: Union[str, Path]) -> Path:
    """
    Scatter UAS against tokens/s (log axis), one labeled point per parser

    Rows without both values are skipped.
    """
    points = [r for r in rows if r.get("uas") is not None and r.get("tokens_per_sec")]
    if not points:
        raise DataError("no row has both UAS and tokens/s to plot")
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        ax.scatter([r["tokens_per_sec"] for r in points], [r["uas"] for r in points], color="black", s=20)
        for r in points:
            ax.annotate(r["name"], (r["tokens_per_sec"], r["uas"]), xytext=(4, 4), textcoords="offset points", fontsize=8)
        ax.set_xscale("log")
        ax.set_xlabel("tokens per second")
        ax.set_ylabel("UAS")
        ax.set_title("Speed-accuracy tradeoff")
        ax.grid(True, which="both", linestyle=":", linewidth=0.5)
        try:
            fig.savefig(path, bbox_inches="tight", dpi=150)
        except OSError as e:
            raise DataError(f"cannot write plot {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.info(f"Wrote tradeoff plot with {len(points)} points to {path}")
    return path
