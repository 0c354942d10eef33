"""
Two-stage stacked parsing

Pipeline:
1. Split the training corpus sequentially into k jackknife partitions
2. Train first-stage parser g_i on every partition except P_i, then parse P_i with g_i
3. Train the second-stage graph parser h on the full corpus with stacking
   features computed from those held-out annotations
4. Train the final first-stage parser g on the full corpus
5. At test time apply g, then h
"""
import io
import json
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import DependencyTree, Sentence
from .corpus_io import CorpusPartition, corpus_fingerprint, jackknife_partition, write_file
from .errors import ConfigError, DataError, ModelError
from .features import TemplateConfig
from .graph_parser import GraphParser, check_decoder
from .learn import Model, model_from_bytes, model_to_bytes, train_structured
from .transition_parser import TransitionParser, train_transition

FAMILIES = ("graph", "transition", "oracle")
FINAL_FIRST_ID = "g"
SECOND_ID = "h"
BUNDLE_FIRST = "first.model"
BUNDLE_SECOND = "second.model"
BUNDLE_PLAN = "plan.json"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)

ParseFn = Callable[[Sentence], DependencyTree]


class ParserSpec(BaseModel):
    """How to build one stage: parser family, decoder, templates and training schedule"""
    model_config = ConfigDict(frozen=True)

    family: Literal["graph", "transition", "oracle"] = Field(
        default="graph", description="oracle returns the gold tree of the annotation corpus"
    )
    decoder: str = Field(default="proj", description="Graph decoder; ignored by the other families")
    config: TemplateConfig = Field(default_factory=TemplateConfig)
    epochs: int = Field(default=10, ge=1)
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _decoder_fits_templates(self) -> "ParserSpec":
        if self.family == "graph":
            check_decoder(self.decoder, self.config)
        return self


class ModelRecord(BaseModel):
    """Provenance of one trained model"""
    model_config = ConfigDict(frozen=True)

    model_id: str
    held_out: Optional[int] = Field(default=None, description="Partition this model never saw")
    trained_on: Tuple[int, ...] = Field(description="Partition ids of the training data")
    sentences: int = Field(ge=0)
    training_indices: Tuple[int, ...] = Field(
        default=(), description="Corpus positions handed to the trainer; recorded for jackknife folds"
    )


class StackedAnnotation(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0, description="Position of the sentence in the training corpus")
    tree: DependencyTree
    producer: str = Field(description="Id of the first-stage model that produced the tree")


class AnnotatedCorpus(BaseModel):
    """Training corpus plus one held-out first-stage parse per sentence"""
    model_config = ConfigDict(frozen=True)

    sentences: Tuple[Sentence, ...]
    annotations: Tuple[StackedAnnotation, ...]

    @model_validator(mode="after")
    def _one_per_sentence(self) -> "AnnotatedCorpus":
        if len(self.sentences) != len(self.annotations):
            raise ValueError(f"{len(self.annotations)} annotations for {len(self.sentences)} sentences")
        for position, annotation in enumerate(self.annotations):
            if annotation.index != position:
                raise ValueError(f"annotation {position} is recorded for sentence {annotation.index}")
        return self

    def trees(self) -> List[DependencyTree]:
        return [a.tree for a in self.annotations]


class AuditRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    part_id: int
    producer: str
    violation: bool


class AuditReport(BaseModel):
    """No-cheat audit: no sentence was annotated by a model trained on it"""
    rows: List[AuditRow] = Field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(row.violation for row in self.rows)

    def summary(self) -> str:
        return f"audited={len(self.rows)} violations={self.violations}"


@dataclass
class StackingPlan:
    """State of a stacked-parsing run, from partitions to trained models"""
    k: int
    first_spec: ParserSpec
    second_spec: ParserSpec
    corpus: List[Sentence]
    first_corpus: List[Sentence]
    partitions: List[CorpusPartition]
    records: Dict[str, ModelRecord] = field(default_factory=dict)
    first_models: Dict[str, Optional[Model]] = field(default_factory=dict)
    final_first: Optional[Model] = None
    second_model: Optional[Model] = None
    audit: Optional[AuditReport] = None
    fingerprint: str = ""

    @property
    def trained(self) -> bool:
        has_first = self.first_spec.family == "oracle" or self.final_first is not None
        return has_first and self.second_model is not None

    def partition_of(self, corpus_index: int) -> CorpusPartition:
        for partition in self.partitions:
            if partition.contains(corpus_index):
                return partition
        raise DataError(f"sentence {corpus_index} lies outside every partition")


def _model_id(part_id: int) -> str:
    return f"g{part_id}"


# ============================================================================
# Plan and first stage
# ============================================================================

def build_plan(
    corpus: Sequence[Sentence],
    k: int = 3,
    first: Optional[ParserSpec] = None,
    second: Optional[ParserSpec] = None,
    first_corpus: Optional[Sequence[Sentence]] = None,
) -> StackingPlan:
    """
    Partition the training corpus and allocate model slots

    Args:
        corpus: Training sentences with the target (second-stage) gold trees
        k: Number of jackknife partitions
        first: First-stage parser spec
        second: Second-stage spec; always the graph parser
        first_corpus: Same sentences carrying the first-stage annotation scheme,
            defaults to corpus

    Returns:
        StackingPlan with partitions and empty model slots
    """
    first = first or ParserSpec()
    second = second or ParserSpec(config=TemplateConfig(enable_stacking=True))
    if second.family != "graph":
        raise ConfigError(f"the second stage must be a graph parser, got {second.family!r}")
    first_corpus = list(first_corpus) if first_corpus is not None else list(corpus)
    if len(first_corpus) != len(corpus):
        raise ConfigError(f"first-stage corpus has {len(first_corpus)} sentences, training corpus {len(corpus)}")
    for number, (a, b) in enumerate(zip(corpus, first_corpus), start=1):
        if [t.form for t in a.tokens] != [t.form for t in b.tokens]:
            raise ConfigError(f"sentence {number} differs between the training and first-stage corpora")

    partitions = jackknife_partition(corpus, k)
    plan = StackingPlan(
        k=k,
        first_spec=first,
        second_spec=second,
        corpus=list(corpus),
        first_corpus=first_corpus,
        partitions=partitions,
        first_models={_model_id(p.part_id): None for p in partitions},
        fingerprint=corpus_fingerprint(corpus),
    )
    logger.info(f"Stacking plan: {k} partitions of sizes {[len(p) for p in partitions]}")
    return plan


def _train_first(spec: ParserSpec, sentences: Sequence[Sentence]) -> Optional[Model]:
    if spec.family == "oracle":
        return None
    if spec.family == "transition":
        return train_transition(sentences, spec.config, spec.epochs, spec.seed)
    model, _ = train_structured(sentences, spec.decoder, spec.config, spec.epochs, spec.seed)
    return model


def parser_for(spec: ParserSpec, model: Optional[Model]) -> ParseFn:
    """
    Callable parser for a stage

    The oracle family returns each sentence's own gold tree, which makes the
    first stage a perfect annotator.
    """
    if spec.family == "oracle":
        def oracle(sentence: Sentence) -> DependencyTree:
            if sentence.gold_tree is None:
                raise DataError("the oracle first stage needs sentences with gold trees")
            return sentence.gold_tree
        return oracle
    if model is None:
        raise ModelError(f"no trained {spec.family} model for this stage")
    if spec.family == "transition":
        return TransitionParser(model)
    return GraphParser(model, spec.decoder)


def _fit_fold(plan: StackingPlan, partition: CorpusPartition) -> Tuple[CorpusPartition, Optional[Model], ModelRecord]:
    indices = tuple(i for i in range(len(plan.first_corpus)) if not partition.contains(i))
    training = [plan.first_corpus[i] for i in indices]
    started = time.perf_counter()
    model = _train_first(plan.first_spec, training)
    record = ModelRecord(
        model_id=_model_id(partition.part_id),
        held_out=partition.part_id,
        trained_on=tuple(sorted({plan.partition_of(i).part_id for i in indices})),
        sentences=len(training),
        training_indices=indices,
    )
    logger.info(
        f"Trained {record.model_id} on partitions {list(record.trained_on)} "
        f"({len(training)} sentences, {time.perf_counter() - started:.2f}s)"
    )
    return partition, model, record


def annotate_training(plan: StackingPlan, jobs: int = 1) -> AnnotatedCorpus:
    """
    Train g_1..g_k and parse every partition with the model that never saw it

    Args:
        plan: Plan from build_plan; its first-stage slots are filled in place
        jobs: Number of first-stage trainings run concurrently

    Returns:
        AnnotatedCorpus recording the producing model of every annotation
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be positive, got {jobs}")
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        fitted = list(pool.map(lambda p: _fit_fold(plan, p), plan.partitions))

    annotations: List[StackedAnnotation] = []
    for partition, model, record in fitted:
        plan.first_models[record.model_id] = model
        plan.records[record.model_id] = record
        parse = parser_for(plan.first_spec, model)
        for offset in range(len(partition)):
            index = partition.start + offset
            annotations.append(StackedAnnotation(index=index, tree=parse(plan.first_corpus[index]), producer=record.model_id))
    annotations.sort(key=lambda a: a.index)
    logger.info(f"Annotated {len(annotations)} training sentences with held-out first-stage parses")
    return AnnotatedCorpus(sentences=tuple(plan.corpus), annotations=tuple(annotations))


def audit_no_cheat(plan: StackingPlan, annotated: AnnotatedCorpus) -> AuditReport:
    """
    Check that every annotation came from a model that never trained on its sentence

    A row is a violation when the producer is unknown, when it was not the model
    holding the sentence's partition out, or when the corpus positions it was
    actually trained on overlap that partition.
    """
    touched = {
        key: frozenset(plan.partition_of(i).part_id for i in record.training_indices)
        for key, record in plan.records.items()
    }
    rows = []
    for annotation in annotated.annotations:
        partition = plan.partition_of(annotation.index)
        record = plan.records.get(annotation.producer)
        violation = (
            record is None
            or record.held_out != partition.part_id
            or partition.part_id in record.trained_on
            or partition.part_id in touched[annotation.producer]
        )
        rows.append(AuditRow(
            index=annotation.index, part_id=partition.part_id, producer=annotation.producer, violation=violation
        ))
    report = AuditReport(rows=rows)
    log = logger.warning if report.violations else logger.info
    log(f"No-cheat audit: {report.summary()}")
    return report


# ============================================================================
# Second stage and inference
# ============================================================================

def train_stacked(plan: StackingPlan, annotated: AnnotatedCorpus) -> StackingPlan:
    """
    Train the second-stage parser h on the annotations and the final first stage g

    Returns:
        The same plan with final_first, second_model, records and audit filled in
    """
    if not annotated.annotations:
        raise DataError("cannot train the second stage without first-stage annotations")
    if len(annotated.annotations) != len(plan.corpus):
        raise DataError(f"{len(annotated.annotations)} annotations for {len(plan.corpus)} training sentences")
    plan.audit = audit_no_cheat(plan, annotated)

    spec = plan.second_spec
    logger.info(f"Training second stage h (stacking features {'on' if spec.config.enable_stacking else 'off'})")
    plan.second_model, _ = train_structured(
        plan.corpus, spec.decoder, spec.config, spec.epochs, spec.seed, annotations=annotated.trees()
    )
    plan.records[SECOND_ID] = ModelRecord(
        model_id=SECOND_ID, trained_on=tuple(p.part_id for p in plan.partitions), sentences=len(plan.corpus)
    )

    logger.info("Training final first stage g on the full corpus")
    plan.final_first = _train_first(plan.first_spec, plan.first_corpus)
    plan.records[FINAL_FIRST_ID] = ModelRecord(
        model_id=FINAL_FIRST_ID, trained_on=tuple(p.part_id for p in plan.partitions), sentences=len(plan.first_corpus)
    )
    return plan


def stacked_parse(sentence: Sentence, plan: StackingPlan) -> DependencyTree:
    """Parse with g, then with h using stacking features from g's tree"""
    if plan.second_model is None:
        raise ModelError("stacked plan has no second-stage model h")
    first = parser_for(plan.first_spec, plan.final_first)(sentence)
    second = GraphParser(plan.second_model, plan.second_spec.decoder)
    return second.parse(sentence, first if plan.second_model.config.enable_stacking else None)


def stacked_parser(plan: StackingPlan) -> ParseFn:
    """Closure over a trained plan, suitable for bench_speed"""
    if plan.second_model is None:
        raise ModelError("stacked plan has no second-stage model h")
    first = parser_for(plan.first_spec, plan.final_first)
    second = GraphParser(plan.second_model, plan.second_spec.decoder)
    use_annotation = plan.second_model.config.enable_stacking

    def parse(sentence: Sentence) -> DependencyTree:
        annotation = first(sentence)
        return second.parse(sentence, annotation if use_annotation else None)
    return parse


# ============================================================================
# Bundle
# ============================================================================

def _plan_record(plan: StackingPlan) -> dict:
    return {
        "k": plan.k,
        "first_spec": plan.first_spec.model_dump(mode="json"),
        "second_spec": plan.second_spec.model_dump(mode="json"),
        "partitions": [[p.part_id, p.start, p.stop] for p in plan.partitions],
        "records": {key: record.model_dump(mode="json") for key, record in sorted(plan.records.items())},
        "audit": None if plan.audit is None else plan.audit.model_dump(mode="json"),
        "fingerprint": plan.fingerprint,
    }


def _write_entry(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def save_bundle(plan: StackingPlan, path: Union[str, Path]) -> Path:
    """
    Write final g, h and the plan record (partitions, provenance, audit) to one zip

    Entries carry a fixed timestamp so identical plans give identical bundles.
    """
    if plan.second_model is None:
        raise ModelError("cannot save a stacked plan without its second-stage model")
    path = Path(path)
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        if plan.final_first is not None:
            _write_entry(archive, BUNDLE_FIRST, model_to_bytes(plan.final_first))
        _write_entry(archive, BUNDLE_SECOND, model_to_bytes(plan.second_model))
        record = json.dumps(_plan_record(plan), sort_keys=True, indent=2).encode("utf-8")
        _write_entry(archive, BUNDLE_PLAN, record)
    write_file(path, buffer.getvalue(), "stacked bundle")
    logger.info(f"Saved stacked bundle to {path}")
    return path


def load_bundle(path: Union[str, Path]) -> StackingPlan:
    """
    Read a stacked bundle

    The returned plan carries models, specs and provenance but no corpus or
    partition sentences.
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as archive:
            names = set(archive.namelist())
            if BUNDLE_PLAN not in names:
                raise ModelError(f"{path} has no {BUNDLE_PLAN}")
            record = json.loads(archive.read(BUNDLE_PLAN).decode("utf-8"))
            first = model_from_bytes(archive.read(BUNDLE_FIRST)) if BUNDLE_FIRST in names else None
            second = model_from_bytes(archive.read(BUNDLE_SECOND)) if BUNDLE_SECOND in names else None
    except (OSError, zipfile.BadZipFile) as e:
        raise ModelError(f"cannot read stacked bundle {path}: {e}") from e
    except (ValueError, KeyError) as e:
        if isinstance(e, ModelError):
            raise
        raise ModelError(f"corrupt stacked bundle {path}: {e}") from e

    try:
        plan = StackingPlan(
            k=record["k"],
            first_spec=ParserSpec(**record["first_spec"]),
            second_spec=ParserSpec(**record["second_spec"]),
            corpus=[],
            first_corpus=[],
            partitions=[],
            records={key: ModelRecord(**value) for key, value in record["records"].items()},
            final_first=first,
            second_model=second,
            audit=None if record["audit"] is None else AuditReport(**record["audit"]),
            fingerprint=record["fingerprint"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"corrupt stacked plan record in {path}: {e}") from e
    if second is None:
        logger.warning(f"{path} carries no second-stage model")
    return plan
