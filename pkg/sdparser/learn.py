"""
Averaged perceptron training and the model file format

Model file layout (all integers little-endian):

    offset  size  content
    0       4     magic b"DFRG"
    4       2     uint16 format version (1)
    6       4     uint32 header length H
    10      H     UTF-8 JSON header: kind, decoder, labels, classes, config,
                  metadata, clusters
    10+H    4*2^b float32 weights, b = config.hash_bits
"""
import json
import struct
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from .core import DependencyTree, Sentence, is_projective, validate_tree
from .corpus_io import ClusterLexicon, corpus_fingerprint, write_file
from .errors import ConfigError, DataError, ModelError, ModelVersionError, TreeError, TruncatedModelError
from .features import FeatureVector, SentenceFeatures, TemplateConfig, class_salt, label_salt
from .graph_parser import DECODERS, check_decoder, decode_with_weights

MODEL_MAGIC = b"DFRG"
MODEL_FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
MODEL_KINDS = ("graph", "transition", "multiclass")
PROJECTIVE_DECODERS = ("proj", "sib")


@dataclass(frozen=True, eq=False)
class Model:
    """Flat hashed weight vector plus everything needed to extract matching features"""
    kind: str
    weights: np.ndarray
    labels: Tuple[str, ...]
    config: TemplateConfig
    decoder: str = "proj"
    classes: Tuple[str, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)
    lexicon: Optional[ClusterLexicon] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        if weights.shape != (1 << self.config.hash_bits,):
            raise ModelError(f"expected {1 << self.config.hash_bits} weights, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ModelError("model weights must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.kind == "graph" and not self.labels:
            raise ModelError("a graph model needs a non-empty label inventory")
        if self.kind != "graph" and len(self.classes) < 2:
            raise ModelError(f"a {self.kind} model needs at least two classes")
        if self.config.enable_clusters and self.lexicon is None:
            raise ModelError("cluster templates are enabled but the model carries no lexicon")

    @cached_property
    def label_salts(self) -> np.ndarray:
        return np.array([label_salt(label, self.config.hash_bits) for label in self.labels], dtype=np.int64)

    @cached_property
    def class_salts(self) -> np.ndarray:
        return np.array([class_salt(name, self.config.hash_bits) for name in self.classes], dtype=np.int64)


class EpochStats(BaseModel):
    epoch: int = Field(ge=1)
    uas: float = Field(ge=0.0, le=1.0, description="Training attachment accuracy before updates")
    las: float = Field(ge=0.0, le=1.0)
    updates: int = Field(ge=0, description="Perceptron updates made in the epoch")
    seconds: float = Field(ge=0.0, description="Wall-clock time of the epoch")


class TrainLog(BaseModel):
    """Per-epoch progress of a training run"""
    epochs: List[EpochStats] = Field(default_factory=list)
    sentences: int = Field(default=0, description="Sentences used for training")
    skipped: int = Field(default=0, description="Sentences skipped as non-projective")

    @property
    def final(self) -> Optional[EpochStats]:
        return self.epochs[-1] if self.epochs else None


class AveragedWeights:
    """
    Weight vector with lazy averaging

    Averaged weights are the mean of the weight vectors after every instance.
    An update made during instance t contributes to the T - t + 1 remaining
    snapshots, so the accumulator stores (t - 1) * delta and the average is
    current - accumulator / T.
    """

    def __init__(self, size: int):
        self.current = np.zeros(size, dtype=np.float64)
        self._accumulated = np.zeros(size, dtype=np.float64)
        self.step = 0

    def tick(self) -> None:
        self.step += 1

    def update(self, indices: np.ndarray, values: np.ndarray) -> None:
        np.add.at(self.current, indices, values)
        np.add.at(self._accumulated, indices, (self.step - 1) * values)

    def average(self) -> np.ndarray:
        if self.step == 0:
            return self.current.copy()
        return self.current - self._accumulated / self.step


def _epoch_order(count: int, rng: np.random.Generator, shuffle: bool) -> np.ndarray:
    return rng.permutation(count) if shuffle else np.arange(count)


# ============================================================================
# Structured training
# ============================================================================

def require_gold_trees(corpus: Sequence[Sentence]) -> None:
    """Every sentence must carry a single-rooted, acyclic, in-range gold tree"""
    for number, sentence in enumerate(corpus, start=1):
        if sentence.gold_tree is None:
            raise DataError(f"training sentence {number} has no gold tree")
        if len(sentence) == 0:
            continue
        verdict = validate_tree(sentence.gold_tree, len(sentence))
        if not verdict.valid:
            raise TreeError(f"training sentence {number}: {verdict.reason}")


def train_structured(
    corpus: Sequence[Sentence],
    decoder: str = "proj",
    config: Optional[TemplateConfig] = None,
    epochs: int = 10,
    seed: Optional[int] = None,
    lexicon: Optional[ClusterLexicon] = None,
    annotations: Optional[Sequence[DependencyTree]] = None,
    shuffle: bool = False,
) -> Tuple[Model, TrainLog]:
    """
    Train a graph model with the averaged structured perceptron

    Args:
        corpus: Sentences with gold trees
        decoder: One of proj, nonproj, sib, sib-gp
        config: Template configuration
        epochs: Passes over the corpus
        seed: Seed for the optional shuffle, recorded in the model
        lexicon: Cluster lexicon, required when cluster templates are enabled
        annotations: First-stage trees, required when stacking features are enabled
        shuffle: Visit sentences in a seeded random order each epoch

    Returns:
        (Model with averaged weights, TrainLog)
    """
    config = config or TemplateConfig()
    check_decoder(decoder, config)
    if not corpus:
        raise DataError("cannot train on an empty corpus")
    if epochs < 1:
        raise ConfigError(f"epochs must be positive, got {epochs}")
    if config.enable_stacking:
        if annotations is None:
            raise ConfigError("stacking features are enabled but no first-stage annotations were given")
        if len(annotations) != len(corpus):
            raise ConfigError(f"{len(annotations)} annotations for {len(corpus)} sentences")
    require_gold_trees(corpus)

    projective_only = decoder in PROJECTIVE_DECODERS
    used, skipped = [], 0
    for i, sentence in enumerate(corpus):
        if len(sentence) == 0:
            continue
        if projective_only and not is_projective(sentence.gold_tree):
            skipped += 1
            continue
        used.append(i)
    if skipped:
        logger.warning(f"Skipped {skipped} non-projective sentences for projective training")
    if not used:
        raise DataError("no usable training sentences")

    labels = tuple(sorted({label for i in used for label in corpus[i].gold_tree.labels}))
    salts = np.array([label_salt(label, config.hash_bits) for label in labels], dtype=np.int64)
    cached = [
        SentenceFeatures(corpus[i], config, lexicon, annotations[i] if config.enable_stacking else None)
        for i in used
    ]
    golds = [corpus[i].gold_tree for i in used]
    total_tokens = sum(len(g) for g in golds)

    weights = AveragedWeights(1 << config.hash_bits)
    rng = np.random.default_rng(seed)
    log = TrainLog(sentences=len(used), skipped=skipped)
    logger.info(f"Training {decoder} graph model on {len(used)} sentences, {len(labels)} labels, {epochs} epochs")

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        correct_heads = correct_labeled = updates = 0
        for position in _epoch_order(len(used), rng, shuffle):
            weights.tick()
            features, gold = cached[position], golds[position]
            predicted = decode_with_weights(features, weights.current, labels, salts, decoder)
            for gh, gl, ph, pl in zip(gold.heads, gold.labels, predicted.heads, predicted.labels):
                if gh == ph:
                    correct_heads += 1
                    correct_labeled += gl == pl
            if predicted != gold:
                good, bad = features.tree_features(gold), features.tree_features(predicted)
                weights.update(
                    np.concatenate([good.indices, bad.indices]),
                    np.concatenate([good.values, -bad.values]),
                )
                updates += 1
        stats = EpochStats(
            epoch=epoch,
            uas=correct_heads / total_tokens,
            las=correct_labeled / total_tokens,
            updates=updates,
            seconds=time.perf_counter() - started,
        )
        log.epochs.append(stats)
        logger.info(
            f"Epoch {epoch}: UAS={stats.uas:.4f} LAS={stats.las:.4f} updates={updates} ({stats.seconds:.2f}s)"
        )

    model = Model(
        kind="graph",
        weights=weights.average(),
        labels=labels,
        config=config,
        decoder=decoder,
        metadata={
            "fingerprint": corpus_fingerprint(corpus),
            "epochs": epochs,
            "seed": seed,
            "shuffle": shuffle,
            "sentences": len(used),
            "skipped": skipped,
        },
        lexicon=lexicon if config.enable_clusters else None,
    )
    return model, log


# ============================================================================
# Multiclass training
# ============================================================================

def class_scores(weights: np.ndarray, vector: FeatureVector, salts: np.ndarray) -> np.ndarray:
    """Score of every class: sum of weights at bucket XOR class salt"""
    return (weights[vector.indices[None, :] ^ salts[:, None]] * vector.values[None, :]).sum(axis=1)


def train_multiclass(
    instances: Sequence[Tuple[FeatureVector, str]],
    epochs: int = 10,
    seed: Optional[int] = None,
    hash_bits: int = 22,
    classes: Optional[Sequence[str]] = None,
    shuffle: bool = False,
) -> Model:
    """
    Averaged multiclass perceptron

    Args:
        instances: (feature vector, class name) pairs
        epochs: Passes over the instances
        seed: Seed for the optional shuffle
        hash_bits: Size of the weight vector in bits
        classes: Class inventory; defaults to the sorted classes seen in instances
        shuffle: Visit instances in a seeded random order each epoch

    Returns:
        Model of kind "multiclass"
    """
    if not instances:
        raise DataError("cannot train a classifier on an empty instance list")
    if epochs < 1:
        raise ConfigError(f"epochs must be positive, got {epochs}")
    classes = tuple(classes) if classes is not None else tuple(sorted({name for _, name in instances}))
    if len(classes) < 2:
        raise DataError(f"a classifier needs at least two classes, got {list(classes)}")
    index = {name: i for i, name in enumerate(classes)}
    unknown = {name for _, name in instances if name not in index}
    if unknown:
        raise DataError(f"instances use classes outside the inventory: {sorted(unknown)}")
    salts = np.array([class_salt(name, hash_bits) for name in classes], dtype=np.int64)

    weights = AveragedWeights(1 << hash_bits)
    rng = np.random.default_rng(seed)
    for epoch in range(1, epochs + 1):
        mistakes = 0
        for position in _epoch_order(len(instances), rng, shuffle):
            weights.tick()
            vector, name = instances[position]
            predicted = int(np.argmax(class_scores(weights.current, vector, salts)))
            gold = index[name]
            if predicted != gold:
                mistakes += 1
                weights.update(
                    np.concatenate([vector.indices ^ salts[gold], vector.indices ^ salts[predicted]]),
                    np.concatenate([vector.values, -vector.values]),
                )
        logger.debug(f"Epoch {epoch}: {mistakes}/{len(instances)} classifier mistakes")

    return Model(
        kind="multiclass",
        weights=weights.average(),
        labels=(),
        config=TemplateConfig(hash_bits=hash_bits),
        classes=classes,
        metadata={"epochs": epochs, "seed": seed, "shuffle": shuffle, "instances": len(instances)},
    )


def predict_class(model: Model, vector: FeatureVector) -> str:
    return model.classes[int(np.argmax(class_scores(model.weights, vector, model.class_salts)))]


def multiclass_accuracy(model: Model, instances: Sequence[Tuple[FeatureVector, str]]) -> float:
    if not instances:
        raise DataError("no instances to score")
    hits = sum(predict_class(model, vector) == name for vector, name in instances)
    return hits / len(instances)


# ============================================================================
# Serialization
# ============================================================================

def model_to_bytes(model: Model) -> bytes:
    header = {
        "kind": model.kind,
        "decoder": model.decoder,
        "labels": list(model.labels),
        "classes": list(model.classes),
        "config": model.config.model_dump(mode="json"),
        "metadata": model.metadata,
        "clusters": None if model.lexicon is None else model.lexicon.model_dump(mode="json"),
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return (
        _PREAMBLE.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, len(encoded))
        + encoded
        + model.weights.astype("<f4").tobytes()
    )


def model_from_bytes(data: bytes) -> Model:
    """
    Decode a model file

    Raises:
        ModelVersionError: wrong magic bytes or unsupported format version
        TruncatedModelError: file shorter than its header announces
        ModelError: undecodable header or inconsistent contents
    """
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC[:len(data)] or len(data) == 0:
        raise ModelVersionError("not a model file (bad magic bytes)")
    if len(data) < _PREAMBLE.size:
        raise TruncatedModelError(f"model file is only {len(data)} bytes long")
    _, version, header_length = _PREAMBLE.unpack_from(data)
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is not supported (expected {MODEL_FORMAT_VERSION})")
    body = _PREAMBLE.size + header_length
    if len(data) < body:
        raise TruncatedModelError("model header is truncated")
    try:
        header = json.loads(data[_PREAMBLE.size:body].decode("utf-8"))
        config = TemplateConfig(**header["config"])
        lexicon = None if header["clusters"] is None else ClusterLexicon(**header["clusters"])
    except (ValueError, KeyError, TypeError) as e:
        raise ModelError(f"unreadable model header: {e}") from e

    expected = 4 << config.hash_bits
    payload = data[body:]
    if len(payload) < expected:
        raise TruncatedModelError(f"model weights are truncated ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise ModelError(f"{len(payload) - expected} unexpected bytes after the weights")
    return Model(
        kind=header["kind"],
        weights=np.frombuffer(payload, dtype="<f4").astype(np.float32),
        labels=tuple(header["labels"]),
        config=config,
        decoder=header["decoder"],
        classes=tuple(header["classes"]),
        metadata=header["metadata"],
        lexicon=lexicon,
    )


def save_model(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    write_file(path, model_to_bytes(model), "model")
    logger.info(f"Saved {model.kind} model to {path}")
    return path


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ModelError(f"cannot read model {path}: {e}") from e
    model = model_from_bytes(data)
    if model.kind == "graph" and model.decoder not in DECODERS:
        raise ModelError(f"model names an unknown decoder {model.decoder!r}")
    return model
