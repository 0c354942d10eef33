"""
Command-line entry point

Subcommands: train, parse, transform, evaluate, bench, stack-train, stack-parse,
generate, fixtures, plot. Exit codes: 0 success, 2 usage or configuration error,
3 data or model error.
"""
import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Literal, Optional, Sequence

from loguru import logger
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .config import Settings, configure_logging
from .core import DependencyTree, Sentence
from .corpus_io import (
    SD_TUPLE_PATTERN,
    decode_text,
    load_clusters_file,
    read_conll_file,
    read_sd_graphs,
    read_tag_file,
    substitute_tags,
    write_file,
    write_conll,
    write_sd_graphs,
)
from .errors import ConfigError, DataError, FormatError, ModelError, SDParserError
from .evaluation import (
    DEFAULT_WARMUP,
    EvalReport,
    bench_speed,
    evaluate_graphs,
    evaluate_trees,
    format_report,
    graph_f1,
    plot_tradeoff,
    read_tradeoff_csv,
    tradeoff_report,
)
from .features import TemplateConfig
from .fixtures import ToyGrammar, alternate_annotation, export_fixtures, generate_corpus
from .graph_parser import DECODERS, GraphParser
from .learn import Model, load_model, save_model, train_structured
from .sd_transform import TransformConfig, basic_to_ccprocessed, transform_corpus
from .stacking import (
    ParserSpec,
    annotate_training,
    build_plan,
    load_bundle,
    save_bundle,
    stacked_parser,
    train_stacked,
)
from .transition_parser import TransitionParser, train_transition

COMMANDS = (
    "train", "parse", "transform", "evaluate", "bench",
    "stack-train", "stack-parse", "generate", "fixtures", "plot",
)
REQUIRED_FLAGS = {
    "train": ("input", "model"),
    "parse": ("input", "model"),
    "transform": ("input",),
    "evaluate": ("gold", "input"),
    "bench": ("input", "model"),
    "stack-train": ("input", "model"),
    "stack-parse": ("input", "model"),
    "generate": ("output",),
    "fixtures": ("output",),
    "plot": ("input", "output"),
}

ParseFn = Callable[[Sentence], DependencyTree]


class RunConfig(BaseModel):
    """Validated command-line flags"""
    command: Literal[COMMANDS]
    input: Optional[Path] = None
    output: Optional[Path] = None
    model: Optional[Path] = Field(default=None, description="Model file, or stacked bundle for stack-*")
    gold: Optional[Path] = None
    parser: Literal["graph", "transition"] = "graph"
    decoder: Optional[str] = Field(default=None, description="proj, nonproj, sib or sib-gp")
    pos_source: str = Field(default="column", description="column, gold or file:PATH")
    clusters: Optional[Path] = None
    transform: Literal["none", "ccprocessed"] = "none"
    rule1_mode: Literal["corrected", "literal"] = "corrected"
    collapse_preps: bool = True
    collapse_conj: bool = True
    propagate: bool = True
    rule1: bool = True
    rule2: bool = True
    trace: Optional[Path] = None
    epochs: int = Field(default=10, ge=1)
    seed: Optional[int] = None
    shuffle: bool = False
    hash_bits: int = Field(default=22, ge=16, le=28)
    k: int = Field(default=3, ge=2, description="Jackknife partitions")
    first_parser: Literal["graph", "transition", "oracle"] = "graph"
    first_decoder: str = "proj"
    first_annotation: Optional[Path] = None
    stacking_features: bool = True
    jobs: int = Field(default=1, ge=1)
    warmup: int = Field(default=DEFAULT_WARMUP, ge=0)
    include_transform: bool = False
    exclude_punct: bool = False
    ccprocessed: bool = False
    include_root: bool = True
    name: Optional[str] = None
    count: int = Field(default=100, ge=1)
    alternate: Optional[Path] = None
    log_level: Optional[str] = None

    @field_validator("pos_source")
    @classmethod
    def _known_pos_source(cls, value: str) -> str:
        if value in ("column", "gold") or (value.startswith("file:") and len(value) > len("file:")):
            return value
        raise ValueError(f"pos source must be column, gold or file:PATH, got {value!r}")

    @field_validator("decoder", "first_decoder")
    @classmethod
    def _known_decoder(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in DECODERS:
            raise ValueError(f"unknown decoder {value!r}; choose from {', '.join(DECODERS)}")
        return value

    @model_validator(mode="after")
    def _required_flags(self) -> "RunConfig":
        for flag in REQUIRED_FLAGS[self.command]:
            if getattr(self, flag) is None:
                raise ValueError(f"{self.command} needs --{flag.replace('_', '-')}")
        if self.pos_source == "gold" and self.gold is None:
            raise ValueError("--pos-source gold needs --gold")
        return self

    @property
    def tag_file(self) -> Optional[Path]:
        return Path(self.pos_source[len("file:"):]) if self.pos_source.startswith("file:") else None

    def transform_config(self) -> TransformConfig:
        return TransformConfig(
            rule1_mode=self.rule1_mode,
            collapse_preps=self.collapse_preps,
            collapse_conj=self.collapse_conj,
            propagate=self.propagate,
            rule1=self.rule1,
            rule2=self.rule2,
        )

    def template_config(self, decoder: str, stacking: bool = False) -> TemplateConfig:
        return TemplateConfig(
            hash_bits=self.hash_bits,
            enable_clusters=self.clusters is not None,
            enable_second_order=decoder in ("sib", "sib-gp"),
            enable_grandparent=decoder == "sib-gp",
            enable_stacking=stacking,
        )


# ============================================================================
# Argument parsing
# ============================================================================

def _parents() -> dict:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", help="Override SDPARSER_LOG_LEVEL")

    files = argparse.ArgumentParser(add_help=False)
    files.add_argument("--input", type=Path, help="Input CoNLL file")
    files.add_argument("--output", type=Path, help="Output file (default: stdout)")
    files.add_argument("--model", type=Path, help="Model file (relative paths resolve against SDPARSER_MODEL_DIR)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--decoder", choices=DECODERS, help="Graph decoder (default: proj)")
    training.add_argument("--epochs", type=int, default=10)
    training.add_argument("--seed", type=int)
    training.add_argument("--shuffle", action="store_true", help="Seeded shuffle of the training order")
    training.add_argument("--hash-bits", type=int, default=22)
    training.add_argument("--clusters", type=Path, help="Brown cluster file; enables cluster templates")

    tagging = argparse.ArgumentParser(add_help=False)
    tagging.add_argument("--pos-source", default="column", help="column, gold or file:PATH")
    tagging.add_argument("--gold", type=Path, help="Gold CoNLL file (tags for --pos-source gold)")

    transform = argparse.ArgumentParser(add_help=False)
    transform.add_argument("--rule1-mode", choices=("corrected", "literal"), default="corrected")
    transform.add_argument("--no-collapse-preps", dest="collapse_preps", action="store_false")
    transform.add_argument("--no-collapse-conj", dest="collapse_conj", action="store_false")
    transform.add_argument("--no-propagate", dest="propagate", action="store_false")
    transform.add_argument("--no-rule1", dest="rule1", action="store_false")
    transform.add_argument("--no-rule2", dest="rule2", action="store_false")

    runtime = argparse.ArgumentParser(add_help=False)
    runtime.add_argument("--jobs", type=int, default=1, help="Worker threads; output order is unchanged")
    return {
        "common": common, "files": files, "training": training,
        "tagging": tagging, "transform": transform, "runtime": runtime,
    }


def build_parser() -> argparse.ArgumentParser:
    p = _parents()
    parser = argparse.ArgumentParser(prog="sdparser", description="Stanford dependency parsing toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[p["common"], p["files"], p["training"], p["tagging"]],
                                help="Train a parser")
    train.add_argument("--parser", choices=("graph", "transition"), default="graph")

    parse = commands.add_parser("parse", parents=[p["common"], p["files"], p["tagging"], p["transform"], p["runtime"]],
                                help="Parse a CoNLL file")
    parse.add_argument("--decoder", choices=DECODERS, help="Override the model's decoder")
    parse.add_argument("--transform", choices=("none", "ccprocessed"), default="none")

    transform = commands.add_parser("transform", parents=[p["common"], p["files"], p["transform"]],
                                    help="Convert Basic trees to CCprocessed SD tuples")
    transform.add_argument("--trace", type=Path, help="Write the rewrite trace here")

    evaluate = commands.add_parser("evaluate", parents=[p["common"], p["files"], p["transform"]],
                                   help="Score predictions against gold")
    evaluate.add_argument("--gold", type=Path, help="Gold CoNLL or SD tuple file")
    evaluate.add_argument("--exclude-punct", action="store_true")
    evaluate.add_argument("--ccprocessed", action="store_true", help="Also score CCprocessed graphs of tree files")
    evaluate.add_argument("--no-root", dest="include_root", action="store_false", help="Drop ROOT arcs from graph F1")

    bench = commands.add_parser("bench", parents=[p["common"], p["files"], p["tagging"], p["transform"], p["runtime"]],
                                help="Measure speed and accuracy, print one tradeoff row")
    bench.add_argument("--decoder", choices=DECODERS, help="Override the model's decoder")
    bench.add_argument("--include-transform", action="store_true")
    bench.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    bench.add_argument("--name", help="Row name (default: kind-decoder)")

    stack_train = commands.add_parser("stack-train",
                                      parents=[p["common"], p["files"], p["training"], p["tagging"], p["runtime"]],
                                      help="Train a stacked parser bundle")
    stack_train.add_argument("--k", type=int, default=3)
    stack_train.add_argument("--first-parser", choices=("graph", "transition", "oracle"), default="graph")
    stack_train.add_argument("--first-decoder", choices=DECODERS, default="proj")
    stack_train.add_argument("--first-annotation", type=Path, help="Parallel CoNLL file with the first-stage scheme")
    stack_train.add_argument("--no-stacking-features", dest="stacking_features", action="store_false")

    commands.add_parser("stack-parse", parents=[p["common"], p["files"], p["tagging"], p["runtime"]],
                        help="Parse with a stacked bundle")

    generate = commands.add_parser("generate", parents=[p["common"], p["files"]], help="Write a toy corpus")
    generate.add_argument("--count", type=int, default=100)
    generate.add_argument("--seed", type=int, default=1)
    generate.add_argument("--alternate", type=Path, help="Also write the alternate annotation here")

    commands.add_parser("fixtures", parents=[p["common"], p["files"]], help="Export transform goldens to --output")
    commands.add_parser("plot", parents=[p["common"], p["files"]], help="Plot a tradeoff CSV")
    return parser


# ============================================================================
# Helpers
# ============================================================================

def _emit(data: bytes, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(data.decode("utf-8"))
        sys.stdout.flush()
    else:
        write_file(output, data)
        logger.info(f"Wrote {output}")


def _read_text(path: Path) -> str:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return decode_text(data, str(path))


def _load_corpus(config: RunConfig, path: Path) -> List[Sentence]:
    """Read a CoNLL file and apply the POS source"""
    corpus = read_conll_file(path)
    if config.pos_source == "gold":
        gold = read_conll_file(config.gold)
        if len(gold) != len(corpus):
            raise DataError(f"--gold has {len(gold)} sentences, input has {len(corpus)}")
        corpus = substitute_tags(corpus, [[t.fpos for t in s.tokens] for s in gold])
    elif config.tag_file is not None:
        corpus = substitute_tags(corpus, read_tag_file(_read_text(config.tag_file)))
    return corpus


def _parse_all(parse: ParseFn, corpus: Sequence[Sentence], jobs: int) -> List[DependencyTree]:
    if jobs == 1:
        return [parse(s) for s in corpus]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(parse, corpus))


def _parser_for_model(model: Model, decoder: Optional[str]) -> ParseFn:
    if model.kind == "graph":
        return GraphParser(model, decoder)
    if model.kind == "transition":
        if decoder is not None:
            logger.warning(f"--decoder {decoder} is ignored by the transition parser")
        return TransitionParser(model)
    raise ModelError(f"a {model.kind} model cannot parse sentences")


def _model_path(config: RunConfig, settings: Settings) -> Path:
    return settings.resolve_model_path(config.model)


def _sniff_format(path: Path) -> str:
    for line in _read_text(path).splitlines():
        if not line.strip():
            continue
        if "\t" in line:
            return "conll"
        if SD_TUPLE_PATTERN.match(line.strip()):
            return "sd"
        raise FormatError(f"{path} is neither CoNLL nor SD tuples", None)
    raise DataError(f"{path} is empty")


# ============================================================================
# Subcommands
# ============================================================================

def cmd_train(config: RunConfig, settings: Settings) -> int:
    corpus = _load_corpus(config, config.input)
    decoder = config.decoder or "proj"
    lexicon = load_clusters_file(config.clusters) if config.clusters else None
    templates = config.template_config(decoder)
    if config.parser == "transition":
        if lexicon is not None:
            raise ConfigError("cluster templates are only used by the graph parser")
        model = train_transition(corpus, templates, config.epochs, config.seed, config.shuffle)
        print(f"sentences={len(corpus) - model.metadata['skipped']} skipped={model.metadata['skipped']}")
    else:
        model, log = train_structured(
            corpus, decoder, templates, config.epochs, config.seed, lexicon, shuffle=config.shuffle
        )
        for stats in log.epochs:
            print(f"epoch={stats.epoch} uas={stats.uas:.4f} las={stats.las:.4f} updates={stats.updates}")
        print(f"sentences={log.sentences} skipped={log.skipped}")
    save_model(model, _model_path(config, settings))
    return 0


def cmd_parse(config: RunConfig, settings: Settings) -> int:
    model = load_model(_model_path(config, settings))
    corpus = _load_corpus(config, config.input)
    trees = _parse_all(_parser_for_model(model, config.decoder), corpus, config.jobs)
    if config.transform == "ccprocessed":
        graphs = transform_corpus(corpus, trees, config.transform_config())
        _emit(write_sd_graphs(corpus, graphs), config.output)
    else:
        _emit(write_conll(corpus, trees), config.output)
    logger.info(f"Parsed {len(corpus)} sentences")
    return 0


def cmd_transform(config: RunConfig, settings: Settings) -> int:
    corpus = read_conll_file(config.input)
    graphs, traces = [], []
    for number, sentence in enumerate(corpus, start=1):
        if sentence.gold_tree is None:
            raise DataError(f"sentence {number} has no tree to transform")
        graph, trace = basic_to_ccprocessed(sentence.gold_tree, sentence, config.transform_config())
        graphs.append(graph)
        traces.append(f"# sentence {number}\n{trace.to_text()}")
    _emit(write_sd_graphs(corpus, graphs), config.output)
    if config.trace is not None:
        write_file(config.trace, "".join(traces).encode("utf-8"), "trace")
    return 0


def cmd_evaluate(config: RunConfig, settings: Settings) -> int:
    gold_format, predicted_format = _sniff_format(config.gold), _sniff_format(config.input)
    if gold_format != predicted_format:
        raise ConfigError(f"cannot compare a {gold_format} file with a {predicted_format} file")
    if gold_format == "sd":
        report = evaluate_graphs(
            read_sd_graphs(_read_text(config.gold)), read_sd_graphs(_read_text(config.input)), config.include_root
        )
    else:
        gold, predicted = read_conll_file(config.gold), read_conll_file(config.input)
        report = evaluate_trees(gold, predicted, config.exclude_punct)
        if config.ccprocessed:
            transform = config.transform_config()
            graphs = evaluate_graphs(
                transform_corpus(gold, [s.gold_tree for s in gold], transform),
                transform_corpus(predicted, [s.gold_tree for s in predicted], transform),
                config.include_root,
            )
            report = report.model_copy(update=graphs.model_dump(exclude={"tokens", "sentences", "timing"}, exclude_none=True))
    _emit(format_report(report).encode("utf-8"), config.output)
    return 0


def cmd_bench(config: RunConfig, settings: Settings) -> int:
    model = load_model(_model_path(config, settings))
    corpus = _load_corpus(config, config.input)
    parse = _parser_for_model(model, config.decoder)
    transform = config.transform_config()
    rate, timing = bench_speed(parse, corpus, config.include_transform, config.warmup, transform, config.jobs)
    logger.info("Timing breakdown:\n" + timing.to_lines().rstrip())

    if any(s.gold_tree is None for s in corpus):
        raise DataError("bench needs gold trees to report accuracy")
    trees = _parse_all(parse, corpus, config.jobs)
    report = evaluate_trees(corpus, [s.with_tree(t) for s, t in zip(corpus, trees)])
    update = {"tokens_per_second": rate, "timing": timing}
    if config.include_transform:
        gold_graphs = transform_corpus(corpus, [s.gold_tree for s in corpus], transform)
        predicted_graphs = transform_corpus(corpus, trees, transform)
        update["unlabeled_p"], update["unlabeled_r"], update["unlabeled_f1"] = graph_f1(
            gold_graphs, predicted_graphs, labeled=False
        )
        update["labeled_p"], update["labeled_r"], update["labeled_f1"] = graph_f1(gold_graphs, predicted_graphs)
    report = EvalReport(**{**report.model_dump(exclude={"timing"}), **update})
    name = config.name or f"{model.kind}-{config.decoder or model.decoder}"
    _emit(tradeoff_report([(name, report)]).encode("utf-8"), config.output)
    return 0


def cmd_stack_train(config: RunConfig, settings: Settings) -> int:
    corpus = _load_corpus(config, config.input)
    first_corpus = read_conll_file(config.first_annotation) if config.first_annotation else None
    if first_corpus is not None and config.pos_source != "column":
        first_corpus = [f.with_tags([t.fpos for t in s.tokens]) for f, s in zip(first_corpus, corpus)]
    decoder = config.decoder or "proj"
    first = ParserSpec(
        family=config.first_parser,
        decoder=config.first_decoder,
        config=config.template_config(config.first_decoder),
        epochs=config.epochs,
        seed=config.seed,
    )
    second = ParserSpec(
        family="graph",
        decoder=decoder,
        config=config.template_config(decoder, stacking=config.stacking_features),
        epochs=config.epochs,
        seed=config.seed,
    )
    if config.clusters is not None:
        raise ConfigError("cluster templates are not supported in stacked training")
    plan = build_plan(corpus, config.k, first, second, first_corpus)
    annotated = annotate_training(plan, config.jobs)
    train_stacked(plan, annotated)
    save_bundle(plan, _model_path(config, settings))
    print(f"no-cheat audit: {plan.audit.summary()}")
    return 0


def cmd_stack_parse(config: RunConfig, settings: Settings) -> int:
    plan = load_bundle(_model_path(config, settings))
    corpus = _load_corpus(config, config.input)
    trees = _parse_all(stacked_parser(plan), corpus, config.jobs)
    _emit(write_conll(corpus, trees), config.output)
    return 0


def cmd_generate(config: RunConfig, settings: Settings) -> int:
    seed = config.seed if config.seed is not None else 1
    corpus = generate_corpus(ToyGrammar(seed=seed), config.count)
    _emit(write_conll(corpus), config.output)
    if config.alternate is not None:
        write_file(config.alternate, write_conll(corpus, [alternate_annotation(s) for s in corpus]), "alternate corpus")
    return 0


def cmd_fixtures(config: RunConfig, settings: Settings) -> int:
    written = export_fixtures(config.output)
    print(f"fixtures={len(written) // 2} directory={config.output}")
    return 0


def cmd_plot(config: RunConfig, settings: Settings) -> int:
    rows = read_tradeoff_csv(_read_text(config.input))
    plot_tradeoff(rows, config.output)
    return 0


HANDLERS = {
    "train": cmd_train,
    "parse": cmd_parse,
    "transform": cmd_transform,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "stack-train": cmd_stack_train,
    "stack-parse": cmd_stack_parse,
    "generate": cmd_generate,
    "fixtures": cmd_fixtures,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    settings = Settings.from_env()
    configure_logging(args.log_level or settings.log_level)
    try:
        config = RunConfig(**vars(args))
    except ValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return ConfigError.exit_code

    try:
        return HANDLERS[config.command](config, settings)
    except SDParserError as e:
        logger.error(str(e))
        return e.exit_code
