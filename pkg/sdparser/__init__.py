"""
Stanford dependency parsing toolkit

Graph-based and transition-based parsers over Basic SD trees, the Basic to
CCprocessed rewriting pipeline, parser stacking and evaluation.
"""
from .core import (
    DependencyArc,
    DependencyGraph,
    DependencyTree,
    Sentence,
    Token,
    is_projective,
    tree_to_graph,
    validate_tree,
)
from .errors import ConfigError, DataError, SDParserError
from .graph_parser import GraphParser
from .learn import Model, load_model, save_model, train_structured
from .sd_transform import TransformConfig, basic_to_ccprocessed
from .transition_parser import TransitionParser, train_transition

__all__ = [
    "ConfigError",
    "DataError",
    "DependencyArc",
    "DependencyGraph",
    "DependencyTree",
    "GraphParser",
    "Model",
    "SDParserError",
    "Sentence",
    "Token",
    "TransformConfig",
    "TransitionParser",
    "basic_to_ccprocessed",
    "is_projective",
    "load_model",
    "save_model",
    "train_structured",
    "train_transition",
    "tree_to_graph",
    "validate_tree",
]
