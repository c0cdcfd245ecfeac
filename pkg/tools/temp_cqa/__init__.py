"""Type-aware complex query answering over typed knowledge graphs."""

from .errors import TempCqaError
from .kg import KnowledgeGraph, SplitGraphs, load_kg, load_splits
from .qe import ModelConfig, QueryEmbeddingModel
from .querydag import QueryDAG, QuerySet, answer_query, generate_queries
from .typegraph import TypeGraph, build_type_graph

__version__ = '1.0.0'

__all__ = [
    'TempCqaError',
    'KnowledgeGraph', 'SplitGraphs', 'load_kg', 'load_splits',
    'ModelConfig', 'QueryEmbeddingModel',
    'QueryDAG', 'QuerySet', 'answer_query', 'generate_queries',
    'TypeGraph', 'build_type_graph',
]
