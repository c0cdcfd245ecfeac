#!/usr/bin/env python3
"""
Query Embedding Host Model

Translational point embeddings with a deep-set intersection, scored by L1
distance. TEMP plugs in without touching the objective: TER replaces entity
vectors at anchors and at scored candidates, TRR rewrites the
(entity, relation) pair of every projection step.

Union queries are embedded as one vector per DNF branch; an entity's score
is the best (closest) branch.
"""

import logging
from dataclasses import asdict, dataclass

import torch

from . import numcore as nc
from . import temp
from .errors import (ConfigurationError, ContractError, PreconditionError, UnknownEntityError,
                     UnknownRelationError)
from .kg import UNKNOWN_TYPE_ID
from .querydag import QueryDAG, check_structure
from .typegraph import RelationTypes, TypeGraph

TEMP_MODES = ('off', 'ter_only', 'trr_only', 'both')
DISTANCES = ('l1',)
SCORE_CHUNK_ELEMENTS = 1 << 22


def _l1_to_shared_candidates(branch, candidates):
    """(B, N) L1 distances, built in candidate chunks of at most SCORE_CHUNK_ELEMENTS differences."""
    d, batch = branch.shape
    if candidates.shape[1] == 0:
        return branch.new_zeros((batch, 0))
    step = max(1, SCORE_CHUNK_ELEMENTS // (d * batch))
    chunks = [
        (branch.unsqueeze(2) - candidates[:, start:start + step].unsqueeze(1)).abs().sum(dim=0)
        for start in range(0, candidates.shape[1], step)
    ]
    return torch.cat(chunks, dim=1)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    temp: str = 'both'
    margin: float = 24.0
    negative_samples: int = 32
    distance: str = 'l1'
    highway_k: int = 2
    entity_aggregator: str = 'highway'
    fusion: str = 'gated'
    inductive: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be at least 1, got {self.dim}")
        if self.temp not in TEMP_MODES:
            raise ConfigurationError(f"temp must be one of {TEMP_MODES}, got {self.temp!r}")
        if self.margin <= 0:
            raise ConfigurationError(f"margin must be positive, got {self.margin}")
        if self.negative_samples < 1:
            raise ConfigurationError(f"negative_samples must be positive, got {self.negative_samples}")
        if self.distance not in DISTANCES:
            raise ConfigurationError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        # validates the aggregator and fusion choices as well
        self.ter_config
        self.trr_config

    @property
    def ter_enabled(self):
        return self.temp in ('ter_only', 'both')

    @property
    def trr_enabled(self):
        return self.temp in ('trr_only', 'both')

    @property
    def ter_config(self):
        return temp.TerConfig(d=self.dim, K=self.highway_k, aggregator=self.entity_aggregator,
                              inductive=self.inductive)

    @property
    def trr_config(self):
        return temp.TrrConfig(d=self.dim, fusion=self.fusion)

    @property
    def embedding_range(self):
        return (self.margin + 2.0) / self.dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {key: data[key] for key in cls.__dataclass_fields__ if key in data}
        return cls(**known)


class QueryEmbedding:
    """One (d, 1) vector per DNF branch."""

    def __init__(self, branches):
        self.branches = list(branches)

    @property
    def num_branches(self):
        return len(self.branches)

    def __repr__(self):
        return f"QueryEmbedding({self.num_branches} branches, d={self.branches[0].shape[0]})"


def entity_type_lists(kg):
    """Sorted type ids per entity, [UNKNOWN] for untyped entities."""
    return [kg.entity_types(e) or (UNKNOWN_TYPE_ID,) for e in range(kg.num_entities)]


class QueryEmbeddingModel:
    """GQE-style host; TEMP layers are created only when enabled."""

    def __init__(self, num_entities, num_relations, num_types, entity_types, type_graph, config,
                 seed=0, seen_entities=None, params=None):
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_types = num_types
        self.entity_types = [tuple(types) or (UNKNOWN_TYPE_ID,) for types in entity_types]
        self.type_graph = type_graph
        self.config = config
        self.seed = seed
        self.regime = None
        self.seen_entities = frozenset(seen_entities) if seen_entities is not None else None
        if len(self.entity_types) != num_entities:
            raise ConfigurationError(
                f"entity type table has {len(self.entity_types)} rows for {num_entities} entities"
            )
        self.params = params if params is not None else nc.init_parameters(self.parameter_spec(), seed)
        missing = [name for name, _, _ in self.parameter_spec() if name not in self.params]
        if missing:
            raise ConfigurationError(f"parameter store lacks {', '.join(missing[:5])}")

    @classmethod
    def for_graph(cls, kg, type_graph, config, seed=0, seen_entities=None, params=None):
        return cls(kg.num_entities, kg.num_relations, kg.num_types, entity_type_lists(kg),
                   type_graph, config, seed=seed, seen_entities=seen_entities, params=params)

    def parameter_spec(self):
        d, cfg = self.config.dim, self.config
        spec = [
            ('entity_embedding', (d, self.num_entities), ('uniform', cfg.embedding_range)),
            ('relation_embedding', (d, self.num_relations), ('uniform', cfg.embedding_range)),
            ('intersection.W1', (d, d), ('fan_in', d)),
            ('intersection.b1', (d, 1), ('fan_in', d)),
            ('intersection.W2', (d, d), ('fan_in', d)),
            ('intersection.b2', (d, 1), ('fan_in', d)),
        ]
        if cfg.temp != 'off':
            spec.append(('type_embedding', (d, self.num_types), ('uniform', cfg.embedding_range)))
        if cfg.ter_enabled:
            spec += temp.ter_parameter_spec(cfg.ter_config)
        if cfg.trr_enabled:
            spec += temp.trr_parameter_spec(cfg.trr_config)
        return spec

    # representations ------------------------------------------------------

    def _check_entities(self, ids):
        for e in ids:
            if not 0 <= e < self.num_entities:
                raise UnknownEntityError(e)
        if self.config.inductive and not self.config.ter_enabled and self.seen_entities is not None:
            unseen = [e for e in ids if e not in self.seen_entities]
            if unseen:
                raise ContractError(
                    f"entity {unseen[0]} was not seen in training and TER is disabled; "
                    f"unseen entities can only be scored through their types"
                )

    def entity_representations(self, ids):
        """(d, len(ids)) entity vectors; TER output when enabled."""
        ids = [int(e) for e in ids]
        self._check_entities(ids)
        if not self.config.ter_enabled:
            return self.params['entity_embedding'][:, ids]

        unique = sorted(set(ids))
        flat, segments = [], []
        for k, e in enumerate(unique):
            flat.extend(self.entity_types[e])
            segments.extend([k] * len(self.entity_types[e]))
        type_vectors = self.params['type_embedding'][:, flat]
        aggregate = temp.ter_aggregate_segments(type_vectors, segments, len(unique), self.params,
                                                self.config.ter_config)
        if self.config.inductive:
            enhanced = temp.ter_entity(None, aggregate, self.params, inductive=True)
        else:
            enhanced = temp.ter_entity(self.params['entity_embedding'][:, unique], aggregate,
                                       self.params, inductive=False)
        position = {e: k for k, e in enumerate(unique)}
        return enhanced[:, [position[e] for e in ids]]

    def relation_types(self, r):
        if self.type_graph is None:
            return (UNKNOWN_TYPE_ID,)
        return self.type_graph.types_or_unknown(r)

    def relation_type_aggregates(self, relation_ids):
        """(d, len(relation_ids)) attention-aggregated relation type vectors."""
        type_embedding = self.params['type_embedding']
        cache = {}
        columns = []
        for r in relation_ids:
            if r not in cache:
                vectors = [type_embedding[:, c:c + 1] for c in self.relation_types(r)]
                cache[r] = temp.trr_attention(vectors, self.params)
            columns.append(cache[r])
        return torch.cat(columns, dim=1)

    # query embedding ------------------------------------------------------

    def intersect(self, branches):
        """Deep set over (d, B) branch tensors: mean of per-branch features, then an output layer.

        Features are sorted along the branch axis before summing so the
        result does not depend on branch order, bit for bit.
        """
        features = [nc.relu(nc.affine(self.params['intersection.W1'], x, self.params['intersection.b1']))
                    for x in branches]
        stacked = torch.sort(torch.stack(features, dim=0), dim=0).values
        pooled = stacked.sum(dim=0) / len(branches)
        return nc.affine(self.params['intersection.W2'], pooled, self.params['intersection.b2'])

    def project(self, x, relation_ids):
        for r in relation_ids:
            if not 0 <= r < self.num_relations:
                raise UnknownRelationError(r)
        relation = self.params['relation_embedding'][:, relation_ids]
        if self.config.trr_enabled:
            type_aggregate = self.relation_type_aggregates(relation_ids)
            x, relation = temp.trr_enhance(x, relation, type_aggregate, self.params, self.config.fusion)
        return nc.add(x, relation)

    def _embed_conjunctive(self, queries):
        """(d, B) embeddings for union-free queries of one structure."""
        template = queries[0].template

        def evaluate(node):
            kind = node[0]
            if kind == 'e':
                return self.entity_representations([q.anchors[node[1]] for q in queries])
            if kind == 'p':
                return self.project(evaluate(node[1]), [q.relations[node[2]] for q in queries])
            if kind == 'i':
                return self.intersect([evaluate(child) for child in node[1:]])
            raise PreconditionError(f"union node inside a conjunctive branch of {queries[0].structure}")

        return evaluate(template)

    def embed_batch(self, queries):
        """Per-branch (d, B) embeddings for queries sharing one structure."""
        structure = queries[0].structure
        check_structure(structure)
        if any(q.structure != structure for q in queries):
            raise PreconditionError("embed_batch needs queries of a single structure")
        branch_lists = [q.dnf_branches() for q in queries]
        return [self._embed_conjunctive([branches[k] for branches in branch_lists])
                for k in range(len(branch_lists[0]))]

    def embed_query(self, q):
        return QueryEmbedding(branch[:, 0:1] for branch in self.embed_batch([q]))

    # scoring --------------------------------------------------------------

    def branch_scores(self, branches, candidates):
        """(B, N) scores of candidate columns against per-branch (d, B) embeddings.

        candidates is a (d, N) tensor shared by every query, or a (d, B, N)
        tensor with one candidate set per query.
        """
        distances = []
        for branch in branches:
            if candidates.dim() == 2:
                distances.append(_l1_to_shared_candidates(branch, candidates))
            else:
                distances.append((branch.unsqueeze(2) - candidates).abs().sum(dim=0))
        return -torch.stack(distances, dim=0).min(dim=0).values

    def score(self, qe, e):
        candidate = self.entity_representations([e])
        branches = [nc.tensor(b) for b in qe.branches]
        return self.branch_scores(branches, candidate)[0, 0]

    def batch_loss(self, queries, positives, negatives):
        """Mean margin ranking loss over a single-structure batch.

        positives: one entity id per query; negatives: one id list per query,
        all lists the same length.
        """
        if not negatives or any(len(row) == 0 for row in negatives):
            raise PreconditionError("margin loss needs at least one negative per query")
        width = len(negatives[0])
        if any(len(row) != width for row in negatives):
            raise PreconditionError("negative lists must all have the same length")

        branches = self.embed_batch(queries)
        batch = len(queries)
        positive_reps = self.entity_representations(positives)
        flat = [e for row in negatives for e in row]
        negative_reps = self.entity_representations(flat).reshape(self.config.dim, batch, width)

        positive_scores = self.branch_scores(branches, positive_reps.unsqueeze(2))[:, 0]
        negative_scores = self.branch_scores(branches, negative_reps)
        margins = torch.relu(self.config.margin - positive_scores.unsqueeze(1) + negative_scores)
        return margins.mean()

    def loss(self, q, positive, negatives):
        return self.batch_loss([q], [positive], [list(negatives)])

    @torch.no_grad()
    def score_candidates(self, queries, candidates=None):
        """numpy (B, N) scores of the candidate entities (all entities by default)."""
        candidates = list(range(self.num_entities)) if candidates is None else list(candidates)
        branches = self.embed_batch(queries)
        reps = self.entity_representations(candidates)
        return self.branch_scores(branches, reps).numpy()

    # persistence ----------------------------------------------------------

    def save(self, directory, extra=None):
        payload = {
            'model_config': self.config.to_dict(),
            'num_entities': self.num_entities,
            'num_relations': self.num_relations,
            'num_types': self.num_types,
            'entity_types': [list(types) for types in self.entity_types],
            'seen_entities': sorted(self.seen_entities) if self.seen_entities is not None else None,
            'type_graph': self.type_graph.to_dict() if self.type_graph is not None else None,
        }
        payload.update(extra or {})
        return nc.save_checkpoint(self.params, directory, extra=payload)

    @classmethod
    def load(cls, directory):
        """Returns (model, manifest extras)."""
        params, extra = nc.load_checkpoint(directory)
        config = ModelConfig.from_dict(extra['model_config'])
        type_graph = None
        if extra.get('type_graph') is not None:
            records = {
                edge['relation']: RelationTypes(edge['relation'], edge['head_types'], edge['tail_types'])
                for edge in extra['type_graph']['edges']
            }
            labeled_edges = [
                (tuple(edge['head_types']), edge['relation'], tuple(edge['tail_types']))
                for edge in extra['type_graph'].get('assertion_edges', ())
            ]
            type_graph = TypeGraph(records, labeled_edges)
        model = cls(extra['num_entities'], extra['num_relations'], extra['num_types'],
                    extra['entity_types'], type_graph, config, seed=params.seed,
                    seen_entities=extra.get('seen_entities'), params=params)
        model.regime = extra.get('regime')
        logging.info(f"Loaded {config.temp} model ({params}) from {directory}")
        return model, extra

    def __repr__(self):
        return f"QueryEmbeddingModel(d={self.config.dim}, temp={self.config.temp}, {self.params})"


def embed_query(q, model):
    if not isinstance(q, QueryDAG):
        raise PreconditionError(f"expected a QueryDAG, got {type(q).__name__}")
    return model.embed_query(q)
