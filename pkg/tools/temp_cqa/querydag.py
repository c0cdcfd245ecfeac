#!/usr/bin/env python3
"""
Query Structures, Exact Answers and Query Generation

Queries are the nine positive structures of the benchmark lineage
(projection chains, intersections, unions and their compositions). Each
structure is a fixed template; a concrete query fills the template's anchor
and relation slots with ids.

Answers are computed exactly by evaluating the template bottom-up over a
graph. Queries are sampled by walking the template backwards from a random
answer entity, so every sampled query has at least one answer.
"""

import json
import logging
from collections import Counter, namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ArtifactIOError, GenerationExhaustedError, KGParseError, PreconditionError,
                     QuerySemanticsError, UnsupportedStructureError)

# Template grammar: ('e', anchor_slot) | ('p', child, relation_slot)
#                   | ('i', child, child, ...) | ('u', child, child, ...)
_A0, _A1, _A2 = ('e', 0), ('e', 1), ('e', 2)

TEMPLATES = {
    '1p': ('p', _A0, 0),
    '2p': ('p', ('p', _A0, 0), 1),
    '3p': ('p', ('p', ('p', _A0, 0), 1), 2),
    '2i': ('i', ('p', _A0, 0), ('p', _A1, 1)),
    '3i': ('i', ('p', _A0, 0), ('p', _A1, 1), ('p', _A2, 2)),
    'pi': ('i', ('p', ('p', _A0, 0), 1), ('p', _A1, 2)),
    'ip': ('p', ('i', ('p', _A0, 0), ('p', _A1, 1)), 2),
    '2u': ('u', ('p', _A0, 0), ('p', _A1, 1)),
    'up': ('p', ('u', ('p', _A0, 0), ('p', _A1, 1)), 2),
}

STRUCTURES = tuple(TEMPLATES)
TRAINING_STRUCTURES = ('1p', '2p', '3p', '2i', '3i')
UNSEEN_STRUCTURES = ('ip', 'pi', '2u', 'up')
NEGATION_STRUCTURES = ('2in', '3in', 'inp', 'pin', 'pni')
REGIMES = ('generalization', 'deductive', 'inductive')
SPLITS = ('train', 'valid', 'test')

MAX_ATTEMPTS = 10_000

DagNode = namedtuple('DagNode', 'index op inputs entity relation')

_OP_NAMES = {'e': 'anchor', 'p': 'projection', 'i': 'intersection', 'u': 'union'}


def _slot_counts(template):
    anchors, relations = set(), set()

    def walk(node):
        if node[0] == 'e':
            anchors.add(node[1])
        elif node[0] == 'p':
            relations.add(node[2])
            walk(node[1])
        else:
            for child in node[1:]:
                walk(child)

    walk(template)
    return len(anchors), len(relations)


SLOT_COUNTS = {structure: _slot_counts(template) for structure, template in TEMPLATES.items()}


def check_structure(structure):
    if structure in NEGATION_STRUCTURES:
        raise UnsupportedStructureError(f"negation structure {structure!r} is not supported")
    if structure not in TEMPLATES:
        raise UnsupportedStructureError(f"unknown query structure {structure!r}")


@dataclass(frozen=True)
class QueryDAG:
    """A concrete query: a structure tag plus its anchor and relation ids."""

    structure: str
    anchors: tuple
    relations: tuple

    def __post_init__(self):
        check_structure(self.structure)
        object.__setattr__(self, 'anchors', tuple(int(a) for a in self.anchors))
        object.__setattr__(self, 'relations', tuple(int(r) for r in self.relations))
        n_anchors, n_relations = SLOT_COUNTS[self.structure]
        if len(self.anchors) != n_anchors or len(self.relations) != n_relations:
            raise QuerySemanticsError(
                f"{self.structure} needs {n_anchors} anchors and {n_relations} relations, "
                f"got {len(self.anchors)} and {len(self.relations)}"
            )
        if any(a < 0 for a in self.anchors) or any(r < 0 for r in self.relations):
            raise QuerySemanticsError(f"negative id in {self}")

    @property
    def template(self):
        return TEMPLATES[self.structure]

    @property
    def is_union(self):
        return self.structure in ('2u', 'up')

    def fold(self, anchor, project, intersect, union):
        """Evaluate the template bottom-up with caller-supplied operators."""
        def evaluate(node):
            kind = node[0]
            if kind == 'e':
                return anchor(self.anchors[node[1]])
            if kind == 'p':
                return project(evaluate(node[1]), self.relations[node[2]])
            values = [evaluate(child) for child in node[1:]]
            return intersect(values) if kind == 'i' else union(values)

        return evaluate(self.template)

    def nodes(self):
        """Topologically ordered DAG nodes; the last node is the root (target variable)."""
        nodes = []

        def walk(node):
            kind = node[0]
            if kind == 'e':
                inputs, entity, relation = (), self.anchors[node[1]], None
            elif kind == 'p':
                inputs, entity, relation = (walk(node[1]),), None, self.relations[node[2]]
            else:
                inputs, entity, relation = tuple(walk(child) for child in node[1:]), None, None
            nodes.append(DagNode(len(nodes), _OP_NAMES[kind], inputs, entity, relation))
            return nodes[-1].index

        walk(self.template)
        return nodes

    @property
    def root(self):
        return self.nodes()[-1]

    def edges(self):
        """(source node, target node, relation or None) triples of the DAG."""
        return [
            (source, node.index, node.relation)
            for node in self.nodes()
            for source in node.inputs
        ]

    def dnf_branches(self):
        """Union-free queries whose answer sets union to this query's answers."""
        a, r = self.anchors, self.relations
        if self.structure == '2u':
            return [QueryDAG('1p', (a[0],), (r[0],)), QueryDAG('1p', (a[1],), (r[1],))]
        if self.structure == 'up':
            return [QueryDAG('2p', (a[0],), (r[0], r[2])), QueryDAG('2p', (a[1],), (r[1], r[2]))]
        return [self]

    def branch_keys(self):
        """(anchor, relation) pairs of sibling branches that must not coincide."""
        a, r = self.anchors, self.relations
        if self.structure in ('2i', '3i', '2u'):
            return list(zip(a, r))
        if self.structure in ('ip', 'up'):
            return [(a[0], r[0]), (a[1], r[1])]
        return []

    def to_dict(self):
        return {'structure': self.structure, 'anchors': list(self.anchors),
                'relations': list(self.relations)}


def answer_query(kg, q):
    """Exact answer set of q on kg."""
    for e in q.anchors:
        if e >= kg.num_entities:
            raise QuerySemanticsError(f"anchor {e} is not an entity of {kg.name}")
    for r in q.relations:
        if r >= kg.num_relations:
            raise QuerySemanticsError(f"relation {r} is not a relation of {kg.name}")

    return q.fold(
        anchor=lambda e: {e},
        project=kg.project,
        intersect=lambda sets: set.intersection(*sets),
        union=lambda sets: set.union(*sets),
    )


# ---------------------------------------------------------------------------
# query sets

@dataclass(frozen=True)
class QueryInstance:
    query: QueryDAG
    answers: frozenset
    easy_answers: frozenset = field(default_factory=frozenset)

    @property
    def hard_answers(self):
        """Answers that need the graph beyond the reference graph."""
        return self.answers - self.easy_answers


class QuerySet:
    def __init__(self, instances=(), regime=None, split=None):
        self.instances = []
        self.regime = regime
        self.split = split
        for instance in instances:
            self.add(instance)

    def add(self, instance):
        if not instance.answers:
            raise PreconditionError(f"query {instance.query} has an empty answer set")
        self.instances.append(instance)

    def extend(self, other):
        merged = QuerySet(self.instances, regime=self.regime or other.regime,
                          split=self.split or other.split)
        for instance in other.instances:
            merged.add(instance)
        return merged

    def per_structure_counts(self):
        counts = Counter(instance.query.structure for instance in self.instances)
        return {structure: counts[structure] for structure in STRUCTURES if counts[structure]}

    def by_structure(self):
        grouped = {}
        for instance in self.instances:
            grouped.setdefault(instance.query.structure, []).append(instance)
        return {structure: grouped[structure] for structure in STRUCTURES if structure in grouped}

    @property
    def structures(self):
        return tuple(self.by_structure())

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __eq__(self, other):
        return (isinstance(other, QuerySet) and self.instances == other.instances
                and self.regime == other.regime and self.split == other.split)

    def __repr__(self):
        return f"QuerySet({len(self)} queries, regime={self.regime}, split={self.split})"


# ---------------------------------------------------------------------------
# generation

def regime_graphs(splits, regime, split):
    """(answer graph, reference graph or None) for a regime and split."""
    if regime not in REGIMES:
        raise PreconditionError(f"unknown regime {regime!r}")
    if split not in SPLITS:
        raise PreconditionError(f"unknown split {split!r}")
    if regime == 'deductive':
        return splits.test, None
    if split == 'train':
        return splits.train, None
    return splits.graph(split), splits.train


def _ground(node, target, graph, pool, rng, anchors, relations):
    kind = node[0]
    if kind == 'e':
        anchors[node[1]] = target
        return True
    if kind == 'p':
        incoming = graph.in_edges(target)
        if not incoming:
            return False
        head, relation = incoming[int(rng.integers(len(incoming)))]
        relations[node[2]] = relation
        return _ground(node[1], head, graph, pool, rng, anchors, relations)
    if kind == 'i':
        return all(_ground(child, target, graph, pool, rng, anchors, relations) for child in node[1:])
    # union: one branch reaches the target, the others reach any entity
    children = node[1:]
    chosen = int(rng.integers(len(children)))
    for k, child in enumerate(children):
        child_target = target if k == chosen else pool[int(rng.integers(len(pool)))]
        if not _ground(child, child_target, graph, pool, rng, anchors, relations):
            return False
    return True


def sample_query(structure, graph, pool, rng):
    """One reverse random walk; returns a QueryDAG or None when the walk dead-ends."""
    n_anchors, n_relations = SLOT_COUNTS[structure]
    anchors, relations = [None] * n_anchors, [None] * n_relations
    target = pool[int(rng.integers(len(pool)))]
    if not _ground(TEMPLATES[structure], target, graph, pool, rng, anchors, relations):
        return None
    return QueryDAG(structure, tuple(anchors), tuple(relations))


def generate_queries(splits, structure, count, regime, seed, split='test', max_answers=None):
    """Sample `count` distinct queries of one structure for a regime and split."""
    check_structure(structure)
    if count < 1:
        raise PreconditionError(f"count must be a positive integer, got {count}")

    graph, reference = regime_graphs(splits, regime, split)
    unseen_only = regime == 'inductive' and split != 'train'
    seen = splits.seen_entities
    if unseen_only:
        pool = sorted(t for t in graph.active_entities if graph.in_edges(t) and t not in seen)
    else:
        pool = sorted(t for t in graph.active_entities if graph.in_edges(t))
    if not pool:
        raise GenerationExhaustedError(structure, 0, 0)

    rng = np.random.default_rng(seed)
    queries = QuerySet(regime=regime, split=split)
    emitted = set()
    attempts = 0
    while len(queries) < count:
        if attempts >= MAX_ATTEMPTS:
            raise GenerationExhaustedError(structure, attempts, len(queries))
        attempts += 1

        q = sample_query(structure, graph, pool, rng)
        if q is None or q in emitted:
            continue
        keys = q.branch_keys()
        if len(set(keys)) != len(keys):
            continue
        if unseen_only and any(a in seen for a in q.anchors):
            continue

        answers = frozenset(answer_query(graph, q))
        if not answers or (max_answers is not None and len(answers) > max_answers):
            continue
        easy = frozenset()
        if reference is not None:
            easy = frozenset(answer_query(reference, q)) & answers
            if not answers - easy:
                continue

        emitted.add(q)
        queries.add(QueryInstance(q, answers, easy))
        logging.debug(f"{structure} query {len(queries)}/{count} after {attempts} attempts")
        attempts = 0

    logging.info(f"Generated {len(queries)} {structure} queries ({regime}, {split})")
    return queries


# ---------------------------------------------------------------------------
# JSON lines

def serialize_queries(qs, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for instance in qs:
                record = instance.query.to_dict()
                record['answers'] = sorted(instance.answers)
                record['easy_answers'] = sorted(instance.easy_answers)
                record['regime'] = qs.regime
                record['split'] = qs.split
                f.write(json.dumps(record) + '\n')
    except OSError as e:
        raise ArtifactIOError(f"cannot write queries to {path}: {e}") from e
    logging.info(f"Saved {len(qs)} queries to {path}")
    return path


def load_queries(path):
    path = Path(path)
    queries = QuerySet()
    try:
        with open(path, 'rb') as f:
            lines = f.readlines()
    except OSError as e:
        raise ArtifactIOError(f"cannot read queries from {path}: {e}") from e

    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line.decode('utf-8'))
            q = QueryDAG(record['structure'], record['anchors'], record['relations'])
            instance = QueryInstance(q, frozenset(record['answers']),
                                     frozenset(record.get('easy_answers', ())))
            queries.add(instance)
        except (ValueError, KeyError, TypeError, QuerySemanticsError,
                UnsupportedStructureError, PreconditionError) as e:
            raise KGParseError(path, line_number, f"invalid query record ({e})") from e
        queries.regime = queries.regime or record.get('regime')
        queries.split = queries.split or record.get('split')
    return queries
