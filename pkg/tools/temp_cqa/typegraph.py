#!/usr/bin/env python3
"""
Relation Type Graph

Derives the types of every relation by intersecting the type sets of the
head (and tail) entities over all assertions the relation occurs in. The
result is a graph with types as nodes and relations as edges.

Untyped entities count as {UNKNOWN}; an empty intersection falls back to
{UNKNOWN} so every relation keeps at least one type.
"""

import json
import logging
from pathlib import Path

from .errors import UnknownRelationError
from .kg import UNKNOWN_TYPE_ID


class RelationTypes:
    """Per-relation record: head types, tail types and their ordered union."""

    __slots__ = ('relation', 'head_types', 'tail_types', 'all_types')

    def __init__(self, relation, head_types, tail_types):
        self.relation = relation
        self.head_types = tuple(sorted(head_types))
        self.tail_types = tuple(sorted(tail_types))
        self.all_types = tuple(sorted(set(head_types) | set(tail_types)))

    def to_dict(self):
        return {
            'relation': self.relation,
            'head_types': list(self.head_types),
            'tail_types': list(self.tail_types),
        }

    def __eq__(self, other):
        return (isinstance(other, RelationTypes)
                and self.relation == other.relation
                and self.head_types == other.head_types
                and self.tail_types == other.tail_types)

    def __repr__(self):
        return f"RelationTypes(r={self.relation}, head={self.head_types}, tail={self.tail_types})"


class TypeGraph:
    def __init__(self, records, labeled_edges, type_names=None, relation_names=None):
        self.records = dict(sorted(records.items()))
        self.labeled_edges = tuple(sorted(labeled_edges))
        self.type_names = type_names
        self.relation_names = relation_names

        nodes = set()
        for record in self.records.values():
            nodes.update(record.all_types)
        self.nodes = frozenset(nodes)
        self.edges = frozenset(self.records)

    def head_types(self, r):
        return self._record(r).head_types

    def tail_types(self, r):
        return self._record(r).tail_types

    def relation_type_list(self, r):
        """Ordered type ids of relation r; position i is its i-th type."""
        return self._record(r).all_types

    def types_or_unknown(self, r):
        """Like relation_type_list, but relations absent from the graph map to [UNKNOWN]."""
        record = self.records.get(r)
        return record.all_types if record is not None else (UNKNOWN_TYPE_ID,)

    def _record(self, r):
        record = self.records.get(r)
        if record is None:
            raise UnknownRelationError(r)
        return record

    def fallback_relations(self):
        """Relations whose head or tail intersection fell back to UNKNOWN."""
        return sorted(
            r for r, record in self.records.items()
            if UNKNOWN_TYPE_ID in record.head_types or UNKNOWN_TYPE_ID in record.tail_types
        )

    def to_dict(self):
        return {
            'nodes': sorted(self.nodes),
            'edges': [record.to_dict() for record in self.records.values()],
            'assertion_edges': [
                {'head_types': list(h), 'relation': r, 'tail_types': list(t)} for h, r, t in self.labeled_edges
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def save_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = self.to_dict()
        if self.type_names is not None:
            payload['type_names'] = {str(c): self.type_names[c] for c in sorted(self.nodes)}
        if self.relation_names is not None:
            payload['relation_names'] = {str(r): self.relation_names[r] for r in sorted(self.edges)}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        return path

    def to_dot(self):
        """Graphviz rendering: one node per type, one edge per (head type, relation, tail type)."""
        def type_label(c):
            return self.type_names[c] if self.type_names is not None else str(c)

        def relation_label(r):
            return self.relation_names[r] if self.relation_names is not None else str(r)

        lines = ['digraph type_graph {', '  rankdir=LR;']
        for c in sorted(self.nodes):
            lines.append(f'  t{c} [label="{type_label(c)}"];')
        for r, record in self.records.items():
            for h in record.head_types:
                for t in record.tail_types:
                    lines.append(f'  t{h} -> t{t} [label="{relation_label(r)}"];')
        lines.append('}')
        return '\n'.join(lines) + '\n'

    def __repr__(self):
        return f"TypeGraph({len(self.nodes)} types, {len(self.edges)} relations)"


def assertion_type_set(kg, e):
    types = kg.entity_types(e)
    return frozenset(types) if types else frozenset((UNKNOWN_TYPE_ID,))


def build_type_graph(kg):
    """Compute head/tail type intersections for every relation occurring in kg."""
    head_sets = {}
    tail_sets = {}
    labeled_edges = {}

    for h, r, t in kg.relation_assertions:
        head_types = assertion_type_set(kg, h)
        tail_types = assertion_type_set(kg, t)
        head_sets[r] = head_sets[r] & head_types if r in head_sets else head_types
        tail_sets[r] = tail_sets[r] & tail_types if r in tail_sets else tail_types
        edge = (tuple(sorted(head_types)), r, tuple(sorted(tail_types)))
        labeled_edges.setdefault(edge, None)

    records = {}
    fallbacks = 0
    for r in head_sets:
        head_types = head_sets[r] or frozenset((UNKNOWN_TYPE_ID,))
        tail_types = tail_sets[r] or frozenset((UNKNOWN_TYPE_ID,))
        if not head_sets[r] or not tail_sets[r]:
            fallbacks += 1
        records[r] = RelationTypes(r, head_types, tail_types)

    graph = TypeGraph(records, labeled_edges, type_names=kg.type_vocab.names,
                      relation_names=kg.relation_vocab.names)
    logging.info(f"Built {graph} from {kg.name} ({fallbacks} relations fell back to UNKNOWN)")
    return graph


def relation_type_list(tg, r):
    return tg.relation_type_list(r)
