#!/usr/bin/env python3
"""
Synthetic Typed Knowledge Graphs

Small, deterministic typed graphs for desk-scale runs and tests. Every
entity gets a primary type (and some a secondary one); relation r links
entities of one type to entities of the next type, so the type graph has
real structure for TER and TRR to exploit.

Inductive splits hold out a block of entities: training edges only touch
seen entities, validation and test edges only touch held-out ones.
"""

import logging

import numpy as np

from .kg import Vocabulary, assemble_splits, new_type_vocabulary, save_splits

TYPE_NAMES = ('person', 'city', 'company', 'country', 'product', 'event', 'school', 'team')


def _type_name(c):
    return TYPE_NAMES[c] if c < len(TYPE_NAMES) else f"type{c}"


def toy_schema(num_entities, num_types, seed):
    """Entity -> sorted type indices; every type has at least one entity."""
    rng = np.random.default_rng(seed)
    schema = {}
    for e in range(num_entities):
        types = {e % num_types}
        if num_types > 1 and rng.random() < 0.3:
            types.add(int(rng.integers(num_types)))
        schema[e] = sorted(types)
    return schema


def toy_edges(entities, schema, num_relations, num_types, out_degree, rng):
    """Edges among `entities`; relation r goes from type r to type r+1 (mod num_types)."""
    by_type = {c: [e for e in entities if c in schema[e]] for c in range(num_types)}
    edges = []
    for r in range(num_relations):
        head_type = r % num_types
        tail_type = (r + 1) % num_types
        tails = by_type[tail_type]
        if not tails:
            continue
        for h in by_type[head_type]:
            size = min(out_degree, len(tails))
            for t in rng.choice(tails, size=size, replace=False):
                if int(t) != h:
                    edges.append((h, r, int(t)))
    return edges


def make_toy_splits(num_entities=20, num_relations=3, num_types=4, out_degree=2,
                    holdout=0.2, inductive=False, seed=0):
    """Deterministic SplitGraphs over a synthetic typed graph.

    Transductive splits move `holdout` of the edges to valid/test while every
    entity keeps at least one training edge. Inductive splits hold out
    `holdout` of the entities instead.
    """
    rng = np.random.default_rng(seed)
    schema = toy_schema(num_entities, num_types, seed)
    entities = list(range(num_entities))

    if inductive:
        held_out = max(num_types, int(round(holdout * num_entities)))
        unseen = set(entities[-held_out:])
        seen = [e for e in entities if e not in unseen]
        train = toy_edges(seen, schema, num_relations, num_types, out_degree, rng)
        heldout_edges = toy_edges(sorted(unseen), schema, num_relations, num_types, out_degree, rng)
        order = rng.permutation(len(heldout_edges))
        half = len(order) // 2
        valid = [heldout_edges[i] for i in sorted(order[:half])]
        test = [heldout_edges[i] for i in sorted(order[half:])]
    else:
        edges = toy_edges(entities, schema, num_relations, num_types, out_degree, rng)
        train, valid, test = [], [], []
        degree = {e: 0 for e in entities}
        for h, _, t in edges:
            degree[h] += 1
            degree[t] += 1
        for i in rng.permutation(len(edges)):
            h, r, t = edges[i]
            if rng.random() < holdout and degree[h] > 1 and degree[t] > 1:
                degree[h] -= 1
                degree[t] -= 1
                (valid if rng.random() < 0.5 else test).append(edges[i])
            else:
                train.append(edges[i])
        train.sort()
        valid.sort()
        test.sort()

    entity_vocab = Vocabulary(f"e{e:03d}" for e in entities)
    relation_vocab = Vocabulary(f"r{r}" for r in range(num_relations))
    type_vocab = new_type_vocabulary()
    type_ids = {c: type_vocab.add(_type_name(c)) for c in range(num_types)}
    type_assertions = [(e, type_ids[c]) for e in entities for c in schema[e]]

    splits = assemble_splits(entity_vocab, relation_vocab, type_vocab,
                             {'train': train, 'valid': valid, 'test': test}, type_assertions,
                             source=f"toy(seed={seed})")
    logging.info(f"Built toy graph: {num_entities} entities, {num_relations} relations, "
                 f"{num_types} types, inductive={inductive}")
    return splits


def make_toy_kg(num_entities=20, num_relations=3, num_types=4, out_degree=2, seed=0):
    """The complete toy graph (no held-out edges)."""
    return make_toy_splits(num_entities, num_relations, num_types, out_degree, holdout=0.0, seed=seed).test


def write_toy_dataset(directory, **kwargs):
    return save_splits(make_toy_splits(**kwargs), directory)
