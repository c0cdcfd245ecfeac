#!/usr/bin/env python3
"""
Knowledge Graph Ingestion and Storage

Reads typed knowledge graphs from the usual benchmark layout (tab-separated
triples plus an entity/type file), assigns dense integer ids, and builds the
three nested training/validation/test graphs used by the evaluation regimes.

Type id 0 is reserved for the UNKNOWN type in every vocabulary.
"""

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path

from .errors import KGLoadError, KGParseError, UnknownEntityError, UnknownRelationError

UNKNOWN_TYPE = "[UNKNOWN]"
UNKNOWN_TYPE_ID = 0

SPLIT_FILES = {
    'train': 'train.txt',
    'valid': 'valid.txt',
    'test': 'test.txt',
}
TYPE_FILE_CANDIDATES = ('types.txt', 'entity2type.txt')
VOCAB_MANIFEST = 'vocab.json'


class Vocabulary:
    """Dense name <-> id table; ids follow first appearance."""

    def __init__(self, names=()):
        self._ids = {}
        self._names = []
        self.frozen = False
        for name in names:
            self.add(name)

    def add(self, name):
        if name in self._ids:
            return self._ids[name]
        if self.frozen:
            raise KeyError(f"vocabulary is frozen, cannot add {name!r}")
        self._ids[name] = len(self._names)
        self._names.append(name)
        return self._ids[name]

    def freeze(self):
        self.frozen = True
        return self

    def id(self, name):
        return self._ids[name]

    def name(self, idx):
        return self._names[idx]

    def get(self, name, default=None):
        return self._ids.get(name, default)

    @property
    def names(self):
        return tuple(self._names)

    def __contains__(self, name):
        return name in self._ids

    def __len__(self):
        return len(self._names)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._names == other._names

    def __repr__(self):
        return f"Vocabulary({len(self)} names)"


def new_type_vocabulary():
    return Vocabulary([UNKNOWN_TYPE])


class KnowledgeGraph:
    """Immutable typed knowledge graph over shared vocabularies."""

    def __init__(self, entity_vocab, relation_vocab, type_vocab,
                 relation_assertions, type_assertions, name="kg"):
        self.name = name
        self.entity_vocab = entity_vocab.freeze()
        self.relation_vocab = relation_vocab.freeze()
        self.type_vocab = type_vocab.freeze()

        # dict.fromkeys keeps first-appearance order while dropping duplicates
        self.relation_assertions = tuple(dict.fromkeys(tuple(t) for t in relation_assertions))
        self.type_assertions = tuple(dict.fromkeys(tuple(a) for a in type_assertions))

        n_ent, n_rel, n_type = len(entity_vocab), len(relation_vocab), len(type_vocab)
        for h, r, t in self.relation_assertions:
            if not (0 <= h < n_ent and 0 <= t < n_ent):
                raise UnknownEntityError(h if not 0 <= h < n_ent else t)
            if not 0 <= r < n_rel:
                raise UnknownRelationError(r)
        for e, c in self.type_assertions:
            if not 0 <= e < n_ent:
                raise UnknownEntityError(e)
            if not 0 < c < n_type:
                raise KeyError(f"type assertion for entity {e} uses invalid type id {c}")

        self._build_indexes()

    def _build_indexes(self):
        successors = defaultdict(set)
        predecessors = defaultdict(set)
        for h, r, t in self.relation_assertions:
            successors[(h, r)].add(t)
            predecessors[t].add((h, r))
        types = defaultdict(set)
        for e, c in self.type_assertions:
            types[e].add(c)

        self._successors = {key: frozenset(value) for key, value in successors.items()}
        self._predecessors = {key: tuple(sorted(value)) for key, value in predecessors.items()}
        self._entity_types = {key: tuple(sorted(value)) for key, value in types.items()}
        self._active_entities = frozenset(
            e for h, _, t in self.relation_assertions for e in (h, t)
        )

    # vocabularies ---------------------------------------------------------

    @property
    def entities(self):
        return frozenset(range(len(self.entity_vocab)))

    @property
    def relations(self):
        return frozenset(range(len(self.relation_vocab)))

    @property
    def types(self):
        return frozenset(range(len(self.type_vocab)))

    @property
    def num_entities(self):
        return len(self.entity_vocab)

    @property
    def num_relations(self):
        return len(self.relation_vocab)

    @property
    def num_types(self):
        return len(self.type_vocab)

    @property
    def active_entities(self):
        """Entities that occur in at least one relation assertion."""
        return self._active_entities

    def entity_id(self, name):
        idx = self.entity_vocab.get(name)
        if idx is None:
            raise UnknownEntityError(name)
        return idx

    def relation_id(self, name):
        idx = self.relation_vocab.get(name)
        if idx is None:
            raise UnknownRelationError(name)
        return idx

    def check_entity(self, e):
        if not isinstance(e, int) or not 0 <= e < self.num_entities:
            raise UnknownEntityError(e)

    # graph access ---------------------------------------------------------

    def entity_types(self, e):
        """Sorted type ids asserted for entity e (empty tuple if none)."""
        self.check_entity(e)
        return self._entity_types.get(e, ())

    def project(self, sources, r):
        """All tails reachable from any entity in sources through relation r."""
        result = set()
        for x in sources:
            result.update(self._successors.get((x, r), ()))
        return result

    def in_edges(self, t):
        """Sorted (head, relation) pairs of the assertions ending in t."""
        return self._predecessors.get(t, ())

    def describe(self):
        return {
            'name': self.name,
            'entities': self.num_entities,
            'active_entities': len(self._active_entities),
            'relations': self.num_relations,
            'types': self.num_types - 1,
            'relation_assertions': len(self.relation_assertions),
            'type_assertions': len(self.type_assertions),
        }

    def __repr__(self):
        stats = self.describe()
        return (f"KnowledgeGraph({self.name}: {stats['entities']} entities, "
                f"{stats['relations']} relations, {stats['relation_assertions']} assertions)")


class SplitGraphs:
    """Nested train <= valid <= test graphs sharing vocabularies and types."""

    def __init__(self, train, valid, test, inductive=False):
        self.train = train
        self.valid = valid
        self.test = test
        self.inductive = inductive

    def graph(self, split):
        try:
            return {'train': self.train, 'valid': self.valid, 'test': self.test}[split]
        except KeyError:
            raise KeyError(f"unknown split {split!r}") from None

    @property
    def seen_entities(self):
        """Entities observed in training edges."""
        return self.train.active_entities

    def check_monotone(self):
        train = set(self.train.relation_assertions)
        valid = set(self.valid.relation_assertions)
        test = set(self.test.relation_assertions)
        return train <= valid <= test

    def describe(self):
        return {
            'inductive': self.inductive,
            'splits': {name: self.graph(name).describe() for name in ('train', 'valid', 'test')},
        }


# ---------------------------------------------------------------------------
# reading

def decoded_lines(path, f):
    """Decode a binary file line by line; bad bytes become a KGParseError."""
    for line_number, raw in enumerate(f, start=1):
        try:
            yield raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise KGParseError(path, line_number, f"not valid UTF-8 ({e.reason} at byte {e.start})") from e


def _read_tsv(path, width):
    """Yield (line_number, fields) for every non-comment line of a TSV file."""
    path = Path(path)
    if not path.exists():
        raise KGLoadError(f"file not found: {path}")
    with open(path, 'rb') as f:
        reader = csv.reader(decoded_lines(path, f), delimiter='\t', quoting=csv.QUOTE_NONE)
        for row in reader:
            line_number = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].startswith('#'):
                continue
            fields = [field.strip() for field in row]
            if len(fields) != width or not all(fields):
                raise KGParseError(path, line_number,
                                   f"expected {width} tab-separated fields, got {len(row)}")
            yield line_number, fields


def _read_types(path, entity_vocab, type_vocab):
    assertions = []
    for line_number, (entity, type_name) in _read_tsv(path, 2):
        if type_name == UNKNOWN_TYPE:
            raise KGParseError(path, line_number, f"type name {UNKNOWN_TYPE} is reserved")
        assertions.append((entity_vocab.add(entity), type_vocab.add(type_name)))
    return assertions


def _read_triples(path, entity_vocab, relation_vocab):
    triples = []
    for _, (head, relation, tail) in _read_tsv(path, 3):
        triples.append((entity_vocab.add(head), relation_vocab.add(relation), entity_vocab.add(tail)))
    return triples


def load_kg(triples_path, types_path, vocabularies=None, name=None):
    """Load one knowledge graph from a triples file and a types file.

    Ids are assigned in first-appearance order, triples before types, unless
    pre-seeded vocabularies (entity, relation, type) are passed in.
    """
    if vocabularies is None:
        entity_vocab, relation_vocab, type_vocab = Vocabulary(), Vocabulary(), new_type_vocabulary()
    else:
        entity_vocab, relation_vocab, type_vocab = vocabularies

    triples = _read_triples(triples_path, entity_vocab, relation_vocab)
    type_assertions = _read_types(types_path, entity_vocab, type_vocab)

    kg = KnowledgeGraph(entity_vocab, relation_vocab, type_vocab, triples, type_assertions,
                        name=name or Path(triples_path).stem)
    logging.info(f"Loaded {kg}")
    return kg


def find_types_file(directory):
    for candidate in TYPE_FILE_CANDIDATES:
        path = Path(directory) / candidate
        if path.exists():
            return path
    raise KGLoadError(f"no type assertion file ({' or '.join(TYPE_FILE_CANDIDATES)}) in {directory}")


def load_splits(directory):
    """Load train/valid/test triples and the shared type file of a dataset directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise KGLoadError(f"dataset directory not found: {directory}")
    for filename in SPLIT_FILES.values():
        if not (directory / filename).exists():
            raise KGLoadError(f"missing split file: {directory / filename}")
    types_path = find_types_file(directory)

    entity_vocab, relation_vocab, type_vocab = Vocabulary(), Vocabulary(), new_type_vocabulary()
    edges = {
        split: _read_triples(directory / filename, entity_vocab, relation_vocab)
        for split, filename in SPLIT_FILES.items()
    }
    type_assertions = _read_types(types_path, entity_vocab, type_vocab)
    return assemble_splits(entity_vocab, relation_vocab, type_vocab, edges, type_assertions, source=directory)


def assemble_splits(entity_vocab, relation_vocab, type_vocab, edges, type_assertions, source="memory"):
    """Nested split graphs from per-split edge lists ('train', 'valid', 'test' keys)."""
    train_edges = edges['train']
    valid_edges = train_edges + edges['valid']
    test_edges = valid_edges + edges['test']

    train_entities = {e for h, _, t in train_edges for e in (h, t)}
    test_only_entities = {e for h, _, t in edges['test'] for e in (h, t)}
    inductive = bool(test_only_entities) and not (test_only_entities & train_entities)

    graphs = {
        split: KnowledgeGraph(entity_vocab, relation_vocab, type_vocab, split_edges,
                              type_assertions, name=split)
        for split, split_edges in (('train', train_edges), ('valid', valid_edges), ('test', test_edges))
    }
    splits = SplitGraphs(graphs['train'], graphs['valid'], graphs['test'], inductive=inductive)
    if not splits.check_monotone():
        raise KGLoadError(f"split graphs of {source} are not nested")

    logging.info(f"Loaded splits from {source} (inductive={inductive})")
    for split in ('train', 'valid', 'test'):
        logging.info(f"- {split}: {len(splits.graph(split).relation_assertions)} relation assertions")
    return splits


# ---------------------------------------------------------------------------
# writing

def save_kg(kg, directory, stem=None):
    """Write the TSV pair plus the JSON vocabulary manifest; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or kg.name

    with open(directory / f"{stem}.txt", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
        for h, r, t in kg.relation_assertions:
            writer.writerow([kg.entity_vocab.name(h), kg.relation_vocab.name(r), kg.entity_vocab.name(t)])

    with open(directory / f"{stem}_types.txt", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
        for e, c in kg.type_assertions:
            writer.writerow([kg.entity_vocab.name(e), kg.type_vocab.name(c)])

    manifest = {
        'name': kg.name,
        'triples': f"{stem}.txt",
        'types': f"{stem}_types.txt",
        'entities': list(kg.entity_vocab.names),
        'relations': list(kg.relation_vocab.names),
        'types_vocabulary': list(kg.type_vocab.names),
    }
    with open(directory / VOCAB_MANIFEST, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)

    logging.info(f"Saved {kg.name} to {directory}")
    return directory


def load_saved_kg(directory):
    """Inverse of save_kg: ids are taken from the vocabulary manifest."""
    directory = Path(directory)
    manifest_path = directory / VOCAB_MANIFEST
    if not manifest_path.exists():
        raise KGLoadError(f"vocabulary manifest not found: {manifest_path}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    type_names = manifest['types_vocabulary']
    if not type_names or type_names[0] != UNKNOWN_TYPE:
        raise KGLoadError(f"{manifest_path}: type vocabulary must start with {UNKNOWN_TYPE}")
    vocabularies = (
        Vocabulary(manifest['entities']),
        Vocabulary(manifest['relations']),
        Vocabulary(type_names),
    )
    return load_kg(directory / manifest['triples'], directory / manifest['types'],
                   vocabularies=vocabularies, name=manifest['name'])


def save_splits(splits, directory):
    """Write a split set back out in the dataset layout load_splits reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vocab = splits.train

    previous = set()
    for split, filename in SPLIT_FILES.items():
        graph = splits.graph(split)
        with open(directory / filename, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
            for h, r, t in graph.relation_assertions:
                if (h, r, t) in previous:
                    continue
                writer.writerow([vocab.entity_vocab.name(h), vocab.relation_vocab.name(r),
                                 vocab.entity_vocab.name(t)])
        previous = set(graph.relation_assertions)

    with open(directory / TYPE_FILE_CANDIDATES[0], 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, delimiter='\t', quoting=csv.QUOTE_NONE, lineterminator='\n')
        for e, c in vocab.type_assertions:
            writer.writerow([vocab.entity_vocab.name(e), vocab.type_vocab.name(c)])

    logging.info(f"Saved splits to {directory}")
    return directory
