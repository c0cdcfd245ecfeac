import json
import random
from functools import reduce

import pytest

from tools.temp_cqa.errors import UnknownRelationError
from tools.temp_cqa.kg import UNKNOWN_TYPE_ID, KnowledgeGraph, Vocabulary, new_type_vocabulary
from tools.temp_cqa.typegraph import build_type_graph, relation_type_list


def make_kg(triples, types):
    """KG from name triples and (entity, type) name pairs."""
    entities, relations, type_vocab = Vocabulary(), Vocabulary(), new_type_vocabulary()
    ids = [(entities.add(h), relations.add(r), entities.add(t)) for h, r, t in triples]
    typed = [(entities.add(e), type_vocab.add(c)) for e, c in types]
    return KnowledgeGraph(entities, relations, type_vocab, ids, typed)


def random_kg(rng, max_assertions=30):
    n_entities = rng.randint(2, 12)
    n_relations = rng.randint(1, 4)
    n_types = rng.randint(1, 5)
    triples = [
        (f"e{rng.randrange(n_entities)}", f"r{rng.randrange(n_relations)}", f"e{rng.randrange(n_entities)}")
        for _ in range(rng.randint(1, max_assertions))
    ]
    types = [
        (f"e{e}", f"T{c}")
        for e in range(n_entities) for c in range(n_types) if rng.random() < 0.4
    ]
    return make_kg(triples, types)


def naive_type_graph(kg):
    """Materialize every per-assertion type set, then fold intersections pairwise."""
    def tp(e):
        return set(kg.entity_types(e)) or {UNKNOWN_TYPE_ID}

    heads, tails = {}, {}
    for h, r, t in kg.relation_assertions:
        heads.setdefault(r, []).append(tp(h))
        tails.setdefault(r, []).append(tp(t))
    result = {}
    for r in heads:
        head = reduce(lambda a, b: a & b, heads[r]) or {UNKNOWN_TYPE_ID}
        tail = reduce(lambda a, b: a & b, tails[r]) or {UNKNOWN_TYPE_ID}
        result[r] = (sorted(head), sorted(tail))
    return result


def test_head_type_intersection():
    kg = make_kg([('x', 'r', 'z'), ('y', 'r', 'z')], [('x', 'A'), ('x', 'B'), ('y', 'B'), ('y', 'C'), ('z', 'D')])
    tg = build_type_graph(kg)
    r = kg.relation_id('r')
    assert tg.head_types(r) == (kg.type_vocab.id('B'),)
    assert tg.tail_types(r) == (kg.type_vocab.id('D'),)


def test_single_assertion_keeps_its_types():
    kg = make_kg([('x', 'r', 'z')], [('x', 'A')])
    tg = build_type_graph(kg)
    assert tg.head_types(kg.relation_id('r')) == (kg.type_vocab.id('A'),)


def test_empty_intersection_falls_back_to_unknown():
    kg = make_kg([('x', 'r', 'z'), ('y', 'r', 'z')], [('x', 'A'), ('y', 'B'), ('z', 'D')])
    tg = build_type_graph(kg)
    r = kg.relation_id('r')
    assert tg.head_types(r) == (UNKNOWN_TYPE_ID,)
    assert tg.fallback_relations() == [r]


def test_untyped_entity_contributes_unknown():
    kg = make_kg([('x', 'r', 'z')], [('z', 'D')])
    tg = build_type_graph(kg)
    assert tg.head_types(kg.relation_id('r')) == (UNKNOWN_TYPE_ID,)


def test_relation_type_list_is_sorted_union():
    kg = make_kg([('x', 'r', 'z'), ('z', 's', 'z')], [('x', 'B'), ('z', 'D')])
    tg = build_type_graph(kg)
    B, D = kg.type_vocab.id('B'), kg.type_vocab.id('D')
    assert relation_type_list(tg, kg.relation_id('r')) == tuple(sorted((B, D)))
    assert relation_type_list(tg, kg.relation_id('s')) == (D,)


def test_relation_type_list_with_fallback():
    kg = make_kg([('x', 'r', 'z')], [('z', 'D')])
    tg = build_type_graph(kg)
    assert relation_type_list(tg, kg.relation_id('r')) == (UNKNOWN_TYPE_ID, kg.type_vocab.id('D'))


def test_unknown_relation_lookup():
    kg = make_kg([('x', 'r', 'z')], [])
    tg = build_type_graph(kg)
    with pytest.raises(UnknownRelationError):
        relation_type_list(tg, 5)
    assert tg.types_or_unknown(5) == (UNKNOWN_TYPE_ID,)


def test_nodes_are_union_of_relation_types():
    kg = make_kg([('x', 'r', 'z'), ('z', 's', 'w')], [('x', 'A'), ('z', 'B'), ('w', 'C')])
    tg = build_type_graph(kg)
    expected = set()
    for r in tg.edges:
        expected.update(relation_type_list(tg, r))
    assert tg.nodes == expected


def test_matches_naive_oracle_on_random_graphs():
    rng = random.Random(1234)
    for _ in range(50):
        kg = random_kg(rng)
        tg = build_type_graph(kg)
        oracle = naive_type_graph(kg)
        assert set(tg.edges) == set(oracle)
        for r, (head, tail) in oracle.items():
            assert list(tg.head_types(r)) == head
            assert list(tg.tail_types(r)) == tail
            assert list(tg.relation_type_list(r)) == sorted(set(head) | set(tail))


def test_adding_assertions_never_grows_head_types():
    rng = random.Random(99)
    for _ in range(20):
        kg = random_kg(rng, max_assertions=10)
        names = kg.entity_vocab.names
        base = [(names[h], kg.relation_vocab.name(r), names[t]) for h, r, t in kg.relation_assertions]
        types = [(names[e], kg.type_vocab.name(c)) for e, c in kg.type_assertions]
        extra = (rng.choice(names), base[0][1], rng.choice(names))
        bigger = make_kg(base + [extra], types)
        r_small = kg.relation_id(extra[1])
        r_big = bigger.relation_id(extra[1])

        small_head = {kg.type_vocab.name(c) for c in build_type_graph(kg).head_types(r_small)}
        big_head = {bigger.type_vocab.name(c) for c in build_type_graph(bigger).head_types(r_big)}
        # only a fallback can introduce UNKNOWN when the smaller set lacks it
        if kg.type_vocab.name(UNKNOWN_TYPE_ID) not in big_head:
            assert big_head <= small_head


def test_serialization_is_deterministic(tmp_path):
    kg = random_kg(random.Random(5))
    first, second = build_type_graph(kg), build_type_graph(kg)
    assert first.to_json() == second.to_json()

    path = first.save_json(tmp_path / 'tg.json')
    payload = json.loads(path.read_text())
    assert payload['nodes'] == sorted(first.nodes)
    assert {edge['relation'] for edge in payload['edges']} == set(first.edges)


def test_dot_export_lists_every_type():
    kg = make_kg([('x', 'r', 'z')], [('x', 'A'), ('z', 'B')])
    dot = build_type_graph(kg).to_dot()
    assert dot.startswith('digraph type_graph {')
    assert 'label="A"' in dot and 'label="B"' in dot
    assert 'label="r"' in dot


def test_assertion_edges_keep_full_type_sets(tmp_path):
    kg = make_kg([('a', 'r', 'b'), ('c', 'r', 'b'), ('a', 'r', 'b')],
                 [('a', 'A'), ('c', 'A'), ('c', 'C'), ('b', 'B')])
    tg = build_type_graph(kg)
    A, B, C = (kg.type_vocab.id(name) for name in ('A', 'B', 'C'))
    assert tg.head_types(0) == (A,)
    assert tg.labeled_edges == (((A,), 0, (B,)), ((A, C), 0, (B,)))

    payload = json.loads(tg.save_json(tmp_path / 'tg.json').read_text())
    assert payload['assertion_edges'] == [
        {'head_types': [A], 'relation': 0, 'tail_types': [B]},
        {'head_types': [A, C], 'relation': 0, 'tail_types': [B]},
    ]
