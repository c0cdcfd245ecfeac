import pytest

from tools.temp_cqa.errors import KGLoadError, KGParseError, UnknownEntityError
from tools.temp_cqa.kg import (UNKNOWN_TYPE, UNKNOWN_TYPE_ID, load_kg, load_saved_kg, load_splits,
                               save_kg, save_splits)
from tools.temp_cqa.synthetic import make_toy_splits


def write(path, lines):
    path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    return path


def write_kg(tmp_path, triples, types=()):
    return (write(tmp_path / 'triples.txt', triples), write(tmp_path / 'types.txt', types))


def write_dataset(directory, train, valid, test, types):
    directory.mkdir(parents=True, exist_ok=True)
    write(directory / 'train.txt', train)
    write(directory / 'valid.txt', valid)
    write(directory / 'test.txt', test)
    write(directory / 'types.txt', types)
    return directory


def test_duplicate_lines_are_one_assertion(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['a\tr\tb', 'a\tr\tb']))
    assert len(kg.relation_assertions) == 1


def test_chain_counts_entities_and_assertions(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['a\tr\tb', 'b\tr\tc']))
    assert kg.num_entities == 3
    assert len(kg.relation_assertions) == 2
    assert kg.entity_vocab.names == ('a', 'b', 'c')


def test_empty_triples_with_types(tmp_path):
    kg = load_kg(*write_kg(tmp_path, [], ['x\tperson', 'y\tcity']))
    assert kg.relation_assertions == ()
    assert kg.entity_vocab.names == ('x', 'y')
    assert kg.active_entities == frozenset()


def test_type_only_entity_is_admitted(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['a\tr\tb'], ['z\tperson']))
    assert 'z' in kg.entity_vocab
    assert kg.entity_types(kg.entity_id('z')) == (kg.type_vocab.id('person'),)


def test_comments_and_blank_lines_are_skipped(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['# header', '', 'a\tr\tb']))
    assert len(kg.relation_assertions) == 1


def test_malformed_line_reports_line_number(tmp_path):
    paths = write_kg(tmp_path, ['a\tr\tb', 'a\tr'])
    with pytest.raises(KGParseError) as info:
        load_kg(*paths)
    assert info.value.line_number == 2
    assert ':2:' in str(info.value)


def test_undecodable_line_reports_line_number(tmp_path):
    triples = tmp_path / 'triples.txt'
    triples.write_bytes('a\tr\tb\n# café\n'.encode('utf-8') + b'\xff\xfe\tr\tc\n')
    types = write(tmp_path / 'types.txt', [])
    with pytest.raises(KGParseError) as info:
        load_kg(triples, types)
    assert info.value.line_number == 3
    assert 'UTF-8' in str(info.value)


def test_reserved_type_name_is_rejected(tmp_path):
    with pytest.raises(KGParseError):
        load_kg(*write_kg(tmp_path, ['a\tr\tb'], [f'a\t{UNKNOWN_TYPE}']))


def test_missing_file_is_a_load_error(tmp_path):
    with pytest.raises(KGLoadError):
        load_kg(tmp_path / 'nope.txt', tmp_path / 'types.txt')


def test_unknown_type_has_id_zero(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['a\tr\tb'], ['a\tperson']))
    assert kg.type_vocab.name(UNKNOWN_TYPE_ID) == UNKNOWN_TYPE
    assert kg.type_vocab.id('person') == 1


def test_entity_types_sorted_and_deduplicated(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['e\tr\tf'], ['f\tt1', 'f\tt3', 'e\tt3', 'e\tt1', 'e\tt1']))
    e = kg.entity_id('e')
    types = kg.entity_types(e)
    assert types == tuple(sorted({kg.type_vocab.id('t1'), kg.type_vocab.id('t3')}))
    assert list(types) == sorted(set(types))


def test_entity_without_types(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['e\tr\tf'], ['f\tt1']))
    assert kg.entity_types(kg.entity_id('e')) == ()


def test_entity_types_unknown_id(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['e\tr\tf']))
    with pytest.raises(UnknownEntityError):
        kg.entity_types(99)
    with pytest.raises(KeyError):
        kg.entity_types(-1)


def test_split_union_counts(tmp_path):
    directory = write_dataset(tmp_path / 'data', ['a\tr\tb'], ['b\tr\tc'], ['c\tr\td'], ['a\tt'])
    splits = load_splits(directory)
    assert len(splits.train.relation_assertions) == 1
    assert len(splits.valid.relation_assertions) == 2
    assert len(splits.test.relation_assertions) == 3
    assert splits.check_monotone()
    assert splits.train.type_assertions == splits.test.type_assertions


def test_empty_valid_split_equals_train(tmp_path):
    directory = write_dataset(tmp_path / 'data', ['a\tr\tb'], [], ['b\tr\tc'], [])
    splits = load_splits(directory)
    assert set(splits.valid.relation_assertions) == set(splits.train.relation_assertions)


def test_test_edge_duplicating_train_edge(tmp_path):
    directory = write_dataset(tmp_path / 'data', ['a\tr\tb'], [], ['a\tr\tb', 'b\tr\tc'], [])
    splits = load_splits(directory)
    assert len(splits.test.relation_assertions) == 2


def test_disjoint_test_entities_flag_inductive(tmp_path):
    directory = write_dataset(tmp_path / 'data', ['a\tr\tb'], [], ['x\tr\ty'], ['a\tt', 'x\tt'])
    assert load_splits(directory).inductive
    directory = write_dataset(tmp_path / 'data2', ['a\tr\tb'], [], ['b\tr\ty'], [])
    assert not load_splits(directory).inductive


def test_missing_split_file(tmp_path):
    directory = tmp_path / 'data'
    directory.mkdir()
    write(directory / 'train.txt', ['a\tr\tb'])
    with pytest.raises(KGLoadError):
        load_splits(directory)


def test_save_and_reload_kg(tmp_path):
    kg = load_kg(*write_kg(tmp_path, ['a\tr\tb', 'b\ts\tc'], ['a\tt1', 'c\tt2', 'q\tt1']))
    reloaded = load_saved_kg(save_kg(kg, tmp_path / 'export'))
    assert reloaded.entity_vocab == kg.entity_vocab
    assert reloaded.relation_vocab == kg.relation_vocab
    assert reloaded.type_vocab == kg.type_vocab
    assert set(reloaded.relation_assertions) == set(kg.relation_assertions)
    assert set(reloaded.type_assertions) == set(kg.type_assertions)


def test_save_and_reload_splits(tmp_path):
    splits = make_toy_splits(num_entities=24, seed=3)
    reloaded = load_splits(save_splits(splits, tmp_path / 'toy'))

    def named(graph):
        vocab = graph.entity_vocab
        return {(vocab.name(h), graph.relation_vocab.name(r), vocab.name(t))
                for h, r, t in graph.relation_assertions}

    for split in ('train', 'valid', 'test'):
        assert named(reloaded.graph(split)) == named(splits.graph(split))
    assert reloaded.inductive == splits.inductive


def test_toy_inductive_split_is_disjoint():
    splits = make_toy_splits(num_entities=30, holdout=0.5, inductive=True, seed=1)
    assert splits.inductive
    held_out = splits.test.active_entities - splits.train.active_entities
    assert held_out
    assert not held_out & splits.seen_entities
