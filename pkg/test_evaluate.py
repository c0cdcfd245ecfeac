import math
import random

import numpy as np
import pytest

from tools.temp_cqa.errors import ArtifactIOError, ContractError, UndefinedMetricError
from tools.temp_cqa.evaluate import (METRICS, EvalReport, filtered_ranks, hits_at_k, metric_row, mrr,
                                     rank_answers, regime_candidates, run_regime)
from tools.temp_cqa.kg import KnowledgeGraph, Vocabulary, new_type_vocabulary
from tools.temp_cqa.qe import ModelConfig, QueryEmbeddingModel
from tools.temp_cqa.querydag import (STRUCTURES, TRAINING_STRUCTURES, UNSEEN_STRUCTURES, QueryDAG, QueryInstance,
                                     QuerySet, generate_queries)
from tools.temp_cqa.synthetic import make_toy_splits
from tools.temp_cqa.train import TrainConfig, train


class FixedScores:
    """Stand-in model that scores candidates from a lookup table."""

    def __init__(self, scores, regime=None, config=None):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.num_entities = len(scores)
        self.regime = regime
        self.config = config or ModelConfig(dim=4)

    def score_candidates(self, queries, candidates=None):
        candidates = range(self.num_entities) if candidates is None else candidates
        return np.tile(self.scores[list(candidates)], (len(queries), 1))


def naive_rank(scores, answers, v):
    higher = sum(1 for e, s in enumerate(scores) if e not in answers and s > scores[v])
    ties = sum(1 for e, s in enumerate(scores) if e not in answers and s == scores[v])
    return 1 + higher + math.ceil(ties / 2)


# ---------------------------------------------------------------------------
# ranks

def test_top_answer_ranks_first():
    ranks = filtered_ranks([0.1, 0.9, 0.3], [0, 1, 2], {1}, {1})
    assert ranks == {1: 1}


def test_tie_with_one_non_answer():
    ranks = filtered_ranks([0.5, 0.5, 0.1], [0, 1, 2], {0}, {0})
    assert ranks == {0: 2}


def test_other_answers_are_filtered():
    ranks = filtered_ranks([0.9, 0.8, 0.1, 0.2], [0, 1, 2, 3], {0, 1}, {0, 1})
    assert ranks == {0: 1, 1: 1}


def test_ranks_match_naive_count():
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(2, 15)
        scores = [float(rng.randint(0, 5)) for _ in range(n)]
        answers = set(rng.sample(range(n), rng.randint(1, n)))
        assert filtered_ranks(scores, list(range(n)), answers, answers) == {
            v: naive_rank(scores, answers, v) for v in answers
        }


def test_adding_an_answer_never_worsens_a_rank():
    rng = random.Random(8)
    for _ in range(100):
        n = rng.randint(3, 12)
        scores = [float(rng.randint(0, 4)) for _ in range(n)]
        first, second = rng.sample(range(n), 2)
        alone = filtered_ranks(scores, list(range(n)), {first}, {first})[first]
        together = filtered_ranks(scores, list(range(n)), {first, second}, {first})[first]
        assert together <= alone


def test_rank_answers_uses_the_filtering_graph():
    entities, relations = Vocabulary(['a', 'b', 'c', 'd']), Vocabulary(['r'])
    kg = KnowledgeGraph(entities, relations, new_type_vocabulary(), [(0, 0, 1), (0, 0, 2)], [])
    model = FixedScores([0.0, 0.5, 0.9, 0.7])
    ranks = rank_answers(QueryDAG('1p', (0,), (0,)), model, kg)
    assert ranks == {1: 2, 2: 1}


# ---------------------------------------------------------------------------
# metrics

def test_perfect_ranking():
    assert mrr([[1], [1, 1]]) == 1.0
    assert hits_at_k([[1], [1, 1]], 1) == 1.0


def test_single_rank_four():
    assert mrr([[4]]) == 0.25
    assert hits_at_k([[4]], 3) == 0.0
    assert hits_at_k([[4]], 10) == 1.0


def test_query_with_two_answers():
    assert mrr([[1, 2]]) == 0.75


def test_empty_inputs_are_undefined():
    with pytest.raises(UndefinedMetricError):
        mrr([])
    with pytest.raises(UndefinedMetricError):
        hits_at_k([[1], []], 3)


def test_metrics_match_formula_transcription():
    rng = random.Random(17)
    for _ in range(200):
        ranks = [[rng.randint(1, 30) for _ in range(rng.randint(1, 6))] for _ in range(rng.randint(1, 12))]
        expected_mrr = sum(sum(1.0 / r for r in answers) / len(answers) for answers in ranks) / len(ranks)
        assert abs(mrr(ranks) - expected_mrr) < 1e-12
        for k in (1, 3, 10):
            expected = sum(sum(1 for r in answers if r <= k) / len(answers) for answers in ranks) / len(ranks)
            assert abs(hits_at_k(ranks, k) - expected) < 1e-12


def test_metric_row_is_ordered():
    rng = random.Random(2)
    for _ in range(50):
        ranks = [[rng.randint(1, 20) for _ in range(3)] for _ in range(5)]
        row = metric_row(ranks)
        assert 0 <= row['mrr'] <= 1
        assert row['hits@1'] <= row['hits@3'] <= row['hits@10'] <= 1
        assert row['queries'] == 5


# ---------------------------------------------------------------------------
# reports

def sample_report():
    return EvalReport(
        regime='generalization', split='test',
        per_structure={
            '1p': metric_row([[1], [2, 5]]),
            '2i': metric_row([[3]]),
            'up': metric_row([[12, 1]]),
        },
        config={'model': {'dim': 4}},
    )


def test_report_averages():
    report = sample_report()
    averages = report.averages
    assert set(averages) == {'all', 'trained', 'unseen'}
    assert averages['unseen']['mrr'] == report.per_structure['up']['mrr']
    assert averages['trained']['queries'] == 3
    assert averages['all']['hits@10'] == pytest.approx(
        np.mean([report.per_structure[s]['hits@10'] for s in ('1p', '2i', 'up')]))


def test_report_round_trip(tmp_path):
    report = sample_report()
    loaded = EvalReport.load(report.save(tmp_path / 'report.json'))
    assert loaded.to_json() == report.to_json()


def test_report_schema_version_is_checked(tmp_path):
    path = tmp_path / 'report.json'
    path.write_text('{"schema_version": 99, "regime": "deductive", "split": "test", "per_structure": {}}')
    with pytest.raises(ArtifactIOError):
        EvalReport.load(path)


def test_text_table_shows_percentages():
    text = sample_report().text_table()
    assert text.splitlines()[0] == 'generalization / test'
    assert '1p' in text and 'avg_unseen' in text
    assert '100.0' in text and '50.0' in text
    assert set(METRICS) <= set(sample_report().table().index)


# ---------------------------------------------------------------------------
# regime harness

def test_only_hard_answers_are_ranked():
    # easy answer 1 scores highest, hard answer 2 scores below both non-answers
    queries = QuerySet([QueryInstance(QueryDAG('1p', (0,), (0,)), frozenset({1, 2}), frozenset({1}))],
                       regime='generalization', split='test')
    model = FixedScores([0.0, 10.0, -10.0, 0.0])
    report = run_regime('generalization', None, model, queries)
    assert report.per_structure['1p']['mrr'] == pytest.approx(1 / 3)
    assert report.per_structure['1p']['hits@1'] == 0.0


def test_regime_contracts():
    queries = QuerySet([QueryInstance(QueryDAG('1p', (0,), (0,)), frozenset({1}))],
                       regime='deductive', split='test')
    with pytest.raises(ContractError):
        run_regime('deductive', None, FixedScores([0.0, 1.0], regime='generalization'), queries)
    with pytest.raises(ContractError):
        run_regime('generalization', None, FixedScores([0.0, 1.0]), queries)

    queries.regime = 'inductive'
    with pytest.raises(ContractError):
        run_regime('inductive', None, FixedScores([0.0, 1.0]), queries)
    with pytest.raises(ContractError):
        run_regime('inductive', None, FixedScores([0.0, 1.0], config=ModelConfig(temp='off', inductive=True)),
                   queries)


def test_inductive_candidates_are_unseen_entities():
    splits = make_toy_splits(num_entities=30, holdout=0.5, inductive=True, seed=1)
    model = FixedScores([0.0] * 30)
    candidates = regime_candidates('inductive', splits, model, 'test')
    assert candidates and not set(candidates) & splits.seen_entities
    assert regime_candidates('generalization', splits, model, 'test') == list(range(30))


def test_inductive_regime_end_to_end(tmp_path):
    splits = make_toy_splits(num_entities=30, holdout=0.5, inductive=True, seed=1)
    train_queries = generate_queries(splits, '1p', 8, 'inductive', seed=0, split='train')
    test_queries = generate_queries(splits, '1p', 5, 'inductive', seed=1, split='test')

    config = TrainConfig(lr=0.01, batch_size=8, steps=100, seed=0, regime='inductive')
    result = train(splits, train_queries, config, ModelConfig(dim=8, margin=6.0, negative_samples=8,
                                                              inductive=True), tmp_path / 'both')
    report = run_regime('inductive', splits, result.model, test_queries)
    row = report.per_structure['1p']
    assert np.isfinite(row['mrr'])
    assert row['hits@10'] > 0

    baseline = train(splits, train_queries, config,
                     ModelConfig(dim=8, temp='off', margin=6.0, negative_samples=8, inductive=True),
                     tmp_path / 'off')
    with pytest.raises(ContractError):
        run_regime('inductive', splits, baseline.model, test_queries)
    with pytest.raises(ContractError):
        baseline.model.score_candidates([test_queries.instances[0].query])


def test_deductive_toy_convergence(tmp_path):
    splits = make_toy_splits(num_entities=20, num_relations=3, num_types=4, seed=0)
    queries = generate_queries(splits, '1p', 10, 'deductive', seed=1, split='train').extend(
        generate_queries(splits, '2p', 6, 'deductive', seed=2, split='train'))

    config = TrainConfig(lr=0.01, batch_size=32, steps=2000, seed=0, regime='deductive', log_every=500)
    model_config = ModelConfig(dim=32, temp='both', margin=6.0, negative_samples=16)
    result = train(splits, queries, config, model_config, tmp_path)

    report = run_regime('deductive', splits, result.model, queries)
    assert report.per_structure['1p']['hits@3'] >= 0.9
    assert report.per_structure['2p']['hits@10'] >= 0.7

    again = run_regime('deductive', splits, result.model, queries)
    assert again.to_json() == report.to_json()


def test_unseen_structures_are_evaluated_alongside_trained_ones(tmp_path):
    splits = make_toy_splits(num_entities=40, out_degree=3, seed=0)
    train_queries = QuerySet(regime='generalization', split='train')
    for offset, structure in enumerate(TRAINING_STRUCTURES):
        train_queries = train_queries.extend(
            generate_queries(splits, structure, 8, 'generalization', seed=offset, split='train'))
    test_queries = QuerySet(regime='generalization', split='test')
    for offset, structure in enumerate(STRUCTURES):
        test_queries = test_queries.extend(
            generate_queries(splits, structure, 3, 'generalization', seed=100 + offset, split='test'))

    config = TrainConfig(lr=0.01, batch_size=16, steps=50, seed=0, regime='generalization')
    result = train(splits, train_queries, config, ModelConfig(dim=8, margin=6.0, negative_samples=8), tmp_path)
    report = run_regime('generalization', splits, result.model, test_queries)

    assert set(report.per_structure) == set(STRUCTURES)
    averages = report.averages
    assert set(averages) == {'all', 'trained', 'unseen'}
    assert averages['unseen']['queries'] == 3 * len(UNSEEN_STRUCTURES)
    assert all(np.isfinite(averages['unseen'][metric]) for metric in METRICS)
    assert 0 < averages['unseen']['mrr'] <= 1
