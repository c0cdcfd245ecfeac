#!/usr/bin/env python3
"""
Evaluation: Filtered Ranking, MRR, Hits@K and Regime Harnesses

For every evaluated answer v of a query, Rank(v) is 1 plus the number of
non-answer candidates scoring strictly higher plus half the non-answers tied
with it (rounded up). Every true answer of the query is removed from the
competitor pool, so adding answers never worsens a rank.

MRR and Hits@K average over the evaluated answers of a query first, then
over queries.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ArtifactIOError, ContractError, PreconditionError, UndefinedMetricError
from .querydag import REGIMES, STRUCTURES, TRAINING_STRUCTURES, UNSEEN_STRUCTURES, answer_query

SCHEMA_VERSION = 1
HITS_AT = (1, 3, 10)
METRICS = ('mrr',) + tuple(f"hits@{k}" for k in HITS_AT)
EVAL_BATCH = 64


# ---------------------------------------------------------------------------
# ranks and metrics

def filtered_ranks(scores, candidates, answers, targets):
    """Rank of each target among the candidates that are not answers.

    scores[i] belongs to candidates[i]; targets must be candidates.
    Returns {target: rank}.
    """
    candidates = np.asarray(candidates)
    scores = np.asarray(scores, dtype=np.float64)
    position = {int(e): i for i, e in enumerate(candidates)}
    is_answer = np.isin(candidates, np.fromiter(answers, dtype=np.int64))
    competitors = np.sort(scores[~is_answer])

    ranks = {}
    for v in sorted(targets):
        if v not in position:
            raise PreconditionError(f"answer {v} is not among the ranked candidates")
        s = scores[position[v]]
        lower = np.searchsorted(competitors, s, side='left')
        upper = np.searchsorted(competitors, s, side='right')
        higher = len(competitors) - upper
        ties = upper - lower
        ranks[v] = 1 + int(higher) + math.ceil(int(ties) / 2)
    return ranks


def rank_answers(q, model, kg_for_filtering, targets=None, candidates=None):
    """Filtered rank of every answer of q on kg_for_filtering (or of `targets` only)."""
    answers = answer_query(kg_for_filtering, q)
    targets = answers if targets is None else set(targets)
    candidates = list(range(model.num_entities)) if candidates is None else sorted(candidates)
    scores = model.score_candidates([q], candidates)[0]
    return filtered_ranks(scores, candidates, answers, targets)


def _check_ranks(ranks_per_query):
    ranks_per_query = [list(ranks) for ranks in ranks_per_query]
    if not ranks_per_query:
        raise UndefinedMetricError("metric over an empty query set")
    if any(not ranks for ranks in ranks_per_query):
        raise UndefinedMetricError("metric over a query with no ranked answers")
    return ranks_per_query


def mrr(ranks_per_query):
    ranks_per_query = _check_ranks(ranks_per_query)
    return float(np.mean([np.mean(1.0 / np.asarray(ranks, dtype=np.float64)) for ranks in ranks_per_query]))


def hits_at_k(ranks_per_query, k):
    ranks_per_query = _check_ranks(ranks_per_query)
    return float(np.mean([np.mean(np.asarray(ranks) <= k) for ranks in ranks_per_query]))


def metric_row(ranks_per_query):
    row = {'mrr': mrr(ranks_per_query)}
    for k in HITS_AT:
        row[f"hits@{k}"] = hits_at_k(ranks_per_query, k)
    row['queries'] = len(ranks_per_query)
    return row


# ---------------------------------------------------------------------------
# report

@dataclass
class EvalReport:
    regime: str
    split: str
    per_structure: dict
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def averages(self):
        """Unweighted means over structures: all, trained and unseen structures."""
        groups = {
            'all': [s for s in STRUCTURES if s in self.per_structure],
            'trained': [s for s in TRAINING_STRUCTURES if s in self.per_structure],
            'unseen': [s for s in UNSEEN_STRUCTURES if s in self.per_structure],
        }
        averages = {}
        for group, structures in groups.items():
            if not structures:
                continue
            averages[group] = {
                metric: float(np.mean([self.per_structure[s][metric] for s in structures]))
                for metric in METRICS
            }
            averages[group]['queries'] = sum(self.per_structure[s]['queries'] for s in structures)
        return averages

    def to_dict(self):
        return {
            'schema_version': self.schema_version,
            'regime': self.regime,
            'split': self.split,
            'per_structure': self.per_structure,
            'averages': self.averages,
            'config': self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json() + '\n', encoding='utf-8')
        except OSError as e:
            raise ArtifactIOError(f"cannot write report to {path}: {e}") from e
        logging.info(f"Saved evaluation report to {path}")
        return path

    @classmethod
    def from_dict(cls, data):
        if data.get('schema_version') != SCHEMA_VERSION:
            raise ArtifactIOError(f"unsupported report schema version {data.get('schema_version')!r}")
        return cls(regime=data['regime'], split=data['split'], per_structure=data['per_structure'],
                   config=data.get('config', {}))

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return cls.from_dict(json.load(f))
        except (OSError, ValueError, KeyError) as e:
            raise ArtifactIOError(f"cannot read report {path}: {e}") from e

    def table(self):
        """DataFrame with one row per metric and one column per structure plus averages."""
        columns = {s: self.per_structure[s] for s in STRUCTURES if s in self.per_structure}
        for group, values in self.averages.items():
            columns[f"avg_{group}"] = values
        frame = pd.DataFrame(columns).reindex(list(METRICS) + ['queries'])
        return frame

    def text_table(self):
        frame = self.table()
        metrics = frame.loc[list(METRICS)].astype(float).map(lambda v: f"{100 * v:.1f}")
        counts = frame.loc[['queries']].astype(int).astype(str)
        rendered = pd.concat([metrics, counts])
        header = f"{self.regime} / {self.split}"
        return header + '\n' + rendered.to_string()


# ---------------------------------------------------------------------------
# harness

def evaluate_queries(model, queries, candidates=None, batch_size=EVAL_BATCH):
    """Per-structure metric rows over a QuerySet; hard answers are the ranked targets."""
    candidates = list(range(model.num_entities)) if candidates is None else sorted(candidates)
    per_structure = {}
    for structure, instances in queries.by_structure().items():
        ranks_per_query = []
        for start in range(0, len(instances), batch_size):
            chunk = instances[start:start + batch_size]
            scores = model.score_candidates([instance.query for instance in chunk], candidates)
            for row, instance in zip(scores, chunk):
                targets = instance.hard_answers or instance.answers
                ranks = filtered_ranks(row, candidates, instance.answers, targets)
                ranks_per_query.append(list(ranks.values()))
        per_structure[structure] = metric_row(ranks_per_query)
        logging.info(f"{structure}: MRR {per_structure[structure]['mrr']:.4f} "
                     f"over {len(ranks_per_query)} queries")
    return per_structure


def check_regime(regime, model, queries):
    if regime not in REGIMES:
        raise PreconditionError(f"unknown regime {regime!r}")
    trained = getattr(model, 'regime', None)
    if trained is not None and trained != regime:
        raise ContractError(f"model was trained for the {trained} regime, not {regime}")
    if queries.regime is not None and queries.regime != regime:
        raise ContractError(f"queries were generated for {queries.regime}, evaluating {regime}")
    if regime == 'inductive':
        if not model.config.inductive:
            raise ContractError("inductive evaluation needs a model trained with inductive TER")
        if not model.config.ter_enabled:
            raise ContractError("inductive evaluation needs TER: unseen entities are unscorable with TEMP off")


def regime_candidates(regime, splits, model, split):
    """Entities ranked for one regime: unseen entities only for inductive evaluation."""
    if regime == 'inductive' and split != 'train':
        graph = splits.graph(split)
        return sorted(graph.active_entities - splits.seen_entities)
    return list(range(model.num_entities))


def run_regime(regime, splits, model, queries, config=None):
    """Evaluate a trained model on one regime's query set and build the EvalReport."""
    check_regime(regime, model, queries)
    split = queries.split or 'test'
    candidates = regime_candidates(regime, splits, model, split)
    logging.info(f"Evaluating {len(queries)} queries ({regime}, {split}) against {len(candidates)} candidates")
    per_structure = evaluate_queries(model, queries, candidates)
    echo = {'model': model.config.to_dict()}
    echo.update(config or {})
    return EvalReport(regime=regime, split=split, per_structure=per_structure, config=echo)
