#!/usr/bin/env python3
"""
Training Loop

Minibatch margin-ranking training of the host model (with or without TEMP).
Each step picks one training structure uniformly, samples a batch of its
queries with one positive answer each, draws filtered uniform negatives and
takes an Adam step. The loss of every step is kept as a `step,loss` curve.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from . import numcore as nc
from .errors import ConfigurationError, ContractError, PreconditionError, TrainingDivergedError
from .qe import QueryEmbeddingModel
from .querydag import REGIMES
from .typegraph import build_type_graph

LOSS_CURVE_FILE = 'loss_curve.csv'
CHECKPOINT_DIR = 'checkpoint'


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 100
    regime: str = 'generalization'

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be positive, got {self.steps}")
        if self.log_every < 1:
            raise ConfigurationError(f"log_every must be positive, got {self.log_every}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError(f"invalid Adam settings ({self.beta1}, {self.beta2}, {self.eps})")
        if self.regime not in REGIMES:
            raise ConfigurationError(f"regime must be one of {REGIMES}, got {self.regime!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Path
    loss_curve: pd.DataFrame
    model: QueryEmbeddingModel
    digest: str

    @property
    def initial_loss(self):
        return float(self.loss_curve['loss'].iloc[0])

    @property
    def final_loss(self):
        return float(self.loss_curve['loss'].iloc[-1])


def training_graph(splits, regime):
    """Deductive models see the full graph; the other regimes train on G_train."""
    return splits.test if regime == 'deductive' else splits.train


class NegativeSampler:
    """Uniform negatives from the training entities, excluding each query's answers."""

    def __init__(self, pool, rng):
        self.pool = np.asarray(sorted(pool), dtype=np.int64)
        self.rng = rng
        self._candidates = {}

    def candidates(self, key, answers):
        if key not in self._candidates:
            allowed = np.setdiff1d(self.pool, np.fromiter(answers, dtype=np.int64))
            if allowed.size == 0:
                raise PreconditionError(f"query {key} has no non-answer entity to sample negatives from")
            self._candidates[key] = allowed
        return self._candidates[key]

    def sample(self, key, answers, count):
        return self.rng.choice(self.candidates(key, answers), size=count, replace=True).tolist()


def _adam_step(optimizer, store):
    """Adam step that leaves every zero-gradient entry untouched."""
    before = {}
    for name, param in store.items():
        if param.grad is None or not bool(param.grad.any()):
            param.grad = None
            continue
        before[name] = (param.detach().clone(), param.grad == 0)
    optimizer.step()
    with torch.no_grad():
        for name, (values, frozen) in before.items():
            if bool(frozen.any()):
                param = store[name]
                param.copy_(torch.where(frozen, values, param))


def _dump_batch(output_dir, step, structure, batch, positives, negatives):
    path = Path(output_dir) / f"diverged_batch_step{step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({
            'step': step,
            'structure': structure,
            'queries': [instance.query.to_dict() for instance in batch],
            'positives': positives,
            'negatives': negatives,
        }, f, indent=2)
    return path


def train(splits, queries, config, model_config, output_dir, type_graph=None):
    """Train a model on `queries` and write checkpoint + loss curve under output_dir."""
    output_dir = Path(output_dir)
    if len(queries) == 0:
        raise PreconditionError("no training queries")
    if queries.regime is not None and queries.regime != config.regime:
        raise ContractError(f"queries were generated for {queries.regime}, training regime is {config.regime}")
    if queries.split not in (None, 'train'):
        raise ContractError(f"training queries must come from the train split, got {queries.split}")
    if model_config.inductive != (config.regime == 'inductive'):
        raise ContractError(
            f"regime {config.regime} needs inductive={config.regime == 'inductive'} in the model config"
        )

    graph = training_graph(splits, config.regime)
    type_graph = type_graph or build_type_graph(graph)
    model = QueryEmbeddingModel.for_graph(graph, type_graph, model_config, seed=config.seed,
                                          seen_entities=graph.active_entities)
    model.regime = config.regime
    logging.info(f"Training {model} on {graph.name} ({config.regime}) for {config.steps} steps")

    grouped = queries.by_structure()
    structures = list(grouped)
    rng = np.random.default_rng(config.seed)
    sampler = NegativeSampler(graph.active_entities, rng)
    optimizer = torch.optim.Adam(model.params.parameters(), lr=config.lr,
                                 betas=(config.beta1, config.beta2), eps=config.eps)

    losses = []
    window = []
    progress = tqdm(range(1, config.steps + 1), desc='train', unit='step', disable=None)
    for step in progress:
        structure = structures[int(rng.integers(len(structures)))]
        pool = grouped[structure]
        picks = rng.integers(len(pool), size=config.batch_size)
        batch = [pool[int(i)] for i in picks]
        positives = [int(rng.choice(sorted(instance.answers))) for instance in batch]
        negatives = [
            sampler.sample((structure, int(i)), instance.answers, model_config.negative_samples)
            for i, instance in zip(picks, batch)
        ]

        loss = model.batch_loss([instance.query for instance in batch], positives, negatives)
        value = loss.item()
        if not math.isfinite(value):
            path = _dump_batch(output_dir, step, structure, batch, positives, negatives)
            raise TrainingDivergedError(step, path)

        nc.backward(loss, model.params)
        _adam_step(optimizer, model.params)

        losses.append((step, value))
        window.append(value)
        if step % config.log_every == 0 or step == config.steps:
            mean = sum(window) / len(window)
            logging.info(f"step {step}/{config.steps} - loss {mean:.6f}")
            progress.set_postfix(loss=f"{mean:.4f}")
            window = []

    loss_curve = pd.DataFrame(losses, columns=['step', 'loss'])
    output_dir.mkdir(parents=True, exist_ok=True)
    loss_curve.to_csv(output_dir / LOSS_CURVE_FILE, index=False)

    checkpoint = output_dir / CHECKPOINT_DIR
    model.save(checkpoint, extra={
        'train_config': config.to_dict(),
        'regime': config.regime,
        'trained_on': graph.name,
        'structures': structures,
    })
    digest = nc.checkpoint_digest(checkpoint)
    logging.info(f"Checkpoint {checkpoint} (sha256 {digest[:12]})")
    return TrainResult(checkpoint, loss_curve, model, digest)
