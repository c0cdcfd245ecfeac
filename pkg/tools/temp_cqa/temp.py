#!/usr/bin/env python3
"""
Type-Aware Entity and Relation Representations

TER aggregates the type vectors of an entity (iterative highway, mean or
max) and fuses the aggregate with the entity embedding. TRR aggregates the
type vectors of a relation with an attention network and integrates the
entity, relation and relation-type states pairwise before gating them back
into one entity vector and one relation vector.

All layers read their weights by name from a parameter mapping (usually a
numcore.ParameterStore). Inputs are (d, 1) columns or (d, B) batches.
"""

import math
from dataclasses import dataclass

import torch

from . import numcore as nc
from .errors import ConfigurationError, ContractError, DimensionError, PreconditionError

AGGREGATORS = ('highway', 'mean', 'max')
FUSIONS = ('gated', 'concat')
PAIRS = ('er', 'es', 'rs')
SIDES = ('entity', 'relation')


@dataclass(frozen=True)
class TerConfig:
    d: int
    K: int = 2
    aggregator: str = 'highway'
    inductive: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError(f"dim must be at least 1, got {self.d}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigurationError(f"entity_aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.aggregator == 'highway' and self.K < 1:
            raise ConfigurationError(f"highway_k must be at least 1, got {self.K}")


@dataclass(frozen=True)
class TrrConfig:
    d: int
    fusion: str = 'gated'
    attention_hidden: int = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError(f"dim must be at least 1, got {self.d}")
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.attention_hidden is None:
            object.__setattr__(self, 'attention_hidden', self.d)


def _linear(name, rows, cols):
    """Weight + bias spec entries, both uniform with the weight's fan-in."""
    return [
        (f"{name}.W", (rows, cols), ('fan_in', cols)),
        (f"{name}.b", (rows, 1), ('fan_in', cols)),
    ]


def ter_parameter_spec(config):
    d = config.d
    spec = []
    if config.aggregator == 'highway':
        for i in range(config.K):
            spec += [
                (f"ter.highway.{i}.W", (d, d), ('fan_in', d)),
                (f"ter.highway.{i}.b", (d, 1), ('fan_in', d)),
                (f"ter.highway.{i}.W_t", (d, d), ('fan_in', d)),
                (f"ter.highway.{i}.b_t", (d, 1), ('fan_in', d)),
            ]
    spec += _linear('ter.reduce', d, d)
    if config.inductive:
        spec += _linear('ter.entity_inductive', d, d)
    else:
        spec += _linear('ter.entity', d, 2 * d)
    return spec


def trr_parameter_spec(config):
    d, hidden = config.d, config.attention_hidden
    spec = [
        ('trr.attn.W1', (hidden, d), ('fan_in', d)),
        ('trr.attn.b1', (hidden, 1), ('fan_in', d)),
        ('trr.attn.W2', (d, hidden), ('fan_in', hidden)),
        ('trr.attn.b2', (d, 1), ('fan_in', hidden)),
    ]
    for pair in PAIRS:
        for direction in ('fwd', 'bwd'):
            spec += [
                (f"trr.bidir.{pair}.W_{direction}", (2 * d, 2 * d), ('fan_in', 2 * d)),
                (f"trr.bidir.{pair}.b_{direction}", (2 * d, 1), ('fan_in', 2 * d)),
            ]
    for side in SIDES:
        if config.fusion == 'gated':
            spec += [
                (f"trr.fuse.{side}.W3", (2 * d, 2 * d), ('fan_in', 2 * d)),
                (f"trr.fuse.{side}.W4", (2 * d, 2 * d), ('fan_in', 2 * d)),
                (f"trr.fuse.{side}.b3", (2 * d, 1), ('fan_in', 2 * d)),
                (f"trr.fuse.{side}.b4", (2 * d, 1), ('fan_in', 2 * d)),
            ]
        else:
            spec += _linear(f"trr.concat.{side}", 2 * d, 8 * d)
    for side in SIDES:
        spec += [
            (f"trr.project.{side}.W5", (d, 2 * d), ('fan_in', 2 * d)),
            (f"trr.project.{side}.b5", (d, 1), ('fan_in', 2 * d)),
        ]
    return spec


# ---------------------------------------------------------------------------
# TER

def highway_iterate(H, params, K):
    """K highway steps over every column of H independently."""
    for i in range(K):
        gate = nc.sigmoid(nc.affine(params[f"ter.highway.{i}.W"], H, params[f"ter.highway.{i}.b"]))
        transform = nc.affine(params[f"ter.highway.{i}.W_t"], H, params[f"ter.highway.{i}.b_t"])
        H = nc.add(nc.multiply(gate, transform), nc.multiply(1.0 - gate, H))
    return H


def _segment_mean(H, segments, num_segments):
    d = H.shape[0]
    sums = torch.zeros((d, num_segments), dtype=H.dtype).index_add(1, segments, H)
    counts = torch.bincount(segments, minlength=num_segments).to(H.dtype)
    return sums / counts


def _segment_max(H, segments, num_segments):
    d = H.shape[0]
    counts = torch.bincount(segments, minlength=num_segments)
    order = torch.argsort(segments, stable=True)
    starts = torch.cumsum(counts, 0) - counts
    positions = torch.empty_like(segments)
    positions[order] = torch.arange(len(segments)) - starts[segments[order]]
    padded = torch.full((num_segments, int(counts.max()), d), -math.inf, dtype=H.dtype)
    padded = padded.index_put((segments, positions), H.T)
    return padded.max(dim=1).values.T


def ter_aggregate_segments(type_vectors, segments, num_segments, params, config):
    """Aggregate the columns of type_vectors into num_segments outputs.

    segments[j] names the entity that column j belongs to. Every segment
    needs at least one column. Returns a (d, num_segments) tensor.
    """
    if type_vectors.dim() != 2 or type_vectors.shape[0] != config.d:
        raise DimensionError(f"type vectors: incompatible shapes {tuple(type_vectors.shape)} and ({config.d}, n)")
    segments = torch.as_tensor(segments, dtype=torch.long)
    if segments.numel() != type_vectors.shape[1]:
        raise DimensionError(f"segment ids: incompatible shapes {tuple(segments.shape)} and {tuple(type_vectors.shape)}")
    if segments.numel() == 0 or bool((torch.bincount(segments, minlength=num_segments) == 0).any()):
        raise PreconditionError("every entity needs at least one type vector")

    H = type_vectors
    if config.aggregator == 'highway':
        H = highway_iterate(H, params, config.K)
    if config.aggregator == 'max':
        pooled = _segment_max(H, segments, num_segments)
    else:
        pooled = _segment_mean(H, segments, num_segments)
    return nc.affine(params['ter.reduce.W'], pooled, params['ter.reduce.b'])


def _single(type_vectors, params, config):
    return ter_aggregate_segments(type_vectors, torch.zeros(type_vectors.shape[1], dtype=torch.long),
                                  1, params, config)


def ter_highway(type_vectors, params, K):
    config = TerConfig(d=type_vectors.shape[0], K=K, aggregator='highway')
    return _single(type_vectors, params, config)


def ter_mean(type_vectors, params):
    return _single(type_vectors, params, TerConfig(d=type_vectors.shape[0], aggregator='mean'))


def ter_max(type_vectors, params):
    return _single(type_vectors, params, TerConfig(d=type_vectors.shape[0], aggregator='max'))


def ter_aggregate(type_vectors, params, config):
    return _single(type_vectors, params, config)


def ter_entity(entity_vec, type_agg, params, inductive):
    """Fuse the type aggregate with the entity embedding (or use types alone)."""
    if inductive:
        if entity_vec is not None:
            raise ContractError("inductive TER must not read entity embeddings")
        return nc.affine(params['ter.entity_inductive.W'], type_agg, params['ter.entity_inductive.b'])
    if entity_vec is None:
        raise ContractError("transductive TER needs the entity embedding")
    stacked = nc.concat_rows(type_agg, entity_vec)
    return nc.affine(params['ter.entity.W'], stacked, params['ter.entity.b'])


# ---------------------------------------------------------------------------
# TRR

def attention_mlp(x, params):
    hidden = nc.relu(nc.affine(params['trr.attn.W1'], x, params['trr.attn.b1']))
    return nc.affine(params['trr.attn.W2'], hidden, params['trr.attn.b2'])


def trr_attention_weights(type_vectors, params):
    if not type_vectors:
        raise PreconditionError("relation has no type vectors")
    return nc.softmax_over([attention_mlp(v, params) for v in type_vectors])


def trr_attention(type_vectors, params):
    """Per-coordinate attention-weighted sum of a relation's type vectors."""
    weights = trr_attention_weights(type_vectors, params)
    result = nc.multiply(weights[0], type_vectors[0])
    for a, v in zip(weights[1:], type_vectors[1:]):
        result = nc.add(result, nc.multiply(a, v))
    return result


def bidir_integrate(x, y, params, pair):
    """Interaction states (G_xy, G_yx) of a representation pair."""
    if x.shape != y.shape:
        raise DimensionError(f"bidir_integrate: incompatible shapes {tuple(x.shape)} and {tuple(y.shape)}")
    prefix = f"trr.bidir.{pair}"
    forward = nc.concat_rows(nc.subtract(x, y), nc.multiply(x, y))
    backward = nc.concat_rows(nc.subtract(y, x), nc.multiply(y, x))
    g_xy = nc.relu(nc.affine(params[f"{prefix}.W_fwd"], forward, params[f"{prefix}.b_fwd"]))
    g_yx = nc.relu(nc.affine(params[f"{prefix}.W_bwd"], backward, params[f"{prefix}.b_bwd"]))
    return g_xy, g_yx


def fusion_gate(first, second, params, side):
    prefix = f"trr.fuse.{side}"
    logits = nc.add(nc.add(nc.matmul(params[f"{prefix}.W3"], first), nc.matmul(params[f"{prefix}.W4"], second)),
                    nc.add(params[f"{prefix}.b3"], params[f"{prefix}.b4"]))
    return nc.sigmoid(logits)


def gated_fuse(first, second, params, side):
    if first.shape != second.shape:
        raise DimensionError(f"gated_fuse: incompatible shapes {tuple(first.shape)} and {tuple(second.shape)}")
    gate = fusion_gate(first, second, params, side)
    return nc.add(nc.multiply(gate, first), nc.multiply(1.0 - gate, second))


def concat_features(first, second):
    return nc.concat_rows(first, second, nc.add(first, second), nc.multiply(first, second))


def concat_fuse(first, second, params, side):
    if first.shape != second.shape:
        raise DimensionError(f"concat_fuse: incompatible shapes {tuple(first.shape)} and {tuple(second.shape)}")
    prefix = f"trr.concat.{side}"
    return nc.affine(params[f"{prefix}.W"], concat_features(first, second), params[f"{prefix}.b"])


def project_back(fused, params, side):
    prefix = f"trr.project.{side}"
    return nc.affine(params[f"{prefix}.W5"], fused, params[f"{prefix}.b5"])


def trr_enhance(entity_rep, relation_rep, relation_type_agg, params, fusion='gated'):
    """Type-aware (entity, relation) pair for one projection step."""
    if not entity_rep.shape == relation_rep.shape == relation_type_agg.shape:
        raise DimensionError(
            f"trr_enhance: incompatible shapes {tuple(entity_rep.shape)} and {tuple(relation_rep.shape)}"
            f" / {tuple(relation_type_agg.shape)}"
        )
    fuse = gated_fuse if fusion == 'gated' else concat_fuse
    g_er, g_re = bidir_integrate(entity_rep, relation_rep, params, 'er')
    g_es, g_se = bidir_integrate(entity_rep, relation_type_agg, params, 'es')
    g_rs, g_sr = bidir_integrate(relation_rep, relation_type_agg, params, 'rs')

    entity_out = project_back(fuse(g_er, g_es, params, 'entity'), params, 'entity')
    relation_out = project_back(fuse(g_re, g_rs, params, 'relation'), params, 'relation')
    return entity_out, relation_out
