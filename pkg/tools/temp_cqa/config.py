"""
Run configuration: defaults, JSON config file and command-line overrides.

One flat JSON object drives a run, e.g.

    {"dim": 32, "temp": "both", "margin": 24, "lr": 0.0001, "steps": 2000}

Precedence is defaults, then the file, then flags. The seed comes from
--seed, else the TEMP_CQA_SEED environment variable, else the file, else 0.
"""

import json
import os
from pathlib import Path

from .errors import ConfigurationError
from .qe import ModelConfig
from .train import TrainConfig

SEED_ENV = 'TEMP_CQA_SEED'

DEFAULTS = {
    'dim': 32,
    'highway_k': 2,
    'entity_aggregator': 'highway',
    'fusion': 'gated',
    'inductive': False,
    'temp': 'both',
    'margin': 24.0,
    'negative_samples': 32,
    'lr': 1e-4,
    'batch_size': 64,
    'steps': 1000,
    'seed': 0,
    'log_every': 100,
    'regime': 'generalization',
}

_TYPES = {
    'dim': int, 'highway_k': int, 'negative_samples': int, 'batch_size': int, 'steps': int,
    'seed': int, 'log_every': int, 'margin': float, 'lr': float,
    'entity_aggregator': str, 'fusion': str, 'temp': str, 'regime': str, 'inductive': bool,
}


def _coerce(key, value):
    kind = _TYPES[key]
    if kind is bool:
        if isinstance(value, bool):
            return value
        if str(value).lower() in ('1', 'true', 'yes'):
            return True
        if str(value).lower() in ('0', 'false', 'no'):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def read_config_file(path):
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except ValueError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def load_config(path=None, overrides=None, environ=None):
    """Resolved flat configuration dict."""
    environ = os.environ if environ is None else environ
    overrides = {key: value for key, value in (overrides or {}).items() if value is not None}

    config = dict(DEFAULTS)
    sources = [read_config_file(path)] if path else []
    sources.append(overrides)
    for source in sources:
        unknown = sorted(set(source) - set(DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
        config.update({key: _coerce(key, value) for key, value in source.items()})

    if 'seed' not in overrides and environ.get(SEED_ENV):
        config['seed'] = _coerce('seed', environ[SEED_ENV])
    return config


def model_config(config):
    return ModelConfig(
        dim=config['dim'],
        temp=config['temp'],
        margin=config['margin'],
        negative_samples=config['negative_samples'],
        highway_k=config['highway_k'],
        entity_aggregator=config['entity_aggregator'],
        fusion=config['fusion'],
        inductive=config['inductive'],
    )


def train_config(config):
    return TrainConfig(
        lr=config['lr'],
        batch_size=config['batch_size'],
        steps=config['steps'],
        seed=config['seed'],
        log_every=config['log_every'],
        regime=config['regime'],
    )


def save_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config, f, indent=2, sort_keys=True)
    return path
