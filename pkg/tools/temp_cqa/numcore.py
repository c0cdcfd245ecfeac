#!/usr/bin/env python3
"""
Numeric Core

Shape-checked float64 tensor primitives on top of torch, a named parameter
store with gradient slots, deterministic initialisation, reverse-mode
backward, the on-disk checkpoint format and a central finite-difference
gradient check.

Vectors are column tensors of shape (d, 1); matrices are (d, n). Every
primitive is columnwise, so a (d, B) batch of B columns behaves like B
independent vectors.
"""

import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .errors import ArtifactIOError, ConfigurationError, DimensionError, GradientStateError

DTYPE = torch.float64
CHECKPOINT_MANIFEST = 'parameters.json'
CHECKPOINT_DATA = 'parameters.bin'
CHECKPOINT_FORMAT = 'temp-cqa-f64le-v1'


def tensor(values):
    return torch.as_tensor(values, dtype=DTYPE)


def column(values):
    """A (d, 1) column from any flat sequence."""
    return tensor(values).reshape(-1, 1)


def _shape(x):
    return tuple(x.shape)


def _require(condition, op, a, b):
    if not condition:
        raise DimensionError(f"{op}: incompatible shapes {_shape(a)} and {_shape(b)}")


def _require_2d(op, x):
    if x.dim() != 2:
        raise DimensionError(f"{op}: expected a 2-D tensor, got shape {_shape(x)}")


# ---------------------------------------------------------------------------
# primitives

def matmul(a, b):
    _require(a.dim() == 2 and b.dim() == 2 and a.shape[1] == b.shape[0], 'matmul', a, b)
    return a @ b


def _broadcastable(a, b):
    if a.shape == b.shape:
        return True
    # column bias (k, 1) against a (k, n) batch
    return a.dim() == 2 and b.dim() == 2 and a.shape[0] == b.shape[0] and 1 in (a.shape[1], b.shape[1])


def add(a, b):
    _require(_broadcastable(a, b), 'add', a, b)
    return a + b


def subtract(a, b):
    _require(_broadcastable(a, b), 'subtract', a, b)
    return a - b


def multiply(a, b):
    _require(_broadcastable(a, b), 'multiply', a, b)
    return a * b


def affine(weight, x, bias):
    """weight @ x + bias, with the bias broadcast over columns."""
    return add(matmul(weight, x), bias)


def concat_rows(*parts):
    """Stack tensors vertically: [a; b; ...]."""
    first = parts[0]
    for other in parts[1:]:
        _require(first.dim() == other.dim() and first.shape[1:] == other.shape[1:],
                 'concat_rows', first, other)
    return torch.cat(parts, dim=0)


def sigmoid(x):
    return torch.sigmoid(x)


def relu(x):
    return torch.relu(x)


def softmax_over(vectors):
    """Elementwise softmax across a list of same-shape tensors.

    For every coordinate j the returned weights satisfy sum_i w_i[j] = 1.
    """
    if not vectors:
        raise DimensionError("softmax_over: empty list")
    for other in vectors[1:]:
        _require(other.shape == vectors[0].shape, 'softmax_over', vectors[0], other)
    weights = torch.softmax(torch.stack(vectors, dim=0), dim=0)
    return list(weights.unbind(dim=0))


def column_mean(x):
    _require_2d('column_mean', x)
    return x.mean(dim=1, keepdim=True)


def column_max(x):
    _require_2d('column_max', x)
    return x.max(dim=1, keepdim=True).values


def l1_distance(a, b):
    _require(a.shape == b.shape, 'l1_distance', a, b)
    return (a - b).abs().sum()


# ---------------------------------------------------------------------------
# parameters

class ParameterStore:
    """Named float64 parameters, each with a same-shaped gradient slot."""

    def __init__(self, seed=None):
        self.seed = seed
        self._params = {}

    def add(self, name, values):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = torch.nn.Parameter(tensor(values).clone())
        return self._params[name]

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def grad(self, name):
        param = self[name]
        return param.grad if param.grad is not None else torch.zeros_like(param)

    def zero_grad(self):
        for param in self._params.values():
            param.grad = None

    def assign(self, name, values):
        """Overwrite a parameter in place (shape must match)."""
        param = self[name]
        values = tensor(values)
        if values.shape != param.shape:
            raise DimensionError(f"assign {name}: incompatible shapes {_shape(param)} and {_shape(values)}")
        with torch.no_grad():
            param.copy_(values)

    def snapshot(self):
        return {name: param.detach().clone() for name, param in self._params.items()}

    def equals(self, other):
        """Bit-identical names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(torch.equal(self[name].detach(), other[name].detach()) for name in self.names())

    def num_values(self):
        return sum(param.numel() for param in self._params.values())

    def __repr__(self):
        return f"ParameterStore({len(self)} tensors, {self.num_values()} values)"


def _bound_for(scheme, shape):
    if isinstance(scheme, (tuple, list)):
        kind, value = scheme
    else:
        kind, value = scheme, None
    if kind == 'zeros':
        return 'zeros', None
    if kind == 'fan_in':
        fan_in = value if value is not None else shape[-1]
        return 'uniform', 1.0 / math.sqrt(fan_in)
    if kind == 'uniform':
        if value is None or value <= 0:
            raise ConfigurationError(f"uniform scheme needs a positive bound, got {value!r}")
        return 'uniform', float(value)
    raise ConfigurationError(f"unknown initialisation scheme {scheme!r}")


def init_parameters(spec, seed, store=None):
    """Create parameters from (name, shape, scheme) entries, in order.

    Schemes: 'zeros'; 'fan_in' or ('fan_in', d) for uniform(-1/sqrt(d), 1/sqrt(d)),
    d defaulting to the last dimension; ('uniform', bound) for uniform(-bound, bound).
    Passing an existing store appends to it and continues its random stream.
    """
    names = [name for name, _, _ in spec]
    if len(set(names)) != len(names):
        duplicates = sorted({name for name in names if names.count(name) > 1})
        raise ConfigurationError(f"duplicate parameter names: {', '.join(duplicates)}")

    if store is None:
        store = ParameterStore(seed=seed)
        store._generator = torch.Generator().manual_seed(int(seed))
    generator = store._generator

    for name, shape, scheme in spec:
        shape = tuple(int(s) for s in shape)
        kind, bound = _bound_for(scheme, shape)
        values = torch.zeros(shape, dtype=DTYPE)
        if kind == 'uniform':
            values.uniform_(-bound, bound, generator=generator)
        store.add(name, values)
    return store


def backward(loss, store):
    """Fill every gradient slot of store with d(loss)/d(parameter)."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise GradientStateError("backward called without a recorded forward computation")
    if loss.numel() != 1:
        raise DimensionError(f"backward: loss must be a scalar, got shape {_shape(loss)}")
    store.zero_grad()
    loss.backward()
    for param in store.parameters():
        if param.grad is None:
            param.grad = torch.zeros_like(param)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(store, directory, extra=None):
    """JSON manifest + raw little-endian float64 blocks, one block per parameter."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        offset = 0
        with open(directory / CHECKPOINT_DATA, 'wb') as f:
            for name, param in store.items():
                block = param.detach().cpu().numpy().astype('<f8')
                f.write(block.tobytes(order='C'))
                entries.append({'name': name, 'shape': list(block.shape), 'offset': offset,
                                'count': int(block.size)})
                offset += int(block.size)
        manifest = {
            'format': CHECKPOINT_FORMAT,
            'seed': store.seed,
            'parameters': entries,
            'extra': extra or {},
        }
        with open(directory / CHECKPOINT_MANIFEST, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        raise ArtifactIOError(f"cannot write checkpoint to {directory}: {e}") from e
    logging.info(f"Saved checkpoint with {len(store)} tensors to {directory}")
    return directory


def load_checkpoint(directory):
    """Returns (ParameterStore, extra manifest data)."""
    directory = Path(directory)
    try:
        with open(directory / CHECKPOINT_MANIFEST, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        data = np.fromfile(directory / CHECKPOINT_DATA, dtype='<f8')
    except (OSError, ValueError) as e:
        raise ArtifactIOError(f"cannot read checkpoint from {directory}: {e}") from e
    if manifest.get('format') != CHECKPOINT_FORMAT:
        raise ArtifactIOError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")

    store = ParameterStore(seed=manifest.get('seed'))
    for entry in manifest['parameters']:
        block = data[entry['offset']:entry['offset'] + entry['count']]
        if block.size != entry['count']:
            raise ArtifactIOError(f"{directory}: truncated data for {entry['name']}")
        store.add(entry['name'], torch.from_numpy(block.astype(np.float64).reshape(entry['shape'])))
    return store, manifest.get('extra', {})


def checkpoint_digest(directory):
    """sha256 over the manifest and the parameter data."""
    directory = Path(directory)
    digest = hashlib.sha256()
    for filename in (CHECKPOINT_MANIFEST, CHECKPOINT_DATA):
        with open(directory / filename, 'rb') as f:
            digest.update(f.read())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# gradient check

def gradient_check(loss_fn, store, names=None, h=1e-5, max_entries=None, seed=0, floor=1e-4):
    """Largest per-coordinate relative error between autodiff and central-difference gradients.

    Each coordinate is compared as |a - n| / max(|a|, |n|, floor).
    loss_fn() must rebuild the scalar loss from the current parameter values.
    max_entries limits how many coordinates per tensor are probed.
    """
    names = names or store.names()
    backward(loss_fn(), store)
    analytic = {name: store.grad(name).clone() for name in names}

    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name in names:
            param = store[name]
            flat = param.view(-1)
            indices = np.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                indices = rng.choice(flat.numel(), size=max_entries, replace=False)
            numeric = []
            for i in indices:
                original = flat[i].item()
                flat[i] = original + h
                plus = loss_fn().item()
                flat[i] = original - h
                minus = loss_fn().item()
                flat[i] = original
                numeric.append((plus - minus) / (2 * h))
            numeric = torch.tensor(numeric, dtype=DTYPE)
            exact = analytic[name].view(-1)[torch.as_tensor(indices, dtype=torch.long)]
            scale = torch.maximum(exact.abs(), numeric.abs()).clamp(min=floor)
            worst = max(worst, ((exact - numeric).abs() / scale).max().item())
    return worst
