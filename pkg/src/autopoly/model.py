"""Decoupled spectral classifier: a 2-layer MLP followed by a polynomial filter.

    F      = dropout(relu(dropout(X) W1 + b1)) W2 + b2        (n x C)
    logits = sum_k theta_k P_k(M) F

Gradients are derived by hand. The filter coefficients enter the logits
linearly, so ``dL/dtheta_k = <dL/dlogits, P_k(M) F>`` and the blocks
``P_k(M) F`` are kept from the forward pass. Because every basis matrix
is symmetric, the gradient flowing back into ``F`` is the same filter
applied to ``dL/dlogits``.
"""

from __future__ import annotations

import base64
import functools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from autopoly import rng as _rng
from autopoly.errors import CheckpointError, InputError, NumericError, ShapeError
from autopoly.filters import FilterSpec, apply_filter, basis_blocks, combine
from autopoly.graph import Graph

WEIGHT_NAMES = ("W1", "b1", "W2", "b2")
CHECKPOINT_VERSION = "autopoly-ckpt-1"


@dataclass
class ModelState:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    filter: FilterSpec
    dropout: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must lie in [0, 1), got {self.dropout}")
        d, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError(
                f"inconsistent weight shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def theta(self) -> np.ndarray:
        return self.filter.theta

    @property
    def num_classes(self) -> int:
        return self.W2.shape[1]

    def weights(self) -> dict:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def with_weights(self, weights: dict) -> "ModelState":
        return replace(self, **{k: weights[k] for k in WEIGHT_NAMES})

    def with_theta(self, theta) -> "ModelState":
        return replace(self, filter=self.filter.with_theta(theta))

    def copy(self) -> "ModelState":
        return replace(self, **{k: getattr(self, k).copy() for k in WEIGHT_NAMES})


def init_state(num_features, hidden, num_classes, filter_spec, dropout=0.5, seed=0) -> ModelState:
    """Glorot-uniform weights, zero biases."""
    g = _rng.make_rng(seed, _rng.INIT)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return g.uniform(-limit, limit, size=(fan_in, fan_out))

    return ModelState(
        W1=glorot(num_features, hidden),
        b1=np.zeros(hidden),
        W2=glorot(hidden, num_classes),
        b2=np.zeros(num_classes),
        filter=filter_spec,
        dropout=dropout,
    )


@dataclass
class ForwardCache:
    owner: tuple = field(repr=False)
    mask_in: np.ndarray | None
    mask_hidden: np.ndarray | None
    X_in: np.ndarray
    Z1: np.ndarray
    H: np.ndarray
    F: np.ndarray
    blocks: list = field(repr=False)
    logits: np.ndarray = field(repr=False)


def dropout_masks(shape_in, shape_hidden, p, seed):
    """Inverted-dropout masks (entries 0 or 1/(1-p)) for input and hidden layers.

    ``seed`` is an int or a tuple of ints; tuples address sub-streams such
    as ``(run_seed, epoch)``. The returned arrays are shared between calls
    with equal arguments and must not be modified.
    """
    if p == 0.0:
        return None, None
    key = tuple(int(k) for k in seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    return _dropout_masks(tuple(shape_in), tuple(shape_hidden), float(p), key)


@functools.lru_cache(maxsize=4)
def _dropout_masks(shape_in, shape_hidden, p, key):
    g = _rng.make_rng(key[0], _rng.DROPOUT, *key[1:])
    keep = 1.0 - p
    m_in = (g.random(shape_in, dtype=np.float32) < keep) / keep
    m_hid = (g.random(shape_hidden, dtype=np.float32) < keep) / keep
    for m in (m_in, m_hid):
        m.setflags(write=False)
    return m_in, m_hid


def _owner(state):
    return (state.W1, state.b1, state.W2, state.b2, state.filter)


def _check_finite(state: ModelState, X):
    for name in WEIGHT_NAMES:
        if not np.all(np.isfinite(getattr(state, name))):
            raise NumericError(f"non-finite entries in {name}")
    if not np.all(np.isfinite(state.theta)):
        raise NumericError("non-finite filter coefficients")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite entries in features")


def mlp(state: ModelState, X, mask_in=None, mask_hidden=None):
    X_in = X if mask_in is None else X * mask_in
    Z1 = X_in @ state.W1 + state.b1
    H = np.maximum(Z1, 0.0)
    H_out = H if mask_hidden is None else H * mask_hidden
    F = H_out @ state.W2 + state.b2
    return X_in, Z1, H, F


def forward(state: ModelState, graph: Graph, X, dropout_seed=None, *, check=True):
    """Compute logits; with ``dropout_seed`` set, run in training mode.

    Returns ``(logits, cache)``. ``cache`` is None in eval mode.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (graph.n, state.W1.shape[0]):
        raise ShapeError(f"features must be ({graph.n}, {state.W1.shape[0]}), got {X.shape}")
    if check:
        _check_finite(state, X)
    if dropout_seed is None:
        _, _, _, F = mlp(state, X)
        return apply_filter(state.filter, graph, F), None

    m_in, m_hid = dropout_masks(X.shape, (graph.n, state.W1.shape[1]), state.dropout, dropout_seed)
    X_in, Z1, H, F = mlp(state, X, m_in, m_hid)
    spec = state.filter
    blocks = basis_blocks(spec.basis, spec.order, graph, F, spec.lambda_max)
    logits = combine(spec.theta, blocks)
    return logits, ForwardCache(_owner(state), m_in, m_hid, X_in, Z1, H, F, blocks, logits)


class LossReport(NamedTuple):
    loss: float
    accuracy: float


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def _mask_index(mask, n):
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if mask.dtype == bool and mask.shape != (n,):
        raise ShapeError(f"mask must have length {n}, got {mask.shape}")
    if idx.size == 0:
        raise InputError("mask selects no nodes")
    return idx


def loss_and_accuracy(logits, labels, mask) -> LossReport:
    """Mean cross-entropy and accuracy over the nodes selected by ``mask``."""
    idx = _mask_index(mask, logits.shape[0])
    lp = log_softmax(logits[idx])
    y = np.asarray(labels)[idx]
    loss = -float(np.mean(lp[np.arange(idx.size), y]))
    acc = float(np.mean(np.argmax(logits[idx], axis=1) == y))
    return LossReport(max(loss, 0.0), acc)


def logit_gradient(logits, labels, mask):
    """d(masked mean CE)/d(logits); rows outside the mask are zero."""
    idx = _mask_index(mask, logits.shape[0])
    G = np.zeros_like(logits)
    P = softmax(logits[idx])
    P[np.arange(idx.size), np.asarray(labels)[idx]] -= 1.0
    G[idx] = P / idx.size
    return G


def theta_grad_from_blocks(blocks, G) -> np.ndarray:
    return np.array([float(np.vdot(G, B)) for B in blocks])


def backward(state: ModelState, cache: ForwardCache, labels, mask, graph: Graph):
    """Exact gradients of the masked mean cross-entropy.

    Returns ``(grad_w, grad_theta)`` where ``grad_w`` maps W1, b1, W2, b2
    to arrays of matching shape.
    """
    if cache is None:
        raise InputError("backward needs the cache of a training-mode forward")
    if any(a is not b for a, b in zip(cache.owner, _owner(state))):
        raise InputError("forward cache was produced by a different model state")

    G = logit_gradient(cache.logits, labels, mask)
    grad_theta = theta_grad_from_blocks(cache.blocks, G)

    dF = apply_filter(state.filter, graph, G)
    H_out = cache.H if cache.mask_hidden is None else cache.H * cache.mask_hidden
    dW2 = H_out.T @ dF
    db2 = dF.sum(axis=0)
    dH = dF @ state.W2.T
    if cache.mask_hidden is not None:
        dH = dH * cache.mask_hidden
    dZ1 = dH * (cache.Z1 > 0.0)
    dW1 = cache.X_in.T @ dZ1
    db1 = dZ1.sum(axis=0)
    grads = {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return grads, grad_theta


def loss_and_grads(state, graph, X, labels, mask, dropout_seed=0, check=True):
    """Training-mode forward plus backward; returns ``(LossReport, grad_w, grad_theta)``."""
    logits, cache = forward(state, graph, X, dropout_seed=dropout_seed, check=check)
    report = loss_and_accuracy(logits, labels, mask)
    grads, grad_theta = backward(state, cache, labels, mask, graph)
    return report, grads, grad_theta


def theta_gradient(state, graph, X, labels, mask, dropout_seed=None):
    """Gradient with respect to the filter coefficients only (one forward, no weight backward)."""
    X = np.asarray(X, dtype=np.float64)
    if dropout_seed is None:
        m_in = m_hid = None
    else:
        m_in, m_hid = dropout_masks(X.shape, (graph.n, state.W1.shape[1]), state.dropout, dropout_seed)
    _, _, _, F = mlp(state, X, m_in, m_hid)
    spec = state.filter
    blocks = basis_blocks(spec.basis, spec.order, graph, F, spec.lambda_max)
    G = logit_gradient(combine(spec.theta, blocks), labels, mask)
    return theta_grad_from_blocks(blocks, G)


def eval_gradients(state, graph, X, labels, mask):
    """Gradients of the masked loss with dropout disabled."""
    plain = replace(state, dropout=0.0) if state.dropout else state
    _, cache = forward(plain, graph, X, dropout_seed=0)
    return backward(plain, cache, labels, mask, graph)


# -- checkpoints ---------------------------------------------------------------------------


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def checkpoint_dict(state: ModelState, extra: dict | None = None) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "dropout": state.dropout,
        "filter": {
            "basis": state.filter.basis,
            "order": state.filter.order,
            "lambda_max": state.filter.lambda_max,
            "theta": _encode(state.theta),
        },
        "tensors": {name: _encode(getattr(state, name)) for name in WEIGHT_NAMES},
    }
    if extra:
        doc["extra"] = extra
    return doc


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(state, extra), indent=1) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> ModelState:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    version = doc.get("version") if isinstance(doc, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}; expected {CHECKPOINT_VERSION!r}")
    try:
        f = doc["filter"]
        spec = FilterSpec(f["basis"], _decode(f["theta"]), float(f.get("lambda_max", 2.0)))
        tensors = {name: _decode(doc["tensors"][name]) for name in WEIGHT_NAMES}
        return ModelState(filter=spec, dropout=float(doc.get("dropout", 0.0)), **tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
