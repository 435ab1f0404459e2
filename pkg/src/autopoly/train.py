"""Training regimes for the spectral classifier.

``train_joint``
    filter coefficients and MLP weights share one Adam optimizer and the
    training loss.
``train_auto``
    the bi-level regime: MLP weights follow the training loss while the
    coefficients follow a one-step-unrolled validation meta-gradient,
    refreshed every ``freq`` epochs.
``grid_search``
    exhaustive sweep over frozen coefficient vectors, scored on validation
    accuracy.

All regimes run full-graph epochs and stop early on validation accuracy,
restoring the best parameters seen.
"""

from __future__ import annotations

import itertools
import logging
import math
import resource
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from autopoly.errors import GuardError, InputError, NumericError
from autopoly.filters import BASES, FilterSpec, init_coefficients
from autopoly.model import (
    WEIGHT_NAMES,
    ModelState,
    eval_gradients,
    forward,
    init_state,
    loss_and_accuracy,
    loss_and_grads,
    theta_gradient,
)

log = logging.getLogger(__name__)

DEFAULT_GRID = (-0.9, -0.5, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.5, 0.9)
MAX_GRID_COMBINATIONS = 10**6


# -- optimizer ------------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(adam: AdamState, params: dict, grads: dict, lr: float, weight_decay=0.0) -> dict:
    """One bias-corrected Adam step; returns new parameter arrays.

    ``weight_decay`` (a float or a per-name mapping) is added to the
    gradient as ``wd * param`` before the moment updates. Moment buffers
    in ``adam`` are updated in place.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    adam.t += 1
    c1 = 1.0 - adam.beta1**adam.t
    c2 = 1.0 - adam.beta2**adam.t
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        wd = weight_decay.get(name, 0.0) if isinstance(weight_decay, dict) else weight_decay
        if wd:
            g = g + wd * p
        m = adam.m.get(name)
        v = adam.v.get(name)
        if m is None:
            m = np.zeros_like(p, dtype=np.float64)
            v = np.zeros_like(p, dtype=np.float64)
        m = adam.beta1 * m + (1.0 - adam.beta1) * g
        v = adam.beta2 * v + (1.0 - adam.beta2) * g * g
        adam.m[name], adam.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
    return out


# -- configuration --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    dropout: float = 0.5
    basis: str = "monomial"
    order: int = 10
    init: str = "random_uniform"
    alpha: float = 0.1
    lambda_max: float = 2.0
    lr: float = 0.01
    weight_decay: float = 5e-4
    theta_weight_decay: float = 0.0

    def __post_init__(self):
        if isinstance(self.hidden, bool) or not isinstance(self.hidden, int) or self.hidden < 1:
            raise InputError(f"hidden must be a positive integer, got {self.hidden!r}")
        if isinstance(self.order, bool) or not isinstance(self.order, int) or self.order < 0:
            raise InputError(f"order must be a non-negative integer, got {self.order!r}")
        if self.basis not in BASES:
            raise InputError(f"basis must be one of {BASES}, got {self.basis!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise InputError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0 or self.theta_weight_decay < 0:
            raise InputError("weight decay must be non-negative")


@dataclass(frozen=True)
class MetaConfig:
    xi: float = 0.05
    eta0: float = 0.05
    eta1: float | None = None  # None: use ModelConfig.lr
    freq: int = 1
    eps_scale: float = 0.01
    eps_floor: float = 1e-8
    theta_weight_decay: float = 0.0
    theta_optimizer: str = "sgd"

    def __post_init__(self):
        if self.freq < 1:
            raise InputError(f"freq must be >= 1, got {self.freq}")
        if self.eta0 <= 0 or (self.eta1 is not None and self.eta1 <= 0):
            raise InputError("learning rates eta0 and eta1 must be positive")
        if self.xi < 0:
            raise InputError(f"xi must be non-negative, got {self.xi}")
        if self.theta_optimizer not in ("sgd", "adam"):
            raise InputError(f"theta_optimizer must be 'sgd' or 'adam', got {self.theta_optimizer!r}")


def build_state(bundle, config: ModelConfig, seed: int, theta=None) -> ModelState:
    if theta is None:
        theta = init_coefficients(config.init, config.order, seed=seed, alpha=config.alpha)
    spec = FilterSpec(config.basis, theta, config.lambda_max)
    return init_state(bundle.num_features, config.hidden, bundle.num_classes, spec, config.dropout, seed)


# -- reports --------------------------------------------------------------------------------

CURVE_KEYS = ("train_loss", "val_loss", "test_loss", "train_acc", "val_acc", "test_acc")


@dataclass
class TrainReport:
    regime: str
    seed: int
    curves: dict = field(default_factory=lambda: {k: [] for k in CURVE_KEYS})
    initial: dict = field(default_factory=dict)
    best_epoch: int = 0
    best: dict = field(default_factory=dict)
    theta_trajectory: list = field(default_factory=list)
    theta_updates: int = 0
    epoch_seconds: list = field(default_factory=list)
    wall_seconds: float = 0.0
    peak_mem_bytes: int = 0
    diverged: bool = False
    error: str | None = None
    split_ratios: tuple = ()
    state: ModelState | None = field(default=None, repr=False)

    @property
    def epochs_run(self) -> int:
        return len(self.curves["val_acc"])

    @property
    def test_acc(self) -> float:
        return self.best["test_acc"]

    @property
    def val_acc(self) -> float:
        return self.best["val_acc"]

    @property
    def train_acc(self) -> float:
        return self.best["train_acc"]

    @property
    def final_theta(self) -> np.ndarray:
        return self.state.theta

    @property
    def mean_epoch_seconds(self) -> float:
        return float(np.mean(self.epoch_seconds)) if self.epoch_seconds else 0.0

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(replace(self, state=None))
        d.pop("state")
        d["epochs_run"] = self.epochs_run
        d["final_theta"] = self.final_theta.tolist() if self.state is not None else None
        d["split_ratios"] = list(self.split_ratios)
        if not timing:
            for key in ("epoch_seconds", "wall_seconds", "peak_mem_bytes"):
                d.pop(key)
        return d


def peak_rss_bytes() -> int:
    # ru_maxrss is reported in KiB on Linux
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


def evaluate(state: ModelState, bundle, split, check=True) -> dict:
    logits, _ = forward(state, bundle.graph, bundle.features, check=check)
    out = {}
    for part, mask in (("train", split.train_mask), ("val", split.val_mask), ("test", split.test_mask)):
        rep = loss_and_accuracy(logits, bundle.labels, mask)
        out[f"{part}_loss"] = rep.loss
        out[f"{part}_acc"] = rep.accuracy
    return out


class _EarlyStopper:
    """Track the best validation accuracy (ties: lower validation loss)."""

    def __init__(self, state, metrics, patience):
        self.patience = patience
        self.best_epoch = 0
        self.best_metrics = metrics
        self.best_state = state

    def update(self, epoch, state, metrics) -> bool:
        b = self.best_metrics
        better = metrics["val_acc"] > b["val_acc"] or (
            metrics["val_acc"] == b["val_acc"] and metrics["val_loss"] < b["val_loss"]
        )
        if better:
            self.best_epoch, self.best_metrics, self.best_state = epoch, metrics, state
        return epoch - self.best_epoch >= self.patience


def _run(regime, bundle, split, state, epochs, patience, seed, step):
    """Shared epoch loop: ``step(epoch, state) -> state`` does the parameter updates."""
    report = TrainReport(regime=regime, seed=seed, split_ratios=tuple(split.ratios))
    report.theta_trajectory.append(state.theta.tolist())
    start = time.perf_counter()
    metrics = evaluate(state, bundle, split)
    report.initial = metrics
    stopper = _EarlyStopper(state, metrics, patience)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        try:
            new_state = step(epoch, state, report)
            metrics = evaluate(new_state, bundle, split, check=False)
            if not np.isfinite(metrics["train_loss"]):
                raise NumericError("training loss is not finite")
        except NumericError as exc:
            log.warning("%s seed %d diverged at epoch %d: %s", regime, seed, epoch, exc)
            report.diverged = True
            report.error = str(exc)
            break
        state = new_state
        report.epoch_seconds.append(time.perf_counter() - t0)
        for k in CURVE_KEYS:
            report.curves[k].append(metrics[k])
        if stopper.update(epoch, state, metrics):
            break
    report.wall_seconds = time.perf_counter() - start
    report.peak_mem_bytes = peak_rss_bytes()
    report.best_epoch = stopper.best_epoch
    report.best = dict(stopper.best_metrics)
    report.state = stopper.best_state
    return report


def train_joint(bundle, split, config: ModelConfig, epochs=1000, patience=200, seed=0,
                theta=None, freeze_theta=False, regime=None) -> TrainReport:
    """Baseline regime: one Adam step per epoch on weights and coefficients together.

    With ``freeze_theta`` the coefficients keep their initial value (given
    by ``theta`` or the configured initializer) and only the MLP trains.
    """
    state = build_state(bundle, config, seed, theta)
    adam = AdamState()
    decay = {name: config.weight_decay for name in WEIGHT_NAMES}
    decay["theta"] = config.theta_weight_decay
    graph, X, y, mask = bundle.graph, bundle.features, bundle.labels, split.train_mask

    def step(epoch, state, report):
        _, gw, gt = loss_and_grads(state, graph, X, y, mask, dropout_seed=(seed, epoch), check=False)
        params = dict(state.weights())
        grads = dict(gw)
        if not freeze_theta:
            params["theta"] = np.array(state.theta)
            grads["theta"] = gt
        new = adam_step(adam, params, grads, config.lr, decay)
        state = state.with_weights(new)
        if not freeze_theta:
            state = state.with_theta(new["theta"])
            report.theta_trajectory.append(new["theta"].tolist())
            report.theta_updates += 1
        return state

    name = regime or ("frozen" if freeze_theta else "joint")
    return _run(name, bundle, split, state, epochs, patience, seed, step)


def train_mlp(bundle, split, config: ModelConfig, epochs=1000, patience=200, seed=0) -> TrainReport:
    """Graph-agnostic baseline: the identity filter, frozen."""
    cfg = replace(config, basis="monomial", order=0)
    return train_joint(bundle, split, cfg, epochs, patience, seed, theta=[1.0], freeze_theta=True,
                       regime="mlp-baseline")


def meta_gradient(state: ModelState, bundle, split, meta: MetaConfig, dropout_seed=0) -> np.ndarray:
    """Validation-loss gradient for the filter coefficients through one unrolled SGD step.

    With ``xi == 0`` this is the plain validation gradient at the current
    weights. Otherwise, with ``w' = w - xi * dL_train/dw`` and
    ``g = dL_val/dw'``, returns

        dL_val(w', theta)/dtheta - xi * (dL_train(w+)/dtheta - dL_train(w-)/dtheta) / (2 eps)

    where ``w+- = w +- eps * g`` and ``eps = eps_scale / ||g||``.
    Validation passes run without dropout; the training passes within a
    call share the dropout masks drawn from ``dropout_seed``.
    """
    graph, X, y = bundle.graph, bundle.features, bundle.labels
    if meta.xi == 0.0:
        return theta_gradient(state, graph, X, y, split.val_mask)

    _, gw_train, _ = loss_and_grads(state, graph, X, y, split.train_mask, dropout_seed=dropout_seed,
                                    check=False)
    w = state.weights()
    unrolled = state.with_weights({k: w[k] - meta.xi * gw_train[k] for k in WEIGHT_NAMES})
    g, gt_val = eval_gradients(unrolled, graph, X, y, split.val_mask)

    norm = math.sqrt(sum(float(np.vdot(g[k], g[k])) for k in WEIGHT_NAMES))
    if norm == 0.0:
        return gt_val
    eps = max(meta.eps_scale / norm, meta.eps_floor)
    plus = state.with_weights({k: w[k] + eps * g[k] for k in WEIGHT_NAMES})
    minus = state.with_weights({k: w[k] - eps * g[k] for k in WEIGHT_NAMES})
    gt_plus = theta_gradient(plus, graph, X, y, split.train_mask, dropout_seed)
    gt_minus = theta_gradient(minus, graph, X, y, split.train_mask, dropout_seed)
    return gt_val - meta.xi * (gt_plus - gt_minus) / (2.0 * eps)


def train_auto(bundle, split, config: ModelConfig, meta: MetaConfig, epochs=1000, patience=200,
               seed=0, theta=None) -> TrainReport:
    """Bi-level regime.

    Epoch ``i`` (counting from 1) first updates the coefficients when
    ``i % freq == 0`` by plain gradient descent on the meta-gradient (or
    Adam when ``meta.theta_optimizer == "adam"``), then takes one Adam step
    on the MLP weights against the training loss at the new coefficients.
    """
    state = build_state(bundle, config, seed, theta)
    adam_w = AdamState()
    adam_t = AdamState()
    lr_w = config.lr if meta.eta1 is None else meta.eta1
    decay = {name: config.weight_decay for name in WEIGHT_NAMES}
    graph, X, y = bundle.graph, bundle.features, bundle.labels

    def step(epoch, state, report):
        if epoch % meta.freq == 0:
            mg = meta_gradient(state, bundle, split, meta, dropout_seed=(seed, epoch, 1))
            theta = np.array(state.theta)
            if meta.theta_optimizer == "adam":
                theta = adam_step(adam_t, {"theta": theta}, {"theta": mg}, meta.eta0,
                                  meta.theta_weight_decay)["theta"]
            else:
                if not np.all(np.isfinite(mg)):
                    raise NumericError("non-finite meta-gradient")
                theta = theta - meta.eta0 * (mg + meta.theta_weight_decay * theta)
            state = state.with_theta(theta)
            report.theta_trajectory.append(theta.tolist())
            report.theta_updates += 1
        _, gw, _ = loss_and_grads(state, graph, X, y, split.train_mask, dropout_seed=(seed, epoch), check=False)
        return state.with_weights(adam_step(adam_w, state.weights(), gw, lr_w, decay))

    return _run("auto", bundle, split, state, epochs, patience, seed, step)


# -- grid search ----------------------------------------------------------------------------


@dataclass
class GridResult:
    best_theta: tuple
    best_val_acc: float
    best_index: int
    table: list  # dicts: index, theta, val_acc, test_acc, train_acc, best_epoch
    best_report: TrainReport | None = field(default=None, repr=False)


def grid_search(bundle, split, config: ModelConfig, grid_values=DEFAULT_GRID, order=2, epochs=200,
                patience=50, seed=0, workers=1, max_combinations=MAX_GRID_COMBINATIONS) -> GridResult:
    """Train the MLP under every coefficient vector in ``grid_values ** (order + 1)``.

    Coefficients stay frozen during each run. The winner has the highest
    best-epoch validation accuracy; ties go to the earliest candidate in
    lexicographic enumeration order. Candidates may run on ``workers``
    threads without changing the result.
    """
    values = [float(v) for v in grid_values]
    if not values:
        raise InputError("grid needs at least one value")
    count = len(values) ** (order + 1)
    if count > max_combinations:
        raise GuardError(
            f"{len(values)}^{order + 1} = {count} candidates exceeds the limit of {max_combinations}; "
            "use a coarser grid or a lower order"
        )
    cfg = replace(config, order=order)
    candidates = list(itertools.product(values, repeat=order + 1))

    def run(theta):
        rep = train_joint(bundle, split, cfg, epochs, patience, seed, theta=theta, freeze_theta=True,
                          regime="grid")
        return rep

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, candidates))
    else:
        reports = [run(c) for c in candidates]

    table = []
    best = 0
    for i, (theta, rep) in enumerate(zip(candidates, reports)):
        table.append({
            "index": i,
            "theta": list(theta),
            "val_acc": rep.val_acc,
            "test_acc": rep.test_acc,
            "train_acc": rep.train_acc,
            "best_epoch": rep.best_epoch,
        })
        if rep.val_acc > table[best]["val_acc"]:
            best = i
    return GridResult(tuple(candidates[best]), table[best]["val_acc"], best, table, reports[best])
