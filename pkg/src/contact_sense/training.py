"""Group-level splits, AdamW, k-fold grid search and early-stopped final training."""

from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .models import ModelSpec, ModelState, as_param_tensors, logits
from .numerics import NumericsError
from .types import LabeledDataset

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 100
    batch_size: int = 32
    early_stop_patience: int = 10
    l2_lambda: float = 0.0  # decoupled AdamW weight decay
    seed: int = 0
    grid: dict = field(default_factory=dict)
    k_folds: int = 5
    val_fraction: float = 0.1
    cv_epochs: int | None = None  # epochs per fold during grid search; None means max_epochs

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


def default_train_config(family: str, **overrides) -> TrainConfig:
    """Learning rate, epoch budget and L2 of the best model per family."""
    table = {
        "gru": dict(learning_rate=0.01, max_epochs=139, l2_lambda=0.0),
        "lstm": dict(learning_rate=0.01, max_epochs=107, l2_lambda=0.0),
        "transformer": dict(learning_rate=1e-4, max_epochs=172, l2_lambda=0.2),
    }
    kw = dict(table[family.lower()])
    kw.update(overrides)
    return TrainConfig(**kw)


# -- splitting ------------------------------------------------------------------------------
@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    val_indices: np.ndarray
    folds: tuple[np.ndarray, ...]
    train_groups: tuple
    val_groups: tuple
    fold_groups: tuple

    def fold_split(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        """(training indices, held-out indices) for fold ``f``."""
        held = self.folds[f]
        rest = np.concatenate([self.folds[i] for i in range(len(self.folds)) if i != f])
        return np.sort(rest), held


def make_split(dataset: LabeledDataset, seed: int = 0, k: int = 5, val_fraction: float = 0.1) -> SplitPlan:
    """9:1 train/validation split and k folds, all at contact-group level."""
    groups = list(dict.fromkeys(dataset.groups()))
    if len(groups) < 10:
        raise ValueError(f"need at least 10 contact groups to split, got {len(groups)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(groups))
    n_val = max(1, int(round(len(groups) * val_fraction)))
    val_groups = tuple(groups[i] for i in sorted(order[:n_val]))
    train_perm = order[n_val:]
    fold_groups = tuple(tuple(groups[i] for i in sorted(part)) for part in np.array_split(train_perm, k))
    train_groups = tuple(groups[i] for i in sorted(train_perm))

    by_group: dict = {}
    for idx, g in enumerate(dataset.groups()):
        by_group.setdefault(g, []).append(idx)

    def indices(gs) -> np.ndarray:
        return np.array(sorted(i for g in gs for i in by_group[g]), dtype=np.int64)

    return SplitPlan(
        train_indices=indices(train_groups),
        val_indices=indices(val_groups),
        folds=tuple(indices(fg) for fg in fold_groups),
        train_groups=train_groups,
        val_groups=val_groups,
        fold_groups=fold_groups,
    )


# -- optimiser ---------------------------------------------------------------------------------
@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
               lr: float, weight_decay: float = 0.0) -> dict[str, np.ndarray]:
    """One AdamW update with bias correction; returns new arrays, advances ``state``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise nx.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        decayed = p * (1.0 - lr * weight_decay)
        out[name] = decayed - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


# -- loops ----------------------------------------------------------------------------------------
def loss_and_grads(state: ModelState, x: np.ndarray, y: np.ndarray, train: bool,
                   rng: np.random.Generator | None) -> tuple[float, dict[str, np.ndarray]]:
    params = as_param_tensors(state, requires_grad=True)
    loss = nx.cross_entropy(logits(state.spec, params, x, train, rng), y)
    loss.backward()
    return float(loss.data), {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in params.items()}


def evaluate_loss(state: ModelState, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and window accuracy in evaluation mode."""
    params = as_param_tensors(state)
    total, correct = 0.0, 0
    with nx.no_grad():
        for s in range(0, len(x), batch_size):
            z = logits(state.spec, params, x[s:s + batch_size])
            yb = y[s:s + batch_size]
            total += float(nx.cross_entropy(z, yb).data) * len(yb)
            correct += int((z.data.argmax(axis=1) == yb).sum())
    return total / len(x), correct / len(x)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float

    def log_line(self) -> str:
        return (f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
                f"val_loss={self.val_loss:.6f} val_accuracy={self.val_accuracy:.6f}")


class EarlyStopping:
    """Stop when the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _run_epoch(state: ModelState, x: np.ndarray, y: np.ndarray, config: TrainConfig, opt: AdamState,
               rng: np.random.Generator, weight_decay: float) -> float:
    order = rng.permutation(len(x))
    total = 0.0
    for s in range(0, len(order), config.batch_size):
        idx = order[s:s + config.batch_size]
        loss, grads = loss_and_grads(state, x[idx], y[idx], True, rng)
        state.parameters = adamw_step(state.parameters, grads, opt, config.learning_rate, weight_decay)
        total += loss * len(idx)
    return total / len(x)


def _weight_decay(spec: ModelSpec, config: TrainConfig) -> float:
    return config.l2_lambda


def train_final(dataset: LabeledDataset, split: SplitPlan, spec: ModelSpec, config: TrainConfig,
                on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[ModelState, list[EpochRecord]]:
    """Train on the split's training side, early-stop on validation loss, return the best snapshot."""
    x_tr, y_tr = dataset.features(split.train_indices), dataset.targets(split.train_indices)
    x_va, y_va = dataset.features(split.val_indices), dataset.targets(split.val_indices)
    state = ModelState.initialize(spec, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    opt = AdamState()
    stopper = EarlyStopping(config.early_stop_patience)
    best = state.copy()
    curve: list[EpochRecord] = []
    wd = _weight_decay(spec, config)
    for epoch in range(1, config.max_epochs + 1):
        try:
            train_loss = _run_epoch(state, x_tr, y_tr, config, opt, rng, wd)
            val_loss, val_acc = evaluate_loss(state, x_va, y_va)
        except NumericsError as exc:
            raise TrainingDivergence(epoch, str(exc)) from exc
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise TrainingDivergence(epoch, "loss is not finite")
        rec = EpochRecord(epoch, train_loss, val_loss, val_acc)
        curve.append(rec)
        log.info(rec.log_line())
        if on_epoch is not None:
            on_epoch(rec)
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = state.copy()
        if stop:
            break
    best.meta.update(best_epoch=stopper.best_epoch, epochs_run=len(curve))
    return best, curve


def train_fixed_epochs(x: np.ndarray, y: np.ndarray, spec: ModelSpec, config: TrainConfig, epochs: int) -> ModelState:
    state = ModelState.initialize(spec, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    opt = AdamState()
    wd = _weight_decay(spec, config)
    for epoch in range(1, epochs + 1):
        try:
            loss = _run_epoch(state, x, y, config, opt, rng, wd)
        except NumericsError as exc:
            raise TrainingDivergence(epoch, str(exc)) from exc
        if not np.isfinite(loss):
            raise TrainingDivergence(epoch, "loss is not finite")
    return state


# -- grid search ------------------------------------------------------------------------------------
def apply_overrides(spec: ModelSpec, config: TrainConfig, combo: dict) -> tuple[ModelSpec, TrainConfig]:
    spec_fields = {f.name for f in dataclasses.fields(spec)}
    cfg_fields = {f.name for f in dataclasses.fields(config)}
    s_kw = {k: v for k, v in combo.items() if k in spec_fields}
    c_kw = {k: v for k, v in combo.items() if k in cfg_fields and k not in spec_fields}
    unknown = set(combo) - spec_fields - cfg_fields
    if unknown:
        raise ValueError(f"unknown hyperparameters in grid: {sorted(unknown)}")
    return dataclasses.replace(spec, **s_kw), dataclasses.replace(config, **c_kw)


def grid_combinations(grid: dict) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class ComboScore:
    combination: dict
    fold_accuracies: tuple[float, ...]
    mean_accuracy: float
    diverged: bool = False


@dataclass(frozen=True)
class CVResult:
    best: dict
    scores: tuple[ComboScore, ...]


def _combo_key(combo: dict) -> tuple:
    return tuple((k, combo[k]) for k in sorted(combo))


def cross_validate(dataset: LabeledDataset, spec: ModelSpec, config: TrainConfig,
                   split: SplitPlan | None = None) -> CVResult:
    """Grid search scored by mean held-out accuracy over the k folds of the training side."""
    grid = config.grid or {}
    combos = grid_combinations(grid) if grid else [{}]
    if not combos:
        raise ValueError("hyperparameter grid is empty")
    split = split or make_split(dataset, config.seed, config.k_folds, config.val_fraction)
    x_all, y_all = dataset.features(), dataset.targets()
    scores = []
    for combo in combos:
        c_spec, c_cfg = apply_overrides(spec, config, combo)
        epochs = c_cfg.cv_epochs or c_cfg.max_epochs
        accs = []
        diverged = False
        for f in range(len(split.folds)):
            tr, held = split.fold_split(f)
            try:
                state = train_fixed_epochs(x_all[tr], y_all[tr], c_spec, c_cfg, epochs)
            except TrainingDivergence as exc:
                log.warning("combination %s diverged on fold %d: %s", combo, f, exc)
                diverged = True
                break
            _, acc = evaluate_loss(state, x_all[held], y_all[held])
            accs.append(acc)
        if diverged:
            scores.append(ComboScore(combo, tuple(accs), 0.0, True))
        else:
            scores.append(ComboScore(combo, tuple(accs), float(np.mean(accs))))
        log.info("cv %s -> %.4f", combo, scores[-1].mean_accuracy)
    best = max(scores, key=lambda s: s.mean_accuracy).mean_accuracy
    tied = [s for s in scores if s.mean_accuracy == best]
    winner = min(tied, key=lambda s: _combo_key(s.combination))
    return CVResult(dict(winner.combination), tuple(scores))
