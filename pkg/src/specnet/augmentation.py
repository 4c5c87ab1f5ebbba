"""Enhanced training regimes: per-epoch oversampling and CVAE-synthetic augmentation.

Both regimes rebuild the augmented epoch view every epoch. The synthetic
regime draws concentrations uniformly within each class's range in the
original training split, so augmentation never leaves the observed ranges,
and uses one CVAE per fold, trained with that fold excluded, so no
validation spectrum ever influences an epoch view.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import accuracy, evaluate_fold_models, evaluate_spectra, mse
from .cvae import generate_many, train_cvae
from .datasets import CLASS_ORDER, VocClass, kfold_split
from .discriminator import train

AUGMENT_GRID = (10, 20, 50, 100, 150, 200)
MODES = ("oversample", "synthetic")


@dataclass
class AugmentPlan:
    """One enhanced-training configuration."""

    mode: str
    per_class_count: int
    seed: int
    reshuffle_each_epoch: bool = True
    cvae_checkpoint: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.per_class_count not in AUGMENT_GRID:
            raise ValueError(f"per_class_count must be in {AUGMENT_GRID}, got {self.per_class_count}")
        if not self.reshuffle_each_epoch:
            raise ValueError("epoch views are always re-randomized; reshuffle_each_epoch must stay true")


def _classes_of(spectra):
    present = {s.label for s in spectra}
    return [c for c in CLASS_ORDER if c in present]


def oversample_epoch(train_split, per_class_count, rng, classes=None):
    """Train split plus ``per_class_count`` repeated (exact-copy) spectra per class."""
    if classes is None:
        classes = _classes_of(train_split)
    by_class = {c: [s for s in train_split if s.label is c] for c in classes}
    for c in classes:
        if not by_class[c]:
            raise ValueError(f"cannot oversample: class {c.label} has no spectra in the training split")
    epoch = list(train_split)
    if per_class_count == 0:
        return epoch
    for c in classes:
        members = by_class[c]
        picks = rng.integers(0, len(members), size=per_class_count)
        epoch.extend(members[i] for i in picks)
    return epoch


def synthetic_epoch(train_split, cvae_model, per_class_count, rng, classes=None):
    """Train split plus fresh CVAE draws per class, concentrations within the split's ranges."""
    if cvae_model is None:
        raise ValueError("synthetic augmentation needs a trained CVAE for this fold")
    if classes is None:
        classes = _classes_of(train_split)
    epoch = list(train_split)
    if per_class_count == 0:
        return epoch
    for c in classes:
        concs = [s.concentration for s in train_split if s.label is c]
        if not concs:
            raise ValueError(f"cannot synthesize: class {c.label} has no spectra in the training split")
        if c is VocClass.AIR:
            draws = np.zeros(per_class_count)
        else:
            draws = rng.uniform(min(concs), max(concs), size=per_class_count)
        epoch.extend(generate_many(cvae_model, c, draws, rng))
    return epoch


def make_augment_fn(mode, per_class_count, cvae_model=None, classes=None):
    """Bind a regime into the ``augment_fn(train_split, rng)`` hook used by train()."""
    if mode == "oversample":
        return lambda split, rng: oversample_epoch(split, per_class_count, rng, classes=classes)
    if mode == "synthetic":
        if cvae_model is None:
            raise ValueError("synthetic mode needs a CVAE model (one per fold, trained without that fold)")
        return lambda split, rng: synthetic_epoch(split, cvae_model, per_class_count, rng, classes=classes)
    raise ValueError(f"unknown augmentation mode {mode!r}")


def train_fold_cvaes(corpus, config):
    """One CVAE per discriminator fold, each trained with that fold fully excluded.

    Fold f's CVAE trains on the folds other than {f, (f+1) % 5} and early-stops
    on (f+1) % 5, so fold f's spectra never touch it.
    """
    cvaes = []
    for fold in range(5):
        val_fold = (fold + 1) % 5
        train_folds = [f for f in range(5) if f not in (fold, val_fold)]
        cvaes.append(train_cvae(corpus, config, val_fold, train_folds=train_folds).model)
    return cvaes


@dataclass(eq=False)
class SweepRow:
    mode: str
    per_class_count: int
    fold: int
    validation_mse: float
    validation_accuracy: float


@dataclass(eq=False)
class EnhancedResult:
    mode: str
    rows: list
    selected_count: int
    results: list  # TrainResult per fold at the selected count
    report: object  # MetricReport over the selected models' validation folds
    grid: tuple = field(default=AUGMENT_GRID)


def _cell_seed(seed, mode, count):
    mode_id = MODES.index(mode)
    return int(np.random.SeedSequence((seed, mode_id, count)).generate_state(1)[0])


def train_enhanced(corpus, mode, config, cvaes=None, grid=AUGMENT_GRID, hidden=(256, 64)):
    """Sweep augmentation sizes, 5 fold-rotated models per size.

    Picks the size minimizing the mean validation MSE over folds and returns
    those five models with the full sweep table. ``cvaes`` (5 per-fold models
    from train_fold_cvaes) is required in synthetic mode.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "synthetic":
        if cvaes is None or len(cvaes) != 5:
            raise ValueError(
                "synthetic mode needs 5 per-fold CVAEs (run train_fold_cvaes or "
                "pass --cvae-checkpoints on the command line)"
            )
    classes = _classes_of(corpus.spectra)
    rows = []
    best = None  # (mean_mse, count, results)
    for count in grid:
        cell_config = replace(config, seed=_cell_seed(config.seed, mode, count))
        results = []
        fold_mses = []
        for fold in range(5):
            fn = make_augment_fn(mode, count, cvae_model=cvaes[fold] if cvaes else None, classes=classes)
            try:
                res = train(corpus, fold, cell_config, augment_fn=fn, hidden=hidden)
            except Exception as e:
                raise type(e)(f"(mode={mode}, count={count}, fold={fold}) {e}") from e
            results.append(res)
            _, val = kfold_split(corpus, fold)
            ev = evaluate_spectra(res.model, val)
            v_mse = mse(ev.true_conc, ev.pred_conc)
            v_acc = accuracy(ev.pred_classes, ev.true_classes)
            rows.append(SweepRow(mode, count, fold, v_mse, v_acc))
            fold_mses.append(v_mse)
        mean_mse = float(np.mean(fold_mses))
        if best is None or mean_mse < best[0]:
            best = (mean_mse, count, results)
    _, selected_count, selected_results = best
    report = evaluate_fold_models(corpus, selected_results)
    return EnhancedResult(mode=mode, rows=rows, selected_count=selected_count, results=selected_results, report=report)
