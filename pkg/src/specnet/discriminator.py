"""Two-head convolutional network: 10-way classification plus 9-slot regression.

A shared conv stack (two kernel-3 convolutions, each followed by average
pooling) feeds two separate MLP heads. The composite training loss is the
plain sum of the regression MSE (slot-averaged, raw ppm) and the classifier
cross-entropy; ppm units mean the MSE term dominates early training, which is
left uncompensated on purpose.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import (
    CLASS_ORDER,
    VOC_CLASSES,
    VOC_SLOT,
    N_CHANNELS,
    VocClass,
    kfold_split,
    one_hot,
    regression_target,
    to_arrays,
)
from .optim import make_optimizer
from .training import EarlyStopper, History, TrainConfig, check_finite, minibatches

LOG_CLAMP = 1e-12


@dataclass(eq=False)
class DiscriminatorModel:
    """Parameter set and layer sizes of the two-head network."""

    params: dict
    input_length: int
    conv_channels: tuple
    kernel_size: int
    pool_window: int
    hidden: tuple
    dropout_p: float
    feature_length: int

    @property
    def flat_features(self):
        return self.conv_channels[1] * self.feature_length

    def architecture(self):
        """Canonical architecture description (hashed into checkpoints)."""
        return {
            "kind": "discriminator",
            "input_length": self.input_length,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "pool_window": self.pool_window,
            "hidden": list(self.hidden),
            "dropout_p": self.dropout_p,
            "n_classes": len(CLASS_ORDER),
            "n_regression_slots": len(VOC_CLASSES),
            "class_order": [c.label for c in CLASS_ORDER],
        }


def build_discriminator(rng, input_length=N_CHANNELS, conv_channels=(3, 3), hidden=(256, 64), dropout_p=0.5):
    """Initialize the network: He-scaled hidden layers, small-uniform output layers."""
    kernel, pool = 3, 2
    feature_length = (input_length // pool) // pool
    flat = conv_channels[1] * feature_length
    params = {}

    def he(name, shape, fan_in):
        params[name] = ad.Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), name)

    def small_uniform(name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = ad.Parameter(rng.uniform(-bound, bound, size=shape), name)

    def zeros(name, shape):
        params[name] = ad.Parameter(np.zeros(shape), name)

    he("conv1_w", (conv_channels[0], 1, kernel), 1 * kernel)
    zeros("conv1_b", (conv_channels[0],))
    he("conv2_w", (conv_channels[1], conv_channels[0], kernel), conv_channels[0] * kernel)
    zeros("conv2_b", (conv_channels[1],))
    for head, n_out in (("cls", len(CLASS_ORDER)), ("reg", len(VOC_CLASSES))):
        he(f"{head}_w1", (hidden[0], flat), flat)
        zeros(f"{head}_b1", (hidden[0],))
        he(f"{head}_w2", (hidden[1], hidden[0]), hidden[0])
        zeros(f"{head}_b2", (hidden[1],))
        small_uniform(f"{head}_w3", (n_out, hidden[1]), hidden[1])
        zeros(f"{head}_b3", (n_out,))
    return DiscriminatorModel(
        params=params,
        input_length=input_length,
        conv_channels=tuple(conv_channels),
        kernel_size=kernel,
        pool_window=pool,
        hidden=tuple(hidden),
        dropout_p=dropout_p,
        feature_length=feature_length,
    )


def _graph_forward(tape, leaves, model, x, training, rng):
    """Build the forward graph; returns (probs, conc, conv_features)."""
    h = ad.conv1d(x, leaves["conv1_w"], leaves["conv1_b"], stride=1, padding=1)
    h = ad.relu(h)
    h = ad.avg_pool1d(h, model.pool_window)
    h = ad.conv1d(h, leaves["conv2_w"], leaves["conv2_b"], stride=1, padding=1)
    h = ad.relu(h)
    feats = ad.avg_pool1d(h, model.pool_window)
    batch = feats.value.shape[0] if feats.value.ndim == 3 else None
    flat_shape = (batch, model.flat_features) if batch is not None else (model.flat_features,)
    flat = feats.reshape(flat_shape)

    def head(prefix):
        z = ad.relu(ad.linear(flat, leaves[f"{prefix}_w1"], leaves[f"{prefix}_b1"]))
        z = ad.dropout(z, model.dropout_p, rng, training)
        z = ad.relu(ad.linear(z, leaves[f"{prefix}_w2"], leaves[f"{prefix}_b2"]))
        z = ad.dropout(z, model.dropout_p, rng, training)
        return ad.linear(z, leaves[f"{prefix}_w3"], leaves[f"{prefix}_b3"])

    probs = ad.softmax(head("cls"))
    conc = head("reg")
    return probs, conc, feats


def _as_model_input(model, spectrum):
    v = np.asarray(spectrum, dtype=np.float64)
    if v.ndim == 1:
        if v.shape != (model.input_length,):
            raise ad.DimensionError(f"expected a spectrum of length {model.input_length}, got shape {v.shape}")
        return v[None, :]
    if v.ndim == 2 and v.shape[1] == model.input_length:
        return v
    raise ad.DimensionError(f"expected (B, {model.input_length}) spectra, got shape {v.shape}")


def forward(model, spectrum, training=False, rng=None):
    """Evaluate the network on one spectrum (622,) or a batch (B, 622).

    Deterministic in eval mode; ``rng`` is required when training (dropout).
    """
    if training and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    x2 = _as_model_input(model, spectrum)
    single = np.asarray(spectrum).ndim == 1
    tape = ad.Tape()
    leaves = tape.bind(model.params)
    probs, conc, _ = _graph_forward(tape, leaves, model, tape.leaf(x2[:, None, :]), training, rng)
    if single:
        return probs.value[0], conc.value[0]
    return probs.value, conc.value


def loss(class_probs, conc_vector, true_class_onehot, true_conc_target):
    """Composite loss: slot-averaged regression MSE plus clamped cross-entropy."""
    p = np.asarray(class_probs, dtype=np.float64)
    c = np.asarray(conc_vector, dtype=np.float64)
    y = np.asarray(true_class_onehot, dtype=np.float64)
    t = np.asarray(true_conc_target, dtype=np.float64)
    mse = np.mean((c - t) ** 2)
    ce = -np.sum(y * np.log(np.maximum(p, LOG_CLAMP)), axis=-1)
    return float(mse + np.mean(ce))


@dataclass(eq=False)
class Prediction:
    """Hardened model output for one spectrum."""

    class_probs: np.ndarray
    conc_vector: np.ndarray
    predicted_class: VocClass
    predicted_concentration: float


def predict_arrays(model, x):
    """Batch prediction: returns (probs, conc_vectors, class_indices, concentrations)."""
    probs, conc = forward(model, x)
    pred_idx = np.argmax(probs, axis=-1)  # ties resolve to the lowest index
    pred_conc = np.zeros(len(pred_idx))
    for i, ci in enumerate(pred_idx):
        voc = CLASS_ORDER[ci]
        if voc is not VocClass.AIR:
            pred_conc[i] = max(conc[i, VOC_SLOT[voc]], 0.0)
    return probs, conc, pred_idx, pred_conc


def predict(model, spectrum):
    """Single-spectrum prediction with the argmax/clipping contract applied."""
    probs, conc, idx, pc = predict_arrays(model, np.asarray(spectrum)[None, :])
    return Prediction(probs[0], conc[0], CLASS_ORDER[int(idx[0])], float(pc[0]))


@dataclass(eq=False)
class TrainResult:
    model: DiscriminatorModel
    history: History
    fold: int


def _eval_loss(model, x, onehots, targets):
    probs, conc = forward(model, x)
    return loss(probs, conc, onehots, targets)


def _encode_targets(spectra):
    x, _, _ = to_arrays(spectra)
    onehots = np.stack([one_hot(s.label) for s in spectra])
    targets = np.stack([regression_target(s.label, s.concentration) for s in spectra])
    return x, onehots, targets


def train(corpus, fold, config, augment_fn=None, hidden=(256, 64)):
    """Train one fold rotation; returns the best-validation parameter snapshot.

    ``augment_fn(train_split, rng) -> list[Spectrum]`` builds the epoch view,
    re-invoked every epoch (pass None to train on the plain split). All
    randomness derives from (config.seed, fold).
    """
    train_split, val_split = kfold_split(corpus, fold)
    missing = {s.label for s in corpus.spectra} - {s.label for s in train_split}
    if missing:
        raise ValueError(
            f"train split for fold {fold} has no spectra for: {', '.join(sorted(c.label for c in missing))}"
        )

    init_rng = np.random.default_rng((config.seed, fold, 0))
    shuffle_rng = np.random.default_rng((config.seed, fold, 1))
    dropout_rng = np.random.default_rng((config.seed, fold, 2))
    augment_rng = np.random.default_rng((config.seed, fold, 3))

    model = build_discriminator(init_rng, hidden=hidden)
    opt = make_optimizer(config.optimizer, model.params.values(), config.learning_rate)
    stopper = EarlyStopper(model.params, config.patience)
    history = History()

    x_val, oh_val, tg_val = _encode_targets(val_split)
    x_plain, oh_plain, tg_plain = _encode_targets(train_split)
    history.initial_loss = _eval_loss(model, x_plain, oh_plain, tg_plain)

    for epoch in range(config.epochs):
        if augment_fn is not None:
            x_tr, oh_tr, tg_tr = _encode_targets(augment_fn(train_split, augment_rng))
        else:
            x_tr, oh_tr, tg_tr = x_plain, oh_plain, tg_plain
        epoch_loss = 0.0
        for idx in minibatches(len(x_tr), config.batch_size, shuffle_rng):
            tape = ad.Tape()
            leaves = tape.bind(model.params)
            x = tape.leaf(x_tr[idx][:, None, :], track=False)
            probs, conc, _ = _graph_forward(tape, leaves, model, x, True, dropout_rng)
            resid = conc - tape.leaf(tg_tr[idx], track=False)
            mse = (resid * resid).mean()
            ce = (-(tape.leaf(oh_tr[idx], track=False) * ad.clamped_log(probs, LOG_CLAMP)).sum(axis=-1)).mean()
            total = mse + ce
            check_finite(total.value, epoch, "training")
            ad.backward(tape, total)
            for name, p in model.params.items():
                p.grad = leaves[name].grad
            opt.step()
            epoch_loss += float(total.value) * len(idx)
        history.train_loss.append(epoch_loss / len(x_tr))
        val_loss = _eval_loss(model, x_val, oh_val, tg_val)
        check_finite(val_loss, epoch, "validation")
        history.val_loss.append(val_loss)
        if stopper.update(epoch, val_loss):
            break
    stopper.restore()
    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best
    return TrainResult(model=model, history=history, fold=fold)


def train_folds(corpus, config, augment_fn=None, hidden=(256, 64)):
    """Rotate the validation fold 0..4; returns one TrainResult per fold."""
    return [train(corpus, fold, config, augment_fn=augment_fn, hidden=hidden) for fold in range(5)]
