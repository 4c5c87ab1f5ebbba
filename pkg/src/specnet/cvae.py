"""Conditional variational autoencoder for 622-channel spectrum generation.

Both the encoder and the decoder receive the 9-slot concentration vector as
the conditioning input. The decoder ends in an exponential layer, so its
output is strictly positive; the loss is the per-channel reconstruction MSE
plus the unweighted Gaussian KL divergence (a ``kl_weight`` knob exists but
defaults to the plain sum).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import (
    N_CHANNELS,
    VOC_CLASSES,
    Spectrum,
    VocClass,
    kfold_split,
    regression_target,
    to_arrays,
)
from .optim import make_optimizer
from .training import EarlyStopper, History, check_finite, minibatches

N_COND = len(VOC_CLASSES)

# Decoder shape chain: start length -> (k5,s2,p1) -> (k5,s2,p1) -> (k4,s2,p1) output.
DEC_KERNELS = (5, 5, 4)
DEC_CHANNELS = (8, 8, 1)
DEC_EMB_CHANNELS = 7  # the condition branch supplies the 8th channel


@dataclass(eq=False)
class CvaeModel:
    """Parameters and layer sizes of the conditional encoder/decoder pair."""

    params: dict
    input_length: int
    conv_channels: tuple
    latent_dim: int
    enc_cond_hidden: tuple
    enc_emb_hidden: int
    dec_emb_hidden: int
    dec_cond_hidden: tuple
    start_length: int
    enc_lengths: tuple

    @property
    def enc_flat(self):
        return self.conv_channels[-1] * self.enc_lengths[-1]

    def architecture(self):
        return {
            "kind": "cvae",
            "input_length": self.input_length,
            "conv_channels": list(self.conv_channels),
            "latent_dim": self.latent_dim,
            "enc_cond_hidden": list(self.enc_cond_hidden),
            "enc_emb_hidden": self.enc_emb_hidden,
            "dec_emb_hidden": self.dec_emb_hidden,
            "dec_cond_hidden": list(self.dec_cond_hidden),
            "dec_kernels": list(DEC_KERNELS),
            "dec_channels": list(DEC_CHANNELS),
            "n_condition_slots": N_COND,
            "mu_logvar_parallel_layers": True,
        }


def build_cvae(
    rng,
    input_length=N_CHANNELS,
    conv_channels=(16, 16, 32, 32),
    latent_dim=16,
    enc_cond_hidden=(32, 64),
    enc_emb_hidden=64,
    dec_emb_hidden=32,
    dec_cond_hidden=(32, 64),
):
    """Initialize the CVAE; asserts the encoder/decoder length chains up front."""
    lengths = [input_length]
    for _ in conv_channels:
        lengths.append(lengths[-1] // 2)
    enc_lengths = tuple(lengths[1:])

    start = (input_length - 6) // 8
    if start < 1 or 8 * start + 6 != input_length:
        raise ad.DimensionError(
            f"decoder chain needs input_length == 8*n + 6 (622 -> 77), got {input_length}"
        )
    # sanity: replay the transposed chain
    l = start
    for k in DEC_KERNELS:
        l = (l - 1) * 2 - 2 + k
    assert l == input_length, f"decoder chain lands on {l}, expected {input_length}"

    params = {}

    def he(name, shape, fan_in):
        params[name] = ad.Parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), name)

    def uniform(name, shape, bound):
        params[name] = ad.Parameter(rng.uniform(-bound, bound, size=shape), name)

    def zeros(name, shape):
        params[name] = ad.Parameter(np.zeros(shape), name)

    c_prev = 1
    for i, c in enumerate(conv_channels, start=1):
        he(f"enc_conv{i}_w", (c, c_prev, 3), c_prev * 3)
        zeros(f"enc_conv{i}_b", (c,))
        c_prev = c
    he("enc_cond_w1", (enc_cond_hidden[0], N_COND), N_COND)
    zeros("enc_cond_b1", (enc_cond_hidden[0],))
    he("enc_cond_w2", (enc_cond_hidden[1], enc_cond_hidden[0]), enc_cond_hidden[0])
    zeros("enc_cond_b2", (enc_cond_hidden[1],))
    flat = conv_channels[-1] * enc_lengths[-1]
    he("enc_emb_w1", (enc_emb_hidden, flat + enc_cond_hidden[1]), flat + enc_cond_hidden[1])
    zeros("enc_emb_b1", (enc_emb_hidden,))
    # parallel statistic heads; small init keeps the posterior near the prior at start
    uniform("enc_mu_w", (latent_dim, enc_emb_hidden), 1.0 / np.sqrt(enc_emb_hidden))
    zeros("enc_mu_b", (latent_dim,))
    uniform("enc_logv_w", (latent_dim, enc_emb_hidden), 1.0 / np.sqrt(enc_emb_hidden))
    zeros("enc_logv_b", (latent_dim,))

    he("dec_emb_w1", (dec_emb_hidden, latent_dim), latent_dim)
    zeros("dec_emb_b1", (dec_emb_hidden,))
    he("dec_emb_w2", (DEC_EMB_CHANNELS * start, dec_emb_hidden), dec_emb_hidden)
    zeros("dec_emb_b2", (DEC_EMB_CHANNELS * start,))
    he("dec_cond_w1", (dec_cond_hidden[0], N_COND), N_COND)
    zeros("dec_cond_b1", (dec_cond_hidden[0],))
    he("dec_cond_w2", (dec_cond_hidden[1], dec_cond_hidden[0]), dec_cond_hidden[0])
    zeros("dec_cond_b2", (dec_cond_hidden[1],))
    he("dec_cond_w3", (start, dec_cond_hidden[1]), dec_cond_hidden[1])
    zeros("dec_cond_b3", (start,))
    c_prev = DEC_EMB_CHANNELS + 1
    for i, (k, c) in enumerate(zip(DEC_KERNELS, DEC_CHANNELS), start=1):
        if i < len(DEC_KERNELS):
            he(f"dec_tconv{i}_w", (c_prev, c, k), c_prev * k)
        else:
            # pre-exponential layer: start near zero so exp(..) sits near one
            uniform(f"dec_tconv{i}_w", (c_prev, c, k), 0.01)
        zeros(f"dec_tconv{i}_b", (c,))
        c_prev = c

    return CvaeModel(
        params=params,
        input_length=input_length,
        conv_channels=tuple(conv_channels),
        latent_dim=latent_dim,
        enc_cond_hidden=tuple(enc_cond_hidden),
        enc_emb_hidden=enc_emb_hidden,
        dec_emb_hidden=dec_emb_hidden,
        dec_cond_hidden=tuple(dec_cond_hidden),
        start_length=start,
        enc_lengths=enc_lengths,
    )


def _encode_graph(tape, leaves, model, x, cond):
    h = x
    for i in range(1, len(model.conv_channels) + 1):
        h = ad.conv1d(h, leaves[f"enc_conv{i}_w"], leaves[f"enc_conv{i}_b"], stride=1, padding=1)
        h = ad.relu(h)
        h = ad.avg_pool1d(h, 2)
    batch = h.value.shape[0]
    flat = h.reshape((batch, model.enc_flat))
    c = ad.relu(ad.linear(cond, leaves["enc_cond_w1"], leaves["enc_cond_b1"]))
    c = ad.relu(ad.linear(c, leaves["enc_cond_w2"], leaves["enc_cond_b2"]))
    joint = ad.concat([flat, c], axis=-1)
    e = ad.relu(ad.linear(joint, leaves["enc_emb_w1"], leaves["enc_emb_b1"]))
    mu = ad.linear(e, leaves["enc_mu_w"], leaves["enc_mu_b"])
    logv = ad.linear(e, leaves["enc_logv_w"], leaves["enc_logv_b"])
    return mu, logv


def _decode_graph(tape, leaves, model, z, cond):
    batch = z.value.shape[0]
    e = ad.relu(ad.linear(z, leaves["dec_emb_w1"], leaves["dec_emb_b1"]))
    e = ad.relu(ad.linear(e, leaves["dec_emb_w2"], leaves["dec_emb_b2"]))
    e = e.reshape((batch, DEC_EMB_CHANNELS, model.start_length))
    c = ad.relu(ad.linear(cond, leaves["dec_cond_w1"], leaves["dec_cond_b1"]))
    c = ad.relu(ad.linear(c, leaves["dec_cond_w2"], leaves["dec_cond_b2"]))
    c = ad.relu(ad.linear(c, leaves["dec_cond_w3"], leaves["dec_cond_b3"]))
    c = c.reshape((batch, 1, model.start_length))
    h = ad.concat([e, c], axis=1)
    for i in range(1, len(DEC_KERNELS) + 1):
        h = ad.conv1d_transpose(h, leaves[f"dec_tconv{i}_w"], leaves[f"dec_tconv{i}_b"], stride=2, padding=1)
        if i < len(DEC_KERNELS):
            h = ad.relu(h)
    return ad.exp(h)


def _as_batch(v, width, what):
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != width:
        raise ad.DimensionError(f"{what} must have length {width}, got shape {np.asarray(v).shape}")
    return v, single


def encode(model, spectrum, condition):
    """Posterior parameters (mu, log_variance) for a spectrum under a condition."""
    x, single_x = _as_batch(spectrum, model.input_length, "spectrum")
    c, _ = _as_batch(condition, N_COND, "condition")
    if c.shape[0] != x.shape[0]:
        c = np.broadcast_to(c, (x.shape[0], N_COND))
    tape = ad.Tape()
    leaves = tape.bind(model.params)
    mu, logv = _encode_graph(tape, leaves, model, tape.leaf(x[:, None, :]), tape.leaf(c))
    if single_x:
        return mu.value[0], logv.value[0]
    return mu.value, logv.value


def reparameterize(mu, log_variance, rng=None, eps=None):
    """z = mu + exp(log_variance / 2) * eps with eps standard normal.

    All sampling happens here; pass ``eps`` explicitly to pin the noise.
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_variance = np.asarray(log_variance, dtype=np.float64)
    if eps is None:
        if rng is None:
            raise ValueError("reparameterize needs either an rng or an explicit eps")
        eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * log_variance) * np.asarray(eps)


def decode(model, z, condition):
    """Deterministic decoder: latent + condition -> strictly positive spectrum."""
    zv, single = _as_batch(z, model.latent_dim, "latent vector")
    c, _ = _as_batch(condition, N_COND, "condition")
    if c.shape[0] != zv.shape[0]:
        c = np.broadcast_to(c, (zv.shape[0], N_COND))
    tape = ad.Tape()
    leaves = tape.bind(model.params)
    recon = _decode_graph(tape, leaves, model, tape.leaf(zv), tape.leaf(c))
    out = recon.value[:, 0, :]
    return out[0] if single else out


def kl_divergence(mu, log_variance):
    """KL(N(mu, exp(log_variance)) || N(0, I)) = 0.5 * sum(mu^2 + v - 1 - log v).

    1D inputs give a float; 2D (batch) inputs give one value per row.
    """
    mu = np.asarray(mu, dtype=np.float64)
    logv = np.asarray(log_variance, dtype=np.float64)
    per = 0.5 * (mu**2 + np.exp(logv) - 1.0 - logv)
    total = per.sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def cvae_loss(x, x_recon, mu, log_variance):
    """Reconstruction MSE over channels plus the KL term, as an unweighted sum."""
    x = np.asarray(x, dtype=np.float64)
    xr = np.asarray(x_recon, dtype=np.float64)
    mse = np.mean((x - xr) ** 2, axis=-1)
    total = mse + kl_divergence(mu, log_variance)
    return float(total) if np.ndim(total) == 0 else float(np.mean(total))


@dataclass(eq=False)
class CvaeTrainResult:
    model: CvaeModel
    history: History
    val_fold: int


def _condition_matrix(spectra):
    return np.stack([regression_target(s.label, s.concentration) for s in spectra])


def _graph_loss(tape, leaves, model, x2, cond, eps, kl_weight):
    x = tape.leaf(x2[:, None, :], track=False)
    c = tape.leaf(cond, track=False)
    mu, logv = _encode_graph(tape, leaves, model, x, c)
    z = mu + ad.exp(logv * 0.5) * tape.leaf(eps, track=False)
    recon = _decode_graph(tape, leaves, model, z, c)
    resid = recon.reshape(x2.shape) - tape.leaf(x2, track=False)
    mse = (resid * resid).mean()
    inner = mu * mu + ad.exp(logv) - logv + (-1.0)
    kl = inner.sum(axis=-1).mean() * 0.5
    return mse + kl * kl_weight, mu, logv


def _val_loss(model, x2, cond, kl_weight):
    # deterministic model selection: evaluate at z = mu (noise pinned to zero)
    mu, logv = encode(model, x2, cond)
    recon = decode(model, mu, cond)
    mse = np.mean((recon - x2) ** 2)
    kl = np.mean(kl_divergence(mu, logv))
    return float(mse + kl_weight * kl)


def train_cvae(corpus, config, val_fold, train_folds=None, kl_weight=1.0):
    """Train the CVAE with fold ``val_fold`` held out for model selection.

    ``train_folds`` restricts training to those folds (default: all but
    ``val_fold``); pass an explicit subset to keep another fold untouched,
    as the augmentation pipeline does. The condition fed to both halves is
    the ground-truth regression target.
    """
    if train_folds is None:
        train_folds = [f for f in range(5) if f != val_fold]
    if val_fold in train_folds:
        raise ValueError(f"validation fold {val_fold} cannot also be a training fold")
    train_split = [s for s, f in zip(corpus.spectra, corpus.folds) if f in train_folds]
    _, val_split = kfold_split(corpus, val_fold)
    if not train_split or not val_split:
        raise ValueError("empty training or validation split for the CVAE")

    init_rng = np.random.default_rng((config.seed, val_fold, 10))
    shuffle_rng = np.random.default_rng((config.seed, val_fold, 11))
    noise_rng = np.random.default_rng((config.seed, val_fold, 12))

    model = build_cvae(init_rng)
    opt = make_optimizer(config.optimizer, model.params.values(), config.learning_rate)
    stopper = EarlyStopper(model.params, config.patience)
    history = History()

    x_tr, _, _ = to_arrays(train_split)
    c_tr = _condition_matrix(train_split)
    x_val, _, _ = to_arrays(val_split)
    c_val = _condition_matrix(val_split)
    history.initial_loss = _val_loss(model, x_val, c_val, kl_weight)

    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for idx in minibatches(len(x_tr), config.batch_size, shuffle_rng):
            eps = noise_rng.standard_normal((len(idx), model.latent_dim))
            tape = ad.Tape()
            leaves = tape.bind(model.params)
            total, _, _ = _graph_loss(tape, leaves, model, x_tr[idx], c_tr[idx], eps, kl_weight)
            check_finite(total.value, epoch, "CVAE training")
            ad.backward(tape, total)
            for name, p in model.params.items():
                p.grad = leaves[name].grad
            opt.step()
            epoch_loss += float(total.value) * len(idx)
        history.train_loss.append(epoch_loss / len(x_tr))
        val_loss = _val_loss(model, x_val, c_val, kl_weight)
        check_finite(val_loss, epoch, "CVAE validation")
        history.val_loss.append(val_loss)
        if stopper.update(epoch, val_loss):
            break
    stopper.restore()
    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best
    return CvaeTrainResult(model=model, history=history, val_fold=val_fold)


def generate_many(model, voc, concentrations, rng):
    """Decode one prior draw per requested concentration; returns Spectrum list."""
    conc = np.asarray(concentrations, dtype=np.float64)
    if conc.ndim != 1 or len(conc) < 1:
        raise ValueError(f"need a 1D non-empty concentration array, got shape {conc.shape}")
    if np.any(conc < 0):
        raise ValueError("concentrations must be non-negative")
    if voc is VocClass.AIR and np.any(conc != 0):
        raise ValueError("air can only be generated at zero concentration")
    cond = np.stack([regression_target(voc, c) for c in conc])
    z = rng.standard_normal((len(conc), model.latent_dim))
    spectra = decode(model, z, cond)
    return [
        Spectrum(row, voc, float(c), provenance="cvae_generated")
        for row, c in zip(spectra, conc)
    ]


def generate(model, voc, concentration, n, rng):
    """Draw ``n`` spectra for (class, concentration) from the standard-normal prior.

    Conditions may lie anywhere in the training range, including concentrations
    never seen discretely (interpolation happens in condition space).
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return generate_many(model, voc, np.full(n, float(concentration)), rng)
