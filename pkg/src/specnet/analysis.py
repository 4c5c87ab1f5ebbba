"""Metrics, nonparametric model comparison, and Abs-CAM saliency extraction."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import autodiff as ad
from .datasets import CLASS_ORDER, VOC_SLOT, VocClass, one_hot, regression_target
from .discriminator import LOG_CLAMP, _graph_forward, predict_arrays


class DegenerateDataError(ValueError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


# -- scalar metrics ------------------------------------------------------------


def r2_score(y_true, y_pred):
    """Coefficient of determination: 1 - SS_res / SS_tot; 1 is perfect, 0 the mean predictor."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or yt.ndim != 1 or len(yt) < 2:
        raise ValueError(f"need two equal-length 1D arrays of >= 2 values, got {yt.shape} and {yp.shape}")
    ss_tot = np.sum((yt - yt.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateDataError("r2_score is undefined when all true values are identical")
    return float(1.0 - np.sum((yt - yp) ** 2) / ss_tot)


def accuracy(pred_classes, true_classes):
    """Fraction of correct class predictions."""
    p = np.asarray(pred_classes)
    t = np.asarray(true_classes)
    if p.shape != t.shape or len(p) == 0:
        raise ValueError(f"need equal-length non-empty arrays, got {p.shape} and {t.shape}")
    return float(np.mean(p == t))


def mse(y_true, y_pred):
    """Mean squared residual between scalar concentration pairs (ppm^2)."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or len(yt) == 0:
        raise ValueError(f"need equal-length non-empty arrays, got {yt.shape} and {yp.shape}")
    return float(np.mean((yt - yp) ** 2))


def per_class_mse(true_classes, y_true, y_pred):
    """MSE grouped by true class; returns {VocClass: mse} for classes present."""
    tc = np.asarray(true_classes)
    out = {}
    for voc in CLASS_ORDER:
        sel = tc == voc.index
        if np.any(sel):
            out[voc] = mse(np.asarray(y_true)[sel], np.asarray(y_pred)[sel])
    return out


def per_class_r2(true_classes, y_true, y_pred):
    """R^2 grouped by true class, skipping classes where it is undefined."""
    tc = np.asarray(true_classes)
    out = {}
    for voc in CLASS_ORDER:
        sel = tc == voc.index
        if np.sum(sel) >= 2:
            yt = np.asarray(y_true)[sel]
            if np.ptp(yt) > 0:
                out[voc] = r2_score(yt, np.asarray(y_pred)[sel])
    return out


# -- rank statistics -----------------------------------------------------------


def _check_groups(groups):
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2 or any(len(g) == 0 for g in groups):
        raise ValueError("need at least 2 groups with at least 1 observation each")
    if sum(len(g) for g in groups) < 3:
        raise ValueError("need at least 3 observations in total")
    return groups


def _tie_term(pooled):
    """Sum of t^3 - t over tie groups of the pooled sample."""
    _, counts = np.unique(pooled, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def kruskal_wallis(groups):
    """Kruskal-Wallis omnibus test with tie correction.

    Returns (H, p) with p taken from the chi-squared survival function with
    k - 1 degrees of freedom. H is invariant under strictly monotone
    transforms of the observations (only ranks enter).
    """
    groups = _check_groups(groups)
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = stats.rankdata(pooled)
    tie = _tie_term(pooled)
    correction = 1.0 - tie / (n**3 - n)
    if correction == 0.0:
        raise DegenerateDataError("all observations are identical; the H statistic is degenerate")
    h = 12.0 / (n * (n + 1))
    offset = 0
    acc = 0.0
    for g in groups:
        r = ranks[offset : offset + len(g)]
        acc += r.sum() ** 2 / len(g)
        offset += len(g)
    h = (h * acc - 3.0 * (n + 1)) / correction
    p = float(stats.chi2.sf(h, len(groups) - 1))
    return float(h), p


@dataclass(eq=False)
class SignificanceMatrix:
    """Pairwise p-values with significance flags at a fixed alpha."""

    names: list
    p_values: np.ndarray
    significant: np.ndarray
    alpha: float
    adjustment: str = "none"

    def pair(self, a, b):
        i, j = self.names.index(a), self.names.index(b)
        return float(self.p_values[i, j]), bool(self.significant[i, j])


def _adjust_pvalues(p_flat, method):
    p_flat = np.asarray(p_flat, dtype=np.float64)
    m = len(p_flat)
    if method == "none" or m == 0:
        return p_flat
    if method == "bonferroni":
        return np.minimum(p_flat * m, 1.0)
    if method == "holm":
        order = np.argsort(p_flat)
        adjusted = np.empty(m)
        running = 0.0
        for rank, idx in enumerate(order):
            running = max(running, (m - rank) * p_flat[idx])
            adjusted[idx] = min(running, 1.0)
        return adjusted
    raise ValueError(f"unknown p-value adjustment {method!r} (expected none, bonferroni or holm)")


def dunn_posthoc(groups, alpha=0.05, names=None, adjust="none"):
    """Dunn's pairwise post-hoc test on mean ranks with tie-corrected variance.

    Two-sided p-values are unadjusted by default (bonferroni/holm available).
    """
    groups = _check_groups(groups)
    k = len(groups)
    if names is None:
        names = [f"group{i}" for i in range(k)]
    if len(names) != k:
        raise ValueError(f"{len(names)} names for {k} groups")
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = stats.rankdata(pooled)
    tie = _tie_term(pooled)
    if n > 1 and tie >= n**3 - n:
        raise DegenerateDataError("all observations are identical; mean ranks are degenerate")
    mean_ranks = []
    offset = 0
    for g in groups:
        mean_ranks.append(ranks[offset : offset + len(g)].mean())
        offset += len(g)
    variance_base = n * (n + 1) / 12.0 - tie / (12.0 * (n - 1))
    p = np.ones((k, k))
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    raw = []
    for i, j in pairs:
        se = np.sqrt(variance_base * (1.0 / len(groups[i]) + 1.0 / len(groups[j])))
        z = 0.0 if se == 0 else (mean_ranks[i] - mean_ranks[j]) / se
        raw.append(2.0 * stats.norm.sf(abs(z)))
    adjusted = _adjust_pvalues(raw, adjust)
    for (i, j), pv in zip(pairs, adjusted):
        p[i, j] = p[j, i] = pv
    significant = p < alpha
    np.fill_diagonal(significant, False)
    return SignificanceMatrix(list(names), p, significant, alpha, adjustment=adjust)


# -- saliency ------------------------------------------------------------------


@dataclass(eq=False)
class SaliencyMap:
    """Max-normalized per-channel relevance; ``degenerate`` marks an all-zero map."""

    values: np.ndarray
    degenerate: bool = False


def abs_cam(model, spectrum):
    """Abs-CAM saliency for one spectrum, length-matched to the model input.

    The last conv stack output's feature maps are weighted by the mean
    absolute gradient of the composite loss, evaluated against the model's own
    hardened prediction (argmax class, clipped slot concentration), summed over
    channels, linearly upsampled, and max-normalized.
    """
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape != (model.input_length,):
        raise ad.DimensionError(f"expected a spectrum of length {model.input_length}, got shape {x.shape}")
    tape = ad.Tape()
    leaves = tape.bind(model.params)
    probs, conc, feats = _graph_forward(tape, leaves, model, tape.leaf(x[None, None, :], track=False), False, None)
    pred_idx = int(np.argmax(probs.value[0]))
    voc = CLASS_ORDER[pred_idx]
    pred_conc = 0.0 if voc is VocClass.AIR else max(float(conc.value[0, VOC_SLOT[voc]]), 0.0)
    target = tape.leaf(regression_target(voc, pred_conc)[None, :], track=False)
    onehot = tape.leaf(one_hot(voc)[None, :], track=False)
    resid = conc - target
    total = (resid * resid).mean() + (-(onehot * ad.clamped_log(probs, LOG_CLAMP)).sum(axis=-1)).mean()
    ad.backward(tape, total)
    weights = np.abs(feats.grad[0]).mean(axis=1)  # per-channel mean |dL/da|
    cam = (weights[:, None] * np.abs(feats.value[0])).sum(axis=0)
    n_src, n_dst = len(cam), model.input_length
    up = np.interp(np.linspace(0.0, n_src - 1, n_dst), np.arange(n_src), cam)
    peak = up.max()
    if peak <= 0.0:
        return SaliencyMap(np.zeros(n_dst), degenerate=True)
    return SaliencyMap(up / peak, degenerate=False)


# -- fold-level reporting --------------------------------------------------------


@dataclass(eq=False)
class ClassMetrics:
    """Per-class scores: pooled over all held-out predictions, plus fold spread."""

    r2_pooled: float | None
    mse_pooled: float | None
    r2_fold_mean: float | None = None
    r2_fold_se: float | None = None
    mse_fold_mean: float | None = None
    mse_fold_se: float | None = None


@dataclass(eq=False)
class MetricReport:
    """Scores as (mean, standard error) over folds, plus per-fold raw values."""

    accuracy_mean: float
    accuracy_se: float
    overall_mse_mean: float
    overall_mse_se: float
    per_class: dict
    fold_accuracy: list = field(default_factory=list)
    fold_mse: list = field(default_factory=list)
    n_folds: int = 0


def _mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return None, None
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


@dataclass(eq=False)
class FoldEval:
    """Predictions of one model on one evaluation set."""

    true_classes: np.ndarray
    pred_classes: np.ndarray
    true_conc: np.ndarray
    pred_conc: np.ndarray


def evaluate_spectra(model, spectra):
    """Run a model over spectra and collect the prediction arrays."""
    x = np.stack([s.absorbance for s in spectra])
    true_classes = np.array([s.label.index for s in spectra], dtype=np.int64)
    true_conc = np.array([s.concentration for s in spectra])
    _, _, pred_idx, pred_conc = predict_arrays(model, x)
    return FoldEval(true_classes, pred_idx, true_conc, pred_conc)


def metric_report(fold_evals):
    """Aggregate per-fold evaluations into a MetricReport.

    Per-class values are primarily pooled over all folds (a starved class may
    contribute too few spectra per fold for a fold-wise score); fold-wise
    mean and standard error are attached where at least one fold defines them.
    """
    fold_acc = [accuracy(e.pred_classes, e.true_classes) for e in fold_evals]
    fold_mse = [mse(e.true_conc, e.pred_conc) for e in fold_evals]
    acc_m, acc_se = _mean_se(fold_acc)
    mse_m, mse_se = _mean_se(fold_mse)

    pooled = FoldEval(
        np.concatenate([e.true_classes for e in fold_evals]),
        np.concatenate([e.pred_classes for e in fold_evals]),
        np.concatenate([e.true_conc for e in fold_evals]),
        np.concatenate([e.pred_conc for e in fold_evals]),
    )
    pooled_r2 = per_class_r2(pooled.true_classes, pooled.true_conc, pooled.pred_conc)
    pooled_mse = per_class_mse(pooled.true_classes, pooled.true_conc, pooled.pred_conc)

    per_class = {}
    for voc in CLASS_ORDER:
        fold_r2 = []
        fold_cls_mse = []
        for e in fold_evals:
            r2s = per_class_r2(e.true_classes, e.true_conc, e.pred_conc)
            mses = per_class_mse(e.true_classes, e.true_conc, e.pred_conc)
            if voc in r2s:
                fold_r2.append(r2s[voc])
            if voc in mses:
                fold_cls_mse.append(mses[voc])
        if voc not in pooled_mse:
            continue
        r2_fm, r2_fse = _mean_se(fold_r2)
        mse_fm, mse_fse = _mean_se(fold_cls_mse)
        per_class[voc] = ClassMetrics(
            r2_pooled=pooled_r2.get(voc),
            mse_pooled=pooled_mse.get(voc),
            r2_fold_mean=r2_fm,
            r2_fold_se=r2_fse,
            mse_fold_mean=mse_fm,
            mse_fold_se=mse_fse,
        )
    return MetricReport(
        accuracy_mean=acc_m,
        accuracy_se=acc_se,
        overall_mse_mean=mse_m,
        overall_mse_se=mse_se,
        per_class=per_class,
        fold_accuracy=fold_acc,
        fold_mse=fold_mse,
        n_folds=len(fold_evals),
    )


def evaluate_fold_models(corpus, results):
    """Held-out protocol: each fold's model scores its own validation fold."""
    from .datasets import kfold_split

    evals = []
    for r in results:
        _, val = kfold_split(corpus, r.fold)
        evals.append(evaluate_spectra(r.model, val))
    return metric_report(evals)


def evaluate_on(models, spectra):
    """Common-test-set protocol: every model scores the same spectra."""
    return metric_report([evaluate_spectra(m, spectra) for m in models])


# -- serialization ---------------------------------------------------------------


def report_to_dict(report):
    return {
        "accuracy": {"mean": report.accuracy_mean, "se": report.accuracy_se},
        "overall_mse_ppm2": {"mean": report.overall_mse_mean, "se": report.overall_mse_se},
        "fold_accuracy": list(report.fold_accuracy),
        "fold_mse_ppm2": list(report.fold_mse),
        "n_folds": report.n_folds,
        "per_class": {
            voc.label: {
                "r2_pooled": cm.r2_pooled,
                "mse_pooled_ppm2": cm.mse_pooled,
                "r2_fold_mean": cm.r2_fold_mean,
                "r2_fold_se": cm.r2_fold_se,
                "mse_fold_mean": cm.mse_fold_mean,
                "mse_fold_se": cm.mse_fold_se,
            }
            for voc, cm in report.per_class.items()
        },
    }


def write_report_json(path, report, extra=None):
    doc = report_to_dict(report)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "class", "mean", "stderr", "pooled"])
        w.writerow(["accuracy", "", report.accuracy_mean, report.accuracy_se, ""])
        w.writerow(["overall_mse_ppm2", "", report.overall_mse_mean, report.overall_mse_se, ""])
        for voc, cm in report.per_class.items():
            w.writerow(["r2", voc.label, cm.r2_fold_mean, cm.r2_fold_se, cm.r2_pooled])
            w.writerow(["mse_ppm2", voc.label, cm.mse_fold_mean, cm.mse_fold_se, cm.mse_pooled])


def significance_to_dict(sig, omnibus=None):
    doc = {
        "names": list(sig.names),
        "alpha": sig.alpha,
        "adjustment": sig.adjustment,
        "p_values": sig.p_values.tolist(),
        "significant": sig.significant.tolist(),
    }
    if omnibus is not None:
        doc["kruskal_wallis"] = {"H": omnibus[0], "p": omnibus[1]}
    return doc


def write_significance_csv(path, sig):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_a", "model_b", "p_value", "significant"])
        for i, a in enumerate(sig.names):
            for j, b in enumerate(sig.names):
                if j > i:
                    w.writerow([a, b, repr(float(sig.p_values[i, j])), str(bool(sig.significant[i, j])).lower()])
