"""Experiment pipelines built on the influence scores.

Ranks use 0 for the strongest proponent.  A sample tied with others on its
score is ranked behind them, so a tie at the top never counts as a top-1 hit.
"""

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import svg
from .datakit import Dataset
from .density import (
    KdeEstimator,
    KnnEstimator,
    kde_logdensity,
    knn_logdensity,
    wsgmm_assign,
    wsgmm_fit,
    wsgmm_logdensity,
)
from .errors import DegenerateInputError, ValidationError
from .influence_classical import influence_matrix, self_influences as classical_self_influences
from .neuralvae import encode
from .tracin import ScoreConfig, score_matrix

__all__ = [
    "DetectionCurve",
    "RankStats",
    "detection_curve",
    "descending_order",
    "rank_of",
    "sanity_self_top1",
    "blend_sanity",
    "selfinf_loss_regression",
    "rank_stats",
    "classic_figure_suite",
    "write_curve_csv",
]


def descending_order(scores):
    """Indices sorted by decreasing score; ties keep index order."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def rank_of(scores, j):
    """Number of entries scoring at least as high as entry ``j`` (excluding ``j``)."""
    scores = np.asarray(scores)
    return int(np.sum(scores >= scores[j]) - 1)


# --- detection curve ---------------------------------------------------------


@dataclass(frozen=True)
class DetectionCurve:
    fraction_checked: np.ndarray
    fraction_found: np.ndarray
    auc: float

    def __post_init__(self):
        x, y = self.fraction_checked, self.fraction_found
        if x.shape != y.shape or np.any(np.diff(x) < 0) or np.any(np.diff(y) < 0):
            raise ValidationError("detection curve must be monotone")


def detection_curve(self_scores, is_extra) -> DetectionCurve:
    """Fraction of extras found against fraction of samples checked.

    Samples are checked in decreasing self-influence (ties by index).  The
    curve starts at (0, 0) and has one point per checked sample; AUC is the
    trapezoid rule over those points.
    """
    s = np.asarray(self_scores, dtype=np.float64)
    mask = np.asarray(is_extra, dtype=bool)
    if s.shape != mask.shape or s.ndim != 1:
        raise ValidationError("scores and mask must be 1-D of equal length")
    n_extra = int(mask.sum())
    if n_extra == 0:
        raise DegenerateInputError("no extra samples to detect")
    order = descending_order(s)
    found = np.concatenate([[0], np.cumsum(mask[order])]) / n_extra
    checked = np.arange(len(s) + 1) / len(s)
    return DetectionCurve(checked, found, float(np.trapezoid(found, checked)))


def write_curve_csv(curve: DetectionCurve, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fraction_checked", "fraction_found"])
        for x, y in zip(curve.fraction_checked, curve.fraction_found):
            w.writerow([repr(float(x)), repr(float(y))])


# --- sanity checks -----------------------------------------------------------


def sanity_self_top1(checkpoints, trainset: Dataset, subset_size, cfg: ScoreConfig, sample_ids=None, threads=1, return_scores=False):
    """Fraction of probed training samples that are their own unique strongest proponent.

    The probe set is the ``subset_size`` samples with the smallest ids
    (the first rows when ids are positional).  With
    ``cfg.share_draws_for_self`` a probe's query gradient reuses its
    training-side draws.
    """
    cfg = ScoreConfig(checkpoints, cfg.m, cfg.estimator, cfg.seed, cfg.share_draws_for_self)
    n = trainset.n
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    probes = np.argsort(ids, kind="stable")[: min(subset_size, n)]
    test_stream = "train" if cfg.share_draws_for_self else "test"
    S = score_matrix(trainset.data, trainset.data[probes], cfg, ids, ids[probes], "train", test_stream, threads)
    hits = np.array([rank_of(S[:, c], i) == 0 for c, i in enumerate(probes)])
    freq = float(hits.mean()) if len(hits) else float("nan")
    return (freq, S, probes) if return_scores else freq


@dataclass(frozen=True)
class BlendResult:
    major_ranks: np.ndarray
    minor_ranks: np.ndarray
    major_quantiles: tuple
    minor_quantiles: tuple
    major_top1: float

    def to_dict(self):
        return {
            "major_ranks": self.major_ranks.tolist(),
            "minor_ranks": self.minor_ranks.tolist(),
            "major_quantiles": list(self.major_quantiles),
            "minor_quantiles": list(self.minor_quantiles),
            "major_top1": self.major_top1,
        }


def blend_sanity(trainset: Dataset, checkpoints, pairs, alpha, cfg: ScoreConfig, sample_ids=None, threads=1) -> BlendResult:
    """Rank the two parents of ``alpha * x_major + (1 - alpha) * x_minor`` among all training samples.

    A blend is scored as a query keyed by its major parent's id on the
    ``"test"`` stream, so with ``alpha=1`` it reproduces the independent-draw
    self-check of that parent exactly.
    """
    cfg = ScoreConfig(checkpoints, cfg.m, cfg.estimator, cfg.seed, cfg.share_draws_for_self)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValidationError("need at least one (major, minor) pair")
    ids = np.arange(trainset.n) if sample_ids is None else np.asarray(sample_ids)
    X = trainset.data
    blends = alpha * X[pairs[:, 0]] + (1.0 - alpha) * X[pairs[:, 1]]
    S = score_matrix(X, blends, cfg, ids, ids[pairs[:, 0]], "train", "test", threads)
    major = np.array([rank_of(S[:, c], p) for c, p in enumerate(pairs[:, 0])])
    minor = np.array([rank_of(S[:, c], p) for c, p in enumerate(pairs[:, 1])])
    q = (25, 50, 75)
    return BlendResult(
        major,
        minor,
        tuple(float(v) for v in np.percentile(major, q)),
        tuple(float(v) for v in np.percentile(minor, q)),
        float(np.mean(major == 0)),
    )


def cross_class_pairs(labels, seed=0):
    """One random (major, minor) pair for every ordered pair of distinct labels."""
    from . import rng

    labels = np.asarray(labels)
    classes = np.unique(labels)
    pairs = []
    for a in classes:
        for b in classes:
            if a == b:
                continue
            g = rng.stream(seed, "blend-pair", int(a), int(b))
            ia = np.flatnonzero(labels == a)
            ib = np.flatnonzero(labels == b)
            pairs.append((int(ia[int(g.random() * len(ia))]), int(ib[int(g.random() * len(ib))])))
    return pairs


# --- self-influence vs loss --------------------------------------------------


def selfinf_loss_regression(self_scores, losses):
    """OLS of self-influence on negative loss, plus Spearman(self-influence, loss).

    Returns ``(slope, intercept, r_squared, spearman)``.
    """
    y = np.asarray(self_scores, dtype=np.float64)
    x = -np.asarray(losses, dtype=np.float64)
    if x.shape != y.shape or len(x) < 2:
        raise ValidationError("need two equal-length vectors with at least 2 entries")
    if np.ptp(x) == 0:
        raise DegenerateInputError("losses are constant; slope is undefined")
    xc, yc = x - x.mean(), y - y.mean()
    slope = float(xc @ yc / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    resid = y - (intercept + slope * x)
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    rho = float(spearmanr(y, -x)[0]) if np.ptp(y) > 0 else float("nan")
    return slope, intercept, r2, rho


# --- proponent / opponent statistics ----------------------------------------


@dataclass(frozen=True)
class RankStats:
    """Class agreement and latent geometry of the strongest proponents/opponents.

    Spreads are population standard deviations over all (test, selected
    train) pairs.
    """

    same_class_rate_top: float
    same_class_rate_bottom: float
    distance_top: tuple
    distance_bottom: tuple
    distance_all: tuple
    norm_top: tuple
    norm_bottom: tuple
    norm_all: tuple
    n_selected: int
    n_test: int

    def to_dict(self):
        return asdict(self)


def _mean_std(a):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    return (float(a.mean()), float(a.std()))


def rank_stats(scores, train_labels, test_labels, train_latent, test_latent, top_fraction=0.001) -> RankStats:
    """Aggregate statistics of the top and bottom ``top_fraction`` scorers per test sample.

    At least one training sample is always selected.
    """
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, t = S.shape
    if not (0 < top_fraction <= 1):
        raise ValidationError("top_fraction must be in (0, 1]")
    k = max(1, int(np.floor(top_fraction * n)))
    tr_lat = np.asarray(train_latent, dtype=np.float64).reshape(n, -1)
    te_lat = np.asarray(test_latent, dtype=np.float64).reshape(t, -1)
    tr_norm = np.linalg.norm(tr_lat, axis=1)
    top_idx = np.empty((t, k), dtype=np.int64)
    bot_idx = np.empty((t, k), dtype=np.int64)
    for j in range(t):
        order = descending_order(S[:, j])
        top_idx[j] = order[:k]
        bot_idx[j] = np.lexsort((np.arange(n), S[:, j]))[:k]
    dist = np.linalg.norm(tr_lat[None, :, :] - te_lat[:, None, :], axis=-1)  # (t, n)
    rows = np.arange(t)[:, None]

    def same_rate(idx):
        if train_labels is None or test_labels is None:
            return float("nan")
        trl = np.asarray(train_labels)
        tel = np.asarray(test_labels)
        return float(np.mean(trl[idx] == tel[:, None]))

    return RankStats(
        same_rate(top_idx),
        same_rate(bot_idx),
        _mean_std(dist[rows, top_idx]),
        _mean_std(dist[rows, bot_idx]),
        _mean_std(dist),
        _mean_std(tr_norm[top_idx]),
        _mean_std(tr_norm[bot_idx]),
        _mean_std(tr_norm),
        k,
        t,
    )


def latent_means(X, checkpoint):
    """Encoder means at a checkpoint, used as latent embeddings."""
    mu, _ = encode(np.atleast_2d(X), checkpoint.params)
    return mu


# --- classical figure suite --------------------------------------------------


def _write_table(path, header, columns):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])


def default_test_point(X: Dataset, cluster=0, offset=(0.15, -0.1)):
    """A query near the centre of one labelled cluster."""
    members = X.data[X.labels == cluster]
    return members.mean(axis=0) + np.resize(np.asarray(offset, dtype=np.float64), X.d)


def classic_figure_suite(dataset: Dataset, k, sigma, out_dir, z=None, threads=1):
    """Self- and test-influence tables and plots for k-NN, KDE and WS-GMM.

    Writes ``self_influence.csv``, ``test_influence.csv``, ``stats.json``
    and six SVG panels to ``out_dir``; returns the summary dictionary that
    also goes to ``stats.json``.
    """
    if dataset.labels is None:
        raise ValidationError("the classical suite needs cluster labels for the WS-GMM")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    X = dataset.data
    knn = KnnEstimator(k, dataset)
    kde = KdeEstimator(sigma, dataset)
    gmm = wsgmm_fit(dataset)
    z = default_test_point(dataset) if z is None else np.asarray(z, dtype=np.float64)

    self_if = {
        "knn": classical_self_influences(knn, threads=threads),
        "kde": classical_self_influences(kde, threads=threads),
        "wsgmm": classical_self_influences(gmm, threads=threads),
    }
    # k-NN log-likelihood of a training point excludes the point itself
    loglik = {
        "knn": np.array([knn_logdensity(x, KnnEstimator(k, dataset.without(i))) for i, x in enumerate(X)]),
        "kde": np.array([kde_logdensity(x, kde) for x in X]),
        "wsgmm": np.array([wsgmm_logdensity(x, gmm) for x in X]),
    }
    test_if = {
        "knn": influence_matrix(knn, z)[:, 0],
        "kde": influence_matrix(kde, z)[:, 0],
        "wsgmm": influence_matrix(gmm, z)[:, 0],
    }
    dist = np.linalg.norm(X - z, axis=1)
    idx = np.arange(dataset.n)
    _write_table(
        out / "self_influence.csv",
        ["index", "label", *[f"x{j}" for j in range(dataset.d)], "self_knn", "self_kde", "self_wsgmm", "loglik_knn", "loglik_kde", "loglik_wsgmm"],
        [idx, dataset.labels, *X.T, self_if["knn"], self_if["kde"], self_if["wsgmm"], loglik["knn"], loglik["kde"], loglik["wsgmm"]],
    )
    _write_table(
        out / "test_influence.csv",
        ["index", "label", "dist_to_z", "if_knn", "if_kde", "if_wsgmm"],
        [idx, dataset.labels, dist, test_if["knn"], test_if["kde"], test_if["wsgmm"]],
    )

    for m in ("knn", "kde", "wsgmm"):
        svg.scatter(
            out / f"self_{m}.svg", loglik[m], self_if[m], dataset.labels,
            title=f"{m}: self-influence vs log-likelihood", xlabel="log-likelihood", ylabel="self-influence",
        )
        svg.scatter(
            out / f"test_{m}.svg", dist, test_if[m], dataset.labels,
            title=f"{m}: influence over z vs distance", xlabel="distance to z", ylabel="influence",
        )

    z_cluster = wsgmm_assign(z, gmm)
    sizes = np.bincount(dataset.labels)
    top_knn = descending_order(self_if["knn"])[:k]
    top_kde = descending_order(self_if["kde"])[: int(sizes.min())]
    by_lik = np.argsort(loglik["kde"], kind="stable")
    by_dist = np.argsort(dist, kind="stable")
    summary = {
        "k": int(k),
        "sigma": float(sigma),
        "z": [float(v) for v in z],
        "z_cluster": z_cluster,
        "cluster_sizes": sizes.tolist(),
        "knn_distinct_test_values": int(len(np.unique(test_if["knn"]))),
        "knn_top_self_in_size_k_cluster": float(np.mean(sizes[dataset.labels[top_knn]] == k)),
        "kde_top_self_in_smallest_cluster": float(np.mean(dataset.labels[top_kde] == int(np.argmin(sizes)))),
        # float ties are allowed: far kernels can vanish against the rest of the sum
        "kde_self_reverse_likelihood": bool(np.all(np.diff(self_if["kde"][by_lik]) <= 0)),
        "kde_test_reverse_distance": bool(np.all(np.diff(test_if["kde"][by_dist]) <= 0)),
        "wsgmm_same_cluster_negative": int(np.sum((dataset.labels == z_cluster) & (test_if["wsgmm"] < 0))),
    }
    with open(out / "stats.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary
