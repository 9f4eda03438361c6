"""Closed-form influence functions for k-NN, KDE and WS-GMM density estimators.

The loss is the negative natural log-likelihood, so the influence of a
training row ``x_i`` on a query ``z`` is

    log p(z; X) - log p(z; X without x_i)

and a positive value marks ``x_i`` as a proponent of ``z``.
:func:`loo_oracle` computes exactly that by refitting and is the reference
every closed form is tested against.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .density import (
    KdeEstimator,
    KnnEstimator,
    WSGMMModel,
    gaussian_logpdf,
    kde_log_kernels,
    kde_logdensity,
    knn_log_formula,
    knn_logdensity,
    wsgmm_assign,
    wsgmm_fit,
    wsgmm_logdensity,
)
from .errors import FitError, SingularityError, ValidationError

__all__ = [
    "SELF",
    "InfluenceRecord",
    "if_knn",
    "if_kde",
    "if_wsgmm",
    "self_influence_classical",
    "loo_oracle",
    "method_of",
    "influence_matrix",
    "self_influences",
    "records_from_matrix",
    "write_records_csv",
]

SELF = -1


@dataclass(frozen=True)
class InfluenceRecord:
    train_index: int
    test_index: int  # SELF for self-influence
    score: float
    method: str

    def __post_init__(self):
        if self.train_index < 0 or (self.test_index < 0 and self.test_index != SELF):
            raise ValidationError("record indices must be non-negative (or SELF)")
        if not np.isfinite(self.score):
            raise ValidationError("record score must be finite")


def _check_index(i, n):
    if not (0 <= i < n):
        raise ValidationError(f"training index {i} out of range [0, {n})")


def if_knn(i: int, z, est: KnnEstimator) -> float:
    """Influence of row ``i`` on ``z`` under the k-NN density.

    Rows at distance exactly ``R_k(z)`` count as neighbours; with tied
    distances ``R_{k+1} = R_k`` and only the ``log((N-1)/N)`` term remains.
    """
    X, k = est.X, est.k
    n = X.n
    _check_index(i, n)
    if k > n - 2:
        raise ValidationError(f"k={k} leaves no valid leave-one-out model for N={n}")
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    dists = np.sqrt(np.sum((X.data - z) ** 2, axis=1))
    ordered = np.sort(dists)
    r_k, r_k1 = ordered[k - 1], ordered[k]
    if r_k == 0.0:
        raise SingularityError(f"k-NN radius is zero at z (k={k})")
    # removing a neighbour moves the k-th radius out to R_{k+1}; the value is
    # log((N-1)/N) + d log(R_{k+1}/R_k) or log((N-1)/N), evaluated through the
    # density itself so it equals a refit exactly
    r_loo = r_k1 if dists[i] <= r_k else r_k
    return knn_log_formula(k, n, X.d, r_k) - knn_log_formula(k, n - 1, X.d, r_loo)


def if_kde(i: int, z, est: KdeEstimator) -> float:
    """Influence of row ``i`` on ``z`` under the Gaussian KDE, in log space."""
    n = est.X.n
    _check_index(i, n)
    if n < 2:
        raise SingularityError("KDE influence needs N >= 2 (leave-one-out model is empty)")
    log_k = kde_log_kernels(z, est)
    rest = np.delete(log_k, i)
    return float(np.log((n - 1) / n) + logsumexp(log_k) - logsumexp(rest))


def _loo_cluster_params(model: WSGMMModel, i: int):
    """(mu', var') of row i's cluster after removing row i, via rank-one updates."""
    k = int(model.X.labels[i])
    nk = int(model.counts[k])
    if nk - 1 < 2:
        raise FitError(f"removing row {i} leaves cluster {k} with {nk - 1} point(s)")
    d = model.d
    u = model.X.data[i] - model.means[k]
    mu = model.means[k] - u / (nk - 1)
    var = nk / (nk - 1) * model.variances[k] - nk * float(u @ u) / ((nk - 1) ** 2 * d)
    if not var > 0:
        raise FitError(f"removing row {i} leaves cluster {k} with zero variance")
    return k, mu, var


def if_wsgmm(i: int, z, model: WSGMMModel, mode: str = "exact") -> float:
    """Influence of row ``i`` on ``z`` under the WS-GMM.

    ``mode="exact"`` updates the affected cluster's mean and variance in
    closed form, re-assigns ``z`` on the reduced data and returns the exact
    log-density difference.

    ``mode="asymptotic"`` evaluates the standard large-``N_0`` formula

        (d+2)/(2 N0) + (|z-mu0|^2 / s0^2 - |z-x_i|^2) / (2 N0 s0^2) - 1/N

    for a same-cluster row.  Its error is O(1/N0) unless ``|x_i-mu0|^2 = d``;
    ``mode="first_order"`` is the expansion with the correct 1/N0 term,
    whose error is O(1/N0^2).  Both return ``log((N-1)/N)`` for rows outside
    the cluster of ``z``.
    """
    X = model.X
    n, d = model.n, model.d
    _check_index(i, n)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    k_i, mu_i, var_i = _loo_cluster_params(model, i)
    k0 = wsgmm_assign(z, model)

    if mode in ("asymptotic", "first_order"):
        if k_i != k0:
            return float(np.log((n - 1) / n))
        n0 = int(model.counts[k0])
        if n0 < 3:
            raise FitError(f"cluster {k0} needs at least 3 points, has {n0}")
        s2 = model.variances[k0]
        u = X.data[i] - model.means[k0]
        v = z - model.means[k0]
        v2, u2 = float(v @ v), float(u @ u)
        if mode == "asymptotic":
            w2 = float(np.sum((z - X.data[i]) ** 2))
            return (d + 2) / (2 * n0) + (v2 / s2 - w2) / (2 * n0 * s2) - 1.0 / n
        # exact 1/N0 coefficient: the v2 term carries |u|^2 / (d s2), not 1 / s2
        bracket = 2 * float(u @ v) - v2 - u2 + v2 * u2 / (d * s2)
        return (d + 2) / (2 * n0) + bracket / (2 * n0 * s2) - 1.0 / n
    if mode != "exact":
        raise ValidationError(f"unknown WS-GMM influence mode {mode!r}")

    full = np.log(model.counts[k0] / n) + gaussian_logpdf(z, model.means[k0], model.variances[k0])

    sq = np.sum((X.data - z) ** 2, axis=1)
    sq[i] = np.inf
    best = np.full(model.n_clusters, np.inf)
    np.minimum.at(best, X.labels, sq)
    k1 = int(np.argmin(best))
    count = model.counts[k1] - (1 if k1 == k_i else 0)
    if k1 == k_i:
        mu, var = mu_i, var_i
    else:
        mu, var = model.means[k1], model.variances[k1]
    loo = np.log(count / (n - 1)) + gaussian_logpdf(z, mu, var)
    return float(full - loo)


def method_of(est) -> str:
    if isinstance(est, KnnEstimator):
        return "knn"
    if isinstance(est, KdeEstimator):
        return "kde"
    if isinstance(est, WSGMMModel):
        return "wsgmm"
    raise ValidationError(f"unsupported estimator {type(est).__name__}")


def _influence(i, z, est, mode):
    method = method_of(est)
    if method == "knn":
        return if_knn(i, z, est)
    if method == "kde":
        return if_kde(i, z, est)
    return if_wsgmm(i, z, est, mode=mode)


def self_influence_classical(i: int, est, mode: str = "exact") -> float:
    """Influence of training row ``i`` on itself."""
    return _influence(i, est.X.data[i], est, mode)


def loo_oracle(method: str, i: int, z, X, params=None) -> float:
    """Refit the estimator without row ``i`` and return the change in the loss of ``z``."""
    params = params or {}
    X_loo = X.without(i)
    if method == "knn":
        k = params["k"]
        return knn_logdensity(z, KnnEstimator(k, X)) - knn_logdensity(z, KnnEstimator(k, X_loo))
    if method == "kde":
        s = params["sigma"]
        return kde_logdensity(z, KdeEstimator(s, X)) - kde_logdensity(z, KdeEstimator(s, X_loo))
    if method == "wsgmm":
        return wsgmm_logdensity(z, wsgmm_fit(X)) - wsgmm_logdensity(z, wsgmm_fit(X_loo))
    raise ValidationError(f"unknown method {method!r}")


def _parallel_map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def influence_matrix(est, Z, mode="exact", threads=1) -> np.ndarray:
    """Scores of every training row (rows) over every query in ``Z`` (columns)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n = est.X.n

    def column(z):
        return np.array([_influence(i, z, est, mode) for i in range(n)])

    cols = _parallel_map(column, list(Z), threads)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def self_influences(est, mode="exact", threads=1) -> np.ndarray:
    return np.array(_parallel_map(lambda i: self_influence_classical(i, est, mode), range(est.X.n), threads))


def records_from_matrix(scores, method, self_scores=False):
    scores = np.asarray(scores)
    if self_scores:
        return [InfluenceRecord(i, SELF, float(s), method) for i, s in enumerate(scores)]
    return [
        InfluenceRecord(i, j, float(scores[i, j]), method)
        for j in range(scores.shape[1])
        for i in range(scores.shape[0])
    ]


def write_records_csv(records, path):
    """Write ``train_index,test_index,method,score`` rows; self-influences use ``self``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["train_index", "test_index", "method", "score"])
        for r in records:
            test = "self" if r.test_index == SELF else r.test_index
            w.writerow([r.train_index, test, r.method, repr(r.score)])
