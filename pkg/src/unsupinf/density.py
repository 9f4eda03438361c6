"""k-NN, Gaussian KDE and well-separated spherical GMM density estimators.

All log-densities are natural logs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .datakit import Dataset
from .errors import FitError, SingularityError, ValidationError

__all__ = [
    "KnnEstimator",
    "KdeEstimator",
    "WSGMMModel",
    "log_unit_ball_volume",
    "unit_ball_volume",
    "knn_radius",
    "knn_logdensity",
    "kde_log_kernels",
    "kde_logdensity",
    "silverman_bandwidth",
    "wsgmm_fit",
    "wsgmm_assign",
    "wsgmm_logdensity",
    "separation_ratio",
]

LOG_2PI = np.log(2.0 * np.pi)


def _data(X):
    return X.data if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=np.float64))


def _point(z, d):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape != (d,):
        raise ValidationError(f"query point must have dimension {d}, got {z.shape[0]}")
    return z


def log_unit_ball_volume(d: int) -> float:
    """log of pi^(d/2) / Gamma(d/2 + 1)."""
    return 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)


def unit_ball_volume(d: int) -> float:
    return float(np.exp(log_unit_ball_volume(d)))


# --- k-NN --------------------------------------------------------------------


@dataclass(frozen=True)
class KnnEstimator:
    k: int
    X: Dataset

    def __post_init__(self):
        if not (1 <= self.k <= self.X.n - 1):
            raise ValidationError(f"k must satisfy 1 <= k <= N-1 = {self.X.n - 1}, got k={self.k}")


def _sorted_distances(z, X):
    data = _data(X)
    z = _point(z, data.shape[1])
    return np.sort(np.sqrt(np.sum((data - z) ** 2, axis=1)))


def knn_radius(z, X, j: int) -> float:
    """Distance from ``z`` to its ``j``-th nearest row of ``X`` (1-based).

    Equal distances occupy consecutive ranks.
    """
    data = _data(X)
    if not (1 <= j <= data.shape[0]):
        raise ValidationError(f"rank j must be in [1, {data.shape[0]}], got {j}")
    return float(_sorted_distances(z, data)[j - 1])


def knn_logdensity(z, est: KnnEstimator) -> float:
    X = est.X
    r = knn_radius(z, X, est.k)
    if r == 0.0:
        raise SingularityError(f"k-NN radius is zero: z duplicates at least k={est.k} training rows")
    return knn_log_formula(est.k, X.n, X.d, r)


def knn_log_formula(k, n, d, r) -> float:
    """log(k / (N V_d r^d)); shared so the closed-form influence matches a refit bit for bit."""
    return float(np.log(k) - np.log(n) - log_unit_ball_volume(d) - d * np.log(r))


# --- KDE ---------------------------------------------------------------------


@dataclass(frozen=True)
class KdeEstimator:
    sigma: float
    X: Dataset

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"bandwidth must be positive and finite, got {self.sigma}")


def kde_log_kernels(z, est: KdeEstimator) -> np.ndarray:
    """log N(z - x_i; 0, sigma^2 I) for every training row."""
    data = est.X.data
    z = _point(z, data.shape[1])
    d = data.shape[1]
    sq = np.sum((data - z) ** 2, axis=1)
    return -0.5 * sq / est.sigma**2 - 0.5 * d * (LOG_2PI + 2.0 * np.log(est.sigma))


def kde_logdensity(z, est: KdeEstimator) -> float:
    return float(logsumexp(kde_log_kernels(z, est)) - np.log(est.X.n))


def silverman_bandwidth(X) -> float:
    """Silverman's rule of thumb, pooled over coordinates.

    A convenience for picking sigma; no estimator uses it implicitly.
    """
    data = _data(X)
    n, d = data.shape
    std = float(np.mean(np.std(data, axis=0, ddof=1))) if n > 1 else 1.0
    return std * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


# --- WS-GMM ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WSGMMModel:
    """Per-cluster maximum likelihood parameters of a well-separated spherical GMM."""

    counts: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K,)
    X: Dataset

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_clusters(self) -> int:
        return len(self.counts)


def _cluster_mle(points, d):
    mu = points.mean(axis=0)
    var = float(np.sum((points - mu) ** 2) / (len(points) * d))
    return mu, var


def wsgmm_fit(X: Dataset) -> WSGMMModel:
    """Fit mean and scalar variance of each labeled cluster by maximum likelihood."""
    if X.labels is None:
        raise FitError("WS-GMM fit needs cluster labels")
    K = X.n_clusters
    counts = np.bincount(X.labels, minlength=K)
    means = np.zeros((K, X.d))
    variances = np.zeros(K)
    for k in range(K):
        if counts[k] < 2:
            raise FitError(f"cluster {k} has {counts[k]} point(s); at least 2 are needed")
        means[k], variances[k] = _cluster_mle(X.data[X.labels == k], X.d)
        if not variances[k] > 0:
            raise FitError(f"cluster {k} has zero variance")
    for a in (counts, means, variances):
        a.setflags(write=False)
    return WSGMMModel(counts, means, variances, X)


def wsgmm_assign(z, model: WSGMMModel) -> int:
    """Cluster whose nearest training point is closest to ``z``; ties go to the lower index."""
    X = model.X
    z = _point(z, X.d)
    sq = np.sum((X.data - z) ** 2, axis=1)
    best = np.full(model.n_clusters, np.inf)
    np.minimum.at(best, X.labels, sq)
    return int(np.argmin(best))


def gaussian_logpdf(z, mu, var):
    d = len(mu)
    return float(-0.5 * d * (LOG_2PI + np.log(var)) - 0.5 * np.sum((z - mu) ** 2) / var)


def wsgmm_logdensity(z, model: WSGMMModel) -> float:
    k = wsgmm_assign(z, model)
    z = _point(z, model.d)
    return float(np.log(model.counts[k] / model.n)) + gaussian_logpdf(
        z, model.means[k], model.variances[k]
    )


def separation_ratio(X: Dataset) -> float:
    """Minimum inter-cluster distance over maximum intra-cluster diameter.

    Closed-form WS-GMM influences assume this is large; their accuracy
    degrades as it approaches 1.
    """
    if X.labels is None or X.n_clusters < 2:
        raise ValidationError("separation ratio needs at least two labeled clusters")
    data, labels = X.data, X.labels
    dist = np.sqrt(np.sum((data[:, None, :] - data[None, :, :]) ** 2, axis=-1))
    same = labels[:, None] == labels[None, :]
    return float(dist[~same].min() / max(dist[same].max(), np.finfo(float).tiny))
