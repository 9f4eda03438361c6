"""
Who shapes a density estimate?
==============================

Three classical density estimators on the six-cluster toy data, and the
training points that matter most to each of them.  Influence here is exact:
the change in log-density at a query point when one training point is
removed.
"""

import sys

import numpy as np

from unsupinf.datakit import generate_clusters, six_cluster_spec
from unsupinf.density import KdeEstimator, KnnEstimator, wsgmm_fit
from unsupinf.evaluation import classic_figure_suite, default_test_point
from unsupinf.influence_classical import if_wsgmm, influence_matrix, loo_oracle

out = sys.argv[1] if len(sys.argv) > 1 else "demo-out/classical"

# Six Gaussian clusters on a circle of radius 5, of different sizes and spreads.
data = generate_clusters(six_cluster_spec(seed=0))
print("cluster sizes:", np.bincount(data.labels))

# A query point close to the centre of cluster 0.
z = default_test_point(data)
print("query point:", np.round(z, 3))

# k-NN: a training point either sits inside the k-ball around z or it does
# not, so only two influence values ever occur.
knn = KnnEstimator(10, data)
s_knn = influence_matrix(knn, z)[:, 0]
print("distinct k-NN influence values:", np.unique(s_knn))

# The closed form agrees with actually refitting without the point.
i = int(np.argmax(s_knn))
print("k-NN closed form vs refit:", s_knn[i], loo_oracle("knn", i, z, data, {"k": 10}))

# KDE: influence falls off with distance to z.
kde = KdeEstimator(0.5, data)
s_kde = influence_matrix(kde, z)[:, 0]
near = np.argsort(np.linalg.norm(data.data - z, axis=1))[:5]
print("KDE influence of the five nearest points:", np.round(s_kde[near], 5))

# WS-GMM: a point from the same cluster can still be an opponent when it
# lies far from z, because removing it tightens the cluster around z.
gmm = wsgmm_fit(data)
own = np.flatnonzero(data.labels == 0)
s_gmm = np.array([if_wsgmm(j, z, gmm) for j in own])
print(f"same-cluster points with negative WS-GMM influence: {np.sum(s_gmm < 0)} of {len(own)}")

# The whole figure set, as CSV tables plus standalone SVG scatter plots.
summary = classic_figure_suite(data, 10, 0.5, out, z=z)
for key in ("knn_top_self_in_size_k_cluster", "kde_top_self_in_smallest_cluster", "wsgmm_same_cluster_negative"):
    print(f"{key}: {summary[key]}")
print("figures written to", out)
