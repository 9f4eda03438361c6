"""
How accurate is the large-cluster expansion of WS-GMM influence?
================================================================

For a spherical mixture fit per cluster, removing one point changes the
cluster's mean and variance by O(1/N0).  The standard large-N0 formula
keeps only the leading term; here we measure its error against the exact
leave-one-out value, next to an expansion whose 1/N0 coefficient is
derived in full.
"""

import numpy as np

from unsupinf.datakit import Dataset
from unsupinf.density import wsgmm_fit
from unsupinf.influence_classical import if_wsgmm

d = 2
u = np.array([0.9, -0.4])  # offset of the removed point from the cluster mean
v = np.array([0.5, 0.7])  # offset of the query point


def cluster(n0, seed=0):
    """n0 points with mean 0 and variance 1, the first one at u."""
    r = np.random.default_rng(seed)
    rest = r.normal(size=(n0 - 1, d))
    rest -= rest.mean(axis=0)
    rest *= np.sqrt((n0 * d - u @ u * n0 / (n0 - 1)) / np.sum(rest**2))
    return np.vstack([u, rest - u / (n0 - 1)])


other = np.random.default_rng(1).normal(size=(30, d)) + [100.0, 0.0]
print(f"{'N0':>5} {'exact':>12} {'standard':>12} {'err':>10} {'corrected':>12} {'err':>10}")
prev = None
for n0 in (25, 50, 100, 200, 400):
    X = Dataset(np.vstack([cluster(n0), other]), np.r_[np.zeros(n0, int), np.ones(30, int)])
    m = wsgmm_fit(X)
    exact = if_wsgmm(0, v, m)
    pub, cor = if_wsgmm(0, v, m, "asymptotic"), if_wsgmm(0, v, m, "first_order")
    print(f"{n0:5d} {exact:12.6f} {pub:12.6f} {abs(pub - exact):10.2e} {cor:12.6f} {abs(cor - exact):10.2e}")

# The standard expansion's error halves with each doubling (first order), the corrected
# one drops by four (second order).  The two agree when |u|^2 = d.
