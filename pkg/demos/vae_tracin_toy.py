"""
Influence in a small VAE
========================

Train a beta-VAE on the six-cluster data, keep 20 checkpoints, and score
training points against queries by summing gradient dot products over the
checkpoints.
"""

import numpy as np
from scipy.stats import spearmanr

from unsupinf.datakit import generate_clusters, six_cluster_spec
from unsupinf.evaluation import blend_sanity, cross_class_pairs, latent_means, rank_stats, sanity_self_top1
from unsupinf.neuralvae import TrainConfig, VAEArch, sample_losses, train
from unsupinf.tracin import ScoreConfig, score_matrix, self_influences

data = generate_clusters(six_cluster_spec(seed=0))
arch = VAEArch(2, 2, (32, 32), (32, 32))
cfg = TrainConfig(beta=0.1, learning_rate=0.03, batch_size=64, total_steps=10000, checkpoint_every=500, seed=0)
checkpoints = train(data, arch, cfg)
print(f"{len(checkpoints)} checkpoints, final loss {checkpoints[-1].loss:.3f}")

# Is every training point its own strongest proponent?  Reusing a point's
# own latent draws makes its self-score a squared norm.
score_cfg = ScoreConfig(checkpoints, 16, share_draws_for_self=True)
print("self-top-1 frequency on 64 points:", sanity_self_top1(checkpoints, data, 64, score_cfg))

# Blends of two training points from different clusters: the major parent
# should rank higher than the minor one.
blend = blend_sanity(data, checkpoints, cross_class_pairs(data.labels, 0), 0.75, score_cfg)
print("median rank of the major parent:", blend.major_quantiles[1], "minor:", blend.minor_quantiles[1])

# Self-influence tracks how hard a point is to reconstruct.
losses = sample_losses(data.data, checkpoints[-1].params, cfg.beta, m=64)
for est in ("pathwise", "paper_eq8"):
    s = self_influences(data.data, ScoreConfig(checkpoints, 16, est))
    print(f"Spearman(self-influence, loss) with the {est} encoder gradient: {spearmanr(s, losses)[0]:.2f}")

# Strongest proponents and opponents of a few held-out queries.
queries = data.data[::50] + 0.1
S = score_matrix(data.data, queries, ScoreConfig(checkpoints, 64))
stats = rank_stats(
    S, data.labels, data.labels[::50], latent_means(data.data, checkpoints[-1]), latent_means(queries, checkpoints[-1]), 0.05
)
print(f"same-cluster rate: proponents {stats.same_class_rate_top:.2f}, opponents {stats.same_class_rate_bottom:.2f}")
print(f"latent norm: proponents {stats.norm_top[0]:.2f}, opponents {stats.norm_bottom[0]:.2f}, all {stats.norm_all[0]:.2f}")
