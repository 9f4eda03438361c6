"""
Finding injected outliers by self-influence
===========================================

Five tight clusters (500 points) plus 50 points drawn uniformly over a wide
box.  After training, rank every point by self-influence and count how
quickly the extras turn up.
"""

import sys
from pathlib import Path

import numpy as np

from unsupinf import svg
from unsupinf.datakit import ClusterSpec, circle_centers, generate_clusters, generate_uniform, inject_outliers
from unsupinf.evaluation import detection_curve, write_curve_csv
from unsupinf.neuralvae import TrainConfig, VAEArch, train
from unsupinf.tracin import ScoreConfig, self_influences

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out/cleaning")
out.mkdir(parents=True, exist_ok=True)

base = generate_clusters(ClusterSpec([100] * 5, [0.3] * 5, circle_centers(5, 5.0), seed=0))
extra = generate_uniform(50, 2, -8.0, 8.0, seed=0)
data = inject_outliers(base, extra, seed=0)

cfg = TrainConfig(beta=0.1, learning_rate=0.03, batch_size=64, total_steps=10000, checkpoint_every=1000, seed=0)
checkpoints = train(data, VAEArch(2, 2, (32, 32), (32, 32)), cfg)

scores = self_influences(data.data, ScoreConfig(checkpoints, 16, share_draws_for_self=True))
curve = detection_curve(scores, data.is_extra)
print(f"AUC {curve.auc:.3f} (random ranking gives 0.5)")

top = np.argsort(-scores)[:50]
print(f"extras among the 50 highest self-influences: {int(data.is_extra[top].sum())}")

write_curve_csv(curve, out / "curve.csv")
svg.line(out / "curve.svg", curve.fraction_checked, curve.fraction_found, "detection curve", "fraction checked", "fraction found", diagonal=True)
print("curve written to", out)
