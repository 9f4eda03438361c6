"""VAE-TracIn scores, self-influence and the empirical leave-one-out influence.

The score of a training point ``x`` over a test point ``z`` is

    sum_c  u(x, c) . u(z, c)  +  v(x, c) . v(z, c)

where ``u`` and ``v`` are the decoder and encoder loss-gradient blocks at
checkpoint ``c``, each averaged over ``m`` latent draws.

Latent draws for a point come from the stream
``(seed, "tracin", stream, sample_id, checkpoint_step)``.  ``stream`` names
the role of the point (by default ``"x"``/``"train"`` for training points and
``"z"``/``"test"`` for queries), so a point scored against itself gets
independent draws unless the config asks to share them.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import rng
from .errors import ValidationError
from .neuralvae import ESTIMATORS, Checkpoint, batch_gradients, kl_term, _encode, _forward, LOG_2PI

__all__ = [
    "ScoreConfig",
    "GradEstimate",
    "grad_estimate",
    "grad_estimates",
    "vae_tracin",
    "score_matrix",
    "checkpoint_contributions",
    "self_influence_tracin",
    "self_influences",
    "empirical_if",
    "concentration_experiment",
    "write_score_csv",
    "write_sidecar",
    "encoder_gradient_moments",
]

CHUNK = 32


@dataclass(frozen=True)
class ScoreConfig:
    checkpoints: Sequence[Checkpoint]
    m: int = 16
    estimator: str = "paper_eq8"
    seed: int = 0
    share_draws_for_self: bool = False

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))
        if not self.checkpoints:
            raise ValidationError("at least one checkpoint is required")
        arch = self.checkpoints[0].arch
        if any(c.arch != arch for c in self.checkpoints):
            raise ValidationError("all checkpoints must share one architecture")
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}")

    @property
    def arch(self):
        return self.checkpoints[0].arch

    @property
    def final(self) -> "ScoreConfig":
        return replace(self, checkpoints=self.checkpoints[-1:])

    def to_dict(self):
        return {
            "m": self.m,
            "estimator": self.estimator,
            "seed": self.seed,
            "share_draws_for_self": self.share_draws_for_self,
            "checkpoint_steps": [int(c.step) for c in self.checkpoints],
        }


@dataclass(frozen=True)
class GradEstimate:
    u_bar: np.ndarray
    v_bar: np.ndarray
    step: int


def _draws(cfg, stream, sample_id, step):
    g = rng.stream(cfg.seed, "tracin", stream, int(sample_id), int(step))
    return rng.standard_normal(g, (cfg.m, cfg.arch.latent_dim))


def grad_estimate(x, checkpoint: Checkpoint, cfg: ScoreConfig, sample_id=0, stream="x") -> GradEstimate:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    zeta = _draws(cfg, stream, sample_id, checkpoint.step)[None]
    u, v, _ = batch_gradients(x, zeta, checkpoint.params, checkpoint.beta, cfg.estimator)
    return GradEstimate(u[0], v[0], checkpoint.step)


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def grad_estimates(X, checkpoint: Checkpoint, cfg: ScoreConfig, sample_ids=None, stream="x", threads=1):
    """Gradient blocks ``(U, V)`` for every row of ``X``.

    Rows are processed in fixed chunks of 32 regardless of ``threads``, so
    the result does not depend on the thread count.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ids = np.arange(len(X)) if sample_ids is None else np.asarray(sample_ids)
    if len(ids) != len(X):
        raise ValidationError("sample_ids must match the number of rows")

    def chunk(start):
        sl = slice(start, start + CHUNK)
        zeta = np.stack([_draws(cfg, stream, i, checkpoint.step) for i in ids[sl]])
        u, v, _ = batch_gradients(X[sl], zeta, checkpoint.params, checkpoint.beta, cfg.estimator)
        return u, v

    parts = _map(chunk, list(range(0, len(X), CHUNK)), threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def vae_tracin(x, z, cfg: ScoreConfig, x_id=0, z_id=0, x_stream="x", z_stream="z") -> float:
    total = 0.0
    for ck in cfg.checkpoints:
        gx = grad_estimate(x, ck, cfg, x_id, x_stream)
        gz = grad_estimate(z, ck, cfg, z_id, z_stream)
        total += float(gx.u_bar @ gz.u_bar) + float(gx.v_bar @ gz.v_bar)
    return total


def checkpoint_contributions(
    X, Z, cfg: ScoreConfig, train_ids=None, test_ids=None, train_stream="train", test_stream="test", threads=1
):
    """Per-checkpoint score matrices, shape (C, n_train, n_test)."""
    out = []
    for ck in cfg.checkpoints:
        U_tr, V_tr = grad_estimates(X, ck, cfg, train_ids, train_stream, threads)
        U_te, V_te = grad_estimates(Z, ck, cfg, test_ids, test_stream, threads)
        out.append(U_tr @ U_te.T + V_tr @ V_te.T)
    return np.stack(out)


def score_matrix(X, Z, cfg: ScoreConfig, train_ids=None, test_ids=None, train_stream="train", test_stream="test", threads=1):
    """VAE-TracIn scores of every training row (rows) over every query (columns)."""
    X = np.atleast_2d(X)
    Z = np.atleast_2d(Z)
    total = np.zeros((len(X), len(Z)))
    for ck in cfg.checkpoints:
        U_tr, V_tr = grad_estimates(X, ck, cfg, train_ids, train_stream, threads)
        U_te, V_te = grad_estimates(Z, ck, cfg, test_ids, test_stream, threads)
        total += U_tr @ U_te.T + V_tr @ V_te.T
    return total


def self_influence_tracin(x, cfg: ScoreConfig, sample_id=0) -> float:
    """Score of ``x`` over itself at the final checkpoint."""
    ck = cfg.checkpoints[-1]
    gx = grad_estimate(x, ck, cfg, sample_id, "train")
    if cfg.share_draws_for_self:
        return float(gx.u_bar @ gx.u_bar) + float(gx.v_bar @ gx.v_bar)
    gz = grad_estimate(x, ck, cfg, sample_id, "self")
    return float(gx.u_bar @ gz.u_bar) + float(gx.v_bar @ gz.v_bar)


def self_influences(X, cfg: ScoreConfig, sample_ids=None, threads=1) -> np.ndarray:
    ck = cfg.checkpoints[-1]
    U, V = grad_estimates(X, ck, cfg, sample_ids, "train", threads)
    if cfg.share_draws_for_self:
        return np.einsum("ij,ij->i", U, U) + np.einsum("ij,ij->i", V, V)
    U2, V2 = grad_estimates(X, ck, cfg, sample_ids, "self", threads)
    return np.einsum("ij,ij->i", U, U2) + np.einsum("ij,ij->i", V, V2)


def encoder_gradient_moments(x, checkpoint: Checkpoint, estimator, n_draws, seed=0, directions=None, chunk=4096):
    """Mean and standard error of single-draw encoder gradients of one point.

    Draws come from ``(seed, "moments", estimator, block)`` in blocks of
    ``chunk``.  Returns ``(mean, se)`` per coordinate and, when
    ``directions`` (k, |psi|) is given, also the mean and standard error of
    the projections onto each direction.
    """
    if estimator not in ESTIMATORS:
        raise ValidationError(f"estimator must be one of {ESTIMATORS}")
    if n_draws < 2:
        raise ValidationError("need at least two draws for a standard error")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    L = checkpoint.arch.latent_dim
    size = checkpoint.params.layout.encoder_size
    W = None if directions is None else np.atleast_2d(np.asarray(directions, dtype=np.float64))
    s1, s2 = np.zeros(size), np.zeros(size)
    p1 = p2 = None if W is None else np.zeros(len(W))
    done, block = 0, 0
    while done < n_draws:
        c = min(chunk, n_draws - done)
        zeta = rng.standard_normal(rng.stream(seed, "moments", estimator, block), (c, 1, L))
        _, v, _ = batch_gradients(np.repeat(x, c, axis=0), zeta, checkpoint.params, checkpoint.beta, estimator)
        s1 += v.sum(axis=0)
        s2 += np.einsum("ij,ij->j", v, v)
        if W is not None:
            proj = v @ W.T
            p1 = p1 + proj.sum(axis=0)
            p2 = p2 + np.einsum("ij,ij->j", proj, proj)
        done += c
        block += 1

    def moments(a, b):
        mean = a / n_draws
        var = np.maximum(b / n_draws - mean**2, 0.0) * n_draws / (n_draws - 1)
        return mean, np.sqrt(var / n_draws)

    mean, se = moments(s1, s2)
    if W is None:
        return mean, se
    return mean, se, *moments(p1, p2)


# --- empirical influence -----------------------------------------------------


def _mc_terms(z, params, zeta):
    """KL and log P(z | mu + sigma * zeta) for draws of shape (..., m, L)."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    _, mu, sigma = _encode(params, z)
    xi = mu[0] + sigma[0] * zeta
    mu_p = _forward(params.decoder_layers(), xi, "decoder")[-1]
    log_p = -0.5 * np.sum((mu_p - z[0]) ** 2, axis=-1) - 0.5 * z.shape[1] * LOG_2PI
    return float(kl_term(mu[0], sigma[0])), log_p


def _empirical(z, full, loo, beta, zeta):
    kl_full, lp_full = _mc_terms(z, full.params, zeta)
    kl_loo, lp_loo = _mc_terms(z, loo.params, zeta)
    return beta * (kl_loo - kl_full) - np.mean(lp_loo - lp_full, axis=-1)


def empirical_if(z, full: Checkpoint, loo: Checkpoint, beta=None, m=16, seed=0, draw=0) -> float:
    """Monte Carlo estimate of loss(z; loo model) - loss(z; full model).

    Both models see the same standard normal draws (stream
    ``(seed, "empirical-if", draw)``), pushed through their own encoders.
    """
    if full.arch != loo.arch:
        raise ValidationError("full and leave-one-out checkpoints have different architectures")
    if m < 1:
        raise ValidationError("m must be >= 1")
    beta = full.beta if beta is None else beta
    zeta = rng.standard_normal(rng.stream(seed, "empirical-if", draw), (m, full.arch.latent_dim))
    return float(_empirical(z, full, loo, beta, zeta))


def concentration_experiment(z, full: Checkpoint, loo: Checkpoint, m_list, repeats, seed=0, beta=None):
    """Mean and standard deviation of ``empirical_if`` over fresh draws, per ``m``.

    Returns a list of ``(m, mean, std)`` tuples (``std`` with ddof=1).
    """
    if full.arch != loo.arch:
        raise ValidationError("full and leave-one-out checkpoints have different architectures")
    beta = full.beta if beta is None else beta
    L = full.arch.latent_dim
    table = []
    for m in m_list:
        zeta = np.stack([rng.standard_normal(rng.stream(seed, "concentration", int(m), r), (m, L)) for r in range(repeats)])
        vals = _empirical(z, full, loo, beta, zeta)
        table.append((int(m), float(np.mean(vals)), float(np.std(vals, ddof=1))))
    return table


# --- export ------------------------------------------------------------------


def write_score_csv(scores, path, train_index=None, test_index=None):
    scores = np.atleast_2d(scores)
    tr = np.arange(scores.shape[0]) if train_index is None else train_index
    te = np.arange(scores.shape[1]) if test_index is None else test_index
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["train_index", "test_index", "score"])
        for j in range(scores.shape[1]):
            for i in range(scores.shape[0]):
                w.writerow([int(tr[i]), int(te[j]), repr(float(scores[i, j]))])


def write_sidecar(cfg: ScoreConfig, path, **extra):
    payload = dict(cfg.to_dict(), **extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
