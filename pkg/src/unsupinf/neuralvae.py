"""A beta-VAE on tanh MLPs with hand-written backpropagation.

Parameters live in one flat float64 vector ``theta = [phi, psi]``: the
decoder block ``phi`` first, then the encoder block ``psi``.  Each block is
a sequence of dense layers stored as ``W`` (out x in, row-major) then ``b``.

The encoder maps ``x`` to ``2 * latent_dim`` outputs: the posterior mean
and the log-variance ``s``, with ``sigma = exp(s / 2)``.  The decoder maps a
latent code to the mean of a unit-variance Gaussian, so

    log P(x | xi) = -|mu_P(xi) - x|^2 / 2 - (d / 2) log(2 pi).

Weights are initialised uniformly on ``[-sqrt(3 / fan_in), sqrt(3 / fan_in)]``
from the stream ``(seed, "init", layer)``; biases start at zero.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import rng
from .container import read_container, write_container
from .datakit import Dataset
from .errors import NumericError, ValidationError

__all__ = [
    "VAEArch",
    "ParamLayout",
    "VAEParams",
    "Checkpoint",
    "TrainConfig",
    "init_params",
    "encode",
    "decode",
    "kl_term",
    "log_likelihood",
    "log_q",
    "loss",
    "sample_losses",
    "grad_U",
    "grad_log_q",
    "grad_V_scorefn",
    "grad_pathwise",
    "batch_gradients",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_filename",
]

LOG_2PI = np.log(2.0 * np.pi)
ESTIMATORS = ("paper_eq8", "pathwise")


@dataclass(frozen=True)
class VAEArch:
    input_dim: int
    latent_dim: int
    encoder_hidden: Sequence[int] = (64, 64)
    decoder_hidden: Sequence[int] = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ValidationError("input_dim and latent_dim must be >= 1")
        if any(h < 1 for h in self.encoder_hidden + self.decoder_hidden):
            raise ValidationError("hidden sizes must be >= 1")
        if self.activation != "tanh":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    def decoder_sizes(self):
        return [self.latent_dim, *self.decoder_hidden, self.input_dim]

    def encoder_sizes(self):
        return [self.input_dim, *self.encoder_hidden, 2 * self.latent_dim]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "encoder_hidden": list(self.encoder_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ParamLayout:
    """Offsets of every weight and bias inside ``theta``."""

    entries: tuple  # (name, shape, offset)
    decoder_size: int
    size: int

    @classmethod
    def from_arch(cls, arch: VAEArch):
        entries, off = [], 0
        dec_end = None
        for block, sizes in (("dec", arch.decoder_sizes()), ("enc", arch.encoder_sizes())):
            for li, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                entries.append((f"{block}{li}.W", (fan_out, fan_in), off))
                off += fan_out * fan_in
                entries.append((f"{block}{li}.b", (fan_out,), off))
                off += fan_out
            if block == "dec":
                dec_end = off
        return cls(tuple(entries), dec_end, off)

    @property
    def encoder_size(self):
        return self.size - self.decoder_size

    def to_list(self):
        return [[name, list(shape), off] for name, shape, off in self.entries]


class VAEParams:
    """Flat parameter vector plus its layout; read-only once built."""

    def __init__(self, arch: VAEArch, theta):
        self.arch = arch
        self.layout = ParamLayout.from_arch(arch)
        theta = np.array(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.layout.size:
            raise ValidationError(f"theta has {theta.size} values, architecture needs {self.layout.size}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta contains non-finite values")
        theta.setflags(write=False)
        self.theta = theta
        self._dec = self._layers("dec")
        self._enc = self._layers("enc")

    def _layers(self, block):
        out, pending = [], None
        for name, shape, off in self.layout.entries:
            if not name.startswith(block):
                continue
            view = self.theta[off : off + int(np.prod(shape))].reshape(shape)
            if name.endswith(".W"):
                pending = view
            else:
                out.append((pending, view))
        return out

    @property
    def phi(self):
        return self.theta[: self.layout.decoder_size]

    @property
    def psi(self):
        return self.theta[self.layout.decoder_size :]

    def decoder_layers(self):
        return self._dec

    def encoder_layers(self):
        return self._enc

    def replace(self, theta):
        return VAEParams(self.arch, theta)

    def __eq__(self, other):
        return isinstance(other, VAEParams) and self.arch == other.arch and np.array_equal(self.theta, other.theta)

    __hash__ = None


def init_params(arch: VAEArch, seed: int) -> VAEParams:
    layout = ParamLayout.from_arch(arch)
    theta = np.zeros(layout.size)
    for name, shape, off in layout.entries:
        if name.endswith(".W"):
            fan_in = shape[1]
            a = np.sqrt(3.0 / fan_in)
            u = rng.uniform(rng.stream(seed, "init", name), int(np.prod(shape)))
            theta[off : off + u.size] = a * (2.0 * u - 1.0)
    return VAEParams(arch, theta)


# --- forward / backward ------------------------------------------------------


def _forward(layers, h, block):
    acts = [h]
    last = len(layers) - 1
    for li, (W, b) in enumerate(layers):
        pre = acts[-1] @ W.T + b
        out = pre if li == last else np.tanh(pre)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite {block} activations", layer=li)
        acts.append(out)
    return acts


def _backward(layers, acts, grad_out, per_sample):
    """Backpropagate ``grad_out``; return per-layer (gW, gb) and the input gradient.

    Activations have shape (n, m, features).  With ``per_sample`` the
    parameter gradients keep the leading ``n`` axis and sum over ``m``;
    otherwise they sum over both.
    """
    grads = [None] * len(layers)
    delta = grad_out
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a_in = acts[li]
        if per_sample:
            gW = np.matmul(np.swapaxes(delta, -1, -2), a_in)
            gb = delta.sum(axis=1)
        else:
            d2 = delta.reshape(-1, delta.shape[-1])
            gW = d2.T @ a_in.reshape(-1, a_in.shape[-1])
            gb = d2.sum(axis=0)
        grads[li] = (gW, gb)
        delta = delta @ W
        if li > 0:
            delta = delta * (1.0 - a_in**2)
    return grads, delta


def _flatten(grads, per_sample):
    parts = []
    for gW, gb in grads:
        if per_sample:
            parts += [gW.reshape(gW.shape[0], -1), gb.reshape(gb.shape[0], -1)]
        else:
            parts += [gW.reshape(-1), gb.reshape(-1)]
    return np.concatenate(parts, axis=-1)


def _encode(params, X):
    L = params.arch.latent_dim
    acts = _forward(params.encoder_layers(), X, "encoder")
    out = acts[-1]
    mu, s = out[..., :L], out[..., L:]
    with np.errstate(over="ignore", under="ignore"):
        sigma = np.exp(0.5 * s)
    if not np.all(np.isfinite(sigma)) or np.any(sigma == 0):
        raise NumericError("encoder scale overflow/underflow", layer=len(acts) - 2)
    return acts, mu, sigma


def _check_dim(x, d, what="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d:
        raise ValidationError(f"{what} has dimension {x.shape[-1]}, expected {d}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what} contains non-finite values")
    return x


def encode(x, params: VAEParams):
    """Posterior mean and standard deviation for one point or a batch."""
    x = _check_dim(x, params.arch.input_dim)
    _, mu, sigma = _encode(params, x)
    return mu, sigma


def decode(xi, params: VAEParams):
    xi = _check_dim(xi, params.arch.latent_dim, "latent code")
    return _forward(params.decoder_layers(), xi, "decoder")[-1]


def kl_term(mu, sigma):
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)


def log_likelihood(x, xi, params: VAEParams):
    """log P(x | xi) under the unit-variance Gaussian decoder."""
    x = _check_dim(x, params.arch.input_dim)
    mu_p = decode(xi, params)
    return -0.5 * np.sum((mu_p - x) ** 2, axis=-1) - 0.5 * x.shape[-1] * LOG_2PI


def log_q(x, xi, params: VAEParams):
    """log Q(xi | x)."""
    mu, sigma = encode(x, params)
    xi = _check_dim(xi, params.arch.latent_dim, "latent code")
    return np.sum(-0.5 * LOG_2PI - np.log(sigma) - 0.5 * ((xi - mu) / sigma) ** 2, axis=-1)


def _noise(noise, L):
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 1:
        noise = noise[None, :]
    if noise.ndim != 2 or noise.shape[1] != L:
        raise ValidationError(f"noise must have shape (m, {L})")
    if noise.shape[0] == 0:
        raise ValidationError("need at least one latent draw (m >= 1)")
    return noise


def loss(x, params: VAEParams, beta, noise) -> float:
    """beta * KL + mean over draws of -log P(x | mu_Q + sigma_Q * noise_j)."""
    noise = _noise(noise, params.arch.latent_dim)
    mu, sigma = encode(x, params)
    xi = mu + sigma * noise
    return float(beta * kl_term(mu, sigma) - np.mean(log_likelihood(x, xi, params)))


def _core(params, X, zeta, beta, estimator, per_sample, weight=1.0):
    """Losses and gradient blocks for a batch.

    ``X`` is (n, d), ``zeta`` (n, m, L).  Returns per-sample losses (n,),
    the decoder block (mean of U over draws) and the encoder block (mean of
    V for ``paper_eq8``, the reparameterised gradient for ``pathwise``),
    scaled by ``weight`` and, without ``per_sample``, summed over samples.
    """
    n, m, L = zeta.shape
    d = X.shape[1]
    enc_acts, mu, sigma = _encode(params, X[:, None, :])
    xi = mu + sigma * zeta
    dec_acts = _forward(params.decoder_layers(), xi, "decoder")
    resid = dec_acts[-1] - X[:, None, :]
    sq = np.sum(resid**2, axis=-1)  # (n, m)
    kl = kl_term(mu[:, 0], sigma[:, 0])
    losses = beta * kl + 0.5 * sq.mean(axis=1) + 0.5 * d * LOG_2PI

    dec_grads, dxi = _backward(params.decoder_layers(), dec_acts, resid * (weight / m), per_sample)
    if estimator == "pathwise":
        g_mu = dxi.sum(axis=1, keepdims=True) + (beta * weight) * mu
        g_s = 0.5 * sigma * (dxi * zeta).sum(axis=1, keepdims=True) + (0.5 * beta * weight) * (sigma**2 - 1.0)
    elif estimator == "paper_eq8":
        log_ratio = np.sum(-np.log(sigma) - 0.5 * zeta**2 + 0.5 * xi**2, axis=-1)  # log Q/P_latent
        log_px = -0.5 * sq - 0.5 * d * LOG_2PI
        bracket = (beta * log_ratio - log_px)[..., None] * (weight / m)
        g_mu = np.sum(bracket * zeta / sigma, axis=1, keepdims=True)
        g_s = np.sum(bracket * 0.5 * (zeta**2 - 1.0), axis=1, keepdims=True)
    else:
        raise ValidationError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    enc_grads, _ = _backward(params.encoder_layers(), enc_acts, np.concatenate([g_mu, g_s], axis=-1), per_sample)
    return losses, _flatten(dec_grads, per_sample), _flatten(enc_grads, per_sample)


def _single(x, xi_or_zeta, params):
    x = _check_dim(x, params.arch.input_dim).reshape(1, -1)
    z = _noise(xi_or_zeta, params.arch.latent_dim)
    return x, z


def grad_U(x, xi, params: VAEParams):
    """Decoder gradient of -log P(x | xi), averaged over the rows of ``xi``."""
    x, xi = _single(x, xi, params)
    acts = _forward(params.decoder_layers(), xi[None], "decoder")
    resid = acts[-1] - x[:, None, :]
    grads, _ = _backward(params.decoder_layers(), acts, resid / xi.shape[0], per_sample=False)
    return _flatten(grads, per_sample=False)


def grad_log_q(x, xi, params: VAEParams):
    """Encoder gradient of log Q(xi | x) with xi held fixed, averaged over rows of ``xi``."""
    x, xi = _single(x, xi, params)
    acts, mu, sigma = _encode(params, x[:, None, :])
    zeta = (xi[None] - mu) / sigma
    m = xi.shape[0]
    g_mu = np.sum(zeta / sigma, axis=1, keepdims=True) / m
    g_s = np.sum(0.5 * (zeta**2 - 1.0), axis=1, keepdims=True) / m
    grads, _ = _backward(params.encoder_layers(), acts, np.concatenate([g_mu, g_s], -1), per_sample=False)
    return _flatten(grads, per_sample=False)


def grad_V_scorefn(x, xi, params: VAEParams, beta):
    """Score-function encoder gradient

        grad_psi log Q(xi|x) * (beta log(Q(xi|x) / P_latent(xi)) - log P(x|xi)),

    averaged over the rows of ``xi`` (each treated as a constant).
    """
    x, xi = _single(x, xi, params)
    _, mu, sigma = _encode(params, x[:, None, :])
    zeta = (xi[None] - mu) / sigma
    _, _, v = _core(params, x, zeta, beta, "paper_eq8", per_sample=False)
    return v


def grad_pathwise(x, zeta, params: VAEParams, beta):
    """Full gradient of beta*KL + mean_j |mu_P(mu_Q + sigma_Q*zeta_j) - x|^2 / 2."""
    x, zeta = _single(x, zeta, params)
    _, u, v = _core(params, x, zeta[None], beta, "pathwise", per_sample=False)
    return np.concatenate([u, v])


def batch_gradients(X, zeta, params: VAEParams, beta, estimator="paper_eq8"):
    """Per-sample decoder/encoder gradient blocks averaged over draws.

    ``X`` is (n, d) and ``zeta`` (n, m, L) standard normal draws; returns
    ``(u, v, losses)`` with shapes (n, |phi|), (n, |psi|), (n,).
    """
    X = _check_dim(np.atleast_2d(X), params.arch.input_dim)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim != 3 or zeta.shape[0] != X.shape[0] or zeta.shape[2] != params.arch.latent_dim:
        raise ValidationError(f"zeta must have shape ({X.shape[0]}, m, {params.arch.latent_dim})")
    if zeta.shape[1] == 0:
        raise ValidationError("need at least one latent draw (m >= 1)")
    losses, u, v = _core(params, X, zeta, beta, estimator, per_sample=True)
    return u, v, losses


def sample_losses(X, params: VAEParams, beta, m=16, seed=0):
    """Per-sample loss estimates with ``m`` draws from stream ``(seed, "loss", row)``."""
    X = np.atleast_2d(X)
    L = params.arch.latent_dim
    zeta = np.stack([rng.standard_normal(rng.stream(seed, "loss", i), (m, L)) for i in range(len(X))])
    _, _, losses = batch_gradients(X, zeta, params, beta, "pathwise")
    return losses


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    total_steps: int = 5000
    checkpoint_every: int = 250
    seed: int = 0
    m_train: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError("beta must be > 0")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.m_train < 1 or self.total_steps < 1:
            raise ValidationError("batch_size, m_train and total_steps must be >= 1")
        if not (1 <= self.checkpoint_every <= self.total_steps):
            raise ValidationError("checkpoint_every must be in [1, total_steps]")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: VAEParams
    step: int
    beta: float
    learning_rate: float
    seed: int
    loss: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValidationError("checkpoint step must be >= 0")
        if not self.beta > 0:
            raise ValidationError("checkpoint beta must be > 0")

    @property
    def arch(self) -> VAEArch:
        return self.params.arch

    def __eq__(self, other):
        return (
            isinstance(other, Checkpoint)
            and self.params == other.params
            and (self.step, self.beta, self.learning_rate, self.seed) == (other.step, other.beta, other.learning_rate, other.seed)
        )

    __hash__ = None


def train(
    dataset: Dataset,
    arch: VAEArch,
    config: TrainConfig,
    sample_ids=None,
    init: Optional[VAEParams] = None,
    loss_log: Optional[list] = None,
    meta: Optional[dict] = None,
) -> List[Checkpoint]:
    """Plain SGD on the reparameterised loss gradient.

    Mini-batches are consecutive slices of a per-epoch shuffle from stream
    ``(seed, "shuffle", epoch)``.  The latent noise of row ``r`` at step
    ``t`` is row ``sample_ids[r]`` of the table drawn from
    ``(seed, "train-noise", t)``, so a leave-one-out run (same ids, one row
    dropped) sees identical noise for every remaining sample.

    A checkpoint is emitted every ``checkpoint_every`` steps and after the
    final step.
    """
    if dataset.d != arch.input_dim:
        raise ValidationError(f"dataset has d={dataset.d}, architecture expects {arch.input_dim}")
    n = dataset.n
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    if ids.shape != (n,) or ids.min() < 0:
        raise ValidationError("sample_ids must be n non-negative integers")
    params = init if init is not None else init_params(arch, config.seed)
    if params.arch != arch:
        raise ValidationError("initial parameters do not match the architecture")
    theta = params.theta.copy()
    L, B, m = arch.latent_dim, config.batch_size, config.m_train
    table_rows = int(ids.max()) + 1
    X = dataset.data
    meta = dict(meta or {})
    meta.setdefault("data_fingerprint", dataset.fingerprint())

    checkpoints = []
    order, pos, epoch = None, n, 0
    for step in range(1, config.total_steps + 1):
        if B >= n:
            idx = np.arange(n)
        else:
            if pos >= n:
                order = rng.shuffled_order(rng.stream(config.seed, "shuffle", epoch), n)
                epoch += 1
                pos = 0
            idx = order[pos : pos + B]
            pos += B
        table = rng.standard_normal(rng.stream(config.seed, "train-noise", step), (table_rows, m, L))
        current = VAEParams(arch, theta)
        try:
            losses, gu, gv = _core(current, X[idx], table[ids[idx]], config.beta, "pathwise", False, 1.0 / len(idx))
        except NumericError as e:
            raise NumericError(f"training diverged: {e}", step=step) from None
        batch_loss = float(np.mean(losses))
        if not np.isfinite(batch_loss) or not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gv))):
            raise NumericError("training diverged (non-finite loss)", step=step)
        if config.learning_rate != 0.0:
            theta[: gu.size] -= config.learning_rate * gu
            theta[gu.size :] -= config.learning_rate * gv
        if loss_log is not None:
            loss_log.append(batch_loss)
        if step % config.checkpoint_every == 0 or step == config.total_steps:
            checkpoints.append(
                Checkpoint(VAEParams(arch, theta), step, config.beta, config.learning_rate, config.seed, batch_loss, dict(meta))
            )
    return checkpoints


# --- persistence -------------------------------------------------------------


def checkpoint_filename(step: int) -> str:
    return f"ckpt_{step:07d}.vae"


def save_checkpoint(ckpt: Checkpoint, path):
    header = {
        "arch": ckpt.arch.to_dict(),
        "step": int(ckpt.step),
        "beta": float(ckpt.beta),
        "learning_rate": float(ckpt.learning_rate),
        "seed": int(ckpt.seed),
        "loss": float(ckpt.loss),
        "layout": ckpt.params.layout.to_list(),
        "meta": ckpt.meta,
    }
    write_container(path, "vae", header, ckpt.params.theta)


def load_checkpoint(path, arch: Optional[VAEArch] = None) -> Checkpoint:
    """Read a checkpoint; if ``arch`` is given it must match the stored one."""
    _, h, theta = read_container(path, kind="vae")
    stored = VAEArch.from_dict(h["arch"])
    if arch is not None and arch != stored:
        raise ValidationError(f"checkpoint architecture {stored} does not match {arch}")
    params = VAEParams(stored, theta)
    if params.layout.to_list() != h["layout"]:
        raise ValidationError("checkpoint layout descriptor does not match its architecture")
    return Checkpoint(params, h["step"], h["beta"], h["learning_rate"], h["seed"], h["loss"], h.get("meta", {}))


def load_run(directory) -> List[Checkpoint]:
    """All checkpoints in a run directory, ordered by step."""
    paths = sorted(Path(directory).glob("ckpt_*.vae"))
    return [load_checkpoint(p) for p in paths]
