"""Multilayer-perceptron VAE in numpy with hand-written backpropagation.

Encoder: x -> tanh(W1 x + b1) -> (mu, logvar). Decoder: z -> tanh(W3 z + b3)
-> sigmoid(W4 h + b4). Loss per sample is binary cross-entropy summed over
pixels plus beta * KL(N(mu, sigma^2) || N(0, I)); batches are averaged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .rng import STREAM_CROSSOVER, STREAM_EPSILON, STREAM_VAE_BATCH, STREAM_VAE_INIT, stream

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "Wmu", "bmu", "Wlv", "blv", "W3", "b3", "W4", "b4")
CHECKPOINT_VERSION = 1


@dataclass
class VaeParams:
    W1: np.ndarray
    b1: np.ndarray
    Wmu: np.ndarray
    bmu: np.ndarray
    Wlv: np.ndarray
    blv: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.Wmu.shape[0]

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "VaeParams":
        return VaeParams(**{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def with_flat(self, vec) -> "VaeParams":
        out, k = {}, 0
        for name, v in self.arrays().items():
            out[name] = np.asarray(vec[k:k + v.size], dtype=float).reshape(v.shape)
            k += v.size
        return VaeParams(**out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())

    @classmethod
    def zeros(cls, input_dim, hidden_dim, latent_dim):
        return cls(
            W1=np.zeros((hidden_dim, input_dim)), b1=np.zeros(hidden_dim),
            Wmu=np.zeros((latent_dim, hidden_dim)), bmu=np.zeros(latent_dim),
            Wlv=np.zeros((latent_dim, hidden_dim)), blv=np.zeros(latent_dim),
            W3=np.zeros((hidden_dim, latent_dim)), b3=np.zeros(hidden_dim),
            W4=np.zeros((input_dim, hidden_dim)), b4=np.zeros(input_dim),
        )

    def save(self, path):
        np.savez(path, version=CHECKPOINT_VERSION,
                 dims=np.array([self.input_dim, self.hidden_dim, self.latent_dim]),
                 **self.arrays())

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ValueError("unsupported VAE checkpoint version")
            params = cls(**{k: data[k] for k in PARAM_NAMES})
            if tuple(data["dims"]) != (params.input_dim, params.hidden_dim, params.latent_dim):
                raise ValueError("VAE checkpoint dims header does not match weights")
        return params


def init_params(input_dim, hidden_dim, latent_dim, rng: np.random.Generator) -> VaeParams:
    """He-scaled normal weights, zero biases."""
    def he(rows, cols):
        return rng.standard_normal((rows, cols)) * np.sqrt(2.0 / cols)

    p = VaeParams.zeros(input_dim, hidden_dim, latent_dim)
    p.W1 = he(hidden_dim, input_dim)
    p.Wmu = he(latent_dim, hidden_dim)
    p.Wlv = he(latent_dim, hidden_dim)
    p.W3 = he(hidden_dim, latent_dim)
    p.W4 = he(input_dim, hidden_dim)
    return p


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def encode(params: VaeParams, x):
    """Return (mu, sigma) for one sample or a batch (rows)."""
    x = np.asarray(x, dtype=float)
    h = np.tanh(x @ params.W1.T + params.b1)
    mu = h @ params.Wmu.T + params.bmu
    logvar = h @ params.Wlv.T + params.blv
    return mu, np.exp(0.5 * logvar)


def reparameterize(mu, sigma, eps):
    return np.asarray(mu) + np.asarray(sigma) * np.asarray(eps)


def decode_logits(params: VaeParams, z):
    h = np.tanh(np.asarray(z, dtype=float) @ params.W3.T + params.b3)
    return h @ params.W4.T + params.b4


def decode(params: VaeParams, z):
    return _sigmoid(decode_logits(params, z))


def kl_divergence(mu, logvar):
    """Per-sample KL(N(mu, exp(logvar)) || N(0, I))."""
    return -0.5 * np.sum(1 + logvar - mu**2 - np.exp(logvar), axis=-1)


def loss_and_grads(params: VaeParams, X, eps, beta: float = 1.0):
    """Mean loss over the batch and its gradient, for fixed noise ``eps``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eps = np.atleast_2d(eps)
    B = len(X)
    # forward
    a1 = X @ params.W1.T + params.b1
    h1 = np.tanh(a1)
    mu = h1 @ params.Wmu.T + params.bmu
    logvar = h1 @ params.Wlv.T + params.blv
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    a3 = z @ params.W3.T + params.b3
    h3 = np.tanh(a3)
    logits = h3 @ params.W4.T + params.b4
    # BCE with logits: softplus(l) - x l
    bce = np.sum(np.logaddexp(0.0, logits) - X * logits, axis=1)
    kl = kl_divergence(mu, logvar)
    loss = float(np.mean(bce + beta * kl))

    # backward (everything divided by B for the batch mean)
    g = {}
    d_logits = (_sigmoid(logits) - X) / B
    g["W4"] = d_logits.T @ h3
    g["b4"] = d_logits.sum(axis=0)
    d_h3 = d_logits @ params.W4
    d_a3 = d_h3 * (1 - h3**2)
    g["W3"] = d_a3.T @ z
    g["b3"] = d_a3.sum(axis=0)
    d_z = d_a3 @ params.W3
    d_mu = d_z + beta * mu / B
    d_logvar = d_z * eps * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1) / B
    g["Wmu"] = d_mu.T @ h1
    g["bmu"] = d_mu.sum(axis=0)
    g["Wlv"] = d_logvar.T @ h1
    g["blv"] = d_logvar.sum(axis=0)
    d_h1 = d_mu @ params.Wmu + d_logvar @ params.Wlv
    d_a1 = d_h1 * (1 - h1**2)
    g["W1"] = d_a1.T @ X
    g["b1"] = d_a1.sum(axis=0)
    return loss, VaeParams(**g), {"bce": float(bce.mean()), "kl": float(kl.mean())}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 20
    learning_rate: float = 1e-3
    beta: float = 1.0
    hidden_dim: int = 128
    latent_dim: int = 8

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.hidden_dim, self.latent_dim) < 1:
            raise ValueError("VAE sizes and epochs must be positive")
        if self.learning_rate <= 0 or self.beta < 0:
            raise ValueError("learning rate must be positive and beta non-negative")


class TrainingDiverged(RuntimeError):
    pass


def train(elites, config: TrainConfig, master_seed: int = 0, iteration: int = 0):
    """Fresh VAE fit on ``elites`` with Adam. Returns (params, per-epoch mean loss)."""
    X = np.asarray(elites, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two training fields")
    params = init_params(X.shape[1], config.hidden_dim, config.latent_dim,
                         stream(master_seed, STREAM_VAE_INIT, iteration))
    batch_rng = stream(master_seed, STREAM_VAE_BATCH, iteration)
    eps_rng = stream(master_seed, STREAM_EPSILON, iteration)
    b1, b2, tiny = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    v = {k: np.zeros_like(w) for k, w in params.arrays().items()}
    history = []
    step = 0
    for _ in range(config.epochs):
        order = batch_rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(X), config.batch_size):
            idx = order[s:s + config.batch_size]
            eps = eps_rng.standard_normal((len(idx), config.latent_dim))
            loss, grads, _ = loss_and_grads(params, X[idx], eps, config.beta)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            step += 1
            for k, gk in grads.arrays().items():
                m[k] = b1 * m[k] + (1 - b1) * gk
                v[k] = b2 * v[k] + (1 - b2) * gk**2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                setattr(params, k, getattr(params, k) - config.learning_rate * mhat / (np.sqrt(vhat) + tiny))
            total += loss * len(idx)
        history.append(total / len(X))
    if not params.is_finite():
        raise TrainingDiverged("non-finite parameters after training")
    return params, history


def _simplex_sample(vertices, rng, expansion):
    """Uniform sample of the simplex expanded about its centroid (SPX)."""
    c = vertices.mean(axis=0)
    y = c + expansion * (vertices - c)
    n = len(y) - 1
    C = np.zeros(y.shape[1])
    for k in range(1, n + 1):
        r = rng.random() ** (1.0 / k)
        C = r * (y[k - 1] - y[k] + C)
    return y[n] + C


def latent_crossover(params: VaeParams, elites, offspring_count: int, rng: np.random.Generator,
                     fixed_mask=None) -> np.ndarray:
    """Decode simplex-crossover samples drawn among the elites' latent means.

    ``fixed_mask`` marks entries re-pinned to 1 (the frozen load strip).
    """
    X = np.asarray(elites, dtype=float)
    mu, _ = encode(params, X)
    d = params.latent_dim
    zs = []
    if len(X) >= d + 1:
        expansion = np.sqrt(d + 2)
        for _ in range(offspring_count):
            parents = rng.choice(len(X), size=d + 1, replace=False)
            zs.append(_simplex_sample(mu[parents], rng, expansion))
    else:
        if len(X) < 2:
            raise ValueError("latent crossover needs at least two elites")
        for _ in range(offspring_count):
            a, b = rng.choice(len(X), size=2, replace=False)
            t = rng.uniform(-0.25, 1.25)
            zs.append(t * mu[a] + (1 - t) * mu[b])
    Z = np.asarray(zs).reshape(offspring_count, d)
    out = np.clip(decode(params, Z), 0.0, 1.0)
    if not np.all(np.isfinite(out)):
        raise TrainingDiverged("decoder produced non-finite densities")
    if fixed_mask is not None:
        out[:, np.asarray(fixed_mask, dtype=bool)] = 1.0
    return out


def crossover_rng(master_seed: int, iteration: int) -> np.random.Generator:
    return stream(master_seed, STREAM_CROSSOVER, iteration)
