"""Two-dimensional Gaussian-to-mixture flow-matching task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.optim import ParamStore
from ..nn.rng import make_rng
from .losses import rf_loss
from .net import MLPField
from .sampler import euler_integrate
from .train import cosine_schedule, train_loop


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple = (0.3, 0.7)
    means: tuple = ((-0.5, 0.25), (2.5, 1.75))
    std: float = 0.2

    def sample(self, n, rng) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return np.asarray(self.means)[comp] + self.std * rng.standard_normal((n, 2))

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact per-coordinate mean and standard deviation."""
        w = np.asarray(self.weights)[:, None]
        mu = np.asarray(self.means)
        mean = (w * mu).sum(axis=0)
        second = (w * (mu ** 2 + self.std ** 2)).sum(axis=0)
        return mean, np.sqrt(second - mean ** 2)


def train_toy(steps=5000, n_train=4096, batch=8, points=64, hidden=128, lr=1e-3, seed=0,
              sigma_mode="utterance", mixture=GaussianMixture()):
    """Fit an MLP field; returns ``(field, history)``.

    A training item is a set of ``points`` samples treated as one
    utterance of ``points`` frames x 2 features.
    """
    data = mixture.sample(n_train, make_rng(seed, "toy-data"))
    field = MLPField(2, hidden, rng=make_rng(seed, "init"))
    store = ParamStore.from_module(field)

    def loss_fn(step, rng):
        x1 = data[rng.integers(0, n_train, size=(batch, points))]
        x0 = rng.standard_normal(x1.shape)
        t = rng.uniform(0.0, 1.0, size=batch)
        loss = rf_loss(field, x0, x1, t, sigma_mode=sigma_mode)
        return loss, {"rf": float(loss.data)}

    history = train_loop(loss_fn, store, steps, lr=cosine_schedule(lr, steps), seed=seed)
    return field, history


def sample_toy(field, n=4096, n_steps=10, seed=0) -> np.ndarray:
    z0 = make_rng(seed, "toy-sample").standard_normal((n, 2))
    return euler_integrate(field, z0, n_steps)
