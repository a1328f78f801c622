"""Tanh MLP policy with diagonal-Gaussian action heads.

Flat parameter layout (must match on every node, perturbations act on it):
for each dense layer in order, the weight matrix of shape ``(fan_in, fan_out)``
in row-major order, followed by that layer's bias of length ``fan_out``.
The final layer has ``2 * action_dim`` outputs: means first, then the
variance head, mapped from tanh's [-1, 1] onto [0, 1] by ``(x + 1) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vecmath import DimensionError

OBS_CLIP = 5.0
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class PolicySpec:
    obs_dim: int
    action_dim: int
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.obs_dim < 1 or self.action_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid policy shape {self}")

    @property
    def output_dim(self) -> int:
        return 2 * self.action_dim

    @property
    def layer_sizes(self) -> list[tuple[int, int]]:
        sizes = [self.obs_dim, *self.hidden, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def num_params(self) -> int:
        return sum((i + 1) * o for i, o in self.layer_sizes)


def unflatten(spec: PolicySpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector (or a ``(K, d)`` stack of them) into ``(W, b)`` pairs.

    Returned arrays are views; for a stack, ``W`` has shape ``(K, fan_in, fan_out)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != spec.num_params:
        raise DimensionError(f"policy expects {spec.num_params} parameters, got {theta.shape[-1]}")
    lead = theta.shape[:-1]
    layers = []
    k = 0
    for fan_in, fan_out in spec.layer_sizes:
        w = theta[..., k:k + fan_in * fan_out].reshape(*lead, fan_in, fan_out)
        k += fan_in * fan_out
        b = theta[..., k:k + fan_out]
        k += fan_out
        layers.append((w, b))
    return layers


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(spec: PolicySpec, rng: np.random.Generator) -> np.ndarray:
    """Weights ~ N(0, 1/fan_in), biases zero."""
    layers = [(rng.standard_normal((i, o)) / np.sqrt(i), np.zeros(o)) for i, o in spec.layer_sizes]
    return flatten(layers)


def _heads(spec: PolicySpec, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = spec.action_dim
    return out[..., :a], (out[..., a:] + 1.0) / 2.0


def forward(spec: PolicySpec, theta: np.ndarray, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Action means and variances for one standardized observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (spec.obs_dim,):
        raise DimensionError(f"observation must have shape ({spec.obs_dim},), got {obs.shape}")
    if np.ndim(theta) != 1:
        raise DimensionError("forward takes a single flat parameter vector")
    h = obs
    for w, b in unflatten(spec, theta):
        h = np.tanh(h @ w + b)
    return _heads(spec, h)


def forward_layers(spec: PolicySpec, layers, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward over pre-split stacked layers: obs ``(K, obs_dim)``."""
    h = obs[:, None, :]
    for w, b in layers:
        h = np.tanh(np.matmul(h, w) + b[:, None, :])
    return _heads(spec, h[:, 0, :])


def sample_action(means: np.ndarray, variances: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if np.any(variances < 0):
        raise ValueError("negative action variance")
    return means + np.sqrt(variances) * rng.standard_normal(means.shape)


class ObsStandardizer:
    """Running observation moments (Welford / Chan merge) with clipping.

    Stats are updated with the raw observation first, then the updated stats
    are used to standardize it. Until two observations have been seen the
    variance is undefined and observations pass through clipped.
    """

    def __init__(self, obs_dim: int, clip: float = OBS_CLIP):
        self.obs_dim = obs_dim
        self.clip = clip
        self.count = 0
        self.mean = np.zeros(obs_dim)
        self.m2 = np.zeros(obs_dim)

    def update(self, obs: np.ndarray) -> None:
        """Fold in one observation ``(obs_dim,)`` or a block ``(n, obs_dim)``."""
        x = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        n = x.shape[0]
        if n == 0:
            return
        bmean = np.add.reduce(x, axis=0) / n
        c = x - bmean
        bm2 = np.add.reduce(c * c, axis=0)
        total = self.count + n
        delta = bmean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + bm2 + delta**2 * (self.count * n / total)
        self.count = total

    def update_one(self, obs: np.ndarray) -> None:
        """Single-observation Welford step (hot path of sequential rollouts)."""
        self.count += 1
        delta = obs - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (obs - self.mean)

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.obs_dim)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.sqrt(self.var), STD_FLOOR)

    def apply(self, obs: np.ndarray) -> np.ndarray:
        """Standardize with the current stats, without updating them."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.count < 2:
            return np.minimum(np.maximum(obs, -self.clip), self.clip)
        z = (obs - self.mean) / self.std
        return np.minimum(np.maximum(z, -self.clip), self.clip)

    def copy(self) -> "ObsStandardizer":
        other = ObsStandardizer(self.obs_dim, self.clip)
        other.count, other.mean, other.m2 = self.count, self.mean.copy(), self.m2.copy()
        return other


def standardize_obs(std: ObsStandardizer, obs: np.ndarray) -> np.ndarray:
    std.update(obs)
    return std.apply(obs)
