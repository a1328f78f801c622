"""Gradient estimators over batches of worker evaluations.

All estimators share one accumulation routine so that a DFD batch with no
delayed data produces exactly the same floating-point result as plain FD.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .vecmath import DimensionError, check_seed, norm_squared, sample_noise, sample_noise_batch

log = logging.getLogger(__name__)

BASELINE_RATIO = 0.2
HISTORY_DEPTH = 64


class MissingHistoryError(KeyError):
    """An evaluation references parameters no longer held in history."""


class RejectedEvaluationError(ValueError):
    """Delayed data reached an estimator that only accepts current data."""


@dataclass(frozen=True)
class Evaluation:
    seed: int
    reward: float
    episode_len: int
    origin_update: int

    def __post_init__(self):
        check_seed(self.seed)
        if not np.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward}")
        if self.episode_len < 0 or self.origin_update < 0:
            raise ValueError("episode_len and origin_update must be nonnegative")


@dataclass(frozen=True)
class Batch:
    """``rewards`` holds the working values (raw, or standardized once
    :func:`standardize_rewards` has run); the evaluations keep the originals."""

    evals: tuple[Evaluation, ...]
    rewards: np.ndarray
    mu_R: float | None = None
    sigma_R: float | None = None
    baseline: float | None = None
    degenerate: bool = False

    @classmethod
    def from_evals(cls, evals: Sequence[Evaluation]) -> "Batch":
        evals = tuple(evals)
        return cls(evals, np.array([e.reward for e in evals], dtype=np.float64))

    def __len__(self):
        return len(self.evals)

    @property
    def raw_rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.evals], dtype=np.float64)

    @property
    def standardized(self) -> bool:
        return self.mu_R is not None

    def with_baseline(self, baseline: float) -> "Batch":
        return replace(self, baseline=float(baseline))


@dataclass(frozen=True)
class GradEstimate:
    g: np.ndarray
    n_current: int
    n_delayed: int
    n_skipped: int = 0


class ParamHistory:
    """The last ``depth`` parameter vectors, keyed by update index."""

    def __init__(self, depth: int = HISTORY_DEPTH):
        if depth < 1:
            raise ValueError("history depth must be >= 1")
        self.depth = depth
        self._store: OrderedDict[int, np.ndarray] = OrderedDict()

    def record(self, u: int, theta: np.ndarray) -> None:
        if self._store and u <= self.latest:
            raise ValueError(f"update index {u} does not advance past {self.latest}")
        theta = np.array(theta, dtype=np.float64)
        theta.flags.writeable = False
        self._store[u] = theta
        while len(self._store) > self.depth:
            self._store.popitem(last=False)

    @property
    def latest(self) -> int:
        return next(reversed(self._store))

    @property
    def oldest(self) -> int:
        return next(iter(self._store))

    def __contains__(self, u: int) -> bool:
        return u in self._store

    def __getitem__(self, u: int) -> np.ndarray:
        try:
            return self._store[u]
        except KeyError:
            raise MissingHistoryError(f"parameters for update {u} not in history") from None

    def __len__(self):
        return len(self._store)


def standardize_rewards(batch: Batch) -> Batch:
    """Shift/scale working rewards to mean 0, population sd 1.

    An all-equal batch carries no direction: rewards become zeros and the
    batch is flagged ``degenerate``.
    """
    if len(batch) < 2:
        raise ValueError("standardization needs at least 2 evaluations")
    r = batch.raw_rewards
    mu = float(np.mean(r))
    sd = float(np.std(r))
    if sd == 0.0:
        log.warning("degenerate batch: all %d rewards equal %g", len(r), mu)
        return replace(batch, rewards=np.zeros_like(r), mu_R=mu, sigma_R=0.0, degenerate=True)
    return replace(batch, rewards=(r - mu) / sd, mu_R=mu, sigma_R=sd, degenerate=False)


def estimate_baseline(batch: Batch, current_u: int, ratio_threshold: float = BASELINE_RATIO) -> float:
    """Approximate R(theta_u) from the batch's working rewards.

    Mean over current-policy evaluations when they make up at least
    ``ratio_threshold`` of the batch, otherwise the mean over the whole batch.
    """
    if len(batch) < 1:
        raise ValueError("empty batch")
    current = np.array([e.origin_update == current_u for e in batch.evals])
    B = int(current.sum())
    if B / len(batch) >= ratio_threshold:
        return float(np.mean(batch.rewards[current]))
    return float(np.mean(batch.rewards))


def compute_lambda(ev: Evaluation, sigma: float, theta_now: np.ndarray,
                   theta_origin: np.ndarray) -> np.ndarray:
    """Effective perturbation of ``theta_now``: sigma*eps + theta_origin - theta_now."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    theta_now = np.asarray(theta_now, dtype=np.float64)
    theta_origin = np.asarray(theta_origin, dtype=np.float64)
    if theta_now.shape != theta_origin.shape:
        raise DimensionError("theta_now and theta_origin differ in shape")
    eps = sample_noise(ev.seed, theta_now.size)
    # bias term first so a current evaluation yields sigma*eps exactly
    return sigma * eps + (theta_origin - theta_now)


def compute_lambdas(evals: Sequence[Evaluation], sigma: float, theta_now: np.ndarray,
                    theta_origins: np.ndarray) -> np.ndarray:
    """Row-wise :func:`compute_lambda` for many evaluations, bit-identical to it.

    ``theta_origins`` is ``(len(evals), d)``, or one ``(d,)`` vector shared by all.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    theta_now = np.asarray(theta_now, dtype=np.float64)
    theta_origins = np.asarray(theta_origins, dtype=np.float64)
    if theta_origins.shape[-1:] != theta_now.shape:
        raise DimensionError("theta_now and theta_origins differ in shape")
    eps = sample_noise_batch([e.seed for e in evals], theta_now.size)
    return sigma * eps + (theta_origins - theta_now)


def _accumulate(coeffs: np.ndarray, perturbations: np.ndarray) -> tuple[np.ndarray, int]:
    """(1/kept) * sum_i coeffs_i * p_i / ||p_i||^2, skipping zero-norm rows."""
    norms = np.einsum("ij,ij->i", perturbations, perturbations)
    keep = norms > 0.0
    skipped = int((~keep).sum())
    if skipped:
        log.warning("skipping %d zero-norm perturbations", skipped)
    kept = len(norms) - skipped
    if kept == 0:
        return np.zeros(perturbations.shape[1]), skipped
    w = np.where(keep, coeffs / np.where(keep, norms, 1.0), 0.0)
    return (w @ perturbations) / kept, skipped


def _centred(batch: Batch) -> np.ndarray:
    if batch.baseline is None:
        raise ValueError("batch baseline not set")
    return batch.rewards - batch.baseline


def grad_dfd(batch: Batch, theta_now: np.ndarray, sigma: float, history: ParamHistory,
             u: int | None = None) -> GradEstimate:
    """Delayed finite-difference estimate at ``theta_now`` (update ``u``).

    ``u`` defaults to the newest entry in ``history``.
    """
    if u is None:
        u = history.latest
    if any(e.origin_update > u for e in batch.evals):
        raise ValueError("evaluation from a future update")
    origins = np.stack([history[e.origin_update] for e in batch.evals])
    lam = compute_lambdas(batch.evals, sigma, theta_now, origins)
    n_cur = sum(e.origin_update == u for e in batch.evals)
    g, skipped = _accumulate(_centred(batch), lam)
    return GradEstimate(g, n_cur, len(batch) - n_cur, skipped)


def grad_fd(batch: Batch, theta_now: np.ndarray, sigma: float, u: int) -> GradEstimate:
    """Forward-difference estimate from current-policy evaluations only."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    stale = [e for e in batch.evals if e.origin_update != u]
    if stale:
        raise RejectedEvaluationError(f"{len(stale)} evaluations not from update {u}")
    d = np.asarray(theta_now).size
    pert = sigma * sample_noise_batch([e.seed for e in batch.evals], d)
    g, skipped = _accumulate(_centred(batch), pert)
    return GradEstimate(g, len(batch), 0, skipped)


def grad_es_antithetic(pairs: Sequence[tuple[Evaluation, Evaluation]], sigma: float, dim: int,
                       rewards: np.ndarray | None = None) -> GradEstimate:
    """Antithetic ES estimate: 1/(sigma*P) * sum_p (R+ - R-) eps_p.

    Deliberately not normalized by the perturbation size and not halved.
    ``rewards`` optionally overrides the ``(P, 2)`` reward pairs, e.g. with
    standardized values.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not pairs:
        raise ValueError("no antithetic pairs")
    for plus, minus in pairs:
        if plus.seed != minus.seed:
            raise ValueError(f"antithetic pair seeds differ: {plus.seed} != {minus.seed}")
    if rewards is None:
        rewards = np.array([[p.reward, m.reward] for p, m in pairs], dtype=np.float64)
    diff = rewards[:, 0] - rewards[:, 1]
    eps = sample_noise_batch([p.seed for p, _ in pairs], dim)
    g = (diff @ eps) / (sigma * len(pairs))
    return GradEstimate(g, 2 * len(pairs), 0)
