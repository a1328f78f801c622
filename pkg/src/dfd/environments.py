"""Episodic objectives: ``rollout(theta, rng) -> (return, length)``.

Analytic objectives are deterministic one-step "episodes" with exact
gradients, used to validate estimators. Episodic objectives run the full
policy stack. Every episode runs to termination; ``max_episode_len`` is a
hard safety cap, never a dynamic truncation.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .policy import ObsStandardizer, PolicySpec, forward_layers, unflatten
from .vecmath import DimensionError


class RolloutError(RuntimeError):
    pass


class Objective:
    kind = "episodic"
    max_episode_len = 1
    dim: int

    def check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.dim:
            raise DimensionError(f"objective expects dim {self.dim}, got {theta.shape[-1]}")
        return theta

    def rollout(self, theta, rng: np.random.Generator, obs_std: ObsStandardizer | None = None):
        R, T = self.rollout_batch(np.asarray(theta)[None, :], [rng], obs_std)
        return float(R[0]), int(T[0])

    def rollout_batch(self, thetas, rngs: Sequence[np.random.Generator], obs_std=None):
        out = [self.rollout(t, r, obs_std) for t, r in zip(thetas, rngs)]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out], dtype=np.int64)

    def analytic_gradient(self, theta) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no analytic gradient")

    def initial_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)


class Quadratic(Objective):
    """J(theta) = -||theta - target||^2."""

    kind = "analytic"

    def __init__(self, dim: int = 10, target=None):
        self.target = np.zeros(dim) if target is None else np.asarray(target, dtype=np.float64)
        self.dim = self.target.size

    def value(self, theta) -> float:
        d = self.check_theta(theta) - self.target
        return -float(d @ d)

    def rollout(self, theta, rng=None, obs_std=None):
        return self.value(theta), 1

    def analytic_gradient(self, theta) -> np.ndarray:
        return -2.0 * (self.check_theta(theta) - self.target)


class Rosenbrock(Objective):
    """Negated Rosenbrock: J = -sum b (x_{i+1} - x_i^2)^2 + (a - x_i)^2."""

    kind = "analytic"

    def __init__(self, dim: int = 4, a: float = 1.0, b: float = 100.0):
        if dim < 2:
            raise ValueError("Rosenbrock needs dim >= 2")
        self.dim, self.a, self.b = dim, a, b

    def value(self, theta) -> float:
        x = self.check_theta(theta)
        return -float(np.sum(self.b * (x[1:] - x[:-1] ** 2) ** 2 + (self.a - x[:-1]) ** 2))

    def rollout(self, theta, rng=None, obs_std=None):
        return self.value(theta), 1

    def analytic_gradient(self, theta) -> np.ndarray:
        x = self.check_theta(theta)
        g = np.zeros_like(x)
        inner = x[1:] - x[:-1] ** 2
        g[:-1] += -4.0 * self.b * inner * x[:-1] - 2.0 * (self.a - x[:-1])
        g[1:] += 2.0 * self.b * inner
        return -g


class PointMass(Objective):
    """2-D point mass held inside a circular arena against a steady wind.

    Observation ``(x, y, vx, vy)``; action is a 2-D force clipped to [-1, 1].
    Each step pays ``1 - |p| / arena`` and the episode ends when the mass
    leaves the arena, so better policies earn more per step *and* run
    longer episodes. The wind direction is drawn per episode.
    """

    obs_dim = 2 * 2
    action_dim = 2

    def __init__(self, hidden=(64, 64), max_episode_len: int = 1000, dt: float = 0.1,
                 arena: float = 1.0, wind: float = 0.5, gust: float = 0.3,
                 start_radius: float = 0.1, init_scale: float = 1.0):
        self.spec = PolicySpec(self.obs_dim, self.action_dim, tuple(hidden))
        self.dim = self.spec.num_params
        self.max_episode_len = int(max_episode_len)
        self.dt, self.arena, self.wind, self.gust = dt, arena, wind, gust
        self.start_radius = start_radius
        self.init_scale = init_scale

    def initial_params(self, rng):
        layers = [(rng.standard_normal((i, o)) * (self.init_scale / np.sqrt(i)), np.zeros(o))
                  for i, o in self.spec.layer_sizes]
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def _episode_noise(self, rng):
        L = self.max_episode_len
        r = self.start_radius * np.sqrt(rng.random())
        phi, wind_dir = rng.random(2) * 2.0 * np.pi
        pos = r * np.array([np.cos(phi), np.sin(phi)])
        wind = self.wind * np.array([np.cos(wind_dir), np.sin(wind_dir)])
        act_noise = rng.standard_normal((L, self.action_dim))
        gusts = rng.standard_normal((L, 2))
        return pos, wind, act_noise, gusts

    def rollout(self, theta, rng, obs_std=None):
        theta = self.check_theta(theta)
        if theta.ndim != 1:
            raise DimensionError("rollout takes a single parameter vector")
        if len(self.spec.hidden) != 2:
            R, T = self.rollout_batch(theta[None, :], [rng], obs_std)
            return float(R[0]), int(T[0])
        (w1, b1), (w2, b2), (w3, b3) = unflatten(self.spec, theta)
        pos, wind, act_noise, gusts = self._episode_noise(rng)
        x, y = float(pos[0]), float(pos[1])
        vx = vy = 0.0
        wx, wy = float(wind[0]), float(wind[1])
        dt, gust, arena = self.dt, self.gust, self.arena
        clip = obs_std.clip if obs_std is not None else 0.0
        ret, t = 0.0, 0
        for t in range(1, self.max_episode_len + 1):
            obs = np.array((x, y, vx, vy))
            if obs_std is not None:
                obs_std.update_one(obs)
                if obs_std.count >= 2:
                    obs = (obs - obs_std.mean) / obs_std.std
                obs = np.minimum(np.maximum(obs, -clip), clip)
            h = np.tanh(np.tanh(np.tanh(obs @ w1 + b1) @ w2 + b2) @ w3 + b3)
            n = act_noise[t - 1]
            ax = h[0] + ((h[2] + 1.0) * 0.5) ** 0.5 * n[0]
            ay = h[1] + ((h[3] + 1.0) * 0.5) ** 0.5 * n[1]
            ax = -1.0 if ax < -1.0 else (1.0 if ax > 1.0 else ax)
            ay = -1.0 if ay < -1.0 else (1.0 if ay > 1.0 else ay)
            g = gusts[t - 1]
            vx += dt * (ax + wx + gust * g[0])
            vy += dt * (ay + wy + gust * g[1])
            x += dt * vx
            y += dt * vy
            dist = math.sqrt(x * x + y * y)
            if not math.isfinite(dist):
                raise RolloutError("non-finite point-mass state")
            ret += max(0.0, 1.0 - dist / arena)
            if dist > arena:
                break
        return ret, t

    def rollout_batch(self, thetas, rngs, obs_std=None):
        """Vectorized episodes for a stack of parameter vectors.

        Rows that have terminated keep being computed but are masked out.
        With ``obs_std`` the shared stats absorb each step's block of live
        observations at once, so results differ slightly from sequential
        single rollouts.
        """
        thetas = self.check_theta(np.atleast_2d(thetas))
        K, L, dt = thetas.shape[0], self.max_episode_len, self.dt
        noise = [self._episode_noise(r) for r in rngs]
        state = np.zeros((K, 4))  # x, y, vx, vy
        state[:, :2] = [n[0] for n in noise]
        wind = np.array([n[1] for n in noise])
        # per-step exogenous acceleration on velocity, and action noise
        drive = wind[None] + self.gust * np.stack([n[3] for n in noise], axis=1)  # (L, K, 2)
        act_noise = np.stack([n[2] for n in noise], axis=1)
        layers = unflatten(self.spec, thetas)
        ret = np.zeros(K)
        length = np.zeros(K, dtype=np.int64)
        live = np.ones(K)
        for t in range(L):
            obs = state
            if obs_std is not None:
                obs_std.update(state[live > 0])
                obs = obs_std.apply(state)
            mean, var = forward_layers(self.spec, layers, obs)
            act = np.minimum(np.maximum(mean + np.sqrt(var) * act_noise[t], -1.0), 1.0)
            step = live[:, None] * dt
            state[:, 2:] += step * (act + drive[t])
            state[:, :2] += step * state[:, 2:]
            dist = np.sqrt(state[:, 0] ** 2 + state[:, 1] ** 2)
            if not np.all(np.isfinite(dist)):
                raise RolloutError("non-finite point-mass state")
            ret += live * np.maximum(0.0, 1.0 - dist / self.arena)
            length += live.astype(np.int64)
            live = live * (dist <= self.arena)
            if not live.any():
                break
        return ret, length


class LQR(Objective):
    """Discrete-time LQR with linear feedback ``u = -K x`` (theta is ``K`` flattened).

    Return is the negated quadratic cost over a fixed horizon. With
    ``action_noise = 0`` the rollout is deterministic and has a closed form.
    """

    def __init__(self, A=None, B=None, Q=None, R=None, horizon: int = 50, x0=None,
                 action_noise: float = 0.0):
        self.A = np.array([[1.0, 0.1], [0.0, 1.0]]) if A is None else np.asarray(A, float)
        self.B = np.array([[0.0], [0.1]]) if B is None else np.asarray(B, float)
        n, m = self.B.shape
        self.Q = np.eye(n) if Q is None else np.asarray(Q, float)
        self.R = 0.1 * np.eye(m) if R is None else np.asarray(R, float)
        self.n, self.m = n, m
        self.dim = n * m
        self.horizon = self.max_episode_len = int(horizon)
        self.x0 = None if x0 is None else np.asarray(x0, float)
        self.action_noise = float(action_noise)

    def gain(self, theta) -> np.ndarray:
        return self.check_theta(theta).reshape(self.m, self.n)

    def rollout(self, theta, rng=None, obs_std=None):
        K = self.gain(theta)
        x = self.x0.copy() if self.x0 is not None else rng.standard_normal(self.n)
        cost = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(self.horizon):
                u = -K @ x
                if self.action_noise > 0:
                    u = u + np.sqrt(self.action_noise) * rng.standard_normal(self.m)
                cost += x @ self.Q @ x + u @ self.R @ u
                x = self.A @ x + self.B @ u
                if not (np.all(np.isfinite(x)) and math.isfinite(cost)):
                    raise RolloutError("LQR state diverged")
        return -float(cost), self.horizon


class VariableLength(Objective):
    """Quadratic return with episode lengths from a configurable distribution.

    Used by the asynchronous pool simulator: the return is cheap and exact,
    the length (hence rollout duration) is heterogeneous. ``dist`` is one of
    ``fixed`` (always ``mean_len``), ``lognormal`` (median ``mean_len``,
    log-sd ``shape``) or ``pareto`` (scale ``mean_len``, tail index ``shape``).
    """

    def __init__(self, dim: int = 10, dist: str = "lognormal", mean_len: float = 100.0,
                 shape: float = 1.0, max_episode_len: int = 1000, target=None):
        self.quad = Quadratic(dim, target)
        self.dim = dim
        if dist not in ("fixed", "lognormal", "pareto"):
            raise ValueError(f"unknown length distribution {dist!r}")
        self.dist, self.mean_len, self.shape = dist, mean_len, shape
        self.max_episode_len = int(max_episode_len)

    def sample_length(self, rng: np.random.Generator) -> int:
        if self.dist == "fixed":
            t = self.mean_len
        elif self.dist == "lognormal":
            t = self.mean_len * np.exp(self.shape * rng.standard_normal())
        else:
            t = self.mean_len * (1.0 + rng.pareto(self.shape))
        return int(min(max(round(t), 1), self.max_episode_len))

    def rollout(self, theta, rng, obs_std=None):
        return self.quad.value(theta), self.sample_length(rng)


OBJECTIVES = {
    "quadratic": Quadratic,
    "rosenbrock": Rosenbrock,
    "point_mass": PointMass,
    "lqr": LQR,
    "variable_length": VariableLength,
}


def make_objective(name: str, **params) -> Objective:
    try:
        cls = OBJECTIVES[name]
    except KeyError:
        raise ValueError(f"unknown objective {name!r}; choose from {sorted(OBJECTIVES)}") from None
    return cls(**params)


def rollout(obj: Objective, theta, rng, obs_std=None):
    return obj.rollout(theta, rng, obs_std)


def analytic_gradient(obj: Objective, theta) -> np.ndarray:
    if obj.kind != "analytic":
        raise NotImplementedError(f"{type(obj).__name__} is episodic; no analytic gradient")
    return obj.analytic_gradient(theta)
