"""Ascent-direction update rules (the objective is maximized)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def _check_grad(theta, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != np.shape(theta):
        raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(theta)}")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    return g


def sgd_step(theta: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    g = _check_grad(theta, g)
    return np.asarray(theta, dtype=np.float64) + eta * g


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eta: float = 0.01

    @classmethod
    def zeros(cls, dim: int, **hyper) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), **hyper)


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, AdamState]:
    g = _check_grad(theta, g)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = np.asarray(theta, dtype=np.float64) + state.eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return theta, replace(state, m=m, v=v, t=t)


class SGD:
    def __init__(self, eta: float):
        self.eta = eta

    def step(self, theta, g):
        return sgd_step(theta, g, self.eta)


class Adam:
    """Stateful wrapper around :func:`adam_step` owned by the learner."""

    def __init__(self, dim: int, eta=0.01, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.state = AdamState.zeros(dim, beta1=beta1, beta2=beta2, epsilon=epsilon, eta=eta)

    def step(self, theta, g):
        theta, self.state = adam_step(self.state, theta, g)
        return theta


def make_optimizer(name: str, dim: int, eta: float, beta1=0.9, beta2=0.999, epsilon=1e-8):
    if name == "sgd":
        return SGD(eta)
    if name == "adam":
        return Adam(dim, eta, beta1, beta2, epsilon)
    raise ValueError(f"unknown optimizer {name!r}")
