"""Virtual-clock simulation of a learner and an asynchronous worker pool.

Single-threaded and fully deterministic: events are ordered by
``(time, kind, worker id, sequence)`` where a learner publish sorts before
rollout completions at the same instant. Rollouts are computed when they
start (the result fixes their duration) and delivered when they finish,
passing through the wire codec on the way.

In the default asynchronous schedule workers never wait: each starts its
next rollout from the newest published policy the moment it delivers a
result. ``synchronous=True`` models a classic barrier schedule instead: the
learner hands out exactly one batch of tasks per update and workers idle
once the tasks are gone.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import Config, LearnerConfig
from ..environments import Objective, make_objective
from ..policy import ObsStandardizer
from ..runtime import (Learner, UpdateRecord, Worker, evaluate_policy, item_steps, item_to_msg,
                       msg_to_item)
from ..transport import LoopbackChannel

_PUBLISH, _DELIVER = 0, 1


@dataclass(frozen=True)
class SimSchedule:
    workers: int
    step_time: float = 1.0
    duration_noise: float = 0.5
    worker_speed_noise: float = 0.0
    update_latency: float = 0.0
    transport_latency: float = 0.0
    synchronous: bool = False
    seed: int = 0

    @classmethod
    def from_config(cls, cfg: Config) -> "SimSchedule":
        h = cfg.harness
        return cls(h.workers, h.step_time, h.duration_noise, h.worker_speed_noise,
                   h.update_latency, h.transport_latency, h.synchronous, h.seed)


@dataclass
class RunMetrics:
    mode: str
    updates: int
    T_total: int
    T_env: int
    end_time: float
    staleness: Counter
    idle_fraction: tuple
    produced: int
    consumed: int
    buffered: int
    discarded: int
    evicted: int
    reward_curve: list  # (u, T_env, mean return of theta_u)
    records: list = field(repr=False, default_factory=list)
    theta: np.ndarray = field(repr=False, default=None)
    digest: str = ""

    def conserved(self) -> bool:
        return self.produced == self.consumed + self.buffered + self.discarded + self.evicted

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k not in ("records", "theta")}


class _Pool:
    def __init__(self, schedule: SimSchedule, learner: Learner, workers: list[Worker],
                 objective: Objective, eval_every: int, eval_episodes: int,
                 obs_std: ObsStandardizer | None):
        self.s = schedule
        self.learner = learner
        self.workers = workers
        self.objective = objective
        self.eval_every, self.eval_episodes = eval_every, eval_episodes
        self.obs_std = obs_std
        self.rng = np.random.default_rng([schedule.seed, 0x51D])
        W = schedule.workers
        self.speed = np.exp(schedule.worker_speed_noise * self.rng.standard_normal(W))
        self.channels = [LoopbackChannel() for _ in range(W)]
        self.heap: list = []
        self.seq = 0
        self.published = learner.broadcast()
        self.learner_busy = False
        self.quota = learner.items_per_batch
        self.idle_since: list[float | None] = [None] * W
        self.idle_total = [0.0] * W
        self.produced = 0
        self.records: list[UpdateRecord] = []
        self.reward_curve: list = []
        self.hash = hashlib.sha256()
        self.now = 0.0
        self.stopped = False

    def push(self, t, kind, who, payload):
        heapq.heappush(self.heap, (t, kind, who, self.seq, payload))
        self.seq += 1

    def duration(self, steps: int, w: int) -> float:
        noise = np.exp(self.s.duration_noise * self.rng.standard_normal())
        return self.s.step_time * steps * self.speed[w] * noise + self.s.transport_latency

    def start(self, w: int, t: float) -> None:
        if self.s.synchronous:
            if self.quota == 0:
                self.idle_since[w] = t
                return
            self.quota -= 1
        b = self.published
        item = self.workers[w].evaluate(b.theta, b.u)
        self.push(t + self.duration(item_steps(item), w), _DELIVER, w, item)

    def evaluate(self) -> None:
        u = self.learner.state.u
        if self.eval_every and u % self.eval_every == 0:
            R = evaluate_policy(self.objective, self.learner.state.theta, self.eval_episodes,
                                seed=self.s.seed * 1_000_003 + u, obs_std=self.obs_std)
            self.reward_curve.append((u, self.learner.state.T_env, R))
            if self.records and self.records[-1].u == u - 1:
                self.records[-1].policy_reward = R

    def try_update(self, t: float) -> None:
        if self.learner_busy or self.stopped:
            return
        items = self.learner.try_next_batch()
        if items is None:
            return
        rec = self.learner.step(items)
        rec.wall_time = t
        self.records.append(rec)
        self.learner_busy = True
        if self.s.update_latency > 0:
            self.push(t + self.s.update_latency, _PUBLISH, -1, None)
        else:
            self.publish(t)

    def publish(self, t: float) -> None:
        self.learner_busy = False
        self.published = self.learner.broadcast()
        self.evaluate()
        if self.learner.done:
            self.stopped = True
            self.now = t
            return
        if self.s.synchronous:
            self.quota = self.learner.items_per_batch
            for w, since in enumerate(self.idle_since):
                if since is not None:
                    self.idle_total[w] += t - since
                    self.idle_since[w] = None
                    self.start(w, t)
        self.try_update(t)

    def deliver(self, w: int, item, t: float) -> None:
        ch = self.channels[w]
        ch.send(item_to_msg(item))
        for m in ch.receive():
            self.hash.update(repr((t, w, m)).encode())
            self.produced += 1
            self.learner.ingest(msg_to_item(m))
        self.try_update(t)
        if not self.stopped:
            self.start(w, t)

    def run(self) -> None:
        self.evaluate()
        for w in range(self.s.workers):
            self.start(w, 0.0)
        while self.heap and not self.stopped:
            t, kind, who, _, payload = heapq.heappop(self.heap)
            self.now = t
            if kind == _PUBLISH:
                self.publish(t)
            else:
                self.deliver(who, payload, t)
        for w, since in enumerate(self.idle_since):
            if since is not None:
                self.idle_total[w] += self.now - since


def simulate_pool(schedule: SimSchedule, mode: str, objective: Objective, T_lim: int,
                  learner_cfg: LearnerConfig | None = None, theta0=None,
                  eval_every: int = 1, eval_episodes: int = 1) -> RunMetrics:
    """Run learner plus ``schedule.workers`` workers until ``T_lim`` steps are spent.

    Observation statistics, if enabled, are shared by all workers.
    """
    cfg = replace(learner_cfg or LearnerConfig(), mode=mode, total_timesteps=int(T_lim))
    if theta0 is None:
        theta0 = objective.initial_params(np.random.default_rng(schedule.seed))
    obs_std = None
    if cfg.obs_standardization and hasattr(objective, "spec"):
        obs_std = ObsStandardizer(objective.spec.obs_dim, cfg.obs_clip)
    learner = Learner(cfg, theta0, objective, obs_std, rng=np.random.default_rng([schedule.seed, 7]))
    workers = [Worker(w, objective, cfg.sigma, mode, schedule.seed, obs_std)
               for w in range(schedule.workers)]
    pool = _Pool(schedule, learner, workers, objective, eval_every, eval_episodes, obs_std)
    pool.run()
    st = learner.state
    staleness = Counter()
    for rec in pool.records:
        staleness.update(rec.staleness)
    busy_time = pool.now if pool.now > 0 else 1.0
    metrics = RunMetrics(
        mode=mode, updates=st.u, T_total=st.T_total, T_env=st.T_env, end_time=pool.now,
        staleness=staleness,
        idle_fraction=tuple(i / busy_time for i in pool.idle_total),
        produced=pool.produced, consumed=st.consumed, buffered=len(st.buffer),
        discarded=st.discarded, evicted=st.evicted, reward_curve=pool.reward_curve,
        records=pool.records, theta=st.theta.copy(), digest=pool.hash.hexdigest())
    if not metrics.conserved():
        raise AssertionError(f"evaluation accounting broken: {metrics.summary()}")
    return metrics


def simulate_from_config(cfg: Config, objective: Objective | None = None,
                         mode: str | None = None) -> RunMetrics:
    objective = objective or make_objective(cfg.objective.name, **cfg.objective.params)
    return simulate_pool(SimSchedule.from_config(cfg), mode or cfg.learner.mode, objective,
                         cfg.learner.total_timesteps, cfg.learner, eval_every=cfg.harness.eval_every,
                         eval_episodes=cfg.harness.eval_episodes)
