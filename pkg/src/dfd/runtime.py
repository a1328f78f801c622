"""Learner and worker loops.

The :class:`Learner` owns all mutable training state and consumes
evaluations in batches of exactly ``N``; :class:`Worker` turns a policy
broadcast into one evaluation. Both are transport-agnostic: the threaded
socket runner below and the virtual-clock simulator in
:mod:`dfd.harness.sim` drive the same objects.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import socket
import struct
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .config import Config, LearnerConfig
from .environments import Objective
from .estimators import (Batch, Evaluation, ParamHistory, estimate_baseline, grad_dfd,
                         grad_es_antithetic, grad_fd, standardize_rewards)
from .optimizer import make_optimizer
from .policy import ObsStandardizer
from .transport import (EsPairMsg, EvalMsg, Hello, PolicyMsg, Shutdown, SocketConnection)
from .vecmath import episode_rng, sample_noise

log = logging.getLogger(__name__)

EsPair = tuple  # (plus, minus) Evaluations sharing a seed
Item = Union[Evaluation, EsPair]

LOG_FIELDS = ["u", "T_total", "mu_R", "sigma_R", "baseline", "n_current", "n_delayed",
              "staleness", "wall_time", "policy_reward"]


def worker_seed(salt: int, worker_id: int, counter: int) -> int:
    """64-bit noise seed: first 8 bytes (little-endian) of BLAKE2b over the
    three values packed as little-endian u64."""
    digest = hashlib.blake2b(struct.pack("<QQQ", salt, worker_id, counter), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def item_origin(item: Item) -> int:
    return item[0].origin_update if isinstance(item, tuple) else item.origin_update


def item_steps(item: Item) -> int:
    if isinstance(item, tuple):
        return item[0].episode_len + item[1].episode_len
    return item.episode_len


def pair_to_msg(pair: EsPair) -> EsPairMsg:
    plus, minus = pair
    return EsPairMsg(plus.seed, plus.reward, minus.reward, item_steps(pair), plus.origin_update)


def msg_to_item(m) -> Item:
    if isinstance(m, EvalMsg):
        return m.to_evaluation()
    if isinstance(m, EsPairMsg):
        return (Evaluation(m.seed, m.reward_plus, m.episode_len, m.origin_update),
                Evaluation(m.seed, m.reward_minus, 0, m.origin_update))
    raise TypeError(f"not an evaluation message: {type(m).__name__}")


def item_to_msg(item: Item):
    return pair_to_msg(item) if isinstance(item, tuple) else EvalMsg.from_evaluation(item)


class BatchTimeout(TimeoutError):
    def __init__(self, have: int, need: int):
        super().__init__(f"timed out collecting batch: {have} of {need} evaluations")
        self.have, self.need = have, need


class EvalBuffer:
    """Multi-producer, single-consumer FIFO with front put-back."""

    def __init__(self):
        self._q: deque = deque()
        self._cond = threading.Condition()
        self.closed = False
        self.received = 0

    def put(self, item) -> None:
        with self._cond:
            self._q.append(item)
            self.received += 1
            self._cond.notify_all()

    def put_back(self, items: Iterable) -> None:
        with self._cond:
            self._q.extendleft(reversed(list(items)))
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    def drain_at_least(self, n: int, timeout: float | None = None) -> list:
        """Block until ``n`` items are buffered, then take everything."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while len(self._q) < n:
                if self.closed:
                    raise BatchTimeout(len(self._q), n)
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise BatchTimeout(len(self._q), n)
                self._cond.wait(remaining)
            items = list(self._q)
            self._q.clear()
            return items

    def __len__(self):
        with self._cond:
            return len(self._q)

    def snapshot(self) -> list:
        with self._cond:
            return list(self._q)


def collect_batch(buffer: EvalBuffer, N: int, timeout: float | None = None) -> list:
    """Take the first ``N`` buffered items in arrival order; surplus goes back
    to the front of the buffer for the next update."""
    items = buffer.drain_at_least(N, timeout)
    buffer.put_back(items[N:])
    return items[:N]


@dataclass
class LearnerState:
    theta: np.ndarray
    u: int
    history: ParamHistory
    optimizer: object
    buffer: EvalBuffer = field(default_factory=EvalBuffer)
    T_total: int = 0
    discarded: int = 0
    discarded_steps: int = 0
    evicted: int = 0
    evicted_steps: int = 0
    measured_steps: int = 0
    consumed: int = 0

    @property
    def T_env(self) -> int:
        """All environment steps that reached the learner, used or not."""
        return self.T_total + self.discarded_steps + self.evicted_steps + self.measured_steps


@dataclass(frozen=True)
class PolicyBroadcast:
    theta: np.ndarray
    u: int


@dataclass
class UpdateRecord:
    u: int
    T_total: int
    mu_R: float | None
    sigma_R: float | None
    baseline: float | None
    n_current: int
    n_delayed: int
    staleness: Counter
    degenerate: bool = False
    wall_time: float = 0.0
    policy_reward: float | None = None

    def row(self) -> dict:
        fmt = lambda x: "" if x is None else repr(float(x))
        return {
            "u": self.u, "T_total": self.T_total, "mu_R": fmt(self.mu_R),
            "sigma_R": fmt(self.sigma_R), "baseline": fmt(self.baseline),
            "n_current": self.n_current, "n_delayed": self.n_delayed,
            "staleness": format_staleness(self.staleness),
            "wall_time": f"{self.wall_time:.6f}", "policy_reward": fmt(self.policy_reward),
        }


def format_staleness(hist: Counter) -> str:
    return ";".join(f"{k}:{hist[k]}" for k in sorted(hist))


class Learner:
    """DFD / FD / ES learner.

    ``objective`` is only needed for ``baseline = "measured"``. In FD and ES
    modes, evaluations from older updates are dropped (and counted) both when
    they arrive and when put-back surplus goes stale.
    """

    def __init__(self, cfg: LearnerConfig, theta0, objective: Objective | None = None,
                 obs_std: ObsStandardizer | None = None, rng: np.random.Generator | None = None):
        theta0 = np.array(theta0, dtype=np.float64)
        self.cfg = cfg
        self.dim = theta0.size
        history = ParamHistory(cfg.history_depth)
        history.record(0, theta0)
        opt = make_optimizer(cfg.optimizer, self.dim, cfg.eta, cfg.beta1, cfg.beta2, cfg.adam_epsilon)
        self.state = LearnerState(theta=theta0, u=0, history=history, optimizer=opt)
        self.objective = objective
        self.obs_std = obs_std
        self.rng = rng if rng is not None else np.random.default_rng(0)
        if cfg.baseline == "measured" and objective is None:
            raise ValueError("measured baseline needs the objective on the learner")

    @property
    def items_per_batch(self) -> int:
        return self.cfg.batch_size // 2 if self.cfg.mode == "es" else self.cfg.batch_size

    @property
    def done(self) -> bool:
        return self.state.T_env >= self.cfg.total_timesteps

    def broadcast(self) -> PolicyBroadcast:
        return PolicyBroadcast(self.state.theta, self.state.u)

    def _drop_reason(self, item: Item) -> str | None:
        origin = item_origin(item)
        if origin > self.state.u:
            raise ValueError(f"evaluation from future update {origin} (now {self.state.u})")
        if self.cfg.mode in ("fd", "es"):
            return None if origin == self.state.u else "discarded"
        return None if origin in self.state.history else "evicted"

    def _drop(self, item: Item, reason: str) -> None:
        st = self.state
        if reason == "discarded":
            st.discarded += 1
            st.discarded_steps += item_steps(item)
        else:
            st.evicted += 1
            st.evicted_steps += item_steps(item)

    def admit(self, items: Iterable[Item]) -> list:
        kept = []
        for item in items:
            reason = self._drop_reason(item)
            if reason is None:
                kept.append(item)
            else:
                self._drop(item, reason)
        return kept

    def ingest(self, item: Item) -> bool:
        """Buffer an arriving evaluation unless this mode drops it."""
        if self.admit([item]):
            self.state.buffer.put(item)
            return True
        return False

    def ready(self) -> bool:
        return len(self.state.buffer) >= self.items_per_batch

    def next_batch(self, timeout: float | None = None) -> list:
        """Collect a full batch of admissible items, re-checking put-back surplus."""
        got: list = []
        need = self.items_per_batch
        while len(got) < need:
            got += self.admit(collect_batch(self.state.buffer, need - len(got), timeout))
        return got

    def try_next_batch(self) -> list | None:
        """Non-blocking :meth:`next_batch`: ``None`` (buffer untouched) if short."""
        buf, need = self.state.buffer, self.items_per_batch
        got: list = []
        while len(got) < need:
            if len(buf) < need - len(got):
                buf.put_back(got)
                return None
            got += self.admit(collect_batch(buf, need - len(got)))
        return got

    def step(self, items: list) -> UpdateRecord:
        """One learner update from exactly one batch of admissible items."""
        st, cfg = self.state, self.cfg
        if len(items) != self.items_per_batch:
            raise ValueError(f"expected {self.items_per_batch} items, got {len(items)}")
        for item in items:
            if self._drop_reason(item) is not None:
                raise ValueError("inadmissible evaluation reached the update")
        st.T_total += sum(item_steps(i) for i in items)
        st.consumed += len(items)
        staleness = Counter(st.u - item_origin(i) for i in items)
        if cfg.mode == "es":
            rec, g = self._es_gradient(items)
        else:
            rec, g = self._fd_gradient(items)
        if not rec.degenerate:
            st.theta = st.optimizer.step(st.theta, g)
        rec.staleness = staleness
        st.u += 1
        st.history.record(st.u, st.theta)
        return rec

    def _fd_gradient(self, evals: list[Evaluation]):
        st, cfg = self.state, self.cfg
        batch = Batch.from_evals(evals)
        if cfg.reward_standardization and len(batch) >= 2:
            batch = standardize_rewards(batch)
        if cfg.baseline == "measured":
            R, T = self.objective.rollout(st.theta, self.rng, self.obs_std)
            st.measured_steps += T
            if batch.degenerate:
                R = 0.0
            elif batch.standardized:
                R = (R - batch.mu_R) / batch.sigma_R
            batch = batch.with_baseline(R)
        else:
            batch = batch.with_baseline(estimate_baseline(batch, st.u, cfg.baseline_ratio))
        if cfg.mode == "dfd":
            est = grad_dfd(batch, st.theta, cfg.sigma, st.history, st.u)
        else:
            est = grad_fd(batch, st.theta, cfg.sigma, st.u)
        rec = UpdateRecord(st.u, st.T_total, batch.mu_R, batch.sigma_R, batch.baseline,
                           est.n_current, est.n_delayed, Counter(), batch.degenerate)
        return rec, est.g

    def _es_gradient(self, pairs: list[EsPair]):
        st, cfg = self.state, self.cfg
        flat = Batch.from_evals([e for pair in pairs for e in pair])
        if cfg.reward_standardization:
            flat = standardize_rewards(flat)
        est = grad_es_antithetic(pairs, cfg.sigma, self.dim, flat.rewards.reshape(-1, 2))
        rec = UpdateRecord(st.u, st.T_total, flat.mu_R, flat.sigma_R, None,
                           est.n_current, est.n_delayed, Counter(), flat.degenerate)
        return rec, est.g


class Worker:
    """Evaluates perturbations of whatever policy it is handed.

    In ``es`` mode each call evaluates an antithetic pair.
    """

    def __init__(self, worker_id: int, objective: Objective, sigma: float, mode: str = "dfd",
                 salt: int = 0, obs_std: ObsStandardizer | None = None):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.worker_id = worker_id
        self.objective = objective
        self.sigma = sigma
        self.mode = mode
        self.salt = salt
        self.obs_std = obs_std
        self.counter = 0

    def next_seed(self) -> int:
        seed = worker_seed(self.salt, self.worker_id, self.counter)
        self.counter += 1
        return seed

    def evaluate(self, theta: np.ndarray, u: int) -> Item:
        seed = self.next_seed()
        eps = sample_noise(seed, theta.size)
        rng = episode_rng(seed)
        R, T = self.objective.rollout(theta + self.sigma * eps, rng, self.obs_std)
        plus = Evaluation(seed, R, T, u)
        if self.mode != "es":
            return plus
        R2, T2 = self.objective.rollout(theta - self.sigma * eps, rng, self.obs_std)
        return (plus, Evaluation(seed, R2, T2, u))


def evaluate_policy(objective: Objective, theta, episodes: int, seed: int,
                    obs_std: ObsStandardizer | None = None) -> float:
    """Mean return of ``theta`` over fresh episodes; running stats are not touched."""
    std = obs_std.copy() if obs_std is not None else None
    rngs = [np.random.default_rng([seed, i]) for i in range(episodes)]
    if hasattr(objective, "spec"):
        R, _ = objective.rollout_batch(np.stack([theta] * episodes), rngs, std)
        return float(np.mean(R))
    return float(np.mean([objective.rollout(theta, r, std)[0] for r in rngs]))


class LogWriter:
    """Per-update CSV log."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=LOG_FIELDS)
        self._w.writeheader()

    def write(self, rec: UpdateRecord) -> None:
        self._w.writerow(rec.row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


# -- threaded socket runtime ------------------------------------------------


def connect_with_retry(host: str, port: int, retries: int = 5, delay: float = 0.2) -> SocketConnection:
    last = None
    for attempt in range(retries + 1):
        try:
            return SocketConnection.connect(host, port)
        except OSError as exc:
            last = exc
            time.sleep(delay * (attempt + 1))
    raise ConnectionError(f"learner at {host}:{port} unreachable after {retries} retries") from last


def worker_loop(cfg: Config, objective: Objective, worker_id: int, host: str, port: int,
                obs_std: ObsStandardizer | None = None, stop: threading.Event | None = None) -> int:
    """Run one worker against a learner until shutdown; returns evaluations sent.

    A receiver thread keeps only the newest broadcast. Each rollout starts
    from the newest one available and always runs to completion, even if a
    newer policy arrives meanwhile.
    """
    conn = connect_with_retry(host, port, cfg.net.connect_retries, cfg.net.retry_delay)
    conn.send(Hello(worker_id))
    if obs_std is None and cfg.learner.obs_standardization and hasattr(objective, "spec"):
        obs_std = ObsStandardizer(objective.spec.obs_dim, cfg.learner.obs_clip)
    worker = Worker(worker_id, objective, cfg.learner.sigma, cfg.learner.mode,
                    cfg.harness.seed, obs_std)
    latest: list = [None]
    have = threading.Condition()
    stop = stop or threading.Event()

    def receive():
        for m in conn.messages():
            if isinstance(m, PolicyMsg):
                with have:
                    latest[0] = (m.theta, m.u)
                    have.notify_all()
            elif isinstance(m, Shutdown):
                break
        stop.set()
        with have:
            have.notify_all()

    rx = threading.Thread(target=receive, daemon=True)
    rx.start()
    sent = 0
    try:
        while not stop.is_set():
            with have:
                while latest[0] is None and not stop.is_set():
                    have.wait()
                if stop.is_set():
                    break
                theta, u = latest[0]
            item = worker.evaluate(theta, u)
            try:
                conn.send(item_to_msg(item))
            except OSError:
                break
            sent += 1
    finally:
        conn.close()
    return sent


class LearnerServer:
    """Accepts worker connections and funnels their evaluations into the learner.

    Reader threads only append to the thread-safe buffer; admission (FD
    discards, history eviction) happens on the learner thread at batch
    assembly.
    """

    def __init__(self, learner: Learner, host: str = "127.0.0.1", port: int = 0):
        self.learner = learner
        self.listener = socket.create_server((host, port))
        self.address = self.listener.getsockname()[:2]
        self.conns: list[SocketConnection] = []
        self._lock = threading.Lock()
        self._current = learner.broadcast()
        self._ever_connected = False
        self._running = True
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _accept_loop(self):
        while self._running:
            try:
                sock, _ = self.listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = SocketConnection(sock)
            with self._lock:
                self.conns.append(conn)
                self._ever_connected = True
                current = self._current
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()
            self._send(conn, PolicyMsg(current.u, current.theta))

    def _read_loop(self, conn: SocketConnection):
        buf = self.learner.state.buffer
        for m in conn.messages():
            if isinstance(m, (EvalMsg, EsPairMsg)):
                buf.put(msg_to_item(m))
            elif isinstance(m, Shutdown):
                break
        self._forget(conn)

    def _forget(self, conn):
        with self._lock:
            if conn in self.conns:
                self.conns.remove(conn)
            orphaned = self._ever_connected and not self.conns and self._running
        if orphaned:
            log.warning("all workers disconnected")
            self.learner.state.buffer.close()

    def _send(self, conn, msg):
        try:
            conn.send(msg)
        except OSError:
            self._forget(conn)

    def broadcast(self, b: PolicyBroadcast) -> None:
        with self._lock:
            self._current = b
            conns = list(self.conns)
        for c in conns:
            self._send(c, PolicyMsg(b.u, b.theta))

    def shutdown(self) -> None:
        self._running = False
        with self._lock:
            conns = list(self.conns)
        for c in conns:
            self._send(c, Shutdown())
        self.listener.close()


def run_distributed(cfg: Config, objective: Objective, theta0=None, n_workers: int | None = None,
                    log_path=None, max_updates: int | None = None) -> tuple[Learner, list[UpdateRecord]]:
    """Learner plus worker threads talking over localhost sockets.

    Each worker keeps its own running observation statistics. Nondeterministic
    by nature; use :func:`dfd.harness.sim.simulate_pool` for reproducible runs.
    """
    n_workers = n_workers or cfg.harness.workers
    if theta0 is None:
        theta0 = objective.initial_params(np.random.default_rng(cfg.harness.seed))
    learner_std = None
    if cfg.learner.obs_standardization and hasattr(objective, "spec"):
        learner_std = ObsStandardizer(objective.spec.obs_dim, cfg.learner.obs_clip)
    learner = Learner(cfg.learner, theta0, objective, learner_std,
                      rng=np.random.default_rng(cfg.harness.seed))
    server = LearnerServer(learner, cfg.net.host, cfg.net.port)
    host, port = server.address
    stop = threading.Event()
    threads = [threading.Thread(target=worker_loop, args=(cfg, objective, w, host, port),
                                kwargs={"stop": stop}, daemon=True) for w in range(n_workers)]
    for t in threads:
        t.start()
    writer = LogWriter(log_path) if log_path else None
    records = []
    t0 = time.monotonic()
    try:
        while not learner.done and (max_updates is None or len(records) < max_updates):
            items = learner.next_batch(cfg.net.batch_timeout)
            rec = learner.step(items)
            rec.wall_time = time.monotonic() - t0
            server.broadcast(learner.broadcast())
            records.append(rec)
            if writer:
                writer.write(rec)
    finally:
        stop.set()
        server.shutdown()
        for t in threads:
            t.join(timeout=10)
        if writer:
            writer.close()
    return learner, records
