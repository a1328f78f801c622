"""Experiment protocols: the synthetic delayed-batch study and the
update-count comparison, with CSV outputs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..config import Config
from ..environments import Objective, make_objective
from ..estimators import Evaluation
from ..policy import ObsStandardizer
from ..runtime import Learner, evaluate_policy
from ..vecmath import episode_rng, sample_noise_batch
from .metrics import bootstrap_ci, compute_iqm
from .sim import SimSchedule, simulate_pool

log = logging.getLogger(__name__)

DELAY_FIELDS = ["delay", "proportion", "n_delayed", "seed", "final_reward", "initial_reward",
                "filled_slots", "T_total"]
SUMMARY_FIELDS = ["delay", "proportion", "n", "median", "iqm", "iqm_ci_lo", "iqm_ci_hi"]
UPDATE_FIELDS = ["mode", "seed", "updates", "T_env", "T_total", "discarded", "evicted",
                 "mean_staleness", "max_staleness", "mean_idle_fraction"]


def delayed_count(proportion: float, N: int) -> int:
    """round(p * N), halves rounded up."""
    return int(math.floor(proportion * N + 0.5))


def delay_run(cfg: Config, objective: Objective, delay: int, proportion: float, seed: int) -> dict:
    """One synthetic run: every batch holds ``round(p*N)`` perturbations of
    the parameters from ``delay`` updates ago, the rest perturb the current
    ones. Until that history exists the delayed slots hold current data."""
    lc = replace(cfg.learner, mode="dfd")
    st = cfg.study
    N, sigma = lc.batch_size, lc.sigma
    n_del = delayed_count(proportion, N)
    theta0 = objective.initial_params(np.random.default_rng(seed))
    obs_std = None
    if lc.obs_standardization and hasattr(objective, "spec"):
        obs_std = ObsStandardizer(objective.spec.obs_dim, lc.obs_clip)
    learner = Learner(lc, theta0, objective, obs_std, rng=np.random.default_rng([seed, 7]))
    seed_stream = np.random.default_rng([seed, 0xDE1A])
    history = learner.state.history
    filled = 0
    final = []
    initial = None
    for u in range(st.updates):
        nd = n_del if u >= delay else 0
        filled += n_del - nd
        seeds = [int(s) for s in seed_stream.integers(0, 2**63, N)]
        origins = [u - delay] * nd + [u] * (N - nd)
        thetas = np.stack([history[o] for o in origins]) + sigma * sample_noise_batch(seeds, learner.dim)
        R, T = objective.rollout_batch(thetas, [episode_rng(s) for s in seeds], obs_std)
        needs_eval = u == 0 or u >= st.updates - st.final_window
        if needs_eval:
            score = evaluate_policy(objective, learner.state.theta, st.eval_episodes,
                                    seed=seed * 100_003 + u, obs_std=obs_std)
            if u == 0:
                initial = score
            if u >= st.updates - st.final_window:
                final.append(score)
        learner.step([Evaluation(s, float(r), int(t), o)
                      for s, r, t, o in zip(seeds, R, T, origins)])
    return {"delay": delay, "proportion": proportion, "n_delayed": n_del, "seed": seed,
            "final_reward": float(np.mean(final)), "initial_reward": initial,
            "filled_slots": filled, "T_total": learner.state.T_total}


def run_delay_study(cfg: Config, objective: Objective | None = None, progress=None) -> list[dict]:
    """Full delay x proportion x seed grid, rows sorted in that order.

    Cells with no delayed data do not depend on the delay, so each seed's
    all-current run is computed once and shared.
    """
    objective = objective or make_objective(cfg.objective.name, **cfg.objective.params)
    rows, shared = [], {}
    N = cfg.learner.batch_size
    for k in cfg.study.delays:
        for p in cfg.study.proportions:
            for seed in cfg.study.seeds:
                if delayed_count(p, N) == 0:
                    if seed not in shared:
                        shared[seed] = delay_run(cfg, objective, k, p, seed)
                    row = dict(shared[seed], delay=k, proportion=p)
                else:
                    row = delay_run(cfg, objective, k, p, seed)
                rows.append(row)
                if progress:
                    progress(row)
    return rows


def summarize_delay_study(rows: list[dict], resamples: int = 2000, seed: int = 0) -> list[dict]:
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["delay"], r["proportion"]), []).append(r["final_reward"])
    out = []
    for (k, p), scores in cells.items():
        lo, hi = bootstrap_ci(scores, compute_iqm, resamples, seed=seed)
        out.append({"delay": k, "proportion": p, "n": len(scores),
                    "median": float(np.median(scores)), "iqm": compute_iqm(scores),
                    "iqm_ci_lo": lo, "iqm_ci_hi": hi})
    return out


def run_update_study(cfg: Config, objective: Objective | None = None) -> list[dict]:
    """Update counts per mode and seed under one fixed step budget."""
    objective = objective or make_objective(cfg.objective.name, **cfg.objective.params)
    rows = []
    for mode in cfg.study.modes:
        for seed in cfg.study.seeds:
            sched = replace(SimSchedule.from_config(cfg), seed=seed)
            m = simulate_pool(sched, mode, objective, cfg.learner.total_timesteps,
                              cfg.learner, eval_every=0)
            n = sum(m.staleness.values()) or 1
            rows.append({
                "mode": mode, "seed": seed, "updates": m.updates, "T_env": m.T_env,
                "T_total": m.T_total, "discarded": m.discarded, "evicted": m.evicted,
                "mean_staleness": sum(k * v for k, v in m.staleness.items()) / n,
                "max_staleness": max(m.staleness, default=0),
                "mean_idle_fraction": float(np.mean(m.idle_fraction)),
            })
    return rows


def summarize_update_study(rows: list[dict]) -> list[dict]:
    by_mode: dict = {}
    for r in rows:
        by_mode.setdefault(r["mode"], []).append(r["updates"])
    out = [{"mode": m, "mean_updates": float(np.mean(u)),
            "sd_updates": float(np.std(u, ddof=1)) if len(u) > 1 else 0.0,
            "median_updates": float(np.median(u))} for m, u in by_mode.items()]
    if "dfd" in by_mode and "fd" in by_mode:
        inc = np.mean(by_mode["dfd"]) / np.mean(by_mode["fd"]) - 1.0
        out.append({"mode": "dfd_vs_fd_increase", "mean_updates": float(inc),
                    "sd_updates": "", "median_updates": ""})
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fields})


GNUPLOT_DELAY = """\
# gnuplot -p {name}
set datafile separator ","
set key autotitle columnhead
set xlabel "proportion of delayed data"
set ylabel "final reward (IQM over seeds)"
D = "{delays}"
plot for [i=1:words(D)] '{summary}' using 2:(($1==word(D,i)+0)?$5:1/0):6:7 \\
    with yerrorlines title "delay ".word(D,i)
"""


def write_delay_outputs(outdir, rows, summary, delays) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"table": outdir / "delay_study.csv", "summary": outdir / "delay_summary.csv",
             "plot": outdir / "delay_study.gp"}
    write_csv(paths["table"], rows, DELAY_FIELDS)
    write_csv(paths["summary"], summary, SUMMARY_FIELDS)
    paths["plot"].write_text(GNUPLOT_DELAY.format(
        name=paths["plot"].name, summary=paths["summary"].name,
        delays=" ".join(str(k) for k in delays)))
    return paths


def write_update_outputs(outdir, rows, summary) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"table": outdir / "update_study.csv", "summary": outdir / "update_summary.csv"}
    write_csv(paths["table"], rows, UPDATE_FIELDS)
    write_csv(paths["summary"], summary, ["mode", "mean_updates", "sd_updates", "median_updates"])
    return paths
