"""Train a point-mass policy with DFD (or FD / ES) in the simulated pool.

Prints the evaluation curve and optionally writes the per-update log.

    python3 scripts/train_pointmass.py --config configs/pointmass.toml --seeds 124 125
"""

import argparse
from dataclasses import replace

import numpy as np

from dfd.config import load_config
from dfd.environments import make_objective
from dfd.harness import compute_iqm
from dfd.harness.sim import SimSchedule, simulate_pool
from dfd.runtime import LogWriter


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/pointmass.toml")
    ap.add_argument("--mode", choices=["dfd", "fd", "es"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[124])
    ap.add_argument("--log", help="per-update CSV for the first seed")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    mode = args.mode or cfg.learner.mode
    obj = make_objective(cfg.objective.name, **cfg.objective.params)
    initial, final = [], []
    for i, seed in enumerate(args.seeds):
        sched = replace(SimSchedule.from_config(cfg), seed=seed)
        m = simulate_pool(sched, mode, obj, cfg.learner.total_timesteps, cfg.learner,
                          eval_every=cfg.harness.eval_every, eval_episodes=cfg.harness.eval_episodes)
        print(f"seed {seed}: {m.updates} updates, T_env={m.T_env}, "
              f"staleness={dict(sorted(m.staleness.items()))}")
        for u, t, r in m.reward_curve:
            print(f"  u={u:4d} T_env={t:8d} reward={r:8.3f}")
        initial.append(m.reward_curve[0][2])
        final.append(float(np.mean([r for _, _, r in m.reward_curve[-3:]])))
        if args.log and i == 0:
            w = LogWriter(args.log)
            for rec in m.records:
                w.write(rec)
            w.close()
    if len(args.seeds) >= 4:
        print(f"IQM initial={compute_iqm(initial):.3f} final={compute_iqm(final):.3f}")


if __name__ == "__main__":
    main()
