"""Synthetic delayed-batch study on the point-mass task.

Writes per-run rows, a per-cell summary (median, IQM and bootstrap CI of
final reward) and a gnuplot script to ``--out``.

    python3 scripts/run_delay_study.py --config configs/delay_study.toml --out results/delay
"""

import argparse
import sys
import time

from dfd.config import load_config
from dfd.environments import make_objective
from dfd.harness.study import run_delay_study, summarize_delay_study, write_delay_outputs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/delay_study.toml")
    ap.add_argument("--out", default="results/delay")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    obj = make_objective(cfg.objective.name, **cfg.objective.params)
    t0 = time.monotonic()

    def progress(row):
        if not args.quiet:
            print(f"[{time.monotonic() - t0:7.1f}s] delay={row['delay']} p={row['proportion']:.2f} "
                  f"seed={row['seed']} final={row['final_reward']:.3f}", file=sys.stderr)

    rows = run_delay_study(cfg, obj, progress)
    summary = summarize_delay_study(rows, cfg.study.bootstrap_resamples, seed=cfg.harness.seed)
    paths = write_delay_outputs(args.out, rows, summary, cfg.study.delays)
    for s in summary:
        print(f"delay={s['delay']} p={s['proportion']:.2f} median={s['median']:.3f} "
              f"iqm={s['iqm']:.3f} [{s['iqm_ci_lo']:.3f}, {s['iqm_ci_hi']:.3f}]")
    print(f"wrote {', '.join(str(p) for p in paths.values())} in {time.monotonic() - t0:.0f}s")


if __name__ == "__main__":
    main()
