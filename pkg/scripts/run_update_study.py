"""Update counts with and without delayed data under a fixed step budget.

    python3 scripts/run_update_study.py --config configs/update_study.toml --out results/updates
"""

import argparse

from dfd.config import load_config
from dfd.environments import make_objective
from dfd.harness.study import run_update_study, summarize_update_study, write_update_outputs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/update_study.toml")
    ap.add_argument("--out", default="results/updates")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    rows = run_update_study(cfg, make_objective(cfg.objective.name, **cfg.objective.params))
    summary = summarize_update_study(rows)
    paths = write_update_outputs(args.out, rows, summary)
    for r in rows:
        print(f"{r['mode']:>3} seed={r['seed']} updates={r['updates']} discarded={r['discarded']} "
              f"mean_staleness={r['mean_staleness']:.2f} idle={r['mean_idle_fraction']:.3f}")
    for s in summary:
        print(s)
    print("wrote", ", ".join(str(p) for p in paths.values()))


if __name__ == "__main__":
    main()
