"""Command-line entry point: ``dfd run | study-delay | study-updates | validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import dump_config, load_config
from .environments import make_objective


def _objective(cfg):
    return make_objective(cfg.objective.name, **cfg.objective.params)


def cmd_run(args) -> int:
    from .runtime import LogWriter, run_distributed
    from .harness.sim import simulate_from_config

    cfg = load_config(args.config)
    if args.mode:
        cfg = cfg.replace(learner={"mode": args.mode})
    obj = _objective(cfg)
    if args.transport == "socket":
        learner, records = run_distributed(cfg, obj, log_path=args.log)
        st = learner.state
        summary = {"mode": cfg.learner.mode, "updates": st.u, "T_total": st.T_total,
                   "T_env": st.T_env, "discarded": st.discarded, "evicted": st.evicted}
    else:
        m = simulate_from_config(cfg, obj)
        if args.log:
            w = LogWriter(args.log)
            for rec in m.records:
                w.write(rec)
            w.close()
        summary = {k: v for k, v in m.summary().items() if k != "reward_curve"}
        summary["staleness"] = dict(sorted(m.staleness.items()))
        if m.reward_curve:
            summary["initial_reward"] = m.reward_curve[0][2]
            summary["final_reward"] = m.reward_curve[-1][2]
    print(json.dumps(summary, indent=2, default=float))
    return 0


def cmd_study_delay(args) -> int:
    from .harness.study import run_delay_study, summarize_delay_study, write_delay_outputs

    cfg = load_config(args.config)
    progress = None
    if args.verbose:
        progress = lambda r: print(f"delay={r['delay']} p={r['proportion']} seed={r['seed']} "
                                   f"final={r['final_reward']:.3f}", file=sys.stderr)
    rows = run_delay_study(cfg, _objective(cfg), progress=progress)
    summary = summarize_delay_study(rows, cfg.study.bootstrap_resamples, seed=cfg.harness.seed)
    paths = write_delay_outputs(args.out, rows, summary, cfg.study.delays)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_study_updates(args) -> int:
    from .harness.study import run_update_study, summarize_update_study, write_update_outputs

    cfg = load_config(args.config)
    rows = run_update_study(cfg, _objective(cfg))
    paths = write_update_outputs(args.out, rows, summarize_update_study(rows))
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_validate(args) -> int:
    import pytest

    tests = Path(args.tests) if args.tests else Path(__file__).resolve().parents[2] / "tests"
    target = tests / "test_acceptance.py"
    if not target.exists():
        print(f"acceptance suite not found at {target}", file=sys.stderr)
        return 2
    argv = [str(target), "-s", "-q"]
    if args.k:
        argv += ["-k", args.k]
    return int(pytest.main(argv))


def cmd_dump_config(args) -> int:
    print(dump_config(load_config(args.config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfd", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single experiment")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["dfd", "fd", "es"])
    p.add_argument("--transport", choices=["sim", "socket"], default="sim")
    p.add_argument("--log", help="per-update CSV log path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("study-delay", help="synthetic delayed-batch study")
    p.add_argument("--config")
    p.add_argument("--out", default="results/delay")
    p.set_defaults(func=cmd_study_delay)

    p = sub.add_parser("study-updates", help="update counts with and without delayed data")
    p.add_argument("--config")
    p.add_argument("--out", default="results/updates")
    p.set_defaults(func=cmd_study_updates)

    p = sub.add_parser("validate", help="run the acceptance suite")
    p.add_argument("-k", help="pytest -k expression")
    p.add_argument("--tests", help="tests directory")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dump-config", help="print the effective config as TOML")
    p.add_argument("--config")
    p.set_defaults(func=cmd_dump_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
