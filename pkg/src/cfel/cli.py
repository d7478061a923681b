"""Command line entry point: ``cfel run | sweep | verify``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import verify
from .errors import ConfigError, DivergenceError, InvariantError
from .experiment import PRESETS, SWEEP_AXES, build_testbed, execute, load_config, run_sweep, write_run

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("cfel")


def _seeds(text: str | None, cfg: dict) -> list[int]:
    if text is None:
        return [int(s) for s in cfg["output"]["seeds"]]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers: {text!r}") from exc


def _load(args) -> dict:
    if args.config is None and args.preset is None:
        raise ConfigError("give --config, --preset or both")
    return load_config(args.config, args.preset)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg["output"]["dir"])
    threads = args.threads or cfg["output"]["threads"]
    for seed in _seeds(args.seeds, cfg):
        bed = build_testbed(cfg, seed)
        result = execute(bed, threads)
        write_run(out / f"seed_{seed}", bed, result, cfg, with_analysis=cfg["analysis"]["enabled"])
        last = result.records[-1]
        print(f"seed {seed}: {len(result.records)} rounds, loss {last.global_loss:.6f}, "
              f"accuracy {last.test_accuracy:.4f}, simulated {last.wall_sim_seconds:.2f} s")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg["output"]["dir"])
    threads = args.threads or cfg["output"]["threads"]
    summary = run_sweep(cfg, args.axis, out, _seeds(args.seeds, cfg), threads, args.parallel)
    for row in summary:
        print(f"{row['cell']}: loss {row['mean_final_loss']:.6f} +- {row['se_final_loss']:.6f}, "
              f"accuracy {row['mean_final_accuracy']:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    h = graph = None
    if args.mixing:
        h = np.loadtxt(args.mixing, ndmin=2)
    results = verify.run_all(h, graph)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfel", description="Cooperative federated edge learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--preset", choices=sorted(PRESETS), help="base configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seeds", help="comma-separated seeds (overrides output.seeds)")
        p.add_argument("--threads", type=int, help="device worker threads")

    p_run = sub.add_parser("run", help="train once per seed and write metrics")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p_sweep.add_argument("--parallel", action="store_true", help="run sweep cells concurrently")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="reduction and oracle equivalence checks")
    p_verify.add_argument("--mixing", help="whitespace-separated mixing matrix to validate instead of ring(8)")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
