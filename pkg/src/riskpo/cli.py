"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 runtime or I/O error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RiskPOError
from .experiments import ConfigError, emit, load_config, run_campaign
from .game_oracle import estimate_gamma_inf, solve_gare_value_iteration

log = logging.getLogger("riskpo")

SUBCOMMANDS = {
    "solve": ("exact", "exact dual-loop policy optimization"),
    "robust": ("disturbed", "dual loop with injected gain disturbances"),
    "learn": ("learn", "off-policy learning from one simulated trajectory"),
    "sysid": ("sysid", "identification followed by the initial-gain LMI"),
    "oracle": ("oracle", "game Riccati solution by value iteration"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="riskpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (mode, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument(
            "--config",
            default=f"illustrative-{mode}",
            help="JSON config file or built-in name (default: %(default)s)",
        )
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--verbose-inner", action="store_true", help="record every inner step")
        p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def _oracle(config, out):
    sol = solve_gare_value_iteration(config.model)
    payload = {
        "name": config.name,
        "gamma": config.model.gamma,
        "gamma_inf": estimate_gamma_inf(config.model),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "P_star": sol.P_star.tolist(),
        "K_star": sol.K_star.tolist(),
        "L_star": sol.L_star.tolist(),
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("P* trace %.6g after %d iterations", float(sol.P_star.trace()), sol.iterations)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    mode = SUBCOMMANDS[args.command][0]
    try:
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config = load_config(args.config)
        config = config.replace(
            mode=mode,
            master_seed=args.seed,
            trials=args.trials,
            output=args.out,
            verbose_inner=True if args.verbose_inner else None,
        ).validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(config.output or f"results/{config.name}-{mode}")
    try:
        if mode == "oracle":
            _oracle(config, out)
            return 0
        result = run_campaign(config, jobs=args.jobs)
        if not result.trials:
            print("config error: empty trial set", file=sys.stderr)
            return 1
        paths = emit(result, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RiskPOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info(
        "%s: %d/%d trials succeeded, outputs in %s",
        config.name, len(result.succeeded), len(result.trials), paths[0].parent,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
