"""Command-line entry point: ``brainca {morpho,lander,topo,analyze,gradcheck}``.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are the subcommand's flag names (hyphens or underscores). Flags given on
the command line override the file. Exit codes: 0 success, 1 usage error,
2 run failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import gradcheck as gc
from . import lander_control as lc
from . import morphogenesis as mg
from .harness import emit_report, run_condition_sweep
from .records import read_records
from .rng import Rng
from .topology import (ScaleFreeConfig, Topology, build_grid, default_hub_count, dumps_topology,
                       empty_lists, gen_patch_longrange, gen_scale_free_longrange, gen_t_shape,
                       moore_neighbors, quadrant_zones, validate_topology)

log = logging.getLogger("brainca")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
STORE = "runs.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_seeds(text: str) -> List[int]:
    """``"42..61"`` (inclusive), ``"3"`` or ``"1,5,9"``."""
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split(".."))
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad seed range {text!r}; expected A..B, N or N,M,...") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> Dict[str, str]:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def config_defaults(sub: argparse.ArgumentParser, values: Dict[str, str]) -> Dict[str, object]:
    """Convert config entries with the types of the matching flags; unknown keys are errors."""
    actions = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    out = {}
    for key, text in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} for {sub.prog}")
        a = actions[key]
        if isinstance(a, argparse._StoreTrueAction):
            value = _bool(text)
        else:
            try:
                value = a.type(text) if a.type else text
            except (TypeError, ValueError):
                raise UsageError(f"bad value for {key}: {text!r}") from None
            if a.choices is not None and value not in a.choices:
                raise UsageError(f"bad value for {key}: {text!r} (choose from {', '.join(a.choices)})")
        out[key] = value
    return out


def _report_flags(p):
    p.add_argument("--tau", type=float, default=10_000.0, help="censoring horizon for RMST")
    p.add_argument("--n-perm", type=int, default=49_999, help="permutations for the RMST test")
    p.add_argument("--perm-seed", type=int, default=0)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file mirroring the flags")
    common.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = _Parser(prog="brainca", description="Neural cellular automata with long-range attention.")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    sp = {}

    p = sp["morpho"] = subs.add_parser("morpho", parents=[common], help="morphogenesis sweep")
    p.add_argument("--condition", default="all", choices=(*mg.CONDITIONS, "all"))
    p.add_argument("--seeds", default=None, help="A..B inclusive (default 42..61, quick 42..51)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--quick", action="store_true", help="8x8 grid, 10 seeds")
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--max-episodes", type=int, default=5000)
    p.add_argument("--steps", type=int, default=35, help="CA steps per episode")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--init-variance", type=float, default=0.1)
    p.add_argument("--success-threshold", type=float, default=0.98)
    p.add_argument("--boundary", default="zero_pad", choices=("zero_pad", "hard"))
    p.add_argument("--parallelism", type=int, default=1)
    _report_flags(p)

    p = sp["lander"] = subs.add_parser("lander", parents=[common], help="lander control sweep")
    p.add_argument("--condition", default="all", type=lambda s: s.replace("-", "_"),
                   choices=(*lc.CONDITIONS, "all"))
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--max-episodes", type=int, default=10_000)
    p.add_argument("--eval-interval", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--entropy-coef", type=float, default=0.01)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--success-reward", type=float, default=None,
                   help="default: calibrated on the built-in environment")
    p.add_argument("--wind-power", type=float, default=5.0)
    p.add_argument("--turbulence-power", type=float, default=1.5)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--grid-size", type=int, default=16)
    p.add_argument("--parallelism", type=int, default=1)
    _report_flags(p)

    p = sp["topo"] = subs.add_parser("topo", parents=[common], help="generate a topology file")
    p.add_argument("--kind", default="moore", choices=("moore", "scale-free", "tshape", "patch"))
    p.add_argument("--rows", type=int, default=16)
    p.add_argument("--cols", type=int, default=16)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--hubs", type=int, default=-1, help="-1: ceil(N / 25)")
    p.add_argument("--zipf-exponent", type=float, default=2.0)
    p.add_argument("--max-out-degree", type=int, default=6)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--targets-per-zone", type=int, default=6)
    p.add_argument("--base", default="square", choices=("square", "tshape"), help="grid for --kind patch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default stdout)")

    p = sp["analyze"] = subs.add_parser("analyze", parents=[common], help="report on stored runs")
    p.add_argument("--in", dest="in_dir", help="directory holding *.jsonl run records")
    p.add_argument("--out", help="output directory")
    _report_flags(p)

    p = sp["gradcheck"] = subs.add_parser("gradcheck", parents=[common],
                                          help="gradients versus finite differences")
    p.add_argument("--profile", default="all", choices=("morph", "lander", "all"))
    p.add_argument("--per-tensor", type=int, default=20, help="coordinates probed per tensor; 0: all")
    p.add_argument("--seed", type=int, default=0)
    return parser, sp


def parse_args(argv: Sequence[str]):
    parser, sp = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    if args.config:
        sub = sp[args.command]
        sub.set_defaults(**config_defaults(sub, read_config(args.config)))
        args = parser.parse_args(argv)
    return args


def _need(args, name):
    if getattr(args, name) is None:
        raise UsageError(f"--{name.replace('_', '-')} is required")


def _failed(records) -> int:
    bad = [r for r in records if r.error]
    for r in bad:
        log.error("%s %s seed=%d failed: %s", r.task, r.condition, r.seed, r.error)
    return EXIT_FAILURE if bad else EXIT_OK


def cmd_morpho(args) -> int:
    _need(args, "out")
    side = 8 if args.quick else 16
    seeds = parse_seeds(args.seeds or ("42..51" if args.quick else "42..61"))
    conds = list(mg.CONDITIONS) if args.condition == "all" else [args.condition]
    try:
        base = mg.MorphConfig(rows=args.rows or side, cols=args.cols or side, T=args.steps,
                              max_episodes=args.max_episodes, lr=args.lr, grad_clip=args.grad_clip,
                              init_variance=args.init_variance,
                              success_threshold=args.success_threshold, boundary=args.boundary)
        base.target()
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = run_condition_sweep("morpho", conds, seeds, base, args.parallelism, out / STORE)
    emit_report(recs, args.tau, out, args.n_perm, args.perm_seed)
    return _failed(recs)


def cmd_lander(args) -> int:
    _need(args, "out")
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    conds = list(lc.CONDITIONS) if args.condition == "all" else [args.condition]
    try:
        base = lc.ControlConfig(max_episodes=args.max_episodes, eval_interval=args.eval_interval,
                                lr=args.lr, entropy_coef=args.entropy_coef, grad_clip=args.grad_clip,
                                success_reward=args.success_reward, wind_power=args.wind_power,
                                turbulence_power=args.turbulence_power, max_steps=args.max_steps,
                                grid_size=args.grid_size)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if base.success_reward is None:
        # calibrate once instead of once per run
        base = replace(base, success_reward=lc.calibrate_success_threshold(base.env()))
        log.info("calibrated success threshold %.3f", base.success_reward)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seed_start, args.seed_start + args.runs))
    recs = run_condition_sweep("lander", conds, seeds, base, args.parallelism, out / STORE, curve_dir=out)
    emit_report(recs, args.tau, out, args.n_perm, args.perm_seed)
    return _failed(recs)


def make_topology(args) -> Topology:
    rng = Rng(args.seed)
    if args.kind == "tshape" or (args.kind == "patch" and args.base == "tshape"):
        grid, zones = gen_t_shape(args.block)
    else:
        grid = build_grid(args.rows, args.cols)
        zones = quadrant_zones(grid) if args.kind == "patch" else None
    local = moore_neighbors(grid, args.radius)
    lr = empty_lists(grid)
    if args.kind == "scale-free":
        hubs = args.hubs if args.hubs >= 0 else default_hub_count(grid.n_active)
        lr = gen_scale_free_longrange(grid, ScaleFreeConfig(hubs, args.zipf_exponent,
                                                            args.max_out_degree, args.seed), rng)
    elif args.kind == "patch":
        lr = gen_patch_longrange(grid, zones, rng, args.targets_per_zone)
    return Topology(grid, local, lr, zones)


def cmd_topo(args) -> int:
    try:
        topo = make_topology(args)
    except ValueError as e:
        raise UsageError(str(e)) from None
    problems = validate_topology(topo)
    if problems:
        for p in problems:
            log.error("invalid topology: %s", p)
        return EXIT_FAILURE
    text = dumps_topology(topo)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args) -> int:
    _need(args, "in_dir")
    _need(args, "out")
    src = Path(args.in_dir)
    if not src.is_dir():
        raise UsageError(f"not a directory: {src}")
    recs = [r for f in sorted(src.glob("*.jsonl")) for r in read_records(f)]
    if not recs:
        raise UsageError(f"no run records under {src}")
    paths = emit_report(recs, args.tau, args.out, args.n_perm, args.perm_seed)
    sys.stdout.write(paths["report"].read_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    per = args.per_tensor or None
    checks = {"morph": gc.morph_gradcheck, "lander": gc.lander_gradcheck}
    names = list(checks) if args.profile == "all" else [args.profile]
    status = EXIT_OK
    for name in names:
        r = checks[name](per_tensor=per, seed=args.seed)
        print(f"{'PASS' if r.ok else 'FAIL'} {name}: max relative error {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:g}, {r.n_probed}/{r.n_params} coordinates)")
        status = status if r.ok else EXIT_FAILURE
    return status


COMMANDS = {"morpho": cmd_morpho, "lander": cmd_lander, "topo": cmd_topo,
            "analyze": cmd_analyze, "gradcheck": cmd_gradcheck}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"brainca {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001  any other failure is a run failure
        log.exception("run failed: %s", e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
