"""Command-line entry point: ``python -m quadobs <command> [options]``.

Exit status: 0 success, 1 usage or configuration error, 2 numeric failure
(including a failing ``check`` suite).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import checks, harness, mmd
from .svg import export_svg
from .system import NumericError, RngStream

ENV_OUT = "QUADOBS_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _experiment_flags(p: argparse.ArgumentParser, trials: bool = False):
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help=f"output directory (default: config or ${ENV_OUT})")
    p.add_argument("--control-estimator", choices=harness.CONTROL_ESTIMATORS)
    p.add_argument("--beta", type=float, help="attack magnitude")
    p.add_argument("--attack-step", type=int, help="attack onset step")
    p.add_argument("--no-attack", action="store_true", help="disable the attack")
    if trials:
        p.add_argument("--trials", type=int, help="number of Monte Carlo trials")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="quadobs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one closed-loop trial")
    _experiment_flags(s)
    s.add_argument("--trial", type=int, default=0, help="trial index (default 0)")
    s.add_argument("--no-svg", action="store_true")

    e = sub.add_parser("experiment", help="run the Monte Carlo experiment")
    _experiment_flags(e, trials=True)
    e.add_argument("--save-trials", action="store_true", help="also write every trial log")
    e.add_argument("--no-svg", action="store_true")

    d = sub.add_parser("detect", help="run the detector on an exported trial CSV")
    d.add_argument("csv", help="trial CSV with xhatL*/xhatQ* columns")
    d.add_argument("--window", type=int, default=10)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--B", type=int, default=500)
    d.add_argument("--alpha", type=float, default=0.05)
    d.add_argument("--sigma", type=float, default=None)
    d.add_argument("--out", help="write detections CSV here")

    c = sub.add_parser("check", help="run the built-in property suites")
    c.add_argument("--suite", action="append", choices=sorted(checks.SUITES),
                   help="run only this suite (repeatable)")
    c.add_argument("--seed", type=int, default=0)
    return ap


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    out = args.out
    if out is None and not args.config and os.environ.get(ENV_OUT):
        out = os.environ[ENV_OUT]
    return harness.with_overrides(
        cfg, seed=args.seed, trials=getattr(args, "trials", None), out=out,
        control_estimator=args.control_estimator, beta=args.beta,
        attack_step=args.attack_step, no_attack=args.no_attack)


def _echo_config(cfg: harness.ExperimentConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    log = harness.run_trial(cfg, args.trial)
    _echo_config(cfg, out)
    files = harness.export_csv(log, out)
    if not args.no_svg:
        onset = cfg.game.attack.onset if cfg.game.attack.beta > 0 else None
        files.append(export_svg(log, "trajectories", out / f"trial_{args.trial:04d}_trajectories.svg", onset))
    for f in files:
        print(f)
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    report, logs = harness.run_experiment(cfg)
    _echo_config(cfg, out)
    files = harness.export_csv(report, out)
    if args.save_trials:
        for log in logs:
            files += harness.export_csv(log, out / "trials")
    if not args.no_svg:
        files.append(export_svg(report, "mse", out / "mse.svg"))
        files.append(export_svg(report, "mmd", out / "mmd.svg"))
    for f in files:
        print(f)
    return 0


def cmd_detect(args) -> int:
    L, Q = harness.load_estimates(args.csv)
    outcomes = mmd.online_detect(L, Q, args.window, mmd.KernelConfig(args.sigma),
                                 mmd.WildBootstrapConfig(args.B, args.alpha),
                                 RngStream(args.seed))
    if args.out:
        path = Path(args.out)
        if path.suffix != ".csv":
            path = path / "detections.csv"
        harness.export_detections_csv(outcomes, path)
        print(path)
    for o in outcomes:
        print(f"k={o.k:3d} statistic={o.statistic:.6g} threshold={o.threshold:.6g} "
              f"{'REJECT' if o.reject else 'accept'}")
    return 0


def cmd_check(args) -> int:
    results = checks.run_all(args.suite, seed=args.seed)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 2 if failed else 0


COMMANDS = {"simulate": cmd_simulate, "experiment": cmd_experiment,
            "detect": cmd_detect, "check": cmd_check}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
