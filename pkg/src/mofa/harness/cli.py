"""Command line entry point ``mofa``.

Exit codes: 0 success, 1 a checked property failed, 2 invalid configuration
or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import figures
from .ablations import ablate_rank, ablate_tau, rate_check
from .config import ConfigError, load_config
from .runner import execute, write_outputs
from .verify import SUITES, verify

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def build_parser() -> argparse.ArgumentParser:
    # argparse itself exits with 2 on malformed arguments, matching EXIT_CONFIG
    p = argparse.ArgumentParser(prog="mofa", description="Low-rank momentum-factor optimizer: runs, checks and ablations.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration and write records.csv, summary.json and run.png")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (default: the config's output field, else runs/<config name>)")

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--suite", default="all", choices=("all",) + SUITES)
    ver.add_argument("--out", help="also write verify.json here")

    ar = sub.add_parser("ablate-rank", help="MoFaSGD and GaLore final loss across ranks")
    ar.add_argument("--config", required=True)
    ar.add_argument("--ranks", type=_int_list, default=[2, 4, 8])
    ar.add_argument("--seeds", type=int, default=20)
    ar.add_argument("--out")

    at = sub.add_parser("ablate-tau", help="GaLore final loss across resampling periods")
    at.add_argument("--config", required=True)
    at.add_argument("--taus", type=_int_list, default=[1, 5, 25, 125])
    at.add_argument("--out")

    rc = sub.add_parser("rate-check", help="fit the decay exponent of the averaged gradient nuclear norm")
    rc.add_argument("--config", required=True)
    rc.add_argument("--horizons", type=_int_list, default=[100, 400, 1600])
    rc.add_argument("--seeds", type=int, default=10)
    rc.add_argument("--out")
    return p


def _emit(report: dict, out, name: str, plot=None) -> None:
    print("=== report ===")
    print(json.dumps(report, indent=2, default=str))
    print("=== end report ===")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(json.dumps(report, indent=2, default=str) + "\n")
        if plot is not None:
            print(f"figure: {plot(report, out / f'{name}.png')}")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output or str(Path("runs") / Path(args.config).stem)
    result = execute(cfg)
    csv_path, json_path = write_outputs(result, out)
    fig = figures.plot_run(result.records, Path(out) / "run.png", title=Path(args.config).stem)
    summary = json.loads(json_path.read_text())
    _emit(summary, None, "summary")
    print(f"records: {csv_path}\nsummary: {json_path}\nfigure: {fig}")
    return EXIT_FAIL if result.aborted else EXIT_OK


def _cmd_verify(args) -> int:
    report = verify(args.suite)
    for row in report["properties"]:
        mark = "PASS" if row["ok"] else "FAIL"
        print(f"{mark} {row['suite']}.{row['property']}: {row['passed']}/{row['total']}")
    _emit(report, args.out, "verify")
    return EXIT_OK if report["ok"] else EXIT_FAIL


def _cmd_ablate_rank(args) -> int:
    cfg = load_config(args.config)
    m, n = cfg.problem.shape
    bad = [r for r in args.ranks if not 1 <= r <= min(m, n)]
    if bad:
        raise ConfigError("ranks", f"{bad} outside [1, {min(m, n)}]")
    report = ablate_rank(cfg, args.ranks, seeds=args.seeds)
    _emit(report, args.out, "ablate_rank", figures.plot_rank_ablation)
    return EXIT_OK if report["monotone"] is not False else EXIT_FAIL


def _cmd_ablate_tau(args) -> int:
    cfg = load_config(args.config)
    if any(t < 1 for t in args.taus):
        raise ConfigError("taus", "every tau must be >= 1")
    report = ablate_tau(cfg, args.taus)
    _emit(report, args.out, "ablate_tau", figures.plot_tau_ablation)
    return EXIT_OK if all(r["completed"] for r in report["rows"]) else EXIT_FAIL


def _cmd_rate_check(args) -> int:
    cfg = load_config(args.config)
    h = args.horizons
    if len(h) < 2 or h[0] < 1 or any(b <= a for a, b in zip(h, h[1:])):
        raise ConfigError("horizons", f"need at least two increasing positive values, got {h}")
    if args.seeds < 1:
        raise ConfigError("seeds", "must be >= 1")
    report = rate_check(cfg, h, seeds=args.seeds)
    _emit(report, args.out, "rate_check", figures.plot_rate_check)
    return EXIT_OK if report["passed"] else EXIT_FAIL


COMMANDS = {
    "run": _cmd_run,
    "verify": _cmd_verify,
    "ablate-rank": _cmd_ablate_rank,
    "ablate-tau": _cmd_ablate_tau,
    "rate-check": _cmd_rate_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
