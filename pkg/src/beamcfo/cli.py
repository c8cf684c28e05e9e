"""Command-line front end: seeded sweeps written as CSV plus a run manifest."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import zeta_table
from .harness import (
    ExperimentConfig,
    load_config,
    paper_preset,
    run_analytic,
    run_bounds,
    run_mse_sweep,
    run_ser_sweep,
    write_manifest,
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="INI experiment file")
    sub.add_argument("--seed", type=int, help="override the master seed")
    sub.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub.add_argument("--workers", type=int, help="concurrent trial workers")
    sub.add_argument(
        "--paper",
        action="store_true",
        help="start from the published simulation setup instead of library defaults",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamcfo",
        description="Angle-domain Doppler/oscillator offset estimation experiments",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("mse", "offset-estimation MSE sweep"),
        ("ser", "data-detection SER sweep"),
        ("crb", "averaged Cramer-Rao bounds and analytical curves"),
        ("analytic", "analytical MSE decomposition only"),
        ("zeta", "negligibility constants by all three routes"),
    ):
        _add_common(subs.add_parser(name, help=help_text))
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if args.paper:
            raise SystemExit("--paper and --config are mutually exclusive")
    elif args.paper:
        cfg = paper_preset()
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    return replace(cfg, **overrides) if overrides else cfg


def _zeta_csv(cfg: ExperimentConfig) -> str:
    table = zeta_table(cfg.geometry(), k_max=3)
    lines = ["route,constant,k,value_re,value_im"]
    for route in ("closed", "quadrature", "definitional"):
        vals = getattr(table, route)
        lines.append(f"{route},zeta21,0,{float(vals.zeta21_0)!r},0.0")
        lines.append(f"{route},zeta23,0,{float(vals.zeta23_0)!r},0.0")
        for k in sorted(vals.zeta22):
            v = complex(vals.zeta22[k])
            lines.append(f"{route},zeta22,{k},{v.real!r},{v.imag!r}")
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _resolve_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    out_csv = args.out / f"{args.command}.csv"
    if args.command == "mse":
        run_mse_sweep(cfg).write_csv(out_csv)
    elif args.command == "ser":
        run_ser_sweep(cfg).write_csv(out_csv)
    elif args.command == "crb":
        run_bounds(cfg).write_csv(out_csv)
    elif args.command == "analytic":
        run_analytic(cfg).write_csv(out_csv)
    elif args.command == "zeta":
        out_csv.write_text(_zeta_csv(cfg), encoding="utf-8", newline="\n")
    write_manifest(cfg, args.command, args.out / f"{args.command}_manifest.json")
    print(f"wrote {out_csv}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
