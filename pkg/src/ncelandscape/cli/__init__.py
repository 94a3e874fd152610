"""Command-line interface: ``ncelandscape {run,verify,landscape,presets}``."""

from __future__ import annotations

import argparse
import sys

from ..exceptions import ConfigError, NCELandscapeError
from .commands import landscape_command, verify_command
from .config import OUTPUT_ENV, ExperimentConfig, list_presets, parse_config, parse_config_text
from .experiment import ResultTable, emit_plot_data, read_csv, run_experiment, write_csv, write_settings

__all__ = [
    "ExperimentConfig",
    "ResultTable",
    "emit_plot_data",
    "landscape_command",
    "list_presets",
    "main",
    "parse_config",
    "parse_config_text",
    "read_csv",
    "run_experiment",
    "verify_command",
    "write_csv",
]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ncelandscape",
        description="NCE / eNCE optimization experiments and landscape checks.",
        epilog=f"The output directory of any config can be overridden with ${OUTPUT_ENV}.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the optimizer sweep of a config and write CSV and plot data"),
        ("verify", "certify landscape inequalities; exit 1 if any check fails"),
        ("landscape", "dump loss, gradient and curvature along the noise-to-optimum segment"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="config file or shipped preset name")
        s.add_argument("-q", "--quiet", action="store_true", help="print nothing on success")
    sub.add_parser("presets", help="list shipped configs")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = sys.stdout
    if args.command == "presets":
        for name, desc in list_presets():
            print(f"{name:18s} {desc}", file=out)
        return 0
    try:
        cfg = parse_config(args.config)
        directory = cfg.resolved_output_dir()
        if args.command == "run":
            table = run_experiment(cfg)
            csv_path = write_csv(table, directory / f"{cfg.prefix}_results.csv")
            emit_plot_data(table, directory, cfg.prefix)
            write_settings(table, cfg, directory / f"{cfg.prefix}_settings.txt")
            if not args.quiet:
                for loss, algo in table.cells():
                    print(f"{loss:5s} {algo:7s} final min distance (mean over runs) "
                          f"{table.final_min_dist(loss, algo):.6g}", file=out)
                print(f"wrote {csv_path}", file=out)
            return 0
        if args.command == "verify":
            status, report = verify_command(cfg, directory)
            if not args.quiet or status:
                out.write(report.text())
            return status
        paths = landscape_command(cfg, directory)
        if not args.quiet:
            for p in paths:
                print(f"wrote {p}", file=out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NCELandscapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
