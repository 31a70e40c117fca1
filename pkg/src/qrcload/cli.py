"""Command line: ``qrcload {prepare,search,run,report}``.

Exit codes: 0 success, 1 user or configuration error, 2 internal failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, _int_list, _shots_list, load_config
from .ingest import IngestError
from .pipeline import StageError, cmd_prepare, cmd_report, cmd_run, cmd_search

USER_ERRORS = (ConfigError, IngestError, StageError, FileNotFoundError)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--data", help="Tetouan CSV path (overrides data_path)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed-list", help="comma separated seeds, e.g. 0,1")
    common.add_argument("--shots-list", help="comma separated shot settings, e.g. none,512")
    common.add_argument("--bits-list", help="comma separated bit widths, e.g. 32,8,6,4,3,2")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qrcload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="parse, resample, split and window the data")
    s = sub.add_parser("search", parents=[common], help="genetic architecture search")
    s.add_argument("--skip-search", action="store_true",
                   help="skip the GA and use the explicit n_qubits/n_layers from the config")
    sub.add_parser("run", parents=[common], help="FP32 + quantized evaluation grid")
    sub.add_parser("report", parents=[common], help="print the results table")
    return parser


def _config_from_args(args):
    overrides = {"data_path": args.data, "output_dir": args.out}
    try:
        if args.seed_list:
            overrides["seeds"] = _int_list(args.seed_list)
        if args.shots_list:
            overrides["shot_settings"] = _shots_list(args.shots_list)
        if args.bits_list:
            overrides["bit_widths"] = _int_list(args.bits_list)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return load_config(args.config, **overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "search":
            cmd_search(cfg, skip_search=args.skip_search)
        elif args.command == "run":
            _, _, failures = cmd_run(cfg)
            if failures:
                print(f"{len(failures)} cell(s) failed; see manifest.json", file=sys.stderr)
                return 2
        elif args.command == "report":
            cmd_report(cfg.output_dir)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
