"""Command-line front end.

    reram-onn retrieve --pattern horizontal --config cfg.yaml --out out/h
    reram-onn characterize --config cfg.yaml --out out/dev
    reram-onn toggle --config cfg.yaml --out out/toggle

Without ``--config`` the file named by $RERAM_ONN_CONFIG is used, else built-in
defaults.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import PATTERNS, ConfigError, dump_config, load_config
from .harness import (
    EXIT_CONFIG,
    EXIT_MISMATCH,
    EXIT_OK,
    StageError,
    run_coupling_toggle,
    run_device_characterization,
    run_retrieval,
)


def _parse_pixels(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad pixel list {text!r}; use e.g. 1,-1,-1,1") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reram-onn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("retrieve", help="store a pattern and retrieve it by phase locking")
    common(p)
    p.add_argument("--pattern", choices=[*PATTERNS, "custom", "all"])
    p.add_argument("--pixels", type=_parse_pixels, help="custom pattern, e.g. 1,1,1,1")
    p.add_argument("--plot-data", action="store_true", help="also write per-cycle phase/frequency CSV")
    p.add_argument("--jobs", type=int, default=3, help="parallel runs for --pattern all")

    p = sub.add_parser("characterize", help="forming, pulse programming and retention analogues")
    common(p)

    p = sub.add_parser("toggle", help="free-run / coupled / decoupled segments")
    common(p)
    p.add_argument("--plot-data", action="store_true")

    p = sub.add_parser("show-config", help="print the effective config as YAML")
    p.add_argument("--config")
    return parser


def _retrieve_one(cfg, out_dir, plot_data):
    rep = run_retrieval(cfg, out_dir, plot_data=plot_data)
    return cfg.pattern, rep.exit_code, rep.match, rep.result.pixels, rep.lock_periods


def _print_retrieval(name, code, match, pixels, lock_periods):
    lock = "no lock" if lock_periods is None else f"locked {lock_periods:.2f} periods after coupling-on"
    print(f"{name}: {' '.join(pixels)} -> {match or 'MISMATCH'} ({lock})")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.command == "show-config":
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        out = Path(args.out or cfg.output_dir)

        if args.command == "retrieve":
            if args.pixels is not None:
                cfg = replace(cfg, pattern="custom", custom_pattern=args.pixels)
            elif args.pattern:
                cfg = replace(cfg, pattern=args.pattern if args.pattern != "all" else cfg.pattern)
            if args.pattern == "all":
                cfgs = [replace(cfg, pattern=name) for name in PATTERNS]
                for c in cfgs:
                    c.validate()
                with ProcessPoolExecutor(max_workers=max(1, args.jobs)) as pool:
                    futures = [pool.submit(_retrieve_one, c, out / c.pattern, args.plot_data) for c in cfgs]
                    results = [f.result() for f in futures]
                for r in results:
                    _print_retrieval(*r)
                return EXIT_OK if all(r[1] == EXIT_OK for r in results) else EXIT_MISMATCH
            cfg.validate()
            res = _retrieve_one(cfg, out, args.plot_data)
            _print_retrieval(*res)
            return res[1]

        if args.command == "characterize":
            rep = run_device_characterization(cfg, out)
            print(f"forming: n={len(rep.forming_voltages)} mean={rep.forming_mean:.3f} V sd={rep.forming_sd:.3f} V")
            if rep.trace:
                print(f"pulse train: {len(rep.trace)} pulses, final G={rep.trace[-1]:.4e} S")
            if rep.retention:
                d, g = rep.retention[-1]
                print(f"retention: {d:g} days -> G={g:.4e} S")
            return EXIT_OK

        if args.command == "toggle":
            rep = run_coupling_toggle(cfg, out, plot_data=args.plot_data)
            for seg in rep.segments:
                print(f"segment {seg.index} ({seg.state}): " + " ".join(f"{f:.1f}" for f in seg.frequencies) + " Hz")
            for r in rep.recovery:
                print(f"recovery after off at {r['t_off'] * 1e3:.3f} ms: max error {r['max_relative_error']:.3%}")
            return rep.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
