"""Command-line entry point.

Exit codes: 0 success, 1 validation or verification failure, 2 usage or
config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DecodeError
from .ledger import ZERO_HASH, Chain, _Reader, decode_block, dump_chain, verify_block
from .sim.calibrate import Calibration, Targets, calibrate
from .sim.config import ScenarioConfig, dump_config, load_config, load_tables
from .sim.engine import simulate_cell, speed_kmh
from .sim.report import DelayReport, rows_for, run_scenario

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("hashchain")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(args) -> ScenarioConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read config {args.config}: {exc.strerror or exc}") from None
    except ConfigError as exc:
        raise _Fail(EXIT_USAGE, f"invalid config {args.config}: {exc}") from None
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None


def _emit(args, text: str | bytes) -> None:
    if args.out is None:
        if isinstance(text, bytes):
            sys.stdout.buffer.write(text)
        else:
            sys.stdout.write(text)
        return
    try:
        mode = "wb" if isinstance(text, bytes) else "w"
        with open(args.out, mode, **({} if isinstance(text, bytes) else {"newline": ""})) as fh:
            fh.write(text)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {args.out}: {exc.strerror or exc}") from None


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _pick_cell(cfg: ScenarioConfig, args):
    speeds = {speed_kmh(v): v for v in cfg.speeds_mps}
    kmh = args.speed if args.speed is not None else speed_kmh(cfg.speeds_mps[0])
    density = args.density if args.density is not None else cfg.densities[0]
    if kmh not in speeds:
        raise _Fail(EXIT_USAGE, f"speed {kmh} km/h not in config ({sorted(speeds)})")
    if density <= 0:
        raise _Fail(EXIT_USAGE, "density must be positive")
    return speeds[kmh], density


# -- subcommands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args)
    speed, density = _pick_cell(cfg, args)
    cell = simulate_cell(cfg, speed, density)
    log.info("cell %d km/h x %d: %d blocks", speed_kmh(speed), density, cell.blocks)
    if args.chain_out:
        try:
            with open(args.chain_out, "wb") as fh:
                fh.write(cell.chain_bytes)
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write {args.chain_out}: {exc.strerror or exc}") from None
    _emit(args, DelayReport(rows_for(cell)).to_csv())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    report = run_scenario(cfg)
    _emit(args, report.to_csv())
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    targets = Targets()
    if args.targets:
        try:
            targets = Targets.from_dict(load_tables(args.targets))
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot read targets {args.targets}: {exc.strerror or exc}") from None
        except Exception as exc:
            raise _Fail(EXIT_USAGE, f"invalid targets file {args.targets}: {exc}") from None
    result: Calibration = calibrate(cfg, targets)
    _emit(args, dump_config(result.config, result.tables()))
    for name, err in result.residuals.items():
        print(f"{name}: achieved {result.achieved[name]:.3f} ms, relative error {err:+.3%}", file=sys.stderr)
    if not result.converged:
        print("calibration did not bring every anchor within tolerance", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _scan_chain(data: bytes):
    """Decode a chain file block by block; return (blocks, (index, reason) | None)."""
    r = _Reader(data, "chain file")
    blocks = []
    while not r.done():
        try:
            raw = r.field()
        except DecodeError as exc:
            return blocks, (len(blocks), f"framing: {exc}")
        try:
            blocks.append(decode_block(raw))
        except (DecodeError, ValueError) as exc:
            return blocks, (len(blocks), f"malformed: {exc}")
    return blocks, None


def cmd_verify_chain(args) -> int:
    blocks, bad = _scan_chain(_read_bytes(args.chain))
    prev = ZERO_HASH
    for i, block in enumerate(blocks):
        verdict = verify_block(block, prev)
        if not verdict:
            print(f"invalid: block {i}: {verdict.reason}")
            return EXIT_INVALID
        prev = block.header.digest()
    if bad is not None:
        print(f"invalid: block {bad[0]}: {bad[1]}")
        return EXIT_INVALID
    print(f"valid: {len(blocks)} blocks")
    return EXIT_OK


def cmd_ledger_dump(args) -> int:
    blocks, bad = _scan_chain(_read_bytes(args.chain))
    text = dump_chain(Chain(blocks))
    if bad is not None:
        text += f"block {bad[0]}: unreadable ({bad[1]})\n"
    _emit(args, text)
    return EXIT_OK if bad is None else EXIT_INVALID


def cmd_broker_dump(args) -> int:
    cfg = _load(args)
    speed, density = _pick_cell(cfg, args)
    cell = simulate_cell(cfg, speed, density)
    topic = args.topic
    if topic != "blocks" and not topic.startswith("crossings"):
        raise _Fail(EXIT_USAGE, f"unknown topic {topic!r}")
    if topic == "crossings":
        topic = "crossings.SM-A"
    if not cell.broker.has_topic(topic):
        raise _Fail(EXIT_USAGE, f"unknown topic {topic!r}")
    _emit(args, cell.broker.dump(topic))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    with_config = argparse.ArgumentParser(add_help=False)
    with_config.add_argument("--config", required=True, help="scenario file (TOML key = value)")

    cell = argparse.ArgumentParser(add_help=False)
    cell.add_argument("--speed", type=int, default=None, help="speed class in km/h (default: first)")
    cell.add_argument("--density", type=int, default=None, help="vehicle count (default: first)")

    p = argparse.ArgumentParser(prog="hashchain", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("run", parents=[common, with_config, cell], help="simulate one (speed, density) cell")
    s.add_argument("--chain-out", default=None, help="also write the replicated chain file")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common, with_config], help="simulate every configured cell")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("calibrate", parents=[common, with_config], help="fit free delay constants to anchors")
    s.add_argument("--targets", default=None, help="TOML file with a [targets] table")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("ledger-dump", parents=[common], help="print a chain file in readable form")
    s.add_argument("--chain", required=True)
    s.set_defaults(func=cmd_ledger_dump)

    s = sub.add_parser("broker-dump", parents=[common, with_config, cell], help="dump a topic log of one cell")
    s.add_argument("--topic", default="blocks")
    s.set_defaults(func=cmd_broker_dump)

    s = sub.add_parser("verify-chain", parents=[common], help="check linkage and roots of a chain file")
    s.add_argument("--chain", required=True)
    s.set_defaults(func=cmd_verify_chain)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s" if args.verbose else "%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
