"""
ibe-trust keygen | run | report

Exit codes: 0 ok, 1 internal error, 2 usage or configuration error.
"""

from __future__ import annotations

from pathlib import Path
import argparse
import logging
import sys

import tomli

from ibe_trust.base.errors import ConfigurationError, ParameterError, ScenarioError
from ibe_trust.energy.energy import EnergyConstants
from ibe_trust.ibe import keyfiles
from ibe_trust.ibe.ibe import PROFILES, SecurityConfig, extract, setup
from ibe_trust.protocol.protocol import BS_NAME, IdentityRegistry
from ibe_trust.sim import sim
from ibe_trust.sim.scenario import load_scenario, resolve_scenario

logger = logging.getLogger(__name__)

PARAMS_FILE = "params.ibtp"
MASTER_FILE = "master.ibtm"
KEY_SUFFIX = ".ibtk"
REPORT_FILE = "report.txt"
CSV_FILE = "report.csv"
LOG_FILE = "events.jsonl"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


def _constants(path: Path | None) -> EnergyConstants | None:
    if path is None:
        return None
    try:
        return EnergyConstants.from_toml(path)
    except (tomli.TOMLDecodeError, ValueError) as e:
        raise ConfigurationError(f"{path}: {e}") from e


def _roster(scenario_ref: str | None) -> list[str]:
    if scenario_ref is None:
        return []
    scenario = load_scenario(resolve_scenario(scenario_ref))
    return [n.name or IdentityRegistry.default_name(n.addr) for n in scenario.nodes]


def cmd_keygen(args: argparse.Namespace) -> int:
    params, master = setup(SecurityConfig.from_profile(args.profile, seed=args.seed, n=args.n))
    out: Path = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    keyfiles.save_params(out / PARAMS_FILE, params)
    keyfiles.save_master_key(out / MASTER_FILE, master)

    names = [BS_NAME, *_roster(args.scenario)]
    for name in names:
        keyfiles.save_private_key(out / f"{name}{KEY_SUFFIX}", extract(params, master, name))
    print(f"wrote {args.profile} params, the master key and {len(names)} private keys to {out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(resolve_scenario(args.scenario))
    params = master = None
    keys = {}
    if args.keys is not None:
        params = keyfiles.load_params(args.keys / PARAMS_FILE)
        master = keyfiles.load_master_key(args.keys / MASTER_FILE, params)
        for name in _roster(args.scenario):
            path = args.keys / f"{name}{KEY_SUFFIX}"
            if path.is_file():
                keys[name] = keyfiles.load_private_key(path, params)
        logger.info("using keys from %s, %s node keys", args.keys, len(keys))

    report = sim.run(
        scenario,
        seed=args.seed,
        params=params,
        master=master,
        keys=keys,
        constants=_constants(args.energy),
    )

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(report.to_text())
    (out / CSV_FILE).write_text(report.to_csv())
    (out / LOG_FILE).write_text(report.to_jsonl())
    for v in report.verdicts:
        print(f"{v.label}: {v.verdict.value}")
    print(f"wrote {REPORT_FILE}, {CSV_FILE} and {LOG_FILE} to {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    records = sim.records_from_jsonl(Path(args.log).read_text())
    energy_report = sim.report_from_records(records, _constants(args.energy))
    sys.stdout.write(energy_report.to_csv() if args.csv else energy_report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="stream simulator events to stderr")

    parser = argparse.ArgumentParser(
        prog="ibe-trust", description="Identity-based trusted authentication for sensor networks."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    keygen = commands.add_parser("keygen", parents=[common], help="set up params and extract keys")
    keygen.add_argument("--profile", choices=PROFILES, default="demo")
    keygen.add_argument("--seed", type=int, default=0, help="master key seed")
    keygen.add_argument("--n", type=int, help="block size in bits, the profile's own by default")
    keygen.add_argument("--out-dir", type=Path, required=True)
    keygen.add_argument("--scenario", help="also extract keys for this scenario's roster")
    keygen.set_defaults(func=cmd_keygen)

    run = commands.add_parser("run", parents=[common], help="run a scenario")
    run.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    run.add_argument("--out", type=Path, required=True, help="directory for the report and event log")
    run.add_argument("--keys", type=Path, default=None, help="directory written by keygen")
    run.add_argument("--energy", type=Path, default=None, help="energy constants file")
    run.set_defaults(func=cmd_run)

    report = commands.add_parser("report", parents=[common], help="re-render tables from an event log")
    report.add_argument("--in", dest="log", type=Path, required=True)
    report.add_argument("--energy", type=Path, default=None, help="energy constants file")
    report.add_argument("--csv", action="store_true")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ScenarioError, ConfigurationError, ParameterError, FileNotFoundError) as e:
        print(f"ibe-trust: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.exception("ibe-trust %s failed", args.command)
        return EXIT_INTERNAL
