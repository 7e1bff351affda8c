"""
Command-line surface: simulate, sweep, verify-components and baseline.

Exit codes: 0 when every threshold passes, 1 on a statistical or invariant failure,
2 on usage, configuration or I/O errors.
"""

import argparse
import logging
import math
import sys
from typing import Any, Dict, List, Optional, Sequence

from config import (
    DEFAULT_BASELINE_SETTINGS,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_MAX_REJECTION_ITERATIONS,
    DEFAULT_RANDOM_SETTINGS,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    DEFAULT_WORKERS,
)
from app.models.models import CliConfig
from app.persistence.report_store import save_report, serialize_report
from app.simulation.errors import ConfigError, ReportWriteError, SimulationError
from app.simulation.services.acceptance_policies import BLOCK_PROTOCOL, PolicyEngine
from app.simulation.services.component_checks import ComponentVerifier
from app.simulation.stats import (
    convention_comparison,
    expected_protocol_resources,
    run_baseline_sweep,
    run_sweep,
    simulate_setting,
)
from app.utils.config_resolver import ConfigResolver, load_config_file
from app.utils.mode_config import (
    VALID_CONVENTIONS,
    VALID_FLIP_RULES,
    VALID_FORMATS,
    VALID_SUBCOMMANDS,
    parse_choice,
    parse_gamma,
    parse_mode,
)
from app.utils.settings_util import load_settings, parse_direction, parse_direction_text, random_settings
from app.utils.transcript_logger import log_transcript, truncate_transcript_log

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


# ----------------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------------

def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes", "on"):
        return True
    if text in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_non_negative_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError("booleans are not integers")
    number = int(value)
    if number < 0:
        raise ValueError(f"must be non-negative, got {number}")
    return number


def _parse_positive_int(value: Any) -> int:
    number = _parse_non_negative_int(value)
    if number < 1:
        raise ValueError(f"must be at least 1, got {number}")
    return number


def _parse_direction_value(value: Any):
    if isinstance(value, (list, tuple)):
        return parse_direction(value)
    return parse_direction_text(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values (flags take precedence)")
    common.add_argument("--gamma", help="State parameter in (0, pi/4]; radians or e.g. 'pi/8'")
    common.add_argument("--mode", help="strict | ideal | resample-n")
    common.add_argument("--n", dest="resample_n", help="Candidate count for resample-n mode")
    common.add_argument("--ab-convention", help="corrected | literal")
    common.add_argument("--mbox-convention", help="corrected | literal")
    common.add_argument("--flip-rule", help="correlated | independent")
    common.add_argument("--settings", help="JSON array of {a: [x,y,z], b: [x,y,z]}")
    common.add_argument("--random-settings", help="Number of random settings")
    common.add_argument("--a", dest="setting_a", help="Alice's setting 'x,y,z' (simulate)")
    common.add_argument("--b", dest="setting_b", help="Bob's setting 'x,y,z' (simulate)")
    common.add_argument("--trials", help="Runs per setting")
    common.add_argument("--seed", help="Master seed")
    common.add_argument("--out", help="Report path; stdout when omitted")
    common.add_argument("--format", help="json | csv")
    common.add_argument("--workers", help="Worker threads")
    common.add_argument("--chunk-size", help="Runs per seeded chunk")
    common.add_argument("--max-rejection-iterations", help="Iteration cap of the biased sampler")
    common.add_argument("--compare-conventions", action="store_const", const=True, default=None,
                        help="Rerun the sweep with both conventions switched")
    common.add_argument("--no-calibration", dest="calibrate", action="store_const", const=False, default=None,
                        help="Skip the calibration block")
    common.add_argument("--transcript-log", help="JSONL file receiving one transcript per run (simulate)")
    common.add_argument("--progress", action="store_const", const=True, default=None,
                        help="Show progress bars")

    parser = argparse.ArgumentParser(
        prog="nonlocal-sim",
        description="Simulate the M-box + PR-box protocol and compare it with the quantum target",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in VALID_SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """
    Resolve a CliConfig from flags, an optional --config file, the environment and defaults.

    Raises ConfigError on invalid values; argparse exits with code 2 on malformed flags.
    """
    args = build_parser().parse_args(argv)
    file_values = load_config_file(args.config) if args.config else {}
    resolver = ConfigResolver(file_values=file_values, file_path=args.config)

    def resolve(key: str, flag_value: Any, default: Any, parser=None, use_env: bool = True):
        value, _ = resolver.get(key, flag_value=flag_value, default=default, parser=parser, use_env=use_env)
        return value

    cfg = CliConfig(subcommand=args.subcommand)
    cfg.gamma = resolve("gamma", args.gamma, math.pi / 8, parse_gamma)
    cfg.mode = resolve("mode", args.mode, "strict", parse_mode)
    cfg.resample_n = resolve("resample_n", args.resample_n, None, _parse_positive_int)
    cfg.ab_convention = resolve("ab_convention", args.ab_convention, "corrected",
                                lambda v: parse_choice(v, VALID_CONVENTIONS, "ab_convention"))
    cfg.mbox_convention = resolve("mbox_convention", args.mbox_convention, "corrected",
                                  lambda v: parse_choice(v, VALID_CONVENTIONS, "mbox_convention"))
    cfg.flip_rule = resolve("flip_rule", args.flip_rule, "correlated",
                            lambda v: parse_choice(v, VALID_FLIP_RULES, "flip_rule"))
    cfg.settings_file = resolve("settings", args.settings, None, str)
    cfg.random_settings = resolve("random_settings", args.random_settings, None, _parse_positive_int)
    cfg.setting_a = resolve("a", args.setting_a, None, _parse_direction_value, use_env=False)
    cfg.setting_b = resolve("b", args.setting_b, None, _parse_direction_value, use_env=False)
    cfg.trials = resolve("trials", args.trials, DEFAULT_TRIALS, _parse_positive_int)
    cfg.master_seed = resolve("seed", args.seed, DEFAULT_SEED, _parse_non_negative_int)
    cfg.output_path = resolve("out", args.out, None, str, use_env=False)
    cfg.output_format = resolve("format", args.format, "json",
                                lambda v: parse_choice(v, VALID_FORMATS, "format"))
    cfg.workers = resolve("workers", args.workers, DEFAULT_WORKERS, _parse_positive_int)
    cfg.chunk_size = resolve("chunk_size", args.chunk_size, DEFAULT_CHUNK_SIZE, _parse_positive_int)
    cfg.max_rejection_iterations = resolve("max_rejection_iterations", args.max_rejection_iterations,
                                           DEFAULT_MAX_REJECTION_ITERATIONS, _parse_positive_int)
    cfg.compare_conventions = resolve("compare_conventions", args.compare_conventions, False, _parse_bool)
    cfg.calibrate = resolve("calibrate", args.calibrate, True, _parse_bool)
    cfg.transcript_log = resolve("transcript_log", args.transcript_log, None, str, use_env=False)
    cfg.progress = resolve("progress", args.progress, False, _parse_bool)
    cfg.sources = resolver.sources()

    for key in resolver.unknown_file_keys():
        logger.warning(f"Ignoring unknown key '{key}' in config file {args.config}")

    if cfg.mode == "resample_n" and (cfg.resample_n is None or cfg.resample_n < 2):
        raise ConfigError("--mode resample-n needs --n >= 2")
    if cfg.mode != "resample_n" and cfg.resample_n is not None:
        logger.warning(f"--n={cfg.resample_n} is ignored in mode {cfg.mode}")
        cfg.resample_n = None
    if cfg.settings_file and cfg.random_settings:
        raise ConfigError("--settings and --random-settings are mutually exclusive")
    if (cfg.setting_a is None) != (cfg.setting_b is None):
        raise ConfigError("--a and --b must be given together")

    logger.debug(resolver.format_resolution_report())
    logger.info(f"Configuration sources: {resolver.sources()}")
    return cfg


# ----------------------------------------------------------------------------
# Execution
# ----------------------------------------------------------------------------

def _resolve_settings(cfg: CliConfig, default_count: int):
    if cfg.settings_file:
        return load_settings(cfg.settings_file)
    return random_settings(cfg.random_settings or default_count, cfg.master_seed)


def _emit(document: Dict[str, Any], cfg: CliConfig) -> None:
    if cfg.output_path:
        save_report(document, cfg.output_path, cfg.output_format)
    else:
        sys.stdout.write(serialize_report(document, cfg.output_format))


def _report_config(cfg: CliConfig) -> Dict[str, Any]:
    echo = cfg.report_config()
    echo["sources"] = {k: v for k, v in cfg.sources.items() if k in echo or k in ("seed", "settings")}
    return echo


def command_simulate(cfg: CliConfig) -> int:
    if cfg.setting_a is not None:
        a, b = cfg.setting_a, cfg.setting_b
    else:
        a, b = _resolve_settings(cfg, 1)[0]
    protocol_cfg = cfg.protocol_config()

    on_transcript = None
    if cfg.transcript_log:
        truncate_transcript_log(cfg.transcript_log)

        def on_transcript(run_index: int, transcript: Dict[str, Any]) -> None:
            log_transcript(cfg.transcript_log, run_index, transcript)

    report = simulate_setting(a, b, protocol_cfg, cfg.trials, cfg.chunk_size, on_transcript)
    summary = PolicyEngine().evaluate(BLOCK_PROTOCOL, [report], expected_protocol_resources(protocol_cfg))
    document = {
        "config": _report_config(cfg),
        "setting": report.to_dict(),
        "summary": summary,
    }
    if cfg.output_format == "csv":
        document["settings"] = [document["setting"]]
    _emit(document, cfg)
    return EXIT_PASS if summary["passed"] else EXIT_FAIL


def command_sweep(cfg: CliConfig) -> int:
    settings = _resolve_settings(cfg, DEFAULT_RANDOM_SETTINGS)
    protocol_cfg = cfg.protocol_config()
    report = run_sweep(
        protocol_cfg, settings, cfg.trials,
        chunk_size=cfg.chunk_size,
        workers=cfg.workers,
        calibrate=cfg.calibrate,
        progress=cfg.progress,
        config_echo=_report_config(cfg),
    )
    if cfg.compare_conventions:
        report.convention_comparison = convention_comparison(
            protocol_cfg, settings, cfg.trials, cfg.chunk_size, cfg.workers, cfg.progress)
    _emit(report.to_dict(), cfg)
    return EXIT_PASS if report.passed else EXIT_FAIL


def command_baseline(cfg: CliConfig) -> int:
    settings = _resolve_settings(cfg, DEFAULT_BASELINE_SETTINGS)
    report = run_baseline_sweep(
        settings, cfg.trials, cfg.master_seed,
        chunk_size=cfg.chunk_size,
        workers=cfg.workers,
        progress=cfg.progress,
        config_echo=_report_config(cfg),
    )
    _emit(report.to_dict(), cfg)
    return EXIT_PASS if report.passed else EXIT_FAIL


def command_verify_components(cfg: CliConfig) -> int:
    if cfg.output_format == "csv":
        raise ConfigError("verify-components writes JSON only")
    verifier = ComponentVerifier(
        gamma=cfg.gamma,
        master_seed=cfg.master_seed,
        trials=cfg.trials,
        ab_convention=cfg.ab_convention,
        mbox_convention=cfg.mbox_convention,
    )
    report = verifier.run_all()
    _emit(report.to_dict(), cfg)
    return EXIT_PASS if report.passed else EXIT_FAIL


COMMANDS = {
    "simulate": command_simulate,
    "sweep": command_sweep,
    "baseline": command_baseline,
    "verify-components": command_verify_components,
}


def execute(cfg: CliConfig) -> int:
    """Run the configured command and map failures to exit codes."""
    logger.info(f"Running '{cfg.subcommand}' (mode={cfg.mode}, gamma={cfg.gamma}, seed={cfg.master_seed})")
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except (ConfigError, ReportWriteError) as e:
        logger.error(f"{cfg.subcommand}: {e}")
        return EXIT_USAGE
    except SimulationError as e:
        logger.error(f"{cfg.subcommand} failed: {e}")
        return EXIT_FAIL
    except ValueError as e:
        logger.error(f"{cfg.subcommand}: invalid input: {e}")
        return EXIT_USAGE


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_PASS
    return execute(cfg)
