"""
Simulator Settings Resolver

Resolves every simulator setting from, in order of precedence, a command-line flag, a JSON
config file, a NONLOCAL_SIM_ environment variable and a built-in default. Each resolved
value records where it came from so reports and logs can say why a value is in force.

Usage:
    from app.utils.config_resolver import ConfigResolver

    resolver = ConfigResolver(file_values={"trials": 50000}, file_path="run.json")
    value, source = resolver.get("trials", flag_value=None, default=100000, parser=int)
    # value = 50000
    # source = "file:run.json"
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from config import ENV_PREFIX
from app.simulation.errors import ConfigError

logger = logging.getLogger(__name__)

SOURCE_FLAG = "flag"
SOURCE_DEFAULT = "default"


@dataclass
class ResolutionRecord:
    """One resolved setting: the winner plus every source that was consulted."""
    key: str
    final_value: Any
    winning_source: str
    attempted_sources: List[Tuple[str, Any, bool]] = field(default_factory=list)
    # Each tuple: (source_name, value_found, was_winner)

    def had_conflict(self) -> bool:
        """Returns True if more than one non-default source had a value."""
        non_empty_sources = [s for s in self.attempted_sources if s[1] is not None and s[0] != SOURCE_DEFAULT]
        return len(non_empty_sources) > 1


def env_key(key: str) -> str:
    return f"{ENV_PREFIX}{key.upper()}"


def load_config_file(path: str) -> Dict[str, Any]:
    """JSON object of option name -> value; dashes in names are accepted for underscores."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


class ConfigResolver:
    """
    Flag > file > env > default resolution with per-key source tracking.

    After resolution, use sources() or format_resolution_report() to see all config paths.
    """

    def __init__(self, file_values: Optional[Dict[str, Any]] = None, file_path: Optional[str] = None,
                 environ: Optional[Dict[str, str]] = None):
        self._resolutions: Dict[str, ResolutionRecord] = {}
        self.file_values = dict(file_values or {})
        self.file_path = file_path
        self.environ = environ if environ is not None else os.environ

    def get(
        self,
        key: str,
        flag_value: Any = None,
        default: Any = None,
        parser: Optional[Callable[[Any], Any]] = None,
        use_env: bool = True,
    ) -> Tuple[Any, str]:
        """
        Resolve a config value with source tracking.

        Args:
            key: Option name (file key; the env name is NONLOCAL_SIM_<KEY>)
            flag_value: Value given on the command line, None if absent
            default: Value used when no source provides one
            parser: Applied to the winning raw value; errors become ConfigError
            use_env: Whether an environment variable may supply the value

        Returns:
            Tuple of (resolved_value, source_description)
        """
        file_value = self.file_values.get(key)
        env_name = env_key(key)
        env_value = self.environ.get(env_name) if use_env else None
        if env_value is not None and env_value.strip() == "":
            env_value = None

        candidates = [
            (SOURCE_FLAG, flag_value, parser),
            (f"file:{self.file_path}", file_value, parser),
            (f"env:{env_name}", env_value, parser),
        ]
        attempted: List[Tuple[str, Any, bool]] = []
        resolved: Any = None
        winner: Optional[str] = None
        for source, raw, source_parser in candidates:
            attempted.append((source, raw, False))
            if raw is None or winner is not None:
                continue
            try:
                resolved = source_parser(raw) if source_parser is not None else raw
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Invalid value for {key} from {source}: {raw!r} ({e})") from e
            winner = source
            attempted[-1] = (source, raw, True)

        if winner is None:
            resolved, winner = default, SOURCE_DEFAULT
            attempted.append((SOURCE_DEFAULT, default, True))

        record = ResolutionRecord(key=key, final_value=resolved, winning_source=winner, attempted_sources=attempted)
        self._resolutions[key] = record
        if record.had_conflict():
            logger.warning(f"Config '{key}' set by several sources; using {winner}")
        return resolved, winner

    def get_conflicts(self) -> Dict[str, ResolutionRecord]:
        """Settings that more than one source tried to set."""
        return {k: v for k, v in self._resolutions.items() if v.had_conflict()}

    def sources(self) -> Dict[str, str]:
        return {k: v.winning_source for k, v in sorted(self._resolutions.items())}

    def unknown_file_keys(self) -> List[str]:
        return sorted(k for k in self.file_values if k not in self._resolutions)

    def format_resolution_report(self) -> str:
        """Plain-text dump of each setting, its value and its source, for DEBUG logs."""
        lines = ["=== Simulator settings ==="]

        for key, record in sorted(self._resolutions.items()):
            conflict_marker = " (CONFLICT)" if record.had_conflict() else ""
            lines.append(f"\n{key}{conflict_marker}")
            lines.append(f"  Final: {record.final_value!r}")
            lines.append(f"  Source: {record.winning_source}")

            if record.had_conflict():
                lines.append("  All sources:")
                for source_name, value, was_winner in record.attempted_sources:
                    marker = "->" if was_winner else "  "
                    lines.append(f"    {marker} {source_name} = {value!r}")

        return "\n".join(lines)
