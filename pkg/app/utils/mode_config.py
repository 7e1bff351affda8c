"""
Simulator Mode Configuration

Valid execution modes, conventions, flip rules and output formats, with parsers that
turn raw flag, file or environment text into checked values.

Usage:
    from app.utils.mode_config import parse_mode, parse_gamma

    mode = parse_mode("resample-n")        # 'resample_n'
    gamma = parse_gamma("3pi/16")          # 0.589...
"""

import logging
import math
import re
from typing import Any

logger = logging.getLogger(__name__)

VALID_MODES = ('strict', 'ideal', 'resample_n')
VALID_CONVENTIONS = ('corrected', 'literal')
VALID_FLIP_RULES = ('correlated', 'independent')
VALID_FORMATS = ('json', 'csv')
VALID_SUBCOMMANDS = ('simulate', 'sweep', 'verify-components', 'baseline')

GAMMA_MAX = math.pi / 4

_PI_FRACTION = re.compile(r"^\s*(?P<num>[0-9]*\.?[0-9]*)\s*\*?\s*pi\s*(?:/\s*(?P<den>[0-9]*\.?[0-9]+))?\s*$")


def parse_mode(value: str) -> str:
    """Accepts 'resample-n' and 'resample_n' spellings."""
    mode = str(value).strip().lower().replace("-", "_")
    if mode not in VALID_MODES:
        raise ValueError(f"Invalid mode: {value}. Must be one of {VALID_MODES}")
    return mode


def parse_choice(value: str, valid: tuple, name: str) -> str:
    choice = str(value).strip().lower()
    if choice not in valid:
        raise ValueError(f"Invalid {name}: {value}. Must be one of {valid}")
    return choice


def parse_gamma(value: Any) -> float:
    """Radians as a number or as a multiple of pi ('pi/8', '3pi/16', '0.5*pi/2'); range (0, pi/4]."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        gamma = float(value)
    else:
        text = str(value).strip().lower()
        match = _PI_FRACTION.match(text)
        if match:
            numerator = float(match.group("num")) if match.group("num") else 1.0
            denominator = float(match.group("den")) if match.group("den") else 1.0
            if denominator == 0.0:
                raise ValueError(f"Invalid gamma: {value}")
            gamma = numerator * math.pi / denominator
        else:
            gamma = float(text)
    if not math.isfinite(gamma) or gamma <= 0.0 or gamma > GAMMA_MAX:
        raise ValueError(f"gamma must lie in (0, pi/4], got {value}")
    return gamma

