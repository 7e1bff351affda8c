"""
Measurement-setting sources: JSON settings files and seeded random settings.
"""

import json
import logging
import math
from typing import List, Sequence, Tuple

from app.models.models import Direction
from app.simulation.errors import ConfigError
from app.simulation.geom import RngStream, sample_sphere_array

logger = logging.getLogger(__name__)

NORMALIZE_WARNING_THRESHOLD = 1e-6

Setting = Tuple[Direction, Direction]


def parse_direction(components: Sequence[float], label: str = "direction") -> Direction:
    """Three finite components, normalized; warns when the input was off the sphere by > 1e-6."""
    try:
        values = [float(c) for c in components]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{label} must be three numbers, got {components!r}") from e
    if len(values) != 3 or not all(math.isfinite(v) for v in values):
        raise ConfigError(f"{label} must be three finite numbers, got {components!r}")
    length = math.sqrt(sum(v * v for v in values))
    if length == 0.0:
        raise ConfigError(f"{label} must be nonzero")
    if abs(length - 1.0) > NORMALIZE_WARNING_THRESHOLD:
        logger.warning(f"{label} {values} has norm {length:.9g}; normalizing")
    return Direction.from_components(values, normalize=True)


def parse_direction_text(text: str, label: str = "direction") -> Direction:
    """'x,y,z' as given on the command line."""
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    return parse_direction(parts, label)


def load_settings(path: str) -> List[Setting]:
    """JSON array of {"a": [x, y, z], "b": [x, y, z]}."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read settings file {path}: {e}") from e
    if not isinstance(data, list) or not data:
        raise ConfigError(f"Settings file {path} must contain a non-empty JSON array")
    settings = []
    for index, entry in enumerate(data):
        if not isinstance(entry, dict) or "a" not in entry or "b" not in entry:
            raise ConfigError(f"Setting {index} in {path} must be an object with 'a' and 'b'")
        settings.append((
            parse_direction(entry["a"], f"settings[{index}].a"),
            parse_direction(entry["b"], f"settings[{index}].b"),
        ))
    logger.info(f"Loaded {len(settings)} settings from {path}")
    return settings


def random_settings(count: int, master_seed: int) -> List[Setting]:
    """count uniform (a, b) pairs from a stream reserved for settings."""
    if count < 1:
        raise ConfigError(f"Random settings count must be at least 1, got {count}")
    rng = RngStream(master_seed, ("settings", count))
    points = sample_sphere_array(3, rng, 2 * count)
    directions = [Direction.from_components(p, normalize=True) for p in points]
    return list(zip(directions[0::2], directions[1::2]))
