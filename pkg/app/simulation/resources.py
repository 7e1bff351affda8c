"""
No-signaling boxes, shared randomness and per-run resource accounting.

Both boxes are pure functions of their inputs and a uniform coin: the coin fixes the
first party's output, the defining relation fixes the second. Marginals are therefore
uniform and independent of the other party's input.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from app.models.models import Carrier4, Direction, RunTranscript, SharedBundle, SingletBundle
from app.simulation.errors import ResourceViolation
from app.simulation.geom import RngStream, dot, sample_sphere_array, sgn_array

logger = logging.getLogger(__name__)

VALID_CONVENTIONS = ("corrected", "literal")

RESOURCE_PR_BOX = "pr_box"
RESOURCE_M_BOX = "m_box"
RESOURCE_CBIT = "cbit"

# Tolerance for M-box inputs computed from unit vectors (z may exceed 1 by rounding)
_MBOX_INPUT_SLACK = 1e-12


def _check_bit(name: str, value: int) -> None:
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")


def pr_box(x: int, y: int, coin: int) -> Tuple[int, int]:
    """PR-box: a = coin, b = coin XOR (x AND y), so a XOR b = x AND y."""
    _check_bit("x", x)
    _check_bit("y", y)
    _check_bit("coin", coin)
    return coin, coin ^ (x & y)


def mbox_predicate(x: float, y: float, convention: str = "corrected") -> int:
    """Truth value fed into m XOR n: [x <= y] (literal) or [x > y] (corrected)."""
    if convention == "literal":
        return int(x <= y)
    if convention == "corrected":
        return int(x > y)
    raise ValueError(f"Invalid M-box convention: {convention}")


def m_box(x: float, y: float, coin: int, convention: str = "corrected") -> Tuple[int, int]:
    """M-box on real inputs in [0, 1]: m = coin, m XOR n = configured predicate."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"M-box inputs must lie in [0, 1], got x={x!r}, y={y!r}")
    _check_bit("coin", coin)
    return coin, coin ^ mbox_predicate(x, y, convention)


def clamp_mbox_input(value: float) -> float:
    """Pull a rounding overshoot of a unit-vector component back into [0, 1]."""
    if -_MBOX_INPUT_SLACK <= value < 0.0:
        return 0.0
    if 1.0 < value <= 1.0 + _MBOX_INPUT_SLACK:
        return 1.0
    return value


def pr_box_array(x, y, coin) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.int8)
    y = np.asarray(y, dtype=np.int8)
    coin = np.asarray(coin, dtype=np.int8)
    return coin, coin ^ (x & y)


# ----------------------------------------------------------------------------
# Shared randomness
# ----------------------------------------------------------------------------

def draw_bundle(rng: RngStream, c_hat: Carrier4, n_lambdas: int = 2) -> SharedBundle:
    """Fresh mu_1..mu_5, lambda candidates, flip threshold and box coins; c_hat passes through."""
    if not c_hat.is_unit():
        raise ValueError("c_hat must be a unit carrier")
    if n_lambdas < 2:
        raise ValueError(f"At least two lambda candidates are needed, got {n_lambdas}")
    mu = sample_sphere_array(4, rng, 5)
    lambdas = sample_sphere_array(4, rng, n_lambdas)
    r_flip = float(rng.random())
    coins = rng.bits(2)
    return SharedBundle(
        mu=tuple(Carrier4.from_components(row) for row in mu),
        lambda0=Carrier4.from_components(lambdas[0]),
        lambda1=Carrier4.from_components(lambdas[1]),
        c_hat=c_hat,
        r_flip=r_flip,
        box_coins=(int(coins[0]), int(coins[1])),
        extra_lambdas=tuple(Carrier4.from_components(row) for row in lambdas[2:]),
    )


def bundle_signs(bundle: SharedBundle) -> Tuple[int, int, int, int, int]:
    """(sgn(c.mu_1), ..., sgn(c.mu_5))."""
    mu = np.array([m.components() for m in bundle.mu])
    signs = sgn_array(dot(mu, np.array(bundle.c_hat.components())))
    return tuple(int(s) for s in signs)


def draw_singlet_bundle(rng: RngStream) -> SingletBundle:
    lambdas = sample_sphere_array(3, rng, 2)
    coin = rng.bits()
    return SingletBundle(
        lambda0=Direction.from_components(lambdas[0]),
        lambda1=Direction.from_components(lambdas[1]),
        pr_coin=int(coin),
    )


@dataclass(frozen=True)
class BundleBatch:
    """Shared randomness for many runs, one row per run."""
    mu: np.ndarray  # (N, 5, 4)
    lambdas: np.ndarray  # (N, k, 4), k >= 2
    r_flip: np.ndarray  # (N,)
    coins: np.ndarray  # (N, 2) int8: M-box coin, PR-box coin
    c_hat: Carrier4

    @property
    def size(self) -> int:
        return self.r_flip.shape[0]

    def signs(self) -> np.ndarray:
        """(N, 5) array of sgn(c . mu_i)."""
        return sgn_array(dot(self.mu, np.array(self.c_hat.components())))

    def row(self, index: int) -> SharedBundle:
        lambdas = self.lambdas[index]
        return SharedBundle(
            mu=tuple(Carrier4.from_components(m) for m in self.mu[index]),
            lambda0=Carrier4.from_components(lambdas[0]),
            lambda1=Carrier4.from_components(lambdas[1]),
            c_hat=self.c_hat,
            r_flip=float(self.r_flip[index]),
            box_coins=(int(self.coins[index, 0]), int(self.coins[index, 1])),
            extra_lambdas=tuple(Carrier4.from_components(row) for row in lambdas[2:]),
        )


def draw_bundle_batch(rng: RngStream, c_hat: Carrier4, size: int, n_lambdas: int = 2) -> BundleBatch:
    if n_lambdas < 2:
        raise ValueError(f"At least two lambda candidates are needed, got {n_lambdas}")
    mu = sample_sphere_array(4, rng, size * 5).reshape(size, 5, 4)
    lambdas = sample_sphere_array(4, rng, size * n_lambdas).reshape(size, n_lambdas, 4)
    r_flip = rng.random(size)
    coins = rng.bits((size, 2))
    return BundleBatch(mu=mu, lambdas=lambdas, r_flip=r_flip, coins=coins, c_hat=c_hat)


@dataclass(frozen=True)
class SingletBatch:
    lambdas: np.ndarray  # (N, 2, 3)
    pr_coin: np.ndarray  # (N,) int8

    @property
    def size(self) -> int:
        return self.pr_coin.shape[0]

    def row(self, index: int) -> SingletBundle:
        return SingletBundle(
            lambda0=Direction.from_components(self.lambdas[index, 0]),
            lambda1=Direction.from_components(self.lambdas[index, 1]),
            pr_coin=int(self.pr_coin[index]),
        )


def draw_singlet_batch(rng: RngStream, size: int) -> SingletBatch:
    lambdas = sample_sphere_array(3, rng, size * 2).reshape(size, 2, 3)
    return SingletBatch(lambdas=lambdas, pr_coin=rng.bits(size))


# ----------------------------------------------------------------------------
# Transcripts
# ----------------------------------------------------------------------------

def new_transcript(mode: str, notes: Iterable[str] = ()) -> RunTranscript:
    return RunTranscript(mode=mode, notes=list(notes))


def record_use(transcript: RunTranscript, resource_label: str, amount: int = 1) -> RunTranscript:
    """Count one use of a box (or `amount` communicated bits)."""
    if transcript.closed:
        raise ResourceViolation(f"Cannot record {resource_label} on a closed transcript")
    if resource_label == RESOURCE_PR_BOX:
        transcript.pr_box_uses += amount
    elif resource_label == RESOURCE_M_BOX:
        transcript.m_box_uses += amount
    elif resource_label == RESOURCE_CBIT:
        transcript.cbits += amount
    else:
        raise ValueError(f"Unknown resource label: {resource_label}")
    transcript.uses.append(resource_label)
    return transcript


def record_draws(transcript: RunTranscript, labels: Iterable[str]) -> RunTranscript:
    if transcript.closed:
        raise ResourceViolation("Cannot record draws on a closed transcript")
    transcript.shared_draws.extend(labels)
    return transcript


def close_transcript(transcript: RunTranscript, expected_pr: int = None, expected_m: int = None) -> RunTranscript:
    """
    Close the run and flag contract violations.

    expected_pr / expected_m are the exact box counts the mode promises; None skips the check.
    """
    if transcript.closed:
        raise ResourceViolation("Transcript already closed")
    if expected_pr is not None and transcript.pr_box_uses != expected_pr:
        transcript.violations.append(f"pr_box_uses={transcript.pr_box_uses}, expected {expected_pr}")
    if expected_m is not None and transcript.m_box_uses != expected_m:
        transcript.violations.append(f"m_box_uses={transcript.m_box_uses}, expected {expected_m}")
    transcript.closed = True
    if transcript.violations:
        logger.warning(f"Run transcript closed with violations: {transcript.violations}")
    return transcript
