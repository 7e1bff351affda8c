"""
Vector algebra, sphere sampling and the biased sampler.

Array helpers work on the last axis and broadcast over leading axes, so the per-run
operations and the vectorised batch path share the exact same floating-point sequence.

Usage:
    from app.simulation.geom import RngStream, sample_uniform_sphere, rejection_sample_biased

    rng = RngStream(master_seed=7, label=("bundle", 0))
    u = sample_uniform_sphere(4, rng)
    lam = rejection_sample_biased(u, rng)
"""

import hashlib
import logging
import math
from typing import Hashable, Tuple, Union

import numpy as np

from app.models.models import Carrier4, Direction
from app.simulation.errors import DegenerateInputError, SamplingFailure

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 10 ** 6

X_HAT = Direction(1.0, 0.0, 0.0)
Y_HAT = Direction(0.0, 1.0, 0.0)
Z_HAT = Direction(0.0, 0.0, 1.0)


def _label_words(label: Hashable) -> Tuple[int, ...]:
    # sha256 of the label's repr, split into four 32-bit words for SeedSequence
    digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "big", signed=False) for i in range(0, 16, 4))


class RngStream:
    """
    Deterministic random stream derived from (master_seed, stream_label).

    Identical pairs replay identically; distinct labels hash to unrelated
    SeedSequence entropy, so streams share no state.
    """

    def __init__(self, master_seed: int, label: Hashable = ()):
        if master_seed < 0:
            raise ValueError(f"master_seed must be non-negative, got {master_seed}")
        self.master_seed = int(master_seed)
        self.label = label
        seed_seq = np.random.SeedSequence([self.master_seed, *_label_words(label)])
        self._generator = np.random.default_rng(seed_seq)

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def standard_normal(self, size=None):
        return self._generator.standard_normal(size)

    def random(self, size=None):
        return self._generator.random(size)

    def bits(self, size=None):
        return self._generator.integers(0, 2, size=size, dtype=np.int8)

    def child(self, label: Hashable) -> "RngStream":
        """Stream for a sub-label under the same master seed."""
        return RngStream(self.master_seed, (self.label, label))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, label={self.label!r})"


# ----------------------------------------------------------------------------
# Array helpers
# ----------------------------------------------------------------------------

def dot(u, v):
    """Last-axis dot product with a fixed left-to-right summation order."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    acc = u[..., 0] * v[..., 0]
    for k in range(1, u.shape[-1]):
        acc = acc + u[..., k] * v[..., k]
    return acc


def norm(u):
    return np.sqrt(dot(u, u))


def sgn_array(x) -> np.ndarray:
    """Elementwise sgn with sgn(0) = +1, returned as int8."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("sgn is only defined on finite reals")
    return np.where(x >= 0.0, 1, -1).astype(np.int8)


def sample_sphere_array(dim: int, rng: RngStream, size: int) -> np.ndarray:
    """`size` independent uniform points on the unit sphere in R^dim, shape (size, dim)."""
    if dim not in (3, 4):
        raise ValueError(f"Only dimensions 3 and 4 are supported, got {dim}")
    points = rng.standard_normal((size, dim))
    lengths = norm(points)
    # a zero-length normal draw has probability zero; redraw to keep the output on the sphere
    while np.any(lengths == 0.0):
        bad = lengths == 0.0
        points[bad] = rng.standard_normal((int(bad.sum()), dim))
        lengths = norm(points)
    return points / lengths[:, None]


def rejection_sample_biased_array(w, rng: RngStream, max_iterations: int = DEFAULT_MAX_ITERATIONS):
    """
    Draw one lambda on S^3 per row of w with density proportional to |w_hat . lambda|.

    Returns (samples of shape (N, 4), attempts per row). Rows are accepted independently;
    rejected rows are redrawn until every row is accepted or the cap is reached.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    lengths = norm(w)
    if np.any(lengths == 0.0):
        raise DegenerateInputError("Biasing vector must be nonzero")
    w_hat = w / lengths[:, None]
    n_rows = w.shape[0]
    samples = np.empty((n_rows, 4))
    attempts = np.zeros(n_rows, dtype=np.int64)
    pending = np.arange(n_rows)
    for _ in range(max_iterations):
        candidates = sample_sphere_array(4, rng, pending.size)
        thresholds = rng.random(pending.size)
        attempts[pending] += 1
        accept = thresholds < np.abs(dot(w_hat[pending], candidates))
        samples[pending[accept]] = candidates[accept]
        pending = pending[~accept]
        if pending.size == 0:
            return samples, attempts
    raise SamplingFailure(f"Biased sampler exceeded {max_iterations} iterations for {pending.size} rows")


# ----------------------------------------------------------------------------
# Scalar operations
# ----------------------------------------------------------------------------

def sgn(x: float) -> int:
    """+1 for x >= 0, -1 for x < 0; non-finite input is rejected."""
    if not math.isfinite(x):
        raise DegenerateInputError(f"sgn is only defined on finite reals, got {x!r}")
    return 1 if x >= 0.0 else -1


def sample_uniform_sphere(dim: int, rng: RngStream) -> Union[Direction, Carrier4]:
    """Uniform point on S^2 (dim=3, a Direction) or S^3 (dim=4, a Carrier4)."""
    point = sample_sphere_array(dim, rng, 1)[0]
    if dim == 3:
        return Direction(float(point[0]), float(point[1]), float(point[2]))
    return Carrier4.from_components(point)


def inner(u: Carrier4, v: Carrier4) -> float:
    """Euclidean dot product in R^4."""
    return float(dot(np.array(u.components()), np.array(v.components())))


def rejection_sample_biased_counted(w: Carrier4, rng: RngStream,
                                    max_iterations: int = DEFAULT_MAX_ITERATIONS) -> Tuple[Carrier4, int]:
    """Like rejection_sample_biased, also returning the number of attempts used."""
    if w.euclidean_norm == 0.0:
        raise DegenerateInputError("Biasing vector must be nonzero")
    w_hat = np.array(w.components()) / w.euclidean_norm
    for attempt in range(1, max_iterations + 1):
        candidate = sample_sphere_array(4, rng, 1)[0]
        threshold = rng.random()
        if threshold < abs(float(dot(w_hat, candidate))):
            return Carrier4.from_components(candidate), attempt
    logger.error(f"Biased sampler exceeded {max_iterations} iterations")
    raise SamplingFailure(f"Biased sampler exceeded {max_iterations} iterations")


def rejection_sample_biased(w: Carrier4, rng: RngStream,
                            max_iterations: int = DEFAULT_MAX_ITERATIONS) -> Carrier4:
    """Unit lambda on S^3 with density proportional to |w_hat . lambda|."""
    sample, _ = rejection_sample_biased_counted(w, rng, max_iterations)
    return sample
