"""
Exact quantum targets for cos(g)|00> + sin(g)|11> and for the singlet.

Two independent routes are kept side by side: the closed form
P(alpha, beta) = 1/4 (1 + alpha M_A + beta M_B + alpha beta C) and a brute-force density
matrix with Pauli projectors. The oracle uses sigma_y = [[0, -i], [i, 0]], which fixes the
-a_y b_y sign of the correlation term.
"""

import logging
import math
from typing import Tuple

import numpy as np

from app.models.models import CELL_OUTCOMES, PMF_TOLERANCE, Direction, JointPMF, StateParam
from app.simulation.errors import ConsistencyError
from app.simulation.geom import RngStream

logger = logging.getLogger(__name__)

GAMMA_MAX = math.pi / 4
ORACLE_TOLERANCE = 1e-10

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def state_params(gamma: float) -> StateParam:
    """c = cos 2g, s = sin 2g for g in (0, pi/4]."""
    if not math.isfinite(gamma) or gamma <= 0.0 or gamma > GAMMA_MAX:
        raise ValueError(f"gamma must lie in (0, pi/4], got {gamma!r}")
    if gamma == GAMMA_MAX:
        # cos(pi/2) evaluates to ~6e-17
        return StateParam(gamma=gamma, c=0.0, s=1.0)
    return StateParam(gamma=gamma, c=math.cos(2.0 * gamma), s=math.sin(2.0 * gamma))


def correlation(a: Direction, b: Direction, sp: StateParam) -> float:
    """C(a, b) = a_z b_z + s (a_x b_x - a_y b_y)."""
    return a.z * b.z + sp.s * (a.x * b.x - a.y * b.y)


def assemble_pmf(m_a: float, m_b: float, corr: float) -> JointPMF:
    """
    Build the four cells from marginals and correlation.

    Entries below -1e-12 raise ConsistencyError; smaller negative rounding is clipped to 0.
    """
    cells = []
    for alpha, beta in CELL_OUTCOMES:
        value = 0.25 * (1.0 + alpha * m_a + beta * m_b + alpha * beta * corr)
        if value < -PMF_TOLERANCE or value > 1.0 + PMF_TOLERANCE:
            raise ConsistencyError(
                f"Cell ({alpha:+d},{beta:+d}) = {value!r} outside [0, 1] for M_A={m_a}, M_B={m_b}, C={corr}"
            )
        cells.append(min(max(value, 0.0), 1.0))
    return JointPMF(*cells)


def joint_pmf_qm(a: Direction, b: Direction, sp: StateParam) -> JointPMF:
    return assemble_pmf(sp.c * a.z, sp.c * b.z, correlation(a, b, sp))


def pmf_moments(pmf: JointPMF) -> Tuple[float, float, float]:
    """(<alpha>, <beta>, <alpha beta>) of a pmf."""
    m_a = m_b = corr = 0.0
    for (alpha, beta), p in zip(CELL_OUTCOMES, pmf.cells()):
        m_a += alpha * p
        m_b += beta * p
        corr += alpha * beta * p
    return m_a, m_b, corr


def singlet_pmf(a: Direction, b: Direction) -> JointPMF:
    """Singlet target: zero marginals, correlation -a.b."""
    return assemble_pmf(0.0, 0.0, -a.dot(b))


# ----------------------------------------------------------------------------
# Density-matrix oracle
# ----------------------------------------------------------------------------

def state_vector(sp: StateParam) -> np.ndarray:
    """cos(g)|00> + sin(g)|11> in the basis |00>, |01>, |10>, |11>."""
    return np.array([math.cos(sp.gamma), 0.0, 0.0, math.sin(sp.gamma)], dtype=complex)


def singlet_vector() -> np.ndarray:
    """(|01> - |10>) / sqrt(2)."""
    return np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / math.sqrt(2.0)


def density_matrix(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def projector(d: Direction, outcome: int) -> np.ndarray:
    """(I + outcome * d.sigma) / 2."""
    d_sigma = d.x * PAULI_X + d.y * PAULI_Y + d.z * PAULI_Z
    return 0.5 * (PAULI_I + outcome * d_sigma)


def pmf_from_state(psi: np.ndarray, a: Direction, b: Direction) -> JointPMF:
    rho = density_matrix(psi)
    cells = []
    for alpha, beta in CELL_OUTCOMES:
        joint_projector = np.kron(projector(a, alpha), projector(b, beta))
        cells.append(float(np.real(np.trace(rho @ joint_projector))))
    total = sum(cells)
    if abs(total - 1.0) > PMF_TOLERANCE:
        raise ConsistencyError(f"Oracle probabilities sum to {total!r}")
    for value in cells:
        if value < -PMF_TOLERANCE:
            raise ConsistencyError(f"Oracle produced negative probability {value!r}")
    return JointPMF(*(min(max(v, 0.0), 1.0) for v in cells))


def joint_pmf_oracle(a: Direction, b: Direction, sp: StateParam) -> JointPMF:
    """Tr(rho P_alpha(a) (x) P_beta(b)) for the partially entangled state."""
    return pmf_from_state(state_vector(sp), a, b)


def singlet_pmf_oracle(a: Direction, b: Direction) -> JointPMF:
    return pmf_from_state(singlet_vector(), a, b)


def max_cell_difference(p: JointPMF, q: JointPMF) -> float:
    return max(abs(x - y) for x, y in zip(p.cells(), q.cells()))


def check_oracle_agreement(a: Direction, b: Direction, sp: StateParam,
                           tolerance: float = ORACLE_TOLERANCE) -> float:
    """Closed form vs density matrix; raises ConsistencyError beyond tolerance."""
    gap = max_cell_difference(joint_pmf_qm(a, b, sp), joint_pmf_oracle(a, b, sp))
    if gap > tolerance:
        logger.error(f"Quantum oracle disagreement {gap:.3e} at a={a}, b={b}, gamma={sp.gamma}")
        raise ConsistencyError(f"Closed form and density-matrix oracle differ by {gap!r}")
    return gap


# ----------------------------------------------------------------------------
# Calibration sampler
# ----------------------------------------------------------------------------

def _cdf(pmf: JointPMF) -> np.ndarray:
    cdf = np.cumsum(pmf.cells())
    cdf[-1] = 1.0
    return cdf


def sample_qm_array(pmf: JointPMF, rng: RngStream, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF draws over the fixed cell order; returns (alpha, beta) int8 arrays."""
    cell = np.searchsorted(_cdf(pmf), rng.random(size), side="right")
    outcomes = np.array(CELL_OUTCOMES, dtype=np.int8)
    return outcomes[cell, 0], outcomes[cell, 1]


def sample_qm(pmf: JointPMF, rng: RngStream) -> Tuple[int, int]:
    cell = int(np.searchsorted(_cdf(pmf), rng.random(), side="right"))
    return CELL_OUTCOMES[cell]
