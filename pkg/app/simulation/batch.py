"""
Vectorised execution of many runs at one setting.

Every row of a BundleBatch is one independent run. The steps are the ones in
app.simulation.protocol, applied to whole arrays through the same helpers, so a strict
row reproduces run_protocol on BundleBatch.row(i) exactly.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from app.models.models import Direction, ProtocolConfig
from app.simulation.geom import RngStream, dot, rejection_sample_biased_array, sgn_array
from app.simulation.protocol import (
    ALICE_SIGN0_INDEX,
    ALICE_SIGN_INDICES,
    BOB_SIGN_INDICES,
    SIDE_ALICE,
    SIDE_BOB,
    carrier_array,
    correlated_flip_array,
    importance_index,
    independent_flip_array,
    parity_bit,
    prepare_setting,
    projections,
    select_candidate,
    signs_from_pr,
    unit_rows,
)
from app.simulation.resources import BundleBatch, SingletBatch, mbox_predicate, pr_box_array

logger = logging.getLogger(__name__)


@dataclass
class BatchOutcome:
    alpha: np.ndarray  # (N,) reported outputs
    beta: np.ndarray  # (N,)
    alpha0: np.ndarray  # (N,) pre-flip outputs, canonicalized frame
    beta0: np.ndarray  # (N,)
    pr_box_uses: int = 0  # totals over the batch
    m_box_uses: int = 0
    cbits: int = 0
    rejection_attempts: int = 0

    @property
    def size(self) -> int:
        return int(self.alpha.shape[0])


def _select_signs(choice: np.ndarray, signs: np.ndarray, indices) -> tuple:
    (i_pos, j_pos), (i_neg, j_neg) = indices[1], indices[-1]
    sign1 = np.where(choice == 1, signs[:, i_pos], signs[:, i_neg])
    sign2 = np.where(choice == 1, signs[:, j_pos], signs[:, j_neg])
    return sign1, sign2


def run_protocol_batch(a: Direction, b: Direction, cfg: ProtocolConfig, bundles: BundleBatch,
                       rng: RngStream) -> BatchOutcome:
    """
    Run bundles.size protocol executions at (a, b).

    rng is the private stream (ideal-mode sampling, resample_n selection, independent flips).
    """
    if bundles.c_hat != cfg.c_hat:
        raise ValueError("Bundle c_hat does not match the configured c_hat")
    if bundles.lambdas.shape[1] != cfg.n_lambdas:
        raise ValueError(f"Bundles carry {bundles.lambdas.shape[1]} candidates, expected {cfg.n_lambdas}")
    setting = prepare_setting(a, b, cfg)
    size = bundles.size

    # M-box: m = coin, m XOR n = predicate, identical for every row of a setting
    predicate = mbox_predicate(setting.mbox_x, setting.mbox_y, cfg.mbox_convention)
    m = bundles.coins[:, 0]
    n = m ^ np.int8(predicate)
    p = (2 * m.astype(np.int64) - 1)
    q = (2 * n.astype(np.int64) - 1)

    signs = bundles.signs()
    a_sign1, a_sign2 = _select_signs(p, signs, ALICE_SIGN_INDICES)
    b_sign1, b_sign2 = _select_signs(q, signs, BOB_SIGN_INDICES)
    u = carrier_array(setting.a.components(), setting.aux.A_hat.components(),
                      a_sign1, a_sign2, signs[:, ALICE_SIGN0_INDEX], SIDE_ALICE)
    v = carrier_array(setting.b.components(), setting.aux.B_hat.components(),
                      b_sign1, b_sign2, np.ones(size), SIDE_BOB)
    u_hat = unit_rows(u)
    v_hat = unit_rows(v)

    pr_uses = 0
    cbits = 0
    attempts_total = 0
    if cfg.mode == "strict":
        proj_u = projections(bundles.lambdas, u_hat)
        proj_v = projections(bundles.lambdas, v_hat)
        c_star = select_candidate(proj_u)
        d = parity_bit(proj_v)
        a_bits, b_bits = pr_box_array(c_star, d, bundles.coins[:, 1])
        alpha0, beta0 = signs_from_pr(a_bits, b_bits, proj_u, proj_v, c_star)
        pr_uses = size
    elif cfg.mode == "ideal":
        lam, attempts = rejection_sample_biased_array(u_hat, rng, cfg.max_rejection_iterations)
        attempts_total = int(attempts.sum())
        alpha0 = sgn_array(dot(u_hat, lam))
        beta0 = sgn_array(dot(v_hat, lam))
    elif cfg.mode == "resample_n":
        proj_u = projections(bundles.lambdas, u_hat)
        proj_v = projections(bundles.lambdas, v_hat)
        index = importance_index(np.abs(proj_u), rng.random(size))
        rows = np.arange(size)
        alpha0 = sgn_array(proj_u[rows, index])
        beta0 = sgn_array(proj_v[rows, index])
        cbits = size * math.ceil(math.log2(cfg.resample_n))
    else:
        raise ValueError(f"Invalid mode: {cfg.mode}")

    f_a, f_b = setting.aux.f_a, setting.aux.f_b
    if cfg.flip_rule == "correlated":
        alpha, beta = correlated_flip_array(alpha0, beta0, f_a, f_b, bundles.r_flip)
    else:
        alpha, beta = independent_flip_array(alpha0, beta0, f_a, f_b, bundles.r_flip, rng.random(size))

    return BatchOutcome(
        alpha=(setting.eta_a * alpha).astype(np.int8),
        beta=(setting.eta_b * beta).astype(np.int8),
        alpha0=alpha0.astype(np.int8),
        beta0=beta0.astype(np.int8),
        pr_box_uses=pr_uses,
        m_box_uses=size,
        cbits=cbits,
        rejection_attempts=attempts_total,
    )


def run_singlet_batch(a: Direction, b: Direction, bundles: SingletBatch) -> BatchOutcome:
    """Singlet baseline over bundles.size runs: one PR-box per run, Bob negates."""
    proj_u = projections(bundles.lambdas, np.array(a.components()))
    proj_v = projections(bundles.lambdas, np.array(b.components()))
    c_star = select_candidate(proj_u)
    d = parity_bit(proj_v)
    a_bits, b_bits = pr_box_array(c_star, d, bundles.pr_coin)
    alpha0, beta0 = signs_from_pr(a_bits, b_bits, proj_u, proj_v, c_star)
    return BatchOutcome(
        alpha=alpha0,
        beta=(-beta0).astype(np.int8),
        alpha0=alpha0,
        beta0=beta0,
        pr_box_uses=bundles.size,
    )
