"""
One M-box plus one PR-box protocol for cos(g)|00> + sin(g)|11>, the flip algebra it relies
on, the exactly solvable singlet baseline and small exact oracles for intermediate values.

A run composes: canonicalize -> mbox_step -> aux_vectors -> select_uv ->
distributed_sign_step -> flip -> relabel by (eta_a, eta_b).

The array helpers below (carrier_array, projections, select_candidate, ...) are shared with
app.simulation.batch so that strict runs agree bit for bit across the two paths.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.models.models import (
    AuxVectors,
    Carrier4,
    Direction,
    OutcomePair,
    ProtocolConfig,
    RunTranscript,
    SharedBundle,
    SingletBundle,
    StateParam,
)
from app.simulation.errors import (
    ConsistencyError,
    DegenerateInputError,
    InfeasibleParametersError,
    ResourceViolation,
)
from app.simulation.geom import RngStream, dot, norm, rejection_sample_biased_counted, sgn_array
from app.simulation.quantum import assemble_pmf, correlation, state_params
from app.simulation.resources import (
    RESOURCE_CBIT,
    RESOURCE_M_BOX,
    RESOURCE_PR_BOX,
    bundle_signs,
    clamp_mbox_input,
    close_transcript,
    draw_singlet_bundle,
    m_box,
    mbox_predicate,
    new_transcript,
    pr_box,
    record_draws,
    record_use,
)

logger = logging.getLogger(__name__)

AUX_DENOMINATOR_FLOOR = 1e-9
FLIP_IDENTITY_TOLERANCE = 1e-12

SIDE_ALICE = "alice"
SIDE_BOB = "bob"

# (sign1 index, sign2 index) into sgn(c.mu_1..5), zero-based
ALICE_SIGN_INDICES = {1: (0, 1), -1: (3, 2)}
BOB_SIGN_INDICES = {1: (2, 0), -1: (1, 3)}
ALICE_SIGN0_INDEX = 4


# ----------------------------------------------------------------------------
# Setting preparation
# ----------------------------------------------------------------------------

def canonicalize(a: Direction, b: Direction) -> Tuple[Direction, Direction, int, int]:
    """Negate any setting with z < 0; the matching output is negated back at the end."""
    eta_a = -1 if a.z < 0.0 else 1
    eta_b = -1 if b.z < 0.0 else 1
    a_c = -a if eta_a < 0 else a
    b_c = -b if eta_b < 0 else b
    return a_c, b_c, eta_a, eta_b


def aux_components(d: Direction, sp: StateParam, convention: str = "corrected") -> Tuple[float, float, float]:
    """(s d_x, -/+ s d_y, d_z - c) / (1 - c d_z); the y sign is the only convention difference."""
    denominator = 1.0 - sp.c * d.z
    if denominator < AUX_DENOMINATOR_FLOOR:
        raise DegenerateInputError(f"Auxiliary denominator 1 - c*z = {denominator!r} is degenerate")
    if convention == "corrected":
        y_sign = -1.0
    elif convention == "literal":
        y_sign = 1.0
    else:
        raise ValueError(f"Invalid ab_convention: {convention}")
    return (
        sp.s * d.x / denominator,
        y_sign * sp.s * d.y / denominator,
        (d.z - sp.c) / denominator,
    )


def aux_vectors(a: Direction, b: Direction, sp: StateParam, convention: str = "corrected") -> AuxVectors:
    """A_hat, B_hat and flip probabilities for canonicalized settings (a_z, b_z >= 0)."""
    if a.z < 0.0 or b.z < 0.0:
        raise ValueError("aux_vectors expects canonicalized settings with non-negative z")
    return AuxVectors(
        A_hat=Direction.from_components(aux_components(a, sp, convention), normalize=True),
        B_hat=Direction.from_components(aux_components(b, sp, convention), normalize=True),
        f_a=sp.c * a.z,
        f_b=sp.c * b.z,
    )


def expected_pq(a_z: float, b_z: float, convention: str = "corrected") -> int:
    """Product p*q the M-box forces for canonicalized inputs."""
    return -1 if mbox_predicate(a_z, b_z, convention) else 1


@dataclass(frozen=True)
class PreparedSetting:
    """Everything about a setting that does not depend on the shared randomness."""
    a: Direction  # canonicalized
    b: Direction  # canonicalized
    eta_a: int
    eta_b: int
    sp: StateParam
    aux: AuxVectors
    mbox_x: float  # clamped M-box input for Alice
    mbox_y: float  # clamped M-box input for Bob


def prepare_setting(a: Direction, b: Direction, cfg: ProtocolConfig) -> PreparedSetting:
    sp = state_params(cfg.gamma)
    a_c, b_c, eta_a, eta_b = canonicalize(a, b)
    aux = aux_vectors(a_c, b_c, sp, cfg.ab_convention)
    return PreparedSetting(
        a=a_c,
        b=b_c,
        eta_a=eta_a,
        eta_b=eta_b,
        sp=sp,
        aux=aux,
        mbox_x=clamp_mbox_input(a_c.z),
        mbox_y=clamp_mbox_input(b_c.z),
    )


# ----------------------------------------------------------------------------
# Array helpers shared with the batch path
# ----------------------------------------------------------------------------

def carrier_array(base, aux, sign1, sign2, sign0, side: str) -> np.ndarray:
    """
    Carrier (w, +/- w0) with w = sign1*base + sign2*aux and w0 = | |w|^2 - 1 |^(1/2).

    Alice's fourth component is -sign0*w0, Bob's is +w0, so a Euclidean product of an
    Alice carrier with a Bob carrier equals w_a.w_b - w0_a w0_b.
    """
    base = np.asarray(base, dtype=float)
    aux = np.asarray(aux, dtype=float)
    sign1 = np.asarray(sign1, dtype=float)[..., None]
    sign2 = np.asarray(sign2, dtype=float)[..., None]
    w = sign1 * base + sign2 * aux
    w0 = np.sqrt(np.abs(dot(w, w) - 1.0))
    if side == SIDE_ALICE:
        fourth = -np.asarray(sign0, dtype=float) * w0
    elif side == SIDE_BOB:
        fourth = w0
    else:
        raise ValueError(f"Invalid side: {side}")
    fourth = np.broadcast_to(fourth, w.shape[:-1])
    return np.concatenate([w, fourth[..., None]], axis=-1)


def unit_rows(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    lengths = np.asarray(norm(w))
    if np.any(lengths == 0.0):
        raise DegenerateInputError("Carrier must be nonzero")
    return w / lengths[..., None]


def projections(lambdas, w_hat) -> np.ndarray:
    """w_hat . lambda_i for every candidate; lambdas (..., k, d), w_hat (..., d) -> (..., k)."""
    return dot(np.asarray(lambdas, dtype=float), np.asarray(w_hat, dtype=float)[..., None, :])


def select_candidate(proj_u) -> np.ndarray:
    """argmax_i |u.lambda_i| over the first two candidates; ties go to 0."""
    proj_u = np.asarray(proj_u)
    return (np.abs(proj_u[..., 1]) > np.abs(proj_u[..., 0])).astype(np.int8)


def parity_bit(proj_v) -> np.ndarray:
    """[sgn(v.lambda_0) != sgn(v.lambda_1)]."""
    signs = sgn_array(np.asarray(proj_v)[..., :2])
    return (signs[..., 0] != signs[..., 1]).astype(np.int8)


def importance_index(weights, t) -> np.ndarray:
    """First index with cumulative weight above t * total, clipped to the last candidate."""
    weights = np.asarray(weights, dtype=float)
    cumulative = np.cumsum(weights, axis=-1)
    threshold = np.asarray(t, dtype=float) * cumulative[..., -1]
    index = np.sum(cumulative <= threshold[..., None], axis=-1)
    return np.minimum(index, weights.shape[-1] - 1)


def signs_from_pr(a_bits, b_bits, proj_u, proj_v, c_star) -> Tuple[np.ndarray, np.ndarray]:
    """
    alpha0 = (-1)^a sgn(u.lambda_c*), beta0 = (-1)^b sgn(v.lambda_0).

    Raises ConsistencyError unless alpha0*beta0 = sgn(u.lambda_c*) sgn(v.lambda_c*) on every row.
    """
    su = sgn_array(proj_u[..., :2])
    sv = sgn_array(proj_v[..., :2])
    c_star = np.asarray(c_star)
    su_c = np.where(c_star == 1, su[..., 1], su[..., 0])
    sv_c = np.where(c_star == 1, sv[..., 1], sv[..., 0])
    alpha0 = (np.where(np.asarray(a_bits) == 0, 1, -1) * su_c).astype(np.int8)
    beta0 = (np.where(np.asarray(b_bits) == 0, 1, -1) * sv[..., 0]).astype(np.int8)
    if not np.all(alpha0 * beta0 == su_c * sv_c):
        logger.error("Distributed-sign identity failed")
        raise ConsistencyError("alpha0*beta0 != sgn(u.lambda_c*) sgn(v.lambda_c*)")
    return alpha0, beta0


def correlated_flip_array(alpha0, beta0, f_a: float, f_b: float, r_flip) -> Tuple[np.ndarray, np.ndarray]:
    r_flip = np.asarray(r_flip, dtype=float)
    alpha = np.where(r_flip < f_a, 1, alpha0).astype(np.int8)
    beta = np.where(r_flip < f_b, 1, beta0).astype(np.int8)
    return alpha, beta


def independent_flip_array(alpha0, beta0, f_a: float, f_b: float, r_a, r_b) -> Tuple[np.ndarray, np.ndarray]:
    alpha = np.where(np.asarray(r_a, dtype=float) < f_a, 1, alpha0).astype(np.int8)
    beta = np.where(np.asarray(r_b, dtype=float) < f_b, 1, beta0).astype(np.int8)
    return alpha, beta


# ----------------------------------------------------------------------------
# Protocol steps
# ----------------------------------------------------------------------------

def mbox_step(a_z: float, b_z: float, bundle: SharedBundle, transcript: RunTranscript,
              convention: str = "corrected") -> Tuple[int, int]:
    """One M-box call on (a_z', b_z'); p = 2m - 1, q = 2n - 1."""
    record_use(transcript, RESOURCE_M_BOX)
    m, n = m_box(clamp_mbox_input(a_z), clamp_mbox_input(b_z), bundle.box_coins[0], convention)
    return 2 * m - 1, 2 * n - 1


def build_carrier(base: Direction, aux: Direction, sign1: int, sign2: int, sign0: int, side: str) -> Carrier4:
    for name, value in (("sign1", sign1), ("sign2", sign2), ("sign0", sign0)):
        if value not in (1, -1):
            raise ValueError(f"{name} must be +1 or -1, got {value!r}")
    if side == SIDE_BOB and sign0 != 1:
        raise ValueError("Bob's carrier takes no sign on its fourth component; sign0 must be +1")
    components = carrier_array(base.components(), aux.components(), sign1, sign2, sign0, side)
    return Carrier4.from_components(components)


def alice_carrier(p: int, signs: Sequence[int], a: Direction, A_hat: Direction) -> Carrier4:
    """u_1 for p = +1, u_2 for p = -1; depends on p only, never on q."""
    i, j = ALICE_SIGN_INDICES[p]
    return build_carrier(a, A_hat, signs[i], signs[j], signs[ALICE_SIGN0_INDEX], SIDE_ALICE)


def bob_carrier(q: int, signs: Sequence[int], b: Direction, B_hat: Direction) -> Carrier4:
    """v_1 for q = +1, v_2 for q = -1; depends on q only, never on p."""
    i, j = BOB_SIGN_INDICES[q]
    return build_carrier(b, B_hat, signs[i], signs[j], 1, SIDE_BOB)


def select_uv(p: int, q: int, bundle: SharedBundle, a: Direction, A_hat: Direction,
              b: Direction, B_hat: Direction) -> Tuple[Carrier4, Carrier4]:
    signs = bundle_signs(bundle)
    return alice_carrier(p, signs, a, A_hat), bob_carrier(q, signs, b, B_hat)


def _components(carriers) -> np.ndarray:
    return np.array([c.components() for c in carriers])


def distributed_sign_step(u: Carrier4, v: Carrier4, bundle: SharedBundle, mode: str,
                          transcript: RunTranscript, rng: RngStream,
                          max_iterations: int = 10 ** 6) -> Tuple[int, int]:
    """
    Pre-flip outputs (alpha0, beta0) from sign(u.lambda) and sign(v.lambda).

    strict: two shared candidates, Alice's argmax choice and one PR-box correction.
    ideal: lambda drawn with density |u.lambda| and treated as shared.
    resample_n: Alice picks one of n shared candidates by |u.lambda| and sends its index.
    """
    u_hat = unit_rows(u.components())
    v_hat = unit_rows(v.components())

    if mode == "strict":
        if transcript.pr_box_uses >= 1:
            raise ResourceViolation("Strict mode allows a single PR-box call per run")
        lambdas = _components((bundle.lambda0, bundle.lambda1))
        proj_u = projections(lambdas, u_hat)
        proj_v = projections(lambdas, v_hat)
        c_star = int(select_candidate(proj_u))
        d = int(parity_bit(proj_v))
        record_use(transcript, RESOURCE_PR_BOX)
        a_bit, b_bit = pr_box(c_star, d, bundle.box_coins[1])
        alpha0, beta0 = signs_from_pr(a_bit, b_bit, proj_u, proj_v, c_star)
        return int(alpha0), int(beta0)

    if mode == "ideal":
        lam, attempts = rejection_sample_biased_counted(Carrier4.from_components(u_hat), rng, max_iterations)
        record_draws(transcript, ["lambda_s"])
        transcript.notes.append(f"rejection_attempts={attempts}")
        lam_arr = np.array(lam.components())
        alpha0 = sgn_array(dot(u_hat, lam_arr))
        beta0 = sgn_array(dot(v_hat, lam_arr))
        return int(alpha0), int(beta0)

    if mode == "resample_n":
        lambdas = _components(bundle.lambdas)
        n_candidates = lambdas.shape[0]
        proj_u = projections(lambdas, u_hat)
        proj_v = projections(lambdas, v_hat)
        index = int(importance_index(np.abs(proj_u), rng.random()))
        record_use(transcript, RESOURCE_CBIT, math.ceil(math.log2(n_candidates)))
        alpha0 = sgn_array(proj_u[index])
        beta0 = sgn_array(proj_v[index])
        return int(alpha0), int(beta0)

    raise ValueError(f"Invalid mode: {mode}")


def correlated_flip(alpha0: int, beta0: int, f_a: float, f_b: float, r_flip: float) -> OutcomePair:
    """Each party outputs +1 when the shared threshold falls below its flip probability."""
    alpha, beta = correlated_flip_array(alpha0, beta0, f_a, f_b, r_flip)
    return OutcomePair(int(alpha), int(beta))


def independent_flip(alpha0: int, beta0: int, f_a: float, f_b: float, r_a: float, r_b: float) -> OutcomePair:
    """Uncorrelated variant: each party uses its own threshold."""
    alpha, beta = independent_flip_array(alpha0, beta0, f_a, f_b, r_a, r_b)
    return OutcomePair(int(alpha), int(beta))


def _flip_moments_checked(marg_a: float, marg_b: float, corr: float) -> Tuple[float, float, float]:
    try:
        assemble_pmf(marg_a, marg_b, corr)
    except ConsistencyError as e:
        raise InfeasibleParametersError(str(e)) from e
    return marg_a, marg_b, corr


def _check_flip_inputs(c0: float, f_a: float, f_b: float) -> None:
    if not -1.0 <= c0 <= 1.0:
        raise InfeasibleParametersError(f"C0 must lie in [-1, 1], got {c0!r}")
    for name, value in (("f_a", f_a), ("f_b", f_b)):
        if not 0.0 <= value < 1.0:
            raise InfeasibleParametersError(f"{name} must lie in [0, 1), got {value!r}")


def flip_closed_form(c0: float, f_a: float, f_b: float) -> Tuple[float, float, float]:
    """(f_a, f_b, min(f) + (1 - max(f)) C0) after correlated flips of unbiased outputs."""
    _check_flip_inputs(c0, f_a, f_b)
    corr = min(f_a, f_b) + (1.0 - max(f_a, f_b)) * c0
    return _flip_moments_checked(f_a, f_b, corr)


def independent_flip_closed_form(c0: float, f_a: float, f_b: float) -> Tuple[float, float, float]:
    """(f_a, f_b, f_a f_b + (1 - f_a)(1 - f_b) C0)."""
    _check_flip_inputs(c0, f_a, f_b)
    corr = f_a * f_b + (1.0 - f_a) * (1.0 - f_b) * c0
    return _flip_moments_checked(f_a, f_b, corr)


# ----------------------------------------------------------------------------
# Full runs
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    outcome: OutcomePair  # reported outputs in the caller's frame
    preflip: OutcomePair  # (alpha0, beta0) in the canonicalized frame
    p: int
    q: int
    transcript: RunTranscript


def _transcript_notes(cfg: ProtocolConfig) -> List[str]:
    notes = [
        f"ab_convention={cfg.ab_convention}",
        f"mbox_convention={cfg.mbox_convention}",
        f"flip_rule={cfg.flip_rule}",
    ]
    if cfg.mode == "ideal":
        notes.append("non-strict: lambda_s treated as shared, PR-box bypassed")
    elif cfg.mode == "resample_n":
        notes.append(f"non-strict: {cfg.resample_n} candidates with communicated index")
    return notes


def _bundle_draw_labels(bundle: SharedBundle, mode: str) -> List[str]:
    labels = [f"mu_{i}" for i in range(1, 6)]
    if mode == "strict":
        labels += ["lambda_0", "lambda_1"]
    elif mode == "resample_n":
        labels += [f"lambda_{i}" for i in range(len(bundle.lambdas))]
    labels += ["r_flip", "m_coin"]
    if mode == "strict":
        labels.append("pr_coin")
    return labels


def execute_run(a: Direction, b: Direction, cfg: ProtocolConfig, bundle: SharedBundle,
                rng: RngStream, setting: Optional[PreparedSetting] = None) -> RunRecord:
    """run_protocol with the intermediate p, q and pre-flip outputs kept."""
    if bundle.c_hat != cfg.c_hat:
        raise ValueError("Bundle c_hat does not match the configured c_hat")
    if cfg.mode == "resample_n" and len(bundle.lambdas) != cfg.resample_n:
        raise ValueError(f"Bundle carries {len(bundle.lambdas)} candidates, expected {cfg.resample_n}")
    setting = setting or prepare_setting(a, b, cfg)
    transcript = new_transcript(cfg.mode, _transcript_notes(cfg))
    record_draws(transcript, _bundle_draw_labels(bundle, cfg.mode))

    p, q = mbox_step(setting.a.z, setting.b.z, bundle, transcript, cfg.mbox_convention)
    u, v = select_uv(p, q, bundle, setting.a, setting.aux.A_hat, setting.b, setting.aux.B_hat)
    alpha0, beta0 = distributed_sign_step(u, v, bundle, cfg.mode, transcript, rng, cfg.max_rejection_iterations)

    f_a, f_b = setting.aux.f_a, setting.aux.f_b
    if cfg.flip_rule == "correlated":
        flipped = correlated_flip(alpha0, beta0, f_a, f_b, bundle.r_flip)
    else:
        flipped = independent_flip(alpha0, beta0, f_a, f_b, bundle.r_flip, float(rng.random()))
    outcome = OutcomePair(setting.eta_a * flipped.alpha, setting.eta_b * flipped.beta)

    if cfg.mode == "strict":
        close_transcript(transcript, expected_pr=1, expected_m=1)
        if transcript.violations:
            raise ResourceViolation(f"Strict run broke its resource contract: {transcript.violations}")
    else:
        close_transcript(transcript, expected_pr=0, expected_m=1)
    return RunRecord(outcome=outcome, preflip=OutcomePair(alpha0, beta0), p=p, q=q, transcript=transcript)


def run_protocol(a: Direction, b: Direction, cfg: ProtocolConfig, bundle: SharedBundle,
                 rng: RngStream) -> Tuple[OutcomePair, RunTranscript]:
    record = execute_run(a, b, cfg, bundle, rng)
    return record.outcome, record.transcript


# ----------------------------------------------------------------------------
# Exact oracles and identities
# ----------------------------------------------------------------------------

def branch_correlation(a: Direction, b: Direction, aux: AuxVectors, pq: int) -> float:
    """(1+pq)/2 a.B_hat + (1-pq)/2 A_hat.b: the pre-flip value the flip step assumes."""
    return 0.5 * (1 + pq) * a.dot(aux.B_hat) + 0.5 * (1 - pq) * aux.A_hat.dot(b)


def flip_identity_residual(a: Direction, b: Direction, sp: StateParam,
                           ab_convention: str = "corrected", mbox_convention: str = "corrected") -> float:
    """
    Post-flip correlation on the branch the M-box selects, minus C(a', b').

    Zero (to rounding) under the corrected conventions; the literal ones leave
    a residual whenever a_y b_y != 0 or the branch is swapped.
    """
    a_c, b_c, _, _ = canonicalize(a, b)
    aux = aux_vectors(a_c, b_c, sp, ab_convention)
    pq = expected_pq(a_c.z, b_c.z, mbox_convention)
    c0 = branch_correlation(a_c, b_c, aux, pq)
    predicted = min(aux.f_a, aux.f_b) + (1.0 - max(aux.f_a, aux.f_b)) * c0
    return predicted - correlation(a_c, b_c, sp)


def preflip_correlation_oracle(a: Direction, b: Direction, sp: StateParam, pq: int,
                               ab_convention: str = "corrected") -> Tuple[float, float]:
    """
    (exact, claimed) for the ideal-mode pre-flip correlation in the canonicalized frame.

    exact averages the normalized carrier product over all 32 sign patterns of
    sgn(c.mu_1..5) and the two (p, q) selections with p*q = pq.
    """
    if pq not in (1, -1):
        raise ValueError(f"pq must be +1 or -1, got {pq!r}")
    a_c, b_c, _, _ = canonicalize(a, b)
    aux = aux_vectors(a_c, b_c, sp, ab_convention)
    selections = ((1, 1), (-1, -1)) if pq == 1 else ((1, -1), (-1, 1))
    total = 0.0
    count = 0
    for signs in itertools.product((1, -1), repeat=5):
        for p, q in selections:
            u = np.array(alice_carrier(p, signs, a_c, aux.A_hat).components())
            v = np.array(bob_carrier(q, signs, b_c, aux.B_hat).components())
            total += float(dot(u, v) / (norm(u) * norm(v)))
            count += 1
    exact = total / count
    claimed = branch_correlation(a_c, b_c, aux, pq)
    return exact, claimed


# ----------------------------------------------------------------------------
# Singlet baseline
# ----------------------------------------------------------------------------

def run_singlet_baseline(a: Direction, b: Direction, cfg: ProtocolConfig, rng: RngStream,
                         bundle: Optional[SingletBundle] = None) -> Tuple[OutcomePair, RunTranscript]:
    """Strict sign step on S^2 with u = a, v = b; Bob negates his output."""
    bundle = bundle or draw_singlet_bundle(rng)
    transcript = new_transcript("singlet", [f"master_seed={cfg.master_seed}"])
    record_draws(transcript, ["lambda_0", "lambda_1", "pr_coin"])
    lambdas = np.array([bundle.lambda0.components(), bundle.lambda1.components()])
    proj_u = projections(lambdas, np.array(a.components()))
    proj_v = projections(lambdas, np.array(b.components()))
    c_star = int(select_candidate(proj_u))
    d = int(parity_bit(proj_v))
    record_use(transcript, RESOURCE_PR_BOX)
    a_bit, b_bit = pr_box(c_star, d, bundle.pr_coin)
    alpha0, beta0 = signs_from_pr(a_bit, b_bit, proj_u, proj_v, c_star)
    close_transcript(transcript, expected_pr=1, expected_m=0)
    if transcript.violations:
        raise ResourceViolation(f"Singlet run broke its resource contract: {transcript.violations}")
    return OutcomePair(int(alpha0), -int(beta0)), transcript
