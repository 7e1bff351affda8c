import itertools
import math

import numpy as np
import pytest

from app.models.models import Carrier4, Direction, ProtocolConfig, SharedBundle
from app.simulation.errors import (
    ConsistencyError,
    DegenerateInputError,
    InfeasibleParametersError,
    ResourceViolation,
)
from app.simulation.geom import RngStream, X_HAT, Z_HAT, inner
from app.simulation.protocol import (
    SIDE_ALICE,
    SIDE_BOB,
    alice_carrier,
    aux_components,
    aux_vectors,
    bob_carrier,
    branch_correlation,
    build_carrier,
    canonicalize,
    correlated_flip,
    correlated_flip_array,
    distributed_sign_step,
    execute_run,
    expected_pq,
    flip_closed_form,
    flip_identity_residual,
    importance_index,
    independent_flip,
    independent_flip_array,
    independent_flip_closed_form,
    preflip_correlation_oracle,
    prepare_setting,
    run_protocol,
    run_singlet_baseline,
    select_uv,
    signs_from_pr,
)
from app.simulation.quantum import correlation, state_params
from app.simulation.resources import RESOURCE_PR_BOX, draw_bundle, new_transcript, record_use


def test_canonicalize_negates_lower_hemisphere():
    a = Direction.from_components((0.0, 0.6, -0.8))
    b = Direction.from_components((0.6, 0.0, 0.8))
    a_c, b_c, eta_a, eta_b = canonicalize(a, b)
    assert (eta_a, eta_b) == (-1, 1)
    assert a_c == -a
    assert b_c == b
    assert a_c.z >= 0.0


def test_canonicalize_keeps_equator():
    a, b, eta_a, eta_b = canonicalize(X_HAT, X_HAT)
    assert (eta_a, eta_b) == (1, 1)


def test_aux_vector_of_x_hat():
    sp = state_params(math.pi / 6)
    aux = aux_vectors(Z_HAT, X_HAT, sp)
    np.testing.assert_allclose(aux.B_hat.components(), (math.sqrt(3) / 2, 0.0, -0.5), atol=1e-12)
    assert aux.f_b == 0.0
    assert aux.f_a == pytest.approx(0.5)


def test_aux_conventions_differ_only_in_y(generic_setting, sp_pi8):
    a, _ = generic_setting
    corrected = aux_components(a, sp_pi8, "corrected")
    literal = aux_components(a, sp_pi8, "literal")
    assert corrected[0] == literal[0]
    assert corrected[2] == literal[2]
    assert corrected[1] == -literal[1]


def test_aux_vectors_are_unit(random_pairs):
    for gamma in (0.05, math.pi / 8, math.pi / 4):
        sp = state_params(gamma)
        for a, b in random_pairs:
            a_c, b_c, _, _ = canonicalize(a, b)
            for d in (a_c, b_c):
                assert math.sqrt(sum(x * x for x in aux_components(d, sp))) == pytest.approx(1.0, abs=1e-12)


def test_aux_degenerate_denominator():
    sp = state_params(1e-6)
    with pytest.raises(DegenerateInputError):
        aux_components(Z_HAT, sp)


def test_aux_vectors_require_canonical_settings(sp_pi8):
    with pytest.raises(ValueError):
        aux_vectors(-Z_HAT, X_HAT, sp_pi8)


@pytest.mark.parametrize("a_z,b_z,corrected,literal", [
    (0.8, 0.3, -1, 1),
    (0.3, 0.8, 1, -1),
    (0.5, 0.5, 1, -1),
])
def test_expected_pq(a_z, b_z, corrected, literal):
    assert expected_pq(a_z, b_z, "corrected") == corrected
    assert expected_pq(a_z, b_z, "literal") == literal


def test_carrier_fourth_components():
    base = Direction.from_components((0.6, 0.0, 0.8))
    aux = Direction.from_components((0.0, 1.0, 0.0))
    alice = build_carrier(base, aux, 1, 1, -1, SIDE_ALICE)
    bob = build_carrier(base, aux, 1, 1, 1, SIDE_BOB)
    # w = base + aux has |w|^2 = 2, so w0 = 1
    assert alice.v0 == pytest.approx(1.0)
    assert bob.v0 == pytest.approx(1.0)
    flipped = build_carrier(base, aux, 1, 1, 1, SIDE_ALICE)
    assert flipped.v0 == pytest.approx(-1.0)


def test_carrier_product_is_spatial_minus_fourth():
    a = Direction.from_components((0.3, 0.4, 0.8), normalize=True)
    b = Direction.from_components((0.1, -0.2, 0.9), normalize=True)
    u = build_carrier(a, b, 1, -1, 1, SIDE_ALICE)
    v = build_carrier(b, a, -1, 1, 1, SIDE_BOB)
    spatial = u.v1 * v.v1 + u.v2 * v.v2 + u.v3 * v.v3
    assert inner(u, v) == pytest.approx(spatial - abs(u.v0) * abs(v.v0))


def test_bob_carrier_takes_no_fourth_sign():
    with pytest.raises(ValueError):
        build_carrier(X_HAT, Z_HAT, 1, 1, -1, SIDE_BOB)
    with pytest.raises(ValueError):
        build_carrier(X_HAT, Z_HAT, 0, 1, 1, SIDE_ALICE)


@pytest.mark.parametrize("signs,alice,bob", [
    # (sign pattern, {p: (sign1, sign2, sign0)}, {q: (sign1, sign2)})
    ((1, 1, -1, -1, 1), {1: (1, 1, 1), -1: (-1, -1, 1)}, {1: (-1, 1), -1: (1, -1)}),
    ((1, -1, 1, 1, -1), {1: (1, -1, -1), -1: (1, 1, -1)}, {1: (1, 1), -1: (-1, 1)}),
])
def test_carrier_sign_indices(generic_setting, sp_pi8, signs, alice, bob):
    a, b = generic_setting
    aux = aux_vectors(a, b, sp_pi8)
    for p, (s1, s2, s0) in alice.items():
        assert alice_carrier(p, signs, a, aux.A_hat) == build_carrier(a, aux.A_hat, s1, s2, s0, SIDE_ALICE)
    for q, (t1, t2) in bob.items():
        assert bob_carrier(q, signs, b, aux.B_hat) == build_carrier(b, aux.B_hat, t1, t2, 1, SIDE_BOB)
    assert alice_carrier(1, signs, a, aux.A_hat) != alice_carrier(-1, signs, a, aux.A_hat)
    assert bob_carrier(1, signs, b, aux.B_hat) != bob_carrier(-1, signs, b, aux.B_hat)


def _bundle_with_signs(signs):
    return SharedBundle(
        mu=tuple(Carrier4(0.0, 0.0, 0.0, float(s)) for s in signs),
        lambda0=Carrier4(1.0, 0.0, 0.0, 0.0),
        lambda1=Carrier4(0.0, 1.0, 0.0, 0.0),
        c_hat=Carrier4(0.0, 0.0, 0.0, 1.0),
        r_flip=0.5,
        box_coins=(0, 0),
    )


def test_select_uv_sign_averaged_spatial_product(random_pairs, sp_pi8):
    patterns = list(itertools.product((1, -1), repeat=5))
    bundles = [_bundle_with_signs(signs) for signs in patterns]
    for a, b in random_pairs[:5]:
        a_c, b_c, _, _ = canonicalize(a, b)
        aux = aux_vectors(a_c, b_c, sp_pi8)
        expected = {
            (1, 1): a_c.dot(aux.B_hat),
            (1, -1): aux.A_hat.dot(b_c),
            (-1, 1): aux.A_hat.dot(b_c),
            (-1, -1): a_c.dot(aux.B_hat),
        }
        for (p, q), target in expected.items():
            total = 0.0
            for bundle in bundles:
                u, v = select_uv(p, q, bundle, a_c, aux.A_hat, b_c, aux.B_hat)
                total += sum(x * y for x, y in zip(u.components()[:3], v.components()[:3]))
            assert total / len(bundles) == pytest.approx(target, abs=1e-12)


def test_signs_from_pr_identity_violation_raises():
    proj_u = np.array([0.2, 0.9])
    proj_v = np.array([0.5, -0.5])
    # a XOR b must equal c* AND d = 1 here; a == b breaks the identity
    with pytest.raises(ConsistencyError):
        signs_from_pr(0, 0, proj_u, proj_v, 1)


def test_importance_index_thresholds():
    weights = np.array([1.0, 1.0, 2.0])
    assert int(importance_index(weights, 0.0)) == 0
    assert int(importance_index(weights, 0.3)) == 1
    assert int(importance_index(weights, 0.5)) == 2
    assert int(importance_index(weights, 0.999999)) == 2


def test_correlated_flip_thresholds():
    assert correlated_flip(-1, -1, 0.4, 0.2, 0.1) == correlated_flip(1, 1, 0.4, 0.2, 0.1)
    flipped = correlated_flip(-1, -1, 0.4, 0.2, 0.3)
    assert (flipped.alpha, flipped.beta) == (1, -1)
    kept = correlated_flip(-1, 1, 0.4, 0.2, 0.5)
    assert (kept.alpha, kept.beta) == (-1, 1)
    independent = independent_flip(-1, -1, 0.4, 0.2, 0.5, 0.1)
    assert (independent.alpha, independent.beta) == (-1, 1)


def test_flip_closed_form_example():
    assert flip_closed_form(0.5, 0.2, 0.4) == pytest.approx((0.2, 0.4, 0.5))
    assert independent_flip_closed_form(0.5, 0.2, 0.4) == pytest.approx((0.2, 0.4, 0.2 * 0.4 + 0.8 * 0.6 * 0.5))


@pytest.mark.parametrize("args", [(1.5, 0.2, 0.2), (0.5, 1.0, 0.2), (0.5, 0.2, -0.1)])
def test_flip_closed_form_rejects_invalid(args):
    with pytest.raises(InfeasibleParametersError):
        flip_closed_form(*args)


def _unbiased_pairs(c0, trials, rng):
    alpha0 = np.where(rng.random(trials) < 0.5, 1, -1)
    beta0 = np.where(rng.random(trials) < (1 + c0) / 2, alpha0, -alpha0)
    return alpha0, beta0


@pytest.mark.slow
def test_correlated_flip_simulation_matches_closed_form():
    rng = RngStream(31, "flips")
    trials = 1_000_000
    grid = (0.0, 0.35, 0.7)
    for c0 in (-0.8, 0.0, 0.6):
        for f_a in grid:
            for f_b in grid:
                alpha0, beta0 = _unbiased_pairs(c0, trials, rng)
                alpha, beta = correlated_flip_array(alpha0, beta0, f_a, f_b, rng.random(trials))
                m_a, m_b, corr = flip_closed_form(c0, f_a, f_b)
                for sample, target in ((alpha, m_a), (beta, m_b), (alpha * beta, corr)):
                    se = math.sqrt(max(1 - target ** 2, 1e-12) / trials)
                    assert abs(sample.astype(np.int64).mean() - target) <= 4 * se


def test_independent_flips_break_the_correlated_closed_form():
    rng = RngStream(32, "flips")
    trials = 200_000
    alpha0, beta0 = _unbiased_pairs(0.0, trials, rng)
    alpha, beta = independent_flip_array(alpha0, beta0, 0.5, 0.5, rng.random(trials), rng.random(trials))
    _, _, corr = flip_closed_form(0.0, 0.5, 0.5)
    se = math.sqrt((1 - corr ** 2) / trials)
    assert abs((alpha * beta).astype(np.int64).mean() - corr) > 4 * se
    _, _, independent_corr = independent_flip_closed_form(0.0, 0.5, 0.5)
    independent_se = math.sqrt((1 - independent_corr ** 2) / trials)
    assert abs((alpha * beta).astype(np.int64).mean() - independent_corr) <= 4 * independent_se


def test_flip_identity_holds_for_corrected_conventions(random_pairs):
    for gamma in (math.pi / 16, math.pi / 8, 3 * math.pi / 16, math.pi / 4):
        sp = state_params(gamma)
        for a, b in random_pairs:
            assert abs(flip_identity_residual(a, b, sp)) <= 1e-12


def test_flip_identity_fails_for_literal_conventions(generic_setting, sp_pi8):
    a, b = generic_setting
    assert abs(flip_identity_residual(a, b, sp_pi8, "literal", "corrected")) > 1e-6
    assert abs(flip_identity_residual(a, b, sp_pi8, "corrected", "literal")) > 1e-6


def test_branch_correlation_selects_by_pq(generic_setting, sp_pi8):
    a, b = generic_setting
    aux = aux_vectors(a, b, sp_pi8)
    assert branch_correlation(a, b, aux, 1) == pytest.approx(a.dot(aux.B_hat))
    assert branch_correlation(a, b, aux, -1) == pytest.approx(aux.A_hat.dot(b))


def test_preflip_oracle_claimed_value(generic_setting, sp_pi8):
    a, b = generic_setting
    aux = aux_vectors(a, b, sp_pi8)
    exact, claimed = preflip_correlation_oracle(a, b, sp_pi8, 1)
    assert claimed == pytest.approx(a.dot(aux.B_hat))
    assert -1.0 <= exact <= 1.0
    with pytest.raises(ValueError):
        preflip_correlation_oracle(a, b, sp_pi8, 0)


def test_strict_run_uses_one_box_of_each(generic_setting, strict_cfg):
    a, b = generic_setting
    rng = RngStream(strict_cfg.master_seed, "strict")
    for _ in range(50):
        bundle = draw_bundle(rng, strict_cfg.c_hat)
        outcome, transcript = run_protocol(a, b, strict_cfg, bundle, rng)
        assert outcome.alpha in (1, -1) and outcome.beta in (1, -1)
        assert transcript.valid
        assert (transcript.pr_box_uses, transcript.m_box_uses, transcript.cbits) == (1, 1, 0)
        assert "lambda_0" in transcript.shared_draws


def test_run_pq_matches_mbox_convention(generic_setting, strict_cfg):
    a, b = generic_setting
    rng = RngStream(3, "pq")
    setting = prepare_setting(a, b, strict_cfg)
    for _ in range(20):
        record = execute_run(a, b, strict_cfg, draw_bundle(rng, strict_cfg.c_hat), rng, setting)
        assert record.p * record.q == expected_pq(setting.a.z, setting.b.z)


def test_run_relabels_canonicalized_outputs(strict_cfg):
    a = Direction.from_components((0.3, 0.4, -0.8), normalize=True)
    b = Direction.from_components((0.1, 0.2, 0.9), normalize=True)
    rng = RngStream(4, "relabel")
    bundle = draw_bundle(rng, strict_cfg.c_hat)
    record = execute_run(a, b, strict_cfg, bundle, rng)
    mirrored = execute_run(-a, b, strict_cfg, bundle, rng)
    assert record.outcome.alpha == -mirrored.outcome.alpha
    assert record.outcome.beta == mirrored.outcome.beta


def test_ideal_run_records_sampler_use(generic_setting, ideal_cfg):
    a, b = generic_setting
    rng = RngStream(5, "ideal")
    _, transcript = run_protocol(a, b, ideal_cfg, draw_bundle(rng, ideal_cfg.c_hat), rng)
    assert transcript.pr_box_uses == 0
    assert transcript.m_box_uses == 1
    assert "lambda_s" in transcript.shared_draws
    assert any(note.startswith("rejection_attempts=") for note in transcript.notes)
    assert any(note.startswith("non-strict") for note in transcript.notes)


def test_resample_run_counts_index_bits(generic_setting):
    a, b = generic_setting
    cfg = ProtocolConfig(gamma=math.pi / 8, mode="resample_n", resample_n=5)
    rng = RngStream(6, "resample")
    _, transcript = run_protocol(a, b, cfg, draw_bundle(rng, cfg.c_hat, 5), rng)
    assert transcript.cbits == 3
    assert transcript.pr_box_uses == 0


def test_run_rejects_mismatched_bundles(generic_setting, strict_cfg):
    a, b = generic_setting
    rng = RngStream(7, "mismatch")
    other_c = Carrier4(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        run_protocol(a, b, strict_cfg, draw_bundle(rng, other_c), rng)
    cfg = ProtocolConfig(gamma=math.pi / 8, mode="resample_n", resample_n=4)
    with pytest.raises(ValueError):
        run_protocol(a, b, cfg, draw_bundle(rng, cfg.c_hat, 2), rng)


def test_strict_sign_step_refuses_second_pr_box(generic_setting, strict_cfg):
    a, b = generic_setting
    rng = RngStream(8, "twice")
    bundle = draw_bundle(rng, strict_cfg.c_hat)
    transcript = new_transcript("strict")
    record_use(transcript, RESOURCE_PR_BOX)
    u = Carrier4(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ResourceViolation):
        distributed_sign_step(u, u, bundle, "strict", transcript, rng)


def test_singlet_baseline_run(generic_setting, strict_cfg):
    a, b = generic_setting
    outcome, transcript = run_singlet_baseline(a, b, strict_cfg, RngStream(9, "singlet"))
    assert outcome.alpha in (1, -1)
    assert (transcript.pr_box_uses, transcript.m_box_uses) == (1, 0)
    assert transcript.valid


def test_singlet_same_setting_anticorrelates(strict_cfg):
    rng = RngStream(10, "singlet")
    for _ in range(100):
        outcome, _ = run_singlet_baseline(Z_HAT, Z_HAT, strict_cfg, rng)
        assert outcome.product == -1


def test_correlation_is_unchanged_by_canonicalization(random_pairs, sp_pi8):
    for a, b in random_pairs:
        a_c, b_c, eta_a, eta_b = canonicalize(a, b)
        assert correlation(a, b, sp_pi8) == pytest.approx(eta_a * eta_b * correlation(a_c, b_c, sp_pi8))
