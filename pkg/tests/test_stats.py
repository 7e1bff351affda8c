import math
from dataclasses import replace

import numpy as np
import pytest

from app.models.models import CellCounts, Direction, JointPMF, ProtocolConfig
from app.simulation.batch import BatchOutcome
from app.simulation.stats import (
    Tally,
    Z_SENTINEL,
    _chunk_sizes,
    alternative_conventions,
    compare,
    counts_from_outcomes,
    estimate,
    expected_protocol_resources,
    mean_z,
    run_baseline_sweep,
    run_calibration,
    run_sweep,
    simulate_setting,
    tv_confidence,
)


def test_compare_example():
    ref = JointPMF(0.75, 0.0, 0.0, 0.25)
    emp = JointPMF(0.74, 0.0, 0.0, 0.26)
    result = compare(emp, ref, 10_000)
    assert result.z_scores[0] == pytest.approx(-2.3094, abs=1e-3)
    assert result.z_scores[1] == 0.0
    assert result.z_scores[3] == pytest.approx(2.3094, abs=1e-3)
    assert result.tv == pytest.approx(0.01)
    assert not result.support_violation
    # two positive cells -> one degree of freedom
    assert result.chi2 == pytest.approx(10_000 * (0.01 ** 2 / 0.75 + 0.01 ** 2 / 0.25))
    assert 0.0 < result.chi2_pvalue < 1.0


def test_compare_flags_support_violation():
    ref = JointPMF(0.5, 0.0, 0.0, 0.5)
    emp = JointPMF(0.49, 0.01, 0.0, 0.5)
    result = compare(emp, ref, 100)
    assert result.support_violation
    assert result.z_scores[1] == Z_SENTINEL
    assert result.z_scores[2] == 0.0


def test_compare_identical_pmfs():
    pmf = JointPMF(0.1, 0.2, 0.3, 0.4)
    result = compare(pmf, pmf, 1000)
    assert result.z_scores == (0.0, 0.0, 0.0, 0.0)
    assert result.chi2 == 0.0
    assert result.chi2_pvalue == pytest.approx(1.0)
    assert result.tv == 0.0


def test_tv_confidence_uniform_reference():
    assert tv_confidence(1_000_000) == pytest.approx(3.4641e-3, rel=1e-4)
    with pytest.raises(ValueError):
        tv_confidence(0)


def test_mean_z():
    assert mean_z(0.1, 0.0, 10_000) == pytest.approx(10.0)
    assert mean_z(1.0, 1.0, 100) == 0.0
    assert mean_z(0.9, 1.0, 100) == Z_SENTINEL


def test_estimate_and_counts():
    alpha = np.array([1, 1, -1, -1, 1], dtype=np.int8)
    beta = np.array([1, -1, 1, -1, 1], dtype=np.int8)
    counts = counts_from_outcomes(alpha, beta)
    assert counts.counts() == (2, 1, 1, 1)
    pmf, se = estimate(counts)
    assert pmf.p_pp == pytest.approx(0.4)
    assert se[0] == pytest.approx(math.sqrt(0.4 * 0.6 / 5))
    with pytest.raises(ValueError):
        estimate(CellCounts(0, 0, 0, 0, N=0))


def test_tally_merge_is_order_independent():
    rng = np.random.default_rng(0)
    chunks = []
    for _ in range(3):
        alpha = np.where(rng.random(50) < 0.5, 1, -1).astype(np.int8)
        beta = np.where(rng.random(50) < 0.5, 1, -1).astype(np.int8)
        chunks.append(Tally.from_batch(BatchOutcome(alpha, beta, alpha, beta, m_box_uses=50)))
    forward = Tally()
    for chunk in chunks:
        forward.merge(chunk)
    backward = Tally()
    for chunk in reversed(chunks):
        backward.merge(chunk)
    assert forward == backward
    assert forward.n == 150
    assert forward.m_box_uses == 150


def test_tally_add_run():
    tally = Tally()
    tally.add_run(1, -1, 1, 1, 1, 1, 0)
    tally.add_run(-1, -1, -1, 1, 1, 1, 0)
    assert tally.counts().counts() == (0, 1, 0, 1)
    assert tally.sum_product0 == 0
    assert tally.pr_box_uses == 2


def test_chunk_sizes():
    assert _chunk_sizes(10, 4) == [4, 4, 2]
    assert _chunk_sizes(8, 4) == [4, 4]
    with pytest.raises(ValueError):
        _chunk_sizes(8, 0)


def test_expected_resources_per_mode():
    assert expected_protocol_resources(ProtocolConfig(gamma=0.3))["pr_box_uses"] == 1.0
    assert expected_protocol_resources(ProtocolConfig(gamma=0.3, mode="ideal"))["pr_box_uses"] == 0.0
    resample = ProtocolConfig(gamma=0.3, mode="resample_n", resample_n=3)
    assert expected_protocol_resources(resample)["cbits"] == 2.0


def test_alternative_conventions_switch_both():
    alt = alternative_conventions(ProtocolConfig(gamma=0.3))
    assert (alt.ab_convention, alt.mbox_convention) == ("literal", "literal")


def test_sweep_is_independent_of_worker_count(random_pairs):
    cfg = ProtocolConfig(gamma=math.pi / 8, mode="strict", master_seed=5)
    settings = random_pairs[:3]
    one = run_sweep(cfg, settings, 3000, chunk_size=1000, workers=1, calibrate=False)
    four = run_sweep(cfg, settings, 3000, chunk_size=1000, workers=4, calibrate=False)
    assert one.to_dict() == four.to_dict()


def test_sweep_report_contents(random_pairs):
    cfg = ProtocolConfig(gamma=math.pi / 8, mode="strict", master_seed=6)
    report = run_sweep(cfg, random_pairs[:2], 2000, chunk_size=1000)
    assert len(report.settings) == 2
    setting = report.settings[0]
    assert setting.counts.N == 2000
    assert setting.resources == {"pr_box_uses": 1.0, "m_box_uses": 1.0, "cbits": 0.0}
    assert abs(setting.flip_identity_residual) <= 1e-12
    assert set(setting.preflip) == {"pq", "exact", "claimed", "delta", "empirical", "z"}
    assert report.summary["checks"]["resources"]
    assert report.summary["checks"]["flip_identity"]
    assert report.calibration is not None
    assert set(report.to_dict()) == {"config", "settings", "calibration", "summary"}
    document = setting.to_dict()
    assert document["pmf_qm"] == setting.pmf_qm.to_dict()
    assert "pmf_ref" not in document


def test_sweep_rejects_small_inputs(random_pairs, strict_cfg):
    with pytest.raises(ValueError):
        run_sweep(strict_cfg, random_pairs[:1], 10)
    with pytest.raises(ValueError):
        run_sweep(strict_cfg, [], 5000)


@pytest.mark.slow
def test_calibration_block_passes(random_pairs):
    cfg = ProtocolConfig(gamma=math.pi / 8, mode="strict", master_seed=7)
    calibration = run_calibration(random_pairs[:10], cfg, 100_000, chunk_size=2 ** 16)
    assert calibration["summary"]["passed"]


@pytest.mark.slow
def test_baseline_sweep_passes(random_pairs):
    report = run_baseline_sweep(random_pairs[:10], 100_000, master_seed=8)
    assert report.passed
    assert report.summary["checks"]["resources"]


@pytest.mark.slow
def test_sweep_flags_independent_flips():
    tilted_x = Direction.from_components((0.3, 0.0, 1.0), normalize=True)
    tilted_y = Direction.from_components((0.0, 0.3, 1.0), normalize=True)
    settings = [(tilted_x, tilted_x), (tilted_y, tilted_x)]
    corrupted = ProtocolConfig(gamma=math.pi / 8, mode="strict", flip_rule="independent", master_seed=9)
    report = run_sweep(corrupted, settings, 10 ** 6, calibrate=False)
    assert not report.summary["passed"]
    assert not report.summary["checks"]["cell_z"]
    assert report.summary["tv_band_exceeded"] == [0, 1]

    control = run_sweep(replace(corrupted, flip_rule="correlated"), settings, 10 ** 6, calibrate=False)
    assert control.summary["checks"]["cell_z"]


def test_simulate_setting_streams_transcripts(generic_setting, strict_cfg):
    a, b = generic_setting
    seen = []
    report = simulate_setting(a, b, strict_cfg, 50, chunk_size=20,
                              on_transcript=lambda index, transcript: seen.append((index, transcript)))
    assert [index for index, _ in seen] == list(range(50))
    assert all(t["closed"] and not t["violations"] for _, t in seen)
    assert report.counts.N == 50
    assert report.resources["pr_box_uses"] == 1.0


def test_simulate_setting_is_reproducible(generic_setting, strict_cfg):
    a, b = generic_setting
    first = simulate_setting(a, b, strict_cfg, 200, chunk_size=64)
    second = simulate_setting(a, b, strict_cfg, 200, chunk_size=64)
    assert first.to_dict() == second.to_dict()
    z = Direction(0.0, 0.0, 1.0)
    assert simulate_setting(z, z, strict_cfg, 10).counts.N == 10
