import math

import pytest

from app.simulation.services.component_checks import (
    CHECK_STATISTICAL,
    DEFAULT_SAMPLE_COUNT,
    DEFAULT_SAMPLER_PAIRS,
    ComponentVerifier,
)


@pytest.fixture
def verifier():
    return ComponentVerifier(gamma=math.pi / 8, master_seed=1, trials=20_000, sample_count=500, sampler_pairs=5)


def test_exact_checks_pass(verifier):
    for check in (verifier.check_pr_box, verifier.check_m_box, verifier.check_aux_unit_norms,
                  verifier.check_flip_closed_form, verifier.check_flip_identity,
                  verifier.check_quantum_oracle, verifier.check_canonicalization):
        result = check()
        assert result.passed, result.to_dict()


def test_distributed_sign_covers_every_box_input(verifier):
    result = verifier.check_distributed_sign()
    assert result.passed
    assert result.details["combinations_covered"] == 8


def test_statistical_checks_pass(verifier):
    for check in (verifier.check_sign_moments, verifier.check_biased_sampler):
        result = check()
        assert result.kind == CHECK_STATISTICAL
        assert result.passed, result.to_dict()


def test_literal_conventions_fail_flip_identity():
    verifier = ComponentVerifier(gamma=math.pi / 8, sample_count=200, ab_convention="literal")
    assert not verifier.check_flip_identity().passed


def test_run_all_report(verifier):
    report = verifier.run_all()
    document = report.to_dict()
    assert report.passed
    assert document["summary"]["n_checks"] == 10
    assert document["summary"]["failed"] == []
    assert document["config"]["sample_count"] == 500


def test_default_sample_sizes():
    config = ComponentVerifier(gamma=math.pi / 8).config()
    assert (DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLER_PAIRS) == (10_000, 20)
    assert config["sample_count"] == DEFAULT_SAMPLE_COUNT
    assert config["sampler_pairs"] == DEFAULT_SAMPLER_PAIRS


def test_oracle_and_sampler_use_configured_sizes():
    verifier = ComponentVerifier(gamma=math.pi / 8, master_seed=2, trials=5_000, sample_count=1_200, sampler_pairs=3)
    oracle = verifier.check_quantum_oracle()
    assert oracle.passed
    assert oracle.details["samples"] == 1_200
    assert verifier.check_biased_sampler().details["pairs"] == 3
