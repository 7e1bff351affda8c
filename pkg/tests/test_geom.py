import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from app.models.models import Carrier4, Direction
from app.simulation.errors import DegenerateInputError, SamplingFailure
from app.simulation.geom import (
    RngStream,
    dot,
    inner,
    norm,
    rejection_sample_biased,
    rejection_sample_biased_array,
    rejection_sample_biased_counted,
    sample_sphere_array,
    sample_uniform_sphere,
    sgn,
    sgn_array,
)


def test_sgn_zero_is_positive():
    assert sgn(0.0) == 1
    assert sgn(-0.0) == 1
    assert sgn(-1e-300) == -1
    assert sgn(2.5) == 1


@pytest.mark.parametrize("value", [math.nan, math.inf, -math.inf])
def test_sgn_rejects_non_finite(value):
    with pytest.raises(DegenerateInputError):
        sgn(value)
    with pytest.raises(DegenerateInputError):
        sgn_array([0.0, value])


def test_sgn_array_matches_scalar():
    values = np.array([-2.0, -0.0, 0.0, 1e-12, 3.0])
    assert sgn_array(values).tolist() == [sgn(v) for v in values]
    assert sgn_array(values).dtype == np.int8


def test_same_label_replays_identically():
    first = RngStream(5, ("protocol", 0, 1, "shared")).random(8)
    second = RngStream(5, ("protocol", 0, 1, "shared")).random(8)
    np.testing.assert_array_equal(first, second)


def test_distinct_labels_and_seeds_differ():
    base = RngStream(5, ("protocol", 0, 1, "shared")).random(8)
    other_label = RngStream(5, ("protocol", 0, 1, "private")).random(8)
    other_seed = RngStream(6, ("protocol", 0, 1, "shared")).random(8)
    assert not np.array_equal(base, other_label)
    assert not np.array_equal(base, other_seed)


def test_negative_master_seed_rejected():
    with pytest.raises(ValueError):
        RngStream(-1, "x")


def test_child_stream_is_deterministic():
    parent = RngStream(3, "root")
    np.testing.assert_array_equal(parent.child("c").random(4), RngStream(3, ("root", "c")).random(4))


@pytest.mark.parametrize("dim", [3, 4])
def test_sphere_samples_are_unit(dim):
    points = sample_sphere_array(dim, RngStream(1, "sphere"), 1000)
    assert points.shape == (1000, dim)
    np.testing.assert_allclose(norm(points), 1.0, atol=1e-12)


def test_sphere_sampler_rejects_other_dimensions():
    with pytest.raises(ValueError):
        sample_sphere_array(5, RngStream(1, "sphere"), 3)


def test_sphere_sample_mean_is_near_zero():
    points = sample_sphere_array(4, RngStream(2, "mean"), 100_000)
    # each coordinate has variance 1/4 on S^3
    se = math.sqrt(0.25 / points.shape[0])
    assert np.all(np.abs(points.mean(axis=0)) <= 4 * se)


def test_sample_uniform_sphere_types():
    rng = RngStream(9, "types")
    assert isinstance(sample_uniform_sphere(3, rng), Direction)
    carrier = sample_uniform_sphere(4, rng)
    assert isinstance(carrier, Carrier4)
    assert carrier.is_unit()


def test_dot_and_inner_agree():
    u = Carrier4(0.5, 0.5, 0.5, 0.5)
    v = Carrier4(1.0, 0.0, 0.0, 0.0)
    assert inner(u, v) == pytest.approx(0.5)
    assert dot([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]) == pytest.approx(32.0)


def test_biased_sampler_output_is_unit():
    w = Carrier4(0.0, 1.0, 0.0, 0.0)
    lam = rejection_sample_biased(w, RngStream(4, "biased"))
    assert lam.is_unit()


def test_biased_sampler_rejects_zero_vector():
    with pytest.raises(DegenerateInputError):
        rejection_sample_biased(Carrier4(0.0, 0.0, 0.0, 0.0), RngStream(4, "biased"))
    with pytest.raises(DegenerateInputError):
        rejection_sample_biased_array(np.zeros((2, 4)), RngStream(4, "biased"))


def test_biased_sampler_cap_raises():
    with pytest.raises(SamplingFailure):
        # one attempt per row almost surely leaves some of 1000 rows unaccepted
        rejection_sample_biased_array(np.tile([1.0, 0.0, 0.0, 0.0], (1000, 1)), RngStream(4, "cap"), 1)


def test_biased_sampler_counts_attempts():
    _, attempts = rejection_sample_biased_counted(Carrier4(1.0, 0.0, 0.0, 0.0), RngStream(8, "count"))
    assert attempts >= 1


def test_biased_sampler_sign_correlation_is_cosine():
    rng = RngStream(12, "cosine")
    u = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.array([0.6, 0.8, 0.0, 0.0])
    trials = 200_000
    lam, _ = rejection_sample_biased_array(np.tile(u, (trials, 1)), rng)
    product = sgn_array(dot(lam, u)).astype(np.int64) * sgn_array(dot(lam, v)).astype(np.int64)
    se = math.sqrt((1 - 0.6 ** 2) / trials)
    assert abs(product.mean() - 0.6) <= 4 * se


def test_biased_sampler_density_weights_alignment():
    rng = RngStream(13, "density")
    u = np.array([0.0, 0.0, 1.0, 0.0])
    trials = 200_000
    lam, attempts = rejection_sample_biased_array(np.tile(u, (trials, 1)), rng)
    # E|u.lambda| under density |u.lambda| on S^3 is E t^2 / E|t| = (1/4) / (4 / (3 pi))
    expected = 0.25 / (4.0 / (3.0 * math.pi))
    samples = np.abs(dot(lam, u))
    se = samples.std() / math.sqrt(trials)
    assert abs(samples.mean() - expected) <= 4 * se
    rate = trials / attempts.sum()
    assert rate == pytest.approx(4.0 / (3.0 * math.pi), abs=0.01)


@pytest.mark.parametrize("x", [5e-324, 1e-300, 0.3, 1.0, 7.5e12])
def test_sgn_is_odd_away_from_zero(x):
    assert sgn(x) == 1
    assert sgn(-x) == -sgn(x)


def test_sgn_array_is_odd_on_random_values():
    values = RngStream(31, "odd").standard_normal(10_000)
    values = values[values != 0.0]
    np.testing.assert_array_equal(sgn_array(-values), -sgn_array(values))


@pytest.mark.parametrize("dim", [3, 4])
def test_uniform_sphere_is_rotation_invariant(dim):
    rng = RngStream(21, ("rotation", dim))
    first = sample_sphere_array(dim, rng, 100_000)
    second = sample_sphere_array(dim, rng, 100_000)
    rotation, _ = np.linalg.qr(RngStream(22, ("rotation-matrix", dim)).standard_normal((dim, dim)))
    rotated = first @ rotation.T
    assert ks_2samp(rotated[:, 0], second[:, 0]).pvalue > 0.001


def test_biased_sampler_acceptance_rate():
    rng = RngStream(23, "acceptance")
    w = Carrier4(0.5, -0.5, 0.5, 0.5)
    draws = 20_000
    attempts = sum(rejection_sample_biased_counted(w, rng)[1] for _ in range(draws))
    expected = 4.0 / (3.0 * math.pi)
    se = math.sqrt(expected * (1.0 - expected) / attempts)
    assert abs(draws / attempts - expected) <= 4 * se


def test_biased_sampler_ignores_scale_of_w():
    w = Carrier4(1.0, 2.0, 2.0, 4.0)
    scaled = Carrier4(7.0, 14.0, 14.0, 28.0)
    for seed in range(5):
        assert rejection_sample_biased(w, RngStream(seed, "scale")) == \
            rejection_sample_biased(scaled, RngStream(seed, "scale"))
    rows, _ = rejection_sample_biased_array(np.tile(w.components(), (1000, 1)), RngStream(30, "scale"))
    rows_scaled, _ = rejection_sample_biased_array(np.tile(scaled.components(), (1000, 1)), RngStream(30, "scale"))
    np.testing.assert_array_equal(rows, rows_scaled)
