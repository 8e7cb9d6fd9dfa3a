import numpy as np

from src.utils.rng import derive_seed, make_rng, standard_normal, uniform


def test_same_seed_same_stream():
    assert np.array_equal(make_rng(3).random(5), make_rng(3).random(5))
    assert not np.array_equal(make_rng(3).random(5), make_rng(4).random(5))


def test_generator_is_philox():
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_derive_seed_labels_are_independent():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    seeds = {derive_seed(1, 0), derive_seed(1, 1), derive_seed(2, 0), derive_seed(1, 0, 7)}
    assert len(seeds) == 4


def test_box_muller_moments_and_shape():
    z = standard_normal(make_rng(0), (200, 50))
    assert z.shape == (200, 50)
    assert abs(z.mean()) < 0.04
    assert abs(z.var() - 1.0) < 0.06
    assert standard_normal(make_rng(0), 7).shape == (7,)


def test_uniform_range():
    u = uniform(make_rng(5), -0.5, 2.0, (1000,))
    assert u.min() >= -0.5 and u.max() < 2.0
