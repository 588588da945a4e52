import numpy as np
import pytest

from gyver.ualk.datagen import (
    SAL_OOD_CENTER,
    SAL_TOY_MEANS,
    VMF_TOY_CENTROIDS,
    LabeledSet,
    WildSet,
    make_gaussian_classes,
    make_ring,
    make_sal_ood,
    make_sal_toy,
    make_subspace_mixture,
    make_vmf_classes,
    make_vos_toy,
    make_wild,
    sample_vmf,
)
from gyver.ualk.exceptions import ArgumentError
from gyver.ualk.metrics import reveal_direction, reveal_membership
from gyver.ualk.numerics import RngState, bessel_ratio, is_unit


def test_labeled_set_validates_labels():
    data = LabeledSet([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]], [0, 1, 1])

    assert len(data) == 3
    assert data.dim == 2
    assert data.n_classes == 2
    assert data.class_counts().tolist() == [1, 2]
    assert data.of_class(1).shape == (2, 2)

    with pytest.raises(ArgumentError):
        LabeledSet([[0.0, 1.0]], [0, 1])
    with pytest.raises(ArgumentError):
        LabeledSet([[0.0, 1.0]], [-1])


def test_wild_set_hides_membership_from_repr():
    wild = WildSet(np.zeros((2, 2)), 0.5, hidden_is_ood=[True, False])

    assert 'hidden' not in repr(wild)
    assert reveal_membership(wild).tolist() == [True, False]

    with pytest.raises(ArgumentError):
        WildSet(np.zeros((2, 2)), 1.5)
    with pytest.raises(ArgumentError):
        WildSet(np.zeros((2, 2)), 0.5, hidden_is_ood=[True])


def test_gaussian_classes_are_grouped_by_class():
    data = make_gaussian_classes(SAL_TOY_MEANS, 0.25 * np.eye(2), 2_000, RngState(1))

    assert data.labels.tolist() == [0] * 2_000 + [1] * 2_000 + [2] * 2_000
    for k, mean in enumerate(SAL_TOY_MEANS):
        assert np.allclose(data.of_class(k).mean(axis=0), mean, atol=0.05)


def test_make_wild_fixed_count_and_bernoulli():
    rng = RngState(2)
    id_points = rng.normal((500, 2))
    ood_points = rng.normal((500, 2)) + 10

    fixed = make_wild(id_points, ood_points, 0.1, 200, RngState(3), fixed_count=True)
    drawn = make_wild(id_points, ood_points, 0.1, 200, RngState(3))

    assert reveal_membership(fixed).sum() == 20
    assert not fixed.resampled
    flags = reveal_membership(drawn)
    assert np.all(drawn.points[flags, 0] > 5)
    assert np.all(drawn.points[~flags, 0] < 5)


def test_make_wild_with_pi_one_is_all_ood():
    wild = make_wild(np.zeros((3, 2)), np.ones((10, 2)), 1.0, 10, RngState(0))

    assert reveal_membership(wild).all()


def test_make_wild_resamples_small_sources(caplog):
    wild = make_wild(np.zeros((2, 2)), np.ones((2, 2)), 0.5, 20, RngState(0), fixed_count=True)

    assert wild.resampled
    assert 'with replacement' in caplog.text


def test_make_wild_validates_inputs():
    with pytest.raises(ArgumentError):
        make_wild(np.zeros((0, 2)), np.ones((2, 2)), 0.5, 4, RngState(0))
    with pytest.raises(ArgumentError):
        make_wild(np.zeros((2, 2)), np.ones((2, 3)), 0.5, 4, RngState(0))
    with pytest.raises(ArgumentError):
        make_wild(np.zeros((2, 2)), np.ones((2, 2)), 0.0, 4, RngState(0))


def test_sal_ood_scenarios():
    far = make_sal_ood(1, RngState(4))
    cluster = make_sal_ood(2, RngState(4))

    assert far.shape == cluster.shape == (1_000, 2)
    # the farthest 1% of a N(center, 7I) pool sits beyond its 99th radius percentile
    assert np.min(np.linalg.norm(far - SAL_OOD_CENTER, axis=1)) > 7.0
    assert np.allclose(cluster.mean(axis=0), [10.0, SAL_OOD_CENTER[1]], atol=0.1)

    with pytest.raises(ArgumentError):
        make_sal_ood(3, RngState(4))


def test_sal_toy_layout():
    toy = make_sal_toy(1, RngState(5), per_class=100, wild_per_class=300, test_per_class=50)

    assert len(toy.train) == 300
    assert len(toy.wild) == 1_900
    assert reveal_membership(toy.wild).sum() == 1_000
    assert len(toy.test_id) == 150
    assert toy.test_ood.shape == (1_000, 2)


def test_sal_toy_is_deterministic():
    first = make_sal_toy(2, RngState(6), per_class=20, wild_per_class=30, test_per_class=10)
    second = make_sal_toy(2, RngState(6), per_class=20, wild_per_class=30, test_per_class=10)

    assert np.array_equal(first.wild.points, second.wild.points)
    assert np.array_equal(first.train.points, second.train.points)


def test_ring_points_lie_on_the_circle():
    ring = make_ring(12, 8.0)

    assert np.allclose(np.linalg.norm(ring - SAL_OOD_CENTER, axis=1), 8.0)
    with pytest.raises(ArgumentError):
        make_ring(0, 1.0)


def test_vos_toy_layout():
    toy = make_vos_toy(RngState(7), per_class=10, test_per_class=5, ring_points=36)

    assert len(toy.train) == 30
    assert len(toy.test) == 15
    assert toy.ring.shape == (36, 2)


def test_subspace_mixture_shifts_outliers_along_the_hidden_direction():
    wild = make_subspace_mixture(4_000, 8, 0.2, 5.0, RngState(8))
    flags = reveal_membership(wild)
    direction = reveal_direction(wild)

    assert is_unit(direction)
    projections = wild.points @ direction
    assert projections[flags].mean() == pytest.approx(5.0, abs=0.2)
    assert projections[~flags].mean() == pytest.approx(0.0, abs=0.1)

    with pytest.raises(ArgumentError):
        make_subspace_mixture(10, 8, 0.2, -1.0, RngState(8))


def test_vmf_samples_are_unit_and_concentrated():
    mu = np.array([0.0, 0.0, 1.0])
    draws = sample_vmf(mu, 10.0, 20_000, RngState(9))

    assert is_unit(draws)
    # E<mu, x> is the mean resultant length A_3(10)
    assert (draws @ mu).mean() == pytest.approx(bessel_ratio(0.5, 10.0), abs=0.01)


def test_vmf_with_zero_concentration_is_uniform():
    draws = sample_vmf(np.array([1.0, 0.0, 0.0]), 0.0, 20_000, RngState(10))

    assert np.allclose(draws.mean(axis=0), 0.0, atol=0.03)


def test_vmf_rejects_invalid_parameters():
    with pytest.raises(ArgumentError):
        sample_vmf(np.array([1.0, 1.0]), 1.0, 3, RngState(0))
    with pytest.raises(ArgumentError):
        sample_vmf(np.array([1.0, 0.0]), -1.0, 3, RngState(0))


def test_vmf_classes_follow_the_centroids():
    data = make_vmf_classes(VMF_TOY_CENTROIDS, 100.0, 500, RngState(11))

    for k, centroid in enumerate(VMF_TOY_CENTROIDS):
        assert (data.of_class(k) @ centroid).mean() > 0.98
