import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from traytilt.entropy import (OutOfDomainError, PoseHistogram, VoxelGrid, entropy_bits,
                              entropy_of_counts, entropy_trend, estimate_distribution,
                              expected_finite_sample_entropy, rice_rule_trials, voxel_index,
                              voxel_indices)
from traytilt.geometry import Pose

G3 = VoxelGrid(0.2, 0.2, 3, 3, 3)


def miller_madow(M, K):
    """Second-order expectation of the plug-in entropy of a uniform K-bin draw."""
    return math.log2(K) - (K - 1) / (2 * M * math.log(2))


def test_voxel_index_examples():
    assert voxel_index(Pose(0.01, 0.01, 0.1), G3) == 0
    assert voxel_index(Pose(0.2, 0.199, 6.283), G3) == 26
    assert voxel_index(Pose(0.05, 0.05, 2 * math.pi), G3) == 0


def test_voxel_index_out_of_domain():
    with pytest.raises(OutOfDomainError):
        voxel_index(Pose(-0.001, 0.1, 0), G3)
    with pytest.raises(OutOfDomainError):
        voxel_indices(np.array([[0.1, 0.21, 0.0]]), G3)


@given(st.floats(0, 0.2), st.floats(0, 0.2), st.floats(-20, 20))
def test_vectorized_index_matches_scalar(x, y, t):
    assert voxel_indices(np.array([[x, y, t]]), G3)[0] == voxel_index(Pose(x, y, t), G3)


def test_voxel_centers_map_to_own_id():
    g = VoxelGrid(0.2, 0.2, 4, 4, 4)
    np.testing.assert_array_equal(voxel_indices(g.centers(), g), np.arange(64))


def test_grid_validation():
    with pytest.raises(ValueError):
        VoxelGrid(0.2, 0.1, 3, 3, 3)
    with pytest.raises(ValueError):
        VoxelGrid(0.2, 0.2, 0, 0, 3)
    g = VoxelGrid.from_resolution(0.2, 0.2, 0.05, math.pi / 2)
    assert (g.alpha, g.beta, g.gamma) == (4, 4, 4)


def test_histograms():
    h = estimate_distribution([Pose(0.1, 0.1, 1.0)] * 4, G3)
    assert h.M == 4 and h.occupied == 1 and h.f.max() == 1.0
    h = estimate_distribution(G3.centers(), G3)
    np.testing.assert_array_equal(h.counts, np.ones(27))
    np.testing.assert_allclose(h.f, 1 / 27)
    with pytest.raises(ValueError):
        estimate_distribution([], G3)


@given(st.lists(st.tuples(st.floats(0, 0.2), st.floats(0, 0.2), st.floats(0, 6.28)),
                min_size=1, max_size=200))
def test_counts_sum_to_M(poses):
    h = estimate_distribution(np.array(poses), G3)
    assert h.M == len(poses)
    assert 0.0 <= entropy_bits(h) <= math.log2(min(len(poses), 27)) + 1e-12


def test_entropy_anchors():
    assert entropy_bits(estimate_distribution(G3.centers(), G3)) == pytest.approx(
        math.log2(27), abs=1e-9)
    assert entropy_bits([0, 5, 0]) == 0.0
    assert entropy_bits([3, 3]) == pytest.approx(1.0)


@given(st.lists(st.integers(0, 50), min_size=2, max_size=30), st.randoms())
def test_entropy_permutation_invariant(counts, rnd):
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    assert entropy_of_counts(shuffled) == pytest.approx(entropy_of_counts(counts), abs=1e-12)


def test_merge_associative():
    rng = np.random.default_rng(1)
    parts = [PoseHistogram(G3, rng.integers(0, 5, 27)) for _ in range(3)]
    left = parts[0].merge(parts[1]).merge(parts[2])
    right = parts[0].merge(parts[1].merge(parts[2]))
    np.testing.assert_array_equal(left.counts, right.counts)


def test_rice_rule():
    assert rice_rule_trials(27) == (2460, pytest.approx(2460.375))
    assert rice_rule_trials(64).trials == 32768
    assert rice_rule_trials(2).trials == 1
    with pytest.raises(ValueError):
        rice_rule_trials(0)


def test_finite_sample_entropy_against_miller_madow():
    est = expected_finite_sample_entropy(500, 27, 1000, seed=3)
    assert est == pytest.approx(miller_madow(500, 27), abs=0.01)
    assert 4.70 <= est <= 4.74


def test_finite_sample_entropy_limits():
    assert expected_finite_sample_entropy(1, 27, 50) == 0.0
    big = expected_finite_sample_entropy(200_000, 27, 5)
    assert big < math.log2(27)
    assert big == pytest.approx(math.log2(27), abs=1e-3)


def test_trend():
    steps = [G3.centers(), np.repeat(G3.centers()[:1], 27, axis=0)]
    t = entropy_trend(steps, G3, [np.ones(27, bool), np.r_[np.ones(26, bool), False]])
    assert t.values[0] == pytest.approx(math.log2(27)) and t.values[1] == 0.0
    assert t.occupied == (27, 1) and t.samples == (27, 27)
    assert t.settled_fraction[1] == pytest.approx(26 / 27)
    assert t.deltas == (0.0, -t.values[0])
