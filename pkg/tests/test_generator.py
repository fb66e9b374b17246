import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pgo.core.costs import CostKind, total_cost
from pgo.core.g2o import parse_g2o, write_g2o
from pgo.core.generator import GeneratorSpec, generate_sphere, sphere_edges, sphere_poses
from pgo.core.se3 import log_se3


def test_ring_layout():
    spec = GeneratorSpec(node_count=20, seed=1)
    assert spec.ring_size == 5
    assert spec.ring_count == 4
    assert GeneratorSpec(node_count=20, nodes_per_ring=8).ring_count == 3


def test_edge_counts():
    spec = GeneratorSpec(node_count=20)
    pairs = sphere_edges(spec)
    assert pairs[:19] == [(i, i + 1) for i in range(19)]
    # three links per pose after the first ring, minus the one that repeats odometry
    assert len(pairs) == 19 + 3 * 15 - 3
    assert len(set(pairs)) == len(pairs)
    assert all(i < j for i, j in pairs)


def test_poses_lie_on_sphere():
    spec = GeneratorSpec(node_count=30, radius=7.0)
    for pose in sphere_poses(spec):
        assert np.linalg.norm(pose.translation) == pytest.approx(7.0)
        assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)
        assert_allclose(pose.rotation[:, 2], pose.translation / 7.0, atol=1e-12)


def test_noise_free_dataset_is_consistent():
    truth, noisy = generate_sphere(GeneratorSpec(node_count=50, sigma_rot=0.0, sigma_trans=0.0))
    assert total_cost(truth, CostKind.GEODESIC) == pytest.approx(0.0, abs=1e-18)
    assert total_cost(noisy, CostKind.GEODESIC) == pytest.approx(0.0, abs=1e-12)
    for var_id in truth.ids():
        assert noisy.estimate(var_id).allclose(truth.estimate(var_id), atol=1e-9)


def test_same_seed_same_graph():
    spec = GeneratorSpec(node_count=40, seed=3)
    _, a = generate_sphere(spec)
    _, b = generate_sphere(spec)
    _, c = generate_sphere(GeneratorSpec(node_count=40, seed=4))
    assert write_g2o(a) == write_g2o(b)
    assert write_g2o(a) != write_g2o(c)


def test_first_pose_is_fixed():
    truth, noisy = generate_sphere(GeneratorSpec(node_count=10))
    assert truth.fixed_ids() == noisy.fixed_ids() == [0]
    assert "FIX 0" in write_g2o(noisy)
    _, free = generate_sphere(GeneratorSpec(node_count=10, fix_first=False))
    assert free.fixed_ids() == []


def test_noisy_start_follows_odometry():
    _, noisy = generate_sphere(GeneratorSpec(node_count=12))
    for i in range(11):
        expected = noisy.estimate(i) @ noisy.edges[i].measurement
        assert noisy.estimate(i + 1).allclose(expected, atol=1e-12)


def test_information_matches_sigmas():
    info = GeneratorSpec(sigma_rot=0.1, sigma_trans=0.5).information()
    assert_allclose(np.diag(info), [4.0, 4.0, 4.0, 100.0, 100.0, 100.0])
    assert_allclose(GeneratorSpec(sigma_rot=0.0, sigma_trans=0.0).information(), np.eye(6))


def test_output_parses_back():
    _, noisy = generate_sphere(GeneratorSpec(node_count=25))
    again = parse_g2o(io.StringIO(write_g2o(noisy)))
    assert again.num_edges == noisy.num_edges
    assert again.fixed_ids() == [0]


@pytest.mark.parametrize("kwargs", [
    {"node_count": 1},
    {"radius": 0.0},
    {"sigma_rot": -0.1},
    {"nodes_per_ring": 1},
])
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        GeneratorSpec(**kwargs)


@pytest.mark.slow
def test_noise_statistics():
    spec = GeneratorSpec(node_count=2500, sigma_rot=0.03, sigma_trans=0.01, seed=11)
    truth, noisy = generate_sphere(spec)
    errors = np.array([
        log_se3(t.measurement.inverse() @ n.measurement)
        for t, n in zip(truth.edges, noisy.edges)
    ])
    std = errors.std(axis=0)
    assert_allclose(std[:3], 0.01, rtol=0.05)
    assert_allclose(std[3:], 0.03, rtol=0.05)
    assert_allclose(errors.mean(axis=0), 0.0, atol=2e-3)
