import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import build_graph, loop_pairs, random_pose, walk
from pgo.core.costs import (
    CostKind,
    RobustKernel,
    apply_robust_kernel,
    edge_cost,
    edge_residual,
    edge_residuals,
    geodesic_residual,
    summed_cost,
    total_cost,
)
from pgo.core.graph import Edge, PoseGraph
from pgo.core.se3 import Pose, exp_se3, exp_so3, log_se3


def random_information(rng):
    a = rng.normal(size=(6, 6))
    return a @ a.T + np.diag([50.0, 50.0, 50.0, 400.0, 400.0, 400.0])


def random_edge(rng, noise=0.2):
    xi, xj = random_pose(rng), random_pose(rng)
    z = xi.inverse() @ xj @ exp_se3(noise * rng.normal(size=6))
    return Edge(0, 1, z, random_information(rng)), xi, xj


def numeric_jacobians(kind, edge, xi, xj, h=1e-6):
    dim = kind.dim
    ji, jj = np.zeros((dim, 6)), np.zeros((dim, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        plus = edge_residual(kind, edge, xi @ exp_se3(d), xj).residual
        minus = edge_residual(kind, edge, xi @ exp_se3(-d), xj).residual
        ji[:, k] = (plus - minus) / (2 * h)
        plus = edge_residual(kind, edge, xi, xj @ exp_se3(d)).residual
        minus = edge_residual(kind, edge, xi, xj @ exp_se3(-d)).residual
        jj[:, k] = (plus - minus) / (2 * h)
    return ji, jj


@pytest.mark.parametrize("kind", list(CostKind))
def test_jacobians_match_finite_differences(rng, kind):
    for _ in range(100):
        edge, xi, xj = random_edge(rng)
        res = edge_residual(kind, edge, xi, xj)
        ji, jj = numeric_jacobians(kind, edge, xi, xj)
        scale = max(1.0, np.abs(res.jacobian_i).max(), np.abs(res.jacobian_j).max())
        assert_allclose(res.jacobian_i, ji, atol=1e-5 * scale)
        assert_allclose(res.jacobian_j, jj, atol=1e-5 * scale)


@pytest.mark.parametrize("kind", list(CostKind))
def test_zero_at_exact_measurement(rng, kind):
    xi, xj = random_pose(rng), random_pose(rng)
    edge = Edge(0, 1, xi.inverse() @ xj, random_information(rng))
    assert edge_cost(kind, edge, xi, xj) == pytest.approx(0.0, abs=1e-18)


@pytest.mark.parametrize("kind", list(CostKind))
def test_residual_dimension(rng, kind):
    edge, xi, xj = random_edge(rng)
    res = edge_residual(kind, edge, xi, xj)
    assert res.residual.shape == (kind.dim,)
    assert res.weight.shape == (kind.dim, kind.dim)
    assert res.jacobian_i.shape == (kind.dim, 6)


def test_geodesic_cost_is_half_mahalanobis(rng):
    edge, xi, xj = random_edge(rng)
    r = log_se3(edge.measurement.inverse() @ xi.inverse() @ xj)
    expected = 0.5 * r @ edge.information @ r
    assert edge_cost(CostKind.GEODESIC, edge, xi, xj) == pytest.approx(expected)


def test_chordal_weight_is_cached(rng):
    edge, _, _ = random_edge(rng)
    assert edge.chordal_weight is edge.chordal_weight


def test_chordal_matches_geodesic_to_first_order(rng):
    # For tiny errors both costs see the same Mahalanobis distance.
    xi, xj = random_pose(rng), random_pose(rng)
    info = random_information(rng)
    z = xi.inverse() @ xj
    edge = Edge(0, 1, z, info)
    xj_moved = xj @ exp_se3(1e-5 * rng.normal(size=6))
    geodesic = edge_cost(CostKind.GEODESIC, edge, xi, xj_moved)
    chordal = edge_cost(CostKind.CHORDAL, edge, xi, xj_moved)
    assert chordal == pytest.approx(geodesic, rel=1e-3)


def test_langevin_uses_isotropic_concentrations():
    info = np.diag([2.0, 2.0, 2.0, 10.0, 10.0, 10.0])
    edge = Edge(0, 1, Pose.identity(), info)
    xj = Pose(exp_so3([0.1, 0.0, 0.0]), [0.5, 0.0, 0.0])
    res = edge_residual(CostKind.LANGEVIN, edge, Pose.identity(), xj)
    rotation_part = np.sum((xj.rotation - np.eye(3)) ** 2)
    expected = 10.0 * rotation_part + 2.0 * 0.25
    assert res.chi2 == pytest.approx(expected)
    assert_allclose(res.weight, np.eye(12))


def test_geodesic_retries_at_pi():
    edge = Edge(0, 1, Pose.identity(), np.eye(6))
    xj = Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
    res = geodesic_residual(edge, Pose.identity(), xj, edge_index=3)
    angle = np.linalg.norm(res.residual[3:])
    assert angle == pytest.approx(np.pi, abs=1e-5)
    assert np.all(np.isfinite(res.jacobian_i))


class TestRobustKernel:
    def test_none_is_identity(self):
        assert apply_robust_kernel(RobustKernel.none(), 3.0) == (3.0, 1.0)

    def test_cauchy(self):
        rho, weight = apply_robust_kernel(RobustKernel.cauchy(2.0), 12.0)
        assert rho == pytest.approx(4.0 * np.log(4.0))
        assert weight == pytest.approx(0.25)

    def test_cauchy_is_quadratic_near_zero(self):
        rho, weight = apply_robust_kernel(RobustKernel.cauchy(1.0), 1e-8)
        assert rho == pytest.approx(1e-8)
        assert weight == pytest.approx(1.0)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            RobustKernel.cauchy(0.0)

    def test_str(self):
        assert str(RobustKernel()) == "none"
        assert str(RobustKernel.cauchy(1.5)) == "cauchy(1.5)"


def test_cost_kind_parse():
    assert CostKind.parse("Chordal") is CostKind.CHORDAL
    with pytest.raises(ValueError, match="choose from"):
        CostKind.parse("huber")


@pytest.mark.parametrize("kind", list(CostKind))
def test_total_cost_is_gauge_invariant(rng, kind):
    poses = walk(rng, 8)
    graph = build_graph(poses, loop_pairs(rng, 8, 5), noise=0.05, rng=rng)
    before = total_cost(graph, kind)
    shift = random_pose(rng)
    graph.set_estimates({v: shift @ p for v, p in graph.estimates().items()})
    assert total_cost(graph, kind) == pytest.approx(before, rel=1e-8)


def test_total_cost_skips_constant_edges(rng):
    poses = walk(rng, 3)
    graph = build_graph(poses, [(0, 1), (1, 2)], noise=0.1, rng=rng, fixed=(0, 1))
    full = total_cost(graph, CostKind.GEODESIC)
    skipped = total_cost(graph, CostKind.GEODESIC, skip_constant=True)
    first = edge_cost(CostKind.GEODESIC, graph.edges[0], poses[0], poses[1])
    assert full == pytest.approx(skipped + first)


def scattered_graph(rng, n=15, m=40):
    graph = PoseGraph()
    for var_id in range(n):
        graph.add_variable(var_id, random_pose(rng), var_id == 0)
    for _ in range(m):
        i, j = rng.choice(n, size=2, replace=False).tolist()
        z = random_pose(rng, spread=1.0)
        graph.add_edge(Edge(i, j, z, random_information(rng)))
    return graph


@pytest.mark.parametrize("kind", list(CostKind))
def test_batched_residuals_match_per_edge(rng, kind):
    graph = scattered_graph(rng)
    batch = edge_residuals(kind, graph)
    for index, edge in enumerate(graph.edges):
        single = edge_residual(kind, edge, graph.estimate(edge.id_from), graph.estimate(edge.id_to))
        assert_allclose(batch.residual[index], single.residual, atol=1e-10)
        assert_allclose(batch.weight[index], single.weight, atol=1e-10)
        assert_allclose(batch.jacobian_i[index], single.jacobian_i, atol=1e-9)
        assert_allclose(batch.jacobian_j[index], single.jacobian_j, atol=1e-9)
        assert batch.chi2[index] == pytest.approx(single.chi2, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("kind", list(CostKind))
def test_summed_cost_matches_edge_costs(rng, kind):
    graph = scattered_graph(rng)
    kernel = RobustKernel.cauchy(3.0)
    expected = sum(
        edge_cost(kind, e, graph.estimate(e.id_from), graph.estimate(e.id_to), kernel)
        for e in graph.edges
    )
    assert summed_cost(kind, graph, kernel=kernel) == pytest.approx(expected, rel=1e-10)
    subset = np.array([1, 4, 7])
    partial = sum(
        edge_cost(kind, graph.edges[k], graph.estimate(graph.edges[k].id_from),
                  graph.estimate(graph.edges[k].id_to))
        for k in subset
    )
    assert summed_cost(kind, graph, subset) == pytest.approx(partial, rel=1e-10)
    assert summed_cost(kind, graph, np.array([], dtype=int)) == 0.0


def test_batched_geodesic_handles_half_turn_errors():
    graph = PoseGraph()
    graph.add_variable(0, Pose.identity(), True)
    graph.add_variable(1, Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3)))
    graph.add_variable(2, Pose(exp_so3([0.0, 0.3, 0.0]), [1.0, 0.0, 0.0]))
    graph.add_edge(Edge(0, 2, Pose.identity(), np.eye(6)))
    graph.add_edge(Edge(0, 1, Pose.identity(), np.eye(6)))
    batch = edge_residuals(CostKind.GEODESIC, graph)
    single = geodesic_residual(graph.edges[1], graph.estimate(0), graph.estimate(1), edge_index=1)
    assert_allclose(batch.residual[1], single.residual)
    assert_allclose(batch.jacobian_i[1], single.jacobian_i)
    assert np.all(np.isfinite(batch.jacobian_j))


def test_edge_arrays_follow_added_edges(rng):
    graph = scattered_graph(rng, n=4, m=3)
    assert len(graph.edge_arrays()) == 3
    graph.add_edge(Edge(1, 2, random_pose(rng), np.eye(6)))
    assert len(graph.edge_arrays()) == 4
    assert graph.copy().edge_arrays() is graph.edge_arrays()
