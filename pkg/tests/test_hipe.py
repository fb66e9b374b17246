import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import build_graph, chain_pairs, loop_pairs, walk
from pgo.core.costs import CostKind, total_cost
from pgo.core.errors import EmptyInput
from pgo.core.g2o import parse_g2o
from pgo.core.generator import GeneratorSpec, generate_sphere
from pgo.core.graph import Edge, PoseGraph, connected_components
from pgo.core.hipe import (
    HipeParams,
    breadth_first_visit,
    build_skeleton,
    compute_virtual_measurements,
    hipe_init,
    max_degree_node,
    partition_graph,
    solve_partition,
)
from pgo.core.se3 import Pose, adjoint, exp_se3
from pgo.core.sparse_nls import build_normal_equations


def chain(rng, n, **kwargs):
    return build_graph(walk(rng, n), chain_pairs(n), **kwargs)


class TestMaxDegreeNode:
    def test_ties_go_to_smallest_id(self, rng):
        graph = chain(rng, 5)
        assert max_degree_node(graph.variables, graph.edges) == 1

    def test_counts_only_given_edges(self, rng):
        graph = chain(rng, 5)
        edges = [graph.edges[2], graph.edges[3]]
        assert max_degree_node(graph.variables, edges) == 3

    def test_star(self, rng):
        graph = build_graph(walk(rng, 5), [(4, 0), (4, 1), (4, 2), (0, 1)])
        assert max_degree_node(graph.variables, graph.edges) == 4

    def test_empty(self):
        with pytest.raises(EmptyInput):
            max_degree_node([], [])


class TestBreadthFirstVisit:
    def test_stops_after_size_and_depth(self, rng):
        graph = chain(rng, 10)
        members, edges, boundary = breadth_first_visit(graph, 0, k=3, gamma=2)
        assert members == {0, 1, 2}
        assert boundary == {3}
        assert edges == [0, 1, 2]

    def test_large_gamma_takes_whole_component(self, rng):
        graph = chain(rng, 5)
        members, _, boundary = breadth_first_visit(graph, 2, k=3, gamma=10)
        assert members == {0, 1, 2, 3, 4}
        assert boundary == set()

    def test_visited_variables_become_boundary(self, rng):
        graph = chain(rng, 6)
        for var_id in (0, 1, 2):
            graph.variables[var_id].visited = True
        members, _, boundary = breadth_first_visit(graph, 2, k=2, gamma=0)
        assert members == {2, 3}
        assert boundary == {1, 2, 4}

    def test_metric_distance(self, rng):
        graph = PoseGraph()
        for var_id in range(4):
            graph.add_variable(var_id)
        for i, length in enumerate((0.5, 0.5, 5.0)):
            graph.add_edge(Edge(i, i + 1, Pose(np.eye(3), [length, 0, 0]), np.eye(6)))
        members, _, _ = breadth_first_visit(graph, 0, k=1, gamma=1.0, distance="metric")
        assert members == {0, 1, 2}
        hops, _, _ = breadth_first_visit(graph, 0, k=1, gamma=1.0, distance="hops")
        assert hops == {0, 1}


class TestPartition:
    def test_chain_of_ten(self, rng):
        graph = chain(rng, 10)
        parts = partition_graph(graph, HipeParams(k=3, gamma=2))
        assert [p.root for p in parts] == [1, 4, 7]
        assert [p.anchor for p in parts] == [1, 4, 7]
        assert [p.variables for p in parts] == [{0, 1, 2, 3}, {4, 5, 6}, {7, 8, 9}]
        assert [p.boundary for p in parts] == [{4}, {3, 7}, {6}]
        assert [p.claimed for p in parts] == [{0, 1, 2, 3, 4}, {5, 6, 7}, {8, 9}]

        skeleton = build_skeleton(graph, HipeParams(k=3, gamma=2))
        assert skeleton.variables == {1, 3, 4, 6, 7}
        assert [e.key for e in skeleton.graph.edges] == [(1, 4), (4, 3), (4, 7), (7, 6)]

    def test_claimed_sets_cover_graph(self, rng):
        for _ in range(5):
            n = int(rng.integers(20, 80))
            graph = build_graph(walk(rng, n), loop_pairs(rng, n, n // 3))
            parts = partition_graph(graph, HipeParams(k=int(rng.integers(3, 12)), gamma=2))
            claimed = [p.claimed for p in parts]
            assert sum(len(c) for c in claimed) == n
            assert set().union(*claimed) == set(range(n))

    def test_variables_cover_graph_and_overlap_only_on_boundaries(self, rng):
        for _ in range(20):
            n = int(rng.integers(20, 120))
            graph = build_graph(walk(rng, n), loop_pairs(rng, n, int(rng.integers(0, n))))
            params = HipeParams(k=int(rng.integers(1, 15)), gamma=float(rng.integers(0, 4)))
            parts = partition_graph(graph, params)
            assert set().union(*(p.variables for p in parts)) == set(range(n))
            for a, p in enumerate(parts):
                for q in parts[a + 1:]:
                    assert p.variables & q.variables <= p.boundary | q.boundary

    def test_star_leaves_join_the_partition_that_reached_them(self, rng):
        graph = build_graph(walk(rng, 6), [(0, leaf) for leaf in range(1, 6)])
        parts = partition_graph(graph, HipeParams(k=1, gamma=0))
        assert len(parts) == 1
        assert parts[0].variables == set(range(6))
        assert parts[0].boundary == {1, 2, 3, 4, 5}
        assert parts[0].interior == set()

    def test_one_virtual_edge_per_boundary_variable(self, rng):
        graph = build_graph(walk(rng, 40), loop_pairs(rng, 40, 15))
        skeleton = build_skeleton(graph, HipeParams(k=5, gamma=2))
        assert skeleton.graph.num_edges == sum(len(p.boundary) for p in skeleton.partitions)
        for partition in skeleton.partitions:
            assert partition.anchor not in partition.boundary
            assert partition.anchor in partition.variables

    def test_interiors_only_touch_their_own_partition(self, rng):
        graph = build_graph(walk(rng, 50), loop_pairs(rng, 50, 20))
        skeleton = build_skeleton(graph, HipeParams(k=6, gamma=2))
        outside = set(graph.variables) - skeleton.variables
        for edge in graph.edges:
            i, j = edge.key
            if i in outside and j in outside:
                assert any({i, j} <= p.interior for p in skeleton.partitions)

    def test_remaining_hessian_is_block_diagonal_per_interior(self, rng):
        for _ in range(20):
            n = int(rng.integers(30, 90))
            graph = build_graph(walk(rng, n), loop_pairs(rng, n, n // 3), noise=0.02, rng=rng)
            skeleton = build_skeleton(graph, HipeParams(k=int(rng.integers(3, 10)), gamma=2))
            remaining = set(graph.variables) - skeleton.variables
            owner = {}
            for p, partition in enumerate(skeleton.partitions):
                for v in partition.interior:
                    owner[v] = p
            assert remaining <= set(owner)
            system = build_normal_equations(graph, CostKind.GEODESIC, free_set=remaining)
            for a, b in system.blocks:
                assert owner[a] == owner[b]

    def test_skeleton_is_deterministic(self, rng):
        for _ in range(20):
            n = int(rng.integers(20, 70))
            graph = build_graph(walk(rng, n), loop_pairs(rng, n, n // 4), noise=0.02, rng=rng)
            params = HipeParams(k=int(rng.integers(2, 9)), gamma=float(rng.integers(1, 4)))
            first, second = build_skeleton(graph, params), build_skeleton(graph.copy(), params)
            assert [(p.root, p.anchor, p.variables, p.boundary) for p in first.partitions] == \
                [(p.root, p.anchor, p.variables, p.boundary) for p in second.partitions]
            assert [e.key for e in first.graph.edges] == [e.key for e in second.graph.edges]
            for a, b in zip(first.measurements, second.measurements):
                assert_allclose(a.covariance, b.covariance, atol=1e-12)
                assert a.relative_pose.allclose(b.relative_pose, atol=1e-12)

    def test_generated_sphere_needs_size_bounded_partitions(self):
        _, graph = generate_sphere(GeneratorSpec(node_count=2500))
        wide = partition_graph(graph, HipeParams())
        bounded = partition_graph(graph, HipeParams(k=300, gamma=4))
        assert len(bounded) > 3
        assert len(bounded) > len(wide)

    def test_visited_flags_reset(self, rng):
        graph = chain(rng, 6)
        partition_graph(graph, HipeParams(k=2, gamma=1))
        again = partition_graph(graph, HipeParams(k=2, gamma=1))
        assert again[0].root == 1

    def test_empty_graph(self):
        assert partition_graph(PoseGraph(), HipeParams()) == []


class TestVirtualMeasurements:
    def test_three_node_chain(self, rng):
        poses = walk(rng, 3)
        a = rng.normal(size=(6, 6))
        info01 = a @ a.T + np.eye(6)
        info12 = np.diag([4.0, 4.0, 4.0, 9.0, 9.0, 9.0])
        graph = PoseGraph()
        for var_id, pose in enumerate(poses):
            graph.add_variable(var_id, pose)
        z01 = poses[0].inverse() @ poses[1]
        z12 = poses[1].inverse() @ poses[2]
        graph.add_edge(Edge(0, 1, z01, info01))
        graph.add_edge(Edge(1, 2, z12, info12))

        partition = partition_graph(graph, HipeParams(k=1, gamma=0))[0]
        assert partition.anchor == 1
        assert partition.boundary == {0, 2}

        local, _ = solve_partition(graph, partition)
        first, second = compute_virtual_measurements(partition, local)
        assert (first.anchor, first.boundary) == (1, 0)
        assert first.relative_pose.allclose(z01.inverse(), atol=1e-9)
        ad = adjoint(z01)
        assert_allclose(first.covariance, ad @ np.linalg.inv(info01) @ ad.T, atol=1e-9)
        assert second.relative_pose.allclose(z12, atol=1e-9)
        assert_allclose(second.covariance, np.linalg.inv(info12), atol=1e-9)
        assert_allclose(second.to_edge().information, info12, rtol=1e-6)

    def test_solve_partition_leaves_graph_untouched(self, rng):
        graph = build_graph(walk(rng, 8), chain_pairs(8), estimates=[Pose.identity()] * 8)
        partition = partition_graph(graph, HipeParams(k=3, gamma=1))[0]
        local, _ = solve_partition(graph, partition)
        assert local.fixed_ids() == [partition.anchor]
        assert all(graph.estimate(v).allclose(Pose.identity()) for v in graph.ids())


class TestHipeInit:
    def test_noise_free_graph_is_recovered(self, rng):
        poses = walk(rng, 60)
        graph = build_graph(poses, loop_pairs(rng, 60, 25), estimates=[Pose.identity()] * 60)
        report = hipe_init(graph, HipeParams(k=8, gamma=2))
        assert report.partitions > 1
        assert total_cost(graph, CostKind.GEODESIC) < 1e-9
        for var_id, pose in enumerate(poses):
            assert graph.estimate(var_id).allclose(pose, atol=1e-6)

    def test_fixed_variables_keep_their_pose(self, rng):
        poses = walk(rng, 30)
        graph = build_graph(poses, loop_pairs(rng, 30, 10), noise=0.02, rng=rng, fixed=(3,),
                            estimates=[Pose.identity()] * 30)
        anchor = graph.estimate(3)
        hipe_init(graph, HipeParams(k=5, gamma=2))
        assert graph.estimate(3) is anchor
        assert not graph.estimate(4).allclose(Pose.identity())

    def test_is_deterministic(self, rng):
        poses = walk(rng, 40)
        graph = build_graph(poses, loop_pairs(rng, 40, 15), noise=0.05, rng=rng)
        first, second, threaded = graph.copy(), graph.copy(), graph.copy()
        hipe_init(first, HipeParams(k=6, gamma=2))
        hipe_init(second, HipeParams(k=6, gamma=2))
        hipe_init(threaded, HipeParams(k=6, gamma=2, workers=4))
        for var_id in graph.ids():
            assert_allclose(first.estimate(var_id).matrix(), second.estimate(var_id).matrix(), atol=1e-12)
            assert_allclose(first.estimate(var_id).matrix(), threaded.estimate(var_id).matrix(), atol=1e-12)

    def test_components_are_handled_separately(self, rng):
        poses = walk(rng, 12)
        pairs = chain_pairs(6) + [(i, i + 1) for i in range(6, 11)] + [(0, 3), (7, 10)]
        graph = build_graph(poses, pairs, fixed=(0, 6), estimates=[Pose.identity()] * 12)
        graph.set_estimates({0: poses[0], 6: poses[6]})
        report = hipe_init(graph, HipeParams(k=2, gamma=1))
        assert len(report.skeletons) == len(connected_components(graph)) == 2
        for var_id, pose in enumerate(poses):
            assert graph.estimate(var_id).allclose(pose, atol=1e-6)

    def test_export_skeleton(self, rng):
        graph = chain(rng, 10)
        report = hipe_init(graph, HipeParams(k=3, gamma=2))
        text = report.export_skeleton()
        assert text.startswith("# skeleton\n")
        skeleton = parse_g2o(io.StringIO(text))
        assert skeleton.ids() == [1, 3, 4, 6, 7]
        assert skeleton.num_edges == report.skeleton_edges == 4


class TestHipeParams:
    @pytest.mark.parametrize("kwargs", [
        {"k": 0},
        {"gamma": -1},
        {"distance": "euclid"},
        {"workers": 0},
        {"local_iterations": 0},
        {"remaining_iterations": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            HipeParams(**kwargs)

    def test_defaults(self):
        params = HipeParams()
        assert params.k == 100
        assert params.gamma == 50
        assert params.local_cost is CostKind.GEODESIC


def test_perturbed_start_is_irrelevant(rng):
    # HiPE builds its own guess; the incoming estimates only matter for the anchor.
    poses = walk(rng, 25)
    pairs = loop_pairs(rng, 25, 8)
    a = build_graph(poses, pairs, estimates=[Pose.identity()] * 25)
    b = build_graph(poses, pairs, estimates=[p @ exp_se3(0.3 * rng.normal(size=6)) for p in poses])
    b.set_estimate(0, poses[0])
    hipe_init(a, HipeParams(k=5, gamma=2))
    hipe_init(b, HipeParams(k=5, gamma=2))
    for var_id in range(25):
        assert a.estimate(var_id).allclose(b.estimate(var_id), atol=1e-6)
