import numpy as np
import pytest

from app.errors import ConfigError, UsageError
from app.shard_graph import build_graph, layer_count, log_factor


def test_clique_distances(clique4):
    assert clique4.s == 4
    assert clique4.diameter == 1
    assert clique4.distance(0, 3) == 1
    assert clique4.distance(2, 2) == 0


def test_weighted_clique():
    graph = build_graph({'kind': 'clique', 's': 3, 'w': 5})
    assert graph.distance(0, 2) == 5
    assert graph.diameter == 5


def test_line_metric_and_neighborhoods(line8):
    assert line8.distance(0, 7) == 7
    assert line8.diameter == 7
    assert line8.z_neighborhood(3, 0) == frozenset({3})
    assert line8.z_neighborhood(3, 2) == frozenset({1, 2, 3, 4, 5})
    assert line8.neighbors_sorted(1)[:4] == [1, 0, 2, 3]
    assert line8.max_distance(2, [2, 5, 0]) == 3


def test_grid_metric():
    graph = build_graph({'kind': 'grid', 'rows': 3, 'cols': 3, 'w': 1})
    assert graph.s == 9
    assert graph.diameter == 4
    assert graph.distance(0, 8) == 4
    assert graph.distance(0, 4) == 2


def test_edge_list_is_closed_to_shortest_paths(heavy_line_graph):
    assert heavy_line_graph.s == 8
    assert heavy_line_graph.distance(1, 3) == 3
    assert heavy_line_graph.distance(3, 4) == 8
    assert heavy_line_graph.diameter == 15

    shortcut = build_graph({'kind': 'edges', 'edges': [[0, 1, 1], [1, 2, 1], [0, 2, 5]]})
    assert shortcut.distance(0, 2) == 2


def test_random_metric_is_seeded():
    spec = {'kind': 'random_metric', 's': 12, 'w': 1}
    a = build_graph(spec, seed=3)
    b = build_graph(spec, seed=3)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, build_graph(spec, seed=4).weights)

    w = a.weights
    assert (w == w.T).all()
    assert (np.diag(w) == 0).all()
    assert (w[np.triu_indices(12, 1)] > 0).all()
    for k in range(12):
        assert (w <= w[:, [k]] + w[[k], :]).all()


@pytest.mark.parametrize('spec', [
    {'kind': 'clique', 's': 0},
    {'kind': 'line', 's': -2},
    {'kind': 'clique', 's': 3, 'w': 0},
    {'kind': 'edges', 'edges': [[0, 1, -1]]},
    {'kind': 'edges', 'edges': [[0, 0, 1]]},
    {'kind': 'edges', 'edges': [[0, 1], [2, 3]]},
    {'kind': 'random_metric', 's': 10, 'span': 2},
    {'kind': 'hypercube', 's': 4},
])
def test_rejected_topologies(spec):
    with pytest.raises(ConfigError):
        build_graph(spec)


def test_index_and_radius_preconditions(clique4):
    with pytest.raises(UsageError):
        clique4.distance(0, 4)
    with pytest.raises(UsageError):
        clique4.z_neighborhood(-1, 1)
    with pytest.raises(UsageError):
        clique4.z_neighborhood(0, -1)


def test_graph_is_read_only(clique4):
    with pytest.raises(ValueError):
        clique4.weights[0, 1] = 7


def test_to_networkx_carries_weights(line8):
    graph = line8.to_networkx()
    assert graph.number_of_nodes() == 8
    assert graph[0][7]['weight'] == 7


@pytest.mark.parametrize('diameter, layers', [(0, 1), (1, 1), (2, 2), (4, 3), (5, 4), (15, 5)])
def test_layer_count(diameter, layers):
    assert layer_count(diameter) == layers


@pytest.mark.parametrize('s, factor', [(1, 1), (2, 1), (8, 3), (9, 4), (64, 6)])
def test_log_factor(s, factor):
    assert log_factor(s) == factor
