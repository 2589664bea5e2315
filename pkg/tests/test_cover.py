import json
import math

import numpy as np
import pytest

from app.cover import (
    Cluster, build_hierarchy, dump_hierarchy, hierarchy_from_records, home_cluster, lambda_for,
    verify_cover, write_hierarchy,
)
from app.errors import UsageError
from app.shard_graph import build_graph


def _topology(kind, s):
    if kind == 'grid':
        side = math.isqrt(s)
        return {'kind': 'grid', 'rows': side, 'cols': side, 'w': 1}
    return {'kind': kind, 's': s, 'w': 1}


@pytest.mark.parametrize('kind', ['clique', 'line', 'grid', 'random_metric'])
@pytest.mark.parametrize('s', [4, 9, 16, 25])
def test_built_covers_pass_every_property(kind, s):
    graph = build_graph(_topology(kind, s), seed=s)
    hierarchy = build_hierarchy(graph)
    report = verify_cover(hierarchy, graph)
    assert report.passed, report.summary()
    assert hierarchy.h2 <= hierarchy.h2_cap


@pytest.mark.slow
@pytest.mark.parametrize('kind', ['clique', 'line', 'grid', 'random_metric'])
def test_built_covers_pass_at_64_shards(kind):
    graph = build_graph(_topology(kind, 64), seed=64)
    report = verify_cover(build_hierarchy(graph), graph)
    assert report.passed, report.summary()


def test_construction_is_deterministic(line8):
    assert dump_hierarchy(build_hierarchy(line8)) == dump_hierarchy(build_hierarchy(line8))


def test_every_layer_partitions_the_shards(line8):
    hierarchy = build_hierarchy(line8)
    for sublayers in hierarchy.layers:
        for clusters in sublayers:
            members = sorted(s for c in clusters for s in c.members)
            assert members == list(range(8))


def test_missing_shard_fails_partition(clique3):
    records = [
        {'id': 0, 'q': 0, 'r': 0, 'members': [0], 'leader': 0},
        {'id': 1, 'q': 0, 'r': 0, 'members': [1], 'leader': 1},
    ]
    report = verify_cover(hierarchy_from_records(3, records), clique3)
    assert not report.passed
    partition = report.properties['partition']
    assert not partition.passed
    assert 'shard 2' in partition.counterexamples[0]


def test_leader_with_neighbors_outside_fails_leader_rule():
    graph = build_graph({'kind': 'line', 's': 4, 'w': 1})
    records = [{'id': i, 'q': 0, 'r': 0, 'members': [i], 'leader': i} for i in range(4)]
    records += [
        {'id': 4, 'q': 1, 'r': 0, 'members': [0, 1], 'leader': 1},
        {'id': 5, 'q': 1, 'r': 0, 'members': [2, 3], 'leader': 2},
    ]
    report = verify_cover(hierarchy_from_records(4, records), graph)
    rule = report.properties['leader_rule']
    assert not rule.passed
    assert 'leader 1' in rule.counterexamples[0]
    assert report.to_dict()['properties']['leader_rule']['passed'] is False


def test_home_cluster_examples(heavy_line_graph, heavy_line_hierarchy):
    # S3 accessing S3 and S4
    x = home_cluster(heavy_line_hierarchy, heavy_line_graph, 2, [2, 3])
    assert (x.id, x.q) == (9, 1)
    # S5 accessing S5 and S8
    y = home_cluster(heavy_line_hierarchy, heavy_line_graph, 4, [4, 7])
    assert (y.id, y.q) == (13, 2)
    top = home_cluster(heavy_line_hierarchy, heavy_line_graph, 0, [0, 7])
    assert (top.id, top.q) == (14, 3)
    local = home_cluster(heavy_line_hierarchy, heavy_line_graph, 5, [5])
    assert (local.id, local.q) == (5, 0)


def test_home_cluster_needs_destinations(heavy_line_graph, heavy_line_hierarchy):
    with pytest.raises(UsageError):
        home_cluster(heavy_line_hierarchy, heavy_line_graph, 0, [])


def test_home_cluster_contains_accesses_and_is_monotone():
    graph = build_graph({'kind': 'line', 's': 16, 'w': 1})
    hierarchy = build_hierarchy(graph)
    rng = np.random.default_rng(0)
    for _ in range(200):
        home = int(rng.integers(16))
        dests = [int(d) for d in rng.choice(16, size=int(rng.integers(1, 4)), replace=False)]
        cluster = home_cluster(hierarchy, graph, home, dests)
        assert home in cluster.members
        assert set(dests) <= cluster.members

        extra = int(rng.integers(16))
        wider = home_cluster(hierarchy, graph, home, dests + [extra])
        assert wider.order_key >= cluster.order_key


def test_overlapping_splits_parents_and_children(heavy_line_hierarchy):
    x = heavy_line_hierarchy.cluster(9)
    parents, children = heavy_line_hierarchy.overlapping(x)
    assert [c.id for c in parents] == [12, 14]
    assert [c.id for c in children] == [2, 3]
    assert heavy_line_hierarchy.base_cluster(3).id == 3
    with pytest.raises(UsageError):
        heavy_line_hierarchy.cluster(99)


def test_heights_order_clusters(heavy_line_hierarchy):
    keys = [c.order_key for c in heavy_line_hierarchy.clusters]
    assert keys == sorted(keys)
    assert heavy_line_hierarchy.h1 == 4
    assert heavy_line_hierarchy.cluster(13).height == (2, 0)


def test_lambda_for():
    cluster = Cluster(id=0, q=1, r=0, members=frozenset({0, 1}), leader=0, strong_diameter=3)
    assert lambda_for(cluster) == 3
    assert lambda_for(cluster, stretch=2) == 6
    single = Cluster(id=1, q=0, r=0, members=frozenset({0}), leader=0, strong_diameter=0)
    assert lambda_for(single, stretch=3) == 1


def test_hierarchy_dump_format(tmp_path, line8):
    hierarchy = build_hierarchy(line8)
    path = tmp_path / 'cover.jsonl'
    write_hierarchy(hierarchy, path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(hierarchy.clusters)
    first = json.loads(lines[0])
    assert set(first) == {'id', 'q', 'r', 'leader', 'members', 'strong_diameter'}
    rebuilt = hierarchy_from_records(8, [json.loads(line) for line in lines])
    assert verify_cover(rebuilt, line8).passed
