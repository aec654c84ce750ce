import random
from dataclasses import replace

import pydot
import pytest

from spdnn.errors import GraphError
from spdnn.graphir import GraphNode, full_label, graph_summary, source_paths, to_dot, to_graph
from spdnn.topology import LayerKind, LayerSpec, NetworkTopology

from topogen import random_sequential

CONV3 = LayerSpec.conv(3, 8, activation="relu", batch_norm=True)


def _labels(net):
    return [n.label for n in to_graph(net).nodes]


def test_net2_depth4_label(fixture_nets):
    assert "3C2P,4" in _labels(fixture_nets[1])


def test_net1_first_label(fixture_nets):
    assert _labels(fixture_nets[0])[:2] == ["IN", "3C,1"]


@pytest.mark.parametrize("structure, pool, depth, expected", [
    ("3C", 8, 4, "3C8P,4"),
    ("3C", 1, 1, "3C,1"),
    ("30F", 1, 4, "30F,4"),
])
def test_full_label(structure, pool, depth, expected):
    assert full_label(GraphNode("x", structure, pool, depth)) == expected


def test_terminal_labels():
    assert full_label(GraphNode("a", "IN", 1, 0)) == "IN"
    assert full_label(GraphNode("b", "OUT", 1, 7)) == "OUT"


def test_pool8_then_unpool2_leaves_factor_4():
    net = NetworkTopology.sequential("t", (1, 16, 16), [
        ("c1", CONV3), ("p", LayerSpec.maxpool(8)), ("u", LayerSpec.unpool(2)),
        ("c2", CONV3), ("o", LayerSpec.output()),
    ])
    node = to_graph(net).node("c2")
    assert node.pool_factor == 4
    assert node.label == "3C4P,2"


def test_unpool_must_divide_accumulated_factor():
    net = NetworkTopology.sequential("t", (1, 16, 16), [
        ("c1", CONV3), ("p", LayerSpec.maxpool(2)), ("u", LayerSpec.unpool(4)),
        ("c2", CONV3), ("o", LayerSpec.output()),
    ])
    with pytest.raises(GraphError, match="'u'"):
        to_graph(net)


def test_dense_resets_pool_and_has_no_suffix():
    net = NetworkTopology.sequential("t", (1, 16, 16), [
        ("p", LayerSpec.maxpool(4)), ("d", LayerSpec.dense(30)),
        ("c", CONV3), ("o", LayerSpec.output()),
    ])
    with pytest.raises(GraphError):
        # A dense output must be reshaped before a conv can read it.
        to_graph(NetworkTopology.sequential("bad", (1, 16, 16), [
            ("p", LayerSpec.maxpool(4)), ("d", LayerSpec.dense(30)),
            ("r", LayerSpec.reshape((1, 5, 6))), ("c", CONV3), ("o", LayerSpec.output()),
        ]))
    g = to_graph(net)
    assert g.node("d").label == "30F,1"
    assert g.node("c").label == "3C,2"


def test_reshape_sets_pool_from_target_size():
    net = NetworkTopology.sequential("t", (1, 16, 16), [
        ("d", LayerSpec.dense(16)), ("r", LayerSpec.reshape((1, 4, 4))),
        ("c", CONV3), ("o", LayerSpec.output()),
    ])
    assert to_graph(net).node("c").label == "3C4P,2"


def test_fixture_graph_sizes_and_depths(fixture_nets):
    for net in fixture_nets:
        g = to_graph(net)
        layers = sum(n.spec.kind in (LayerKind.CONV, LayerKind.DENSE) for n in net.nodes)
        assert len(g.nodes) == layers + 2
        assert [n.depth for n in g.layer_nodes] == list(range(1, layers + 1))


def test_cancelling_pools_restore_factor_one(fixture_nets):
    for net in fixture_nets:
        g = to_graph(net)
        head = g.node("head")
        assert head.pool_factor == 1


def test_to_graph_is_deterministic(fixture_nets):
    for net in fixture_nets:
        assert to_graph(net) == to_graph(net)


def test_random_graph_invariants():
    rng = random.Random(7)
    for i in range(200):
        g = to_graph(random_sequential(rng, f"r{i}"))
        assert [n.depth for n in g.layer_nodes] == list(range(1, len(g.layer_nodes) + 1))
        assert len(list(source_paths(g))) == 1


def test_summary_groups_by_depth(fixture_nets):
    summary = graph_summary(to_graph(fixture_nets[4]))
    assert summary == {1: ["3C,1"], 2: ["3C,2"], 3: ["3C,3"], 4: ["32F,4"], 5: ["330F,5"], 6: ["1C,6"]}


# --------------------------------------------------------------------------
# DOT

def _dot_labels(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs is not None and len(graphs) == 1
    g = graphs[0]
    labels = [n.get_label().strip('"') for n in g.get_nodes() if n.get_name() not in ("node", "edge", "graph")]
    return g, labels


def test_single_conv_dot():
    net = NetworkTopology.sequential("one", (1, 8, 8), [("c", CONV3), ("o", LayerSpec.output())])
    text = to_dot(to_graph(net))
    g, labels = _dot_labels(text)
    assert labels == ["IN", "3C,1", "OUT"]
    assert len(g.get_edges()) == 2


def test_net2_dot_has_seven_nodes_in_order(fixture_nets):
    text = to_dot(to_graph(fixture_nets[1]))
    _, labels = _dot_labels(text)
    assert labels == ["IN", "3C,1", "3C2P,2", "3C2P,3", "3C2P,4", "1C,5", "OUT"]


def test_dot_parses_for_every_fixture_and_merge(fixture_nets, merged_80x264):
    from spdnn.merge import contract, parallelize
    contracted, _ = contract(parallelize([to_graph(n) for n in fixture_nets]))
    for g in [*(to_graph(n) for n in fixture_nets), contracted]:
        text = to_dot(g)
        parsed, labels = _dot_labels(text)
        assert len(labels) == len(g.nodes)
        assert len(parsed.get_edges()) == len(set(g.edges))
        assert to_dot(g) == text


def test_dot_quotes_odd_names():
    net = NetworkTopology.sequential("plain", (1, 8, 8), [("c", CONV3), ("o", LayerSpec.output())])
    g = replace(to_graph(net), name='we"ird {x}')
    parsed = pydot.graph_from_dot_data(to_dot(g))
    assert parsed is not None and len(parsed[0].get_edges()) == 2
