"""Labeled-graph form of a network.

Each conv or dense layer becomes a node labeled by its structure (``3C``,
``30F``), the pooling factor of the data entering it (``2P``) and its depth
from the input.  Pool, unpool, reshape and concat layers vanish; their
effect survives in the pooling factor carried to the next node and in the
edges.  Two nodes with the same full label, e.g. ``"3C2P,4"``, are
candidates for contraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import GraphError
from .topology import INPUT_ID, LayerKind, LayerSpec, NetworkTopology, Shape3

IN_ID = "@in"
OUT_ID = "@out"


@dataclass(frozen=True)
class GraphNode:
    id: str
    structure: str
    pool_factor: int
    depth: int
    origin: frozenset[tuple[str, str]] = frozenset()
    # Layer description carried through contraction; None for IN/OUT.
    payload: LayerSpec | None = field(default=None, compare=True)

    @property
    def is_terminal(self) -> bool:
        return self.structure in ("IN", "OUT")

    @property
    def label(self) -> str:
        return full_label(self)


def full_label(n: GraphNode) -> str:
    """``<structure>[<p>P],<depth>``; the terminals are just ``IN``/``OUT``."""
    if n.is_terminal:
        return n.structure
    suffix = f"{n.pool_factor}P" if n.pool_factor > 1 else ""
    return f"{n.structure}{suffix},{n.depth}"


def structure_label(spec: LayerSpec) -> str:
    if spec.kind is LayerKind.CONV:
        return f"{spec.kernel}C"
    if spec.kind is LayerKind.DENSE:
        return f"{spec.units}F"
    raise GraphError(f"{spec.kind.value} layers have no graph node")


@dataclass(frozen=True)
class LabeledGraph:
    name: str
    input_shape: Shape3
    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[str, str], ...]
    input_id: str = IN_ID
    output_id: str = OUT_ID

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError(f"graph {self.name!r} has duplicate node ids")
        known = set(ids)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise GraphError(f"edge {a!r} -> {b!r} references an unknown node")
        if self.input_id not in known or self.output_id not in known:
            raise GraphError(f"graph {self.name!r} lacks its input or output node")

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def node_map(self) -> dict[str, GraphNode]:
        return {n.id: n for n in self.nodes}

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            preds[b].append(a)
        return preds

    def successors(self) -> dict[str, list[str]]:
        succs: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            succs[a].append(b)
        return succs

    @property
    def layer_nodes(self) -> list[GraphNode]:
        return [n for n in self.nodes if not n.is_terminal]

    def ordered_nodes(self) -> list[GraphNode]:
        """Deterministic order: IN first, OUT last, the rest by (depth, label, id)."""
        inner = sorted(self.layer_nodes, key=lambda n: (n.depth, full_label(n), n.id))
        return [self.node(self.input_id), *inner, self.node(self.output_id)]

    def label_edges(self) -> set[tuple[str, str]]:
        nodes = self.node_map()
        return {(full_label(nodes[a]), full_label(nodes[b])) for a, b in self.edges}


@dataclass
class _Stream:
    """Data flowing out of a topology node, seen from the graph."""

    sources: tuple[str, ...]
    pool: int


def to_graph(net: NetworkTopology) -> LabeledGraph:
    """Convert a topology into its labeled graph."""
    h, w = net.input[1], net.input[2]
    nodes = [GraphNode(IN_ID, "IN", 1, 0, frozenset({(net.name, INPUT_ID)}))]
    edges: list[tuple[str, str]] = []
    depth_of = {IN_ID: 0}
    streams: dict[str, _Stream] = {INPUT_ID: _Stream((IN_ID,), 1)}

    def emit(node_id, structure, pool, sources, payload, origin):
        depth = 1 + max(depth_of[s] for s in sources)
        nodes.append(GraphNode(node_id, structure, pool, depth, frozenset({origin}), payload))
        edges.extend((s, node_id) for s in sources)
        depth_of[node_id] = depth

    for n in net.nodes:
        spec = n.spec
        ins = [streams[s] for s in n.inputs]
        first = ins[0]
        kind = spec.kind
        if kind is LayerKind.CONV:
            emit(n.id, structure_label(spec), first.pool, first.sources, spec, (net.name, n.id))
            streams[n.id] = _Stream((n.id,), first.pool)
        elif kind is LayerKind.DENSE:
            emit(n.id, structure_label(spec), 1, first.sources, spec, (net.name, n.id))
            streams[n.id] = _Stream((n.id,), 1)
        elif kind is LayerKind.MAXPOOL:
            streams[n.id] = _Stream(first.sources, first.pool * spec.factor)
        elif kind is LayerKind.UNPOOL:
            if first.pool % spec.factor:
                raise GraphError(
                    f"node {n.id!r}: unpool factor {spec.factor} does not divide "
                    f"accumulated pool factor {first.pool}")
            streams[n.id] = _Stream(first.sources, first.pool // spec.factor)
        elif kind is LayerKind.RESHAPE:
            streams[n.id] = _Stream(first.sources, _reshape_pool(n.id, spec, h, w))
        elif kind is LayerKind.CONCAT:
            pools = {s.pool for s in ins}
            if len(pools) != 1:
                raise GraphError(f"node {n.id!r}: concat inputs carry pool factors {sorted(pools)}")
            sources = tuple(dict.fromkeys(src for s in ins for src in s.sources))
            streams[n.id] = _Stream(sources, pools.pop())
        elif kind is LayerKind.OUTPUT:
            emit(OUT_ID, "OUT", 1, first.sources, None, (net.name, n.id))
    return LabeledGraph(net.name, net.input, tuple(nodes), tuple(edges))


def _reshape_pool(node_id: str, spec: LayerSpec, h: int, w: int) -> int:
    # The reshaped map is read as the input image pooled by some integer factor.
    _, th, tw = spec.target_shape
    if h % th or w % tw or h // th != w // tw:
        raise GraphError(
            f"node {node_id!r}: reshape to {th}x{tw} is not an integer pooling of the {h}x{w} input")
    return h // th


def to_dot(g: LabeledGraph) -> str:
    """Render ``g`` as a DOT digraph whose node text is the full label."""
    order = g.ordered_nodes()
    index = {n.id: i for i, n in enumerate(order)}
    lines = [f"digraph {_quote(g.name)} {{", "  rankdir=LR;", "  node [shape=box];"]
    for n in order:
        lines.append(f"  n{index[n.id]} [label={_quote(full_label(n))}];")
    for a, b in sorted(set(g.edges), key=lambda e: (index[e[0]], index[e[1]])):
        lines.append(f"  n{index[a]} -> n{index[b]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_summary(g: LabeledGraph) -> dict[int, list[str]]:
    """Full labels of the layer nodes grouped by depth."""
    out: dict[int, list[str]] = {}
    for n in g.ordered_nodes():
        if not n.is_terminal:
            out.setdefault(n.depth, []).append(full_label(n))
    return out


def source_paths(g: LabeledGraph) -> Iterable[tuple[str, ...]]:
    """Every IN->OUT path as a sequence of full labels."""
    succs = g.successors()
    nodes = g.node_map()

    def walk(node_id, prefix):
        prefix = prefix + (full_label(nodes[node_id]),)
        if node_id == g.output_id:
            yield prefix
            return
        for nxt in succs[node_id]:
            yield from walk(nxt, prefix)

    yield from walk(g.input_id, ())
