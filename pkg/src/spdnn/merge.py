"""Semi-parallel merging of several networks into one.

The pipeline is ``to_graph`` on every source, :func:`parallelize` under a
shared input and output, :func:`contract` of identically labeled nodes,
and :func:`to_network` which turns the contracted graph back into a
topology, re-materializing pool/unpool/reshape layers from the label
arithmetic and inserting concat layers (with alignment adapters) wherever
several nodes feed one.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import GraphError, MergeError, ShapeError
from .graphir import IN_ID, OUT_ID, GraphNode, LabeledGraph, full_label, to_graph
from .topology import INPUT_ID, LayerKind, LayerSpec, NetworkTopology, Node, infer_shapes


class ConcatPolicy(str, enum.Enum):
    AUTO = "auto"
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class ConcatSite:
    node_id: str
    consumer: str
    align: str
    pool_factors: tuple[int, ...]
    branches: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "node": self.node_id,
            "consumer": self.consumer,
            "align": self.align,
            "pool_factors": list(self.pool_factors),
            "branches": list(self.branches),
        }


@dataclass(frozen=True)
class ContractionReport:
    source_total: int
    merged_total: int
    groups: dict[str, tuple[tuple[str, str], ...]]
    concat_sites: tuple[ConcatSite, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "source_nodes": self.source_total,
            "merged_nodes": self.merged_total,
            "groups": {label: [list(o) for o in origins] for label, origins in self.groups.items()},
            "concat_sites": [s.to_dict() for s in self.concat_sites],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def parallelize(graphs: Sequence[LabeledGraph]) -> LabeledGraph:
    """Place ``graphs`` side by side under one input node and one output node."""
    if len(graphs) < 2:
        raise MergeError(f"parallelize needs at least two graphs, got {len(graphs)}")
    shapes = {g.input_shape for g in graphs}
    if len(shapes) != 1:
        raise MergeError(f"graphs disagree on input shape: {sorted(shapes)}")

    in_origin: set = set()
    out_origin: set = set()
    inner: list[GraphNode] = []
    edges: list[tuple[str, str]] = []
    for i, g in enumerate(graphs):
        prefix = f"{i}:{g.name}/"
        rename = {g.input_id: IN_ID, g.output_id: OUT_ID}
        for n in g.nodes:
            if n.id == g.input_id:
                in_origin |= n.origin
            elif n.id == g.output_id:
                out_origin |= n.origin
            else:
                rename[n.id] = prefix + n.id
                inner.append(replace(n, id=prefix + n.id))
        edges.extend((rename[a], rename[b]) for a, b in g.edges)

    out_depth = max(g.node(g.output_id).depth for g in graphs)
    nodes = (
        GraphNode(IN_ID, "IN", 1, 0, frozenset(in_origin)),
        *inner,
        GraphNode(OUT_ID, "OUT", 1, out_depth, frozenset(out_origin)),
    )
    return LabeledGraph("parallel", graphs[0].input_shape, nodes, tuple(edges))


def label_id(label: str) -> str:
    """Node id for a contracted node; injective because labels contain no ``_``."""
    return label.replace(",", "_")


def contract(g: LabeledGraph) -> tuple[LabeledGraph, ContractionReport]:
    """Merge every group of nodes sharing a full label into one node.

    Edges are the de-duplicated union of the members' edges.  Members must
    agree on their layer payload (activation, batch norm, channels, ...).
    """
    groups: dict[str, list[GraphNode]] = {}
    for n in g.nodes:
        if not n.is_terminal:
            groups.setdefault(full_label(n), []).append(n)

    rename = {g.input_id: IN_ID, g.output_id: OUT_ID}
    merged: list[GraphNode] = []
    for label, members in groups.items():
        payloads = {m.payload for m in members}
        if len(payloads) != 1:
            raise MergeError(f"nodes labeled {label!r} disagree on layer settings: "
                             + "; ".join(sorted(repr(p) for p in payloads)))
        first = members[0]
        origin = frozenset().union(*(m.origin for m in members))
        node = GraphNode(label_id(label), first.structure, first.pool_factor, first.depth, origin, first.payload)
        merged.append(node)
        for m in members:
            rename[m.id] = node.id

    src_in, src_out = g.node(g.input_id), g.node(g.output_id)
    inner = sorted(merged, key=lambda n: (n.depth, full_label(n)))
    nodes = (replace(src_in, id=IN_ID), *inner, replace(src_out, id=OUT_ID))
    order = {n.id: i for i, n in enumerate(nodes)}
    edge_set = {(rename[a], rename[b]) for a, b in g.edges}
    for a, b in edge_set:
        if a == b:
            raise MergeError(f"contraction would create a self-loop on {a!r}")
    edges = tuple(sorted(edge_set, key=lambda e: (order[e[0]], order[e[1]])))
    contracted = LabeledGraph(g.name, g.input_shape, nodes, edges)

    report = ContractionReport(
        source_total=sum(1 for n in g.nodes if not n.is_terminal),
        merged_total=len(merged),
        groups={
            full_label(n): tuple(sorted(n.origin)) for n in inner
        },
    )
    return contracted, report


# --------------------------------------------------------------------------
# Back-conversion


@dataclass(frozen=True)
class _Stream:
    node_id: str   # topology node producing the data
    pool: int      # pooling factor relative to the input image; 0 = flat dense output
    units: int = 0  # element count when flat
    channels: int = 0  # channel count when spatial


class _Builder:
    def __init__(self, g: LabeledGraph, policy: ConcatPolicy):
        self.g = g
        self.policy = policy
        self.height, self.width = g.input_shape[1], g.input_shape[2]
        self.nodes: list[Node] = []
        self.cache: dict[tuple, str] = {}
        self.sites: list[ConcatSite] = []

    def add(self, node_id: str, spec: LayerSpec, inputs: Sequence[str]) -> str:
        self.nodes.append(Node(node_id, spec, tuple(inputs)))
        return node_id

    def adapter(self, stream: _Stream, spec: LayerSpec, suffix: str, pool: int) -> _Stream:
        key = (stream.node_id, spec)
        if key not in self.cache:
            self.cache[key] = self.add(f"{stream.node_id}.{suffix}", spec, [stream.node_id])
        if pool == 0:
            return _Stream(self.cache[key], 0, spec.target_shape[0])
        channels = spec.target_shape[0] if spec.kind is LayerKind.RESHAPE else stream.channels
        return _Stream(self.cache[key], pool, channels=channels)

    def spatial(self, stream: _Stream, prefer: int | None) -> _Stream:
        """Give a flat dense output a spatial layout (1 x H/q x W/q)."""
        if stream.pool:
            return stream
        q = self._reshape_factor(stream, prefer)
        spec = LayerSpec.reshape((1, self.height // q, self.width // q))
        return self.adapter(stream, spec, "reshape", q)

    def _reshape_factor(self, stream: _Stream, prefer: int | None) -> int:
        q = self._try_reshape_factor(stream.units, prefer)
        if q is None:
            raise MergeError(
                f"dense output of {stream.node_id!r} ({stream.units} units) is not an integer pooling "
                f"of the {self.height}x{self.width} input")
        return q

    def _try_reshape_factor(self, units: int, prefer: int | None) -> int | None:
        h, w = self.height, self.width
        if prefer and h % prefer == 0 and w % prefer == 0 and (h // prefer) * (w // prefer) == units:
            return prefer
        ratio, rem = divmod(h * w, units)
        q = math.isqrt(ratio) if rem == 0 else 0
        if q == 0 or q * q != ratio or h % q or w % q:
            return None
        return q

    def flat(self, stream: _Stream) -> _Stream:
        if not stream.pool:
            return stream
        units = stream.channels * (self.height // stream.pool) * (self.width // stream.pool)
        return self.adapter(stream, LayerSpec.reshape((units, 1, 1)), "flat", 0)

    def rescale(self, stream: _Stream, target: int) -> _Stream:
        p = stream.pool
        if p == target:
            return stream
        if target > p:
            if target % p:
                raise MergeError(f"cannot pool {stream.node_id!r} from factor {p} to {target}: non-integer ratio")
            f = target // p
            return self.adapter(stream, LayerSpec.maxpool(f), f"pool{f}", target)
        if p % target:
            raise MergeError(f"cannot unpool {stream.node_id!r} from factor {p} to {target}: non-integer ratio")
        f = p // target
        return self.adapter(stream, LayerSpec.unpool(f), f"unpool{f}", target)

    def join(self, consumer: str, branches: list[tuple[str, _Stream]], default: str,
             prefer: int | None) -> _Stream:
        """Concat several branches (label, stream) into one stream."""
        align = default if self.policy is ConcatPolicy.AUTO else self.policy.value
        dense_consumer = prefer is None
        if dense_consumer and any(not s.pool and self._try_reshape_factor(s.units, None) is None
                                  for _, s in branches):
            # Some dense output has no spatial reading: flatten every branch instead.
            branches = [(lbl, self.flat(s)) for lbl, s in branches]
        if dense_consumer and all(s.pool == 0 for _, s in branches):
            ordered = sorted(branches, key=lambda b: b[0])
            node = self.add(f"{consumer}.cat", LayerSpec.concat(align), [s.node_id for _, s in ordered])
            self.sites.append(ConcatSite(node, consumer, align, tuple(0 for _ in ordered),
                                         tuple(lbl for lbl, _ in ordered)))
            return _Stream(node, 0, sum(s.units for _, s in ordered))
        spatial = [(lbl, self.spatial(s, prefer)) for lbl, s in branches]
        ordered = sorted(spatial, key=lambda b: (b[1].pool, b[0]))
        pools = [s.pool for _, s in ordered]
        target = max(pools) if align == "down" else min(pools)
        aligned = [self.rescale(s, target) for _, s in ordered]
        node = self.add(f"{consumer}.cat", LayerSpec.concat(align), [s.node_id for s in aligned])
        self.sites.append(ConcatSite(node, consumer, align, tuple(pools), tuple(lbl for lbl, _ in ordered)))
        return _Stream(node, target, channels=sum(s.channels for s in aligned))


def to_network(g: LabeledGraph, policy: ConcatPolicy | str = ConcatPolicy.AUTO,
               name: str = "merged") -> NetworkTopology:
    """Convert a contracted graph back into an executable topology."""
    return _build_network(g, ConcatPolicy(policy), name)[0]


def _build_network(g: LabeledGraph, policy: ConcatPolicy, name: str) -> tuple[NetworkTopology, list[ConcatSite]]:
    labels = [full_label(n) for n in g.layer_nodes]
    if len(set(labels)) != len(labels):
        raise MergeError("graph is not contracted: duplicate labels remain")
    b = _Builder(g, policy)
    preds = g.predecessors()
    streams: dict[str, tuple[str, _Stream]] = {
        g.input_id: ("IN", _Stream(INPUT_ID, 1, channels=g.input_shape[0]))}

    for v in g.ordered_nodes()[1:]:
        if not preds[v.id]:
            raise MergeError(f"node {full_label(v)!r} has no predecessor")
        branches = [streams[p] for p in preds[v.id]]
        if v.id == g.output_id:
            _emit_output(b, branches)
            continue
        spec = v.payload
        node_id = label_id(full_label(v))
        if spec is None:
            raise MergeError(f"node {full_label(v)!r} carries no layer settings")
        if spec.kind is LayerKind.DENSE:
            if len(branches) == 1:
                feed = branches[0][1]
            else:
                feed = b.join(node_id, branches, "down", None)
            b.add(node_id, spec, [feed.node_id])
            streams[v.id] = (full_label(v), _Stream(node_id, 0, spec.units))
        elif spec.kind is LayerKind.CONV:
            target = v.pool_factor
            if len(branches) == 1:
                feed = b.spatial(branches[0][1], target)
            else:
                feed = b.join(node_id, branches, "up", target)
            feed = b.rescale(feed, target)
            b.add(node_id, spec, [feed.node_id])
            streams[v.id] = (full_label(v), _Stream(node_id, target, channels=spec.channels))
        else:
            raise MergeError(f"unsupported layer kind {spec.kind.value} in graph")

    try:
        net = NetworkTopology(name, g.input_shape, tuple(b.nodes))
        infer_shapes(net)
    except (ShapeError, GraphError) as exc:
        raise MergeError(f"emitted network fails shape inference: {exc}") from exc
    return net, b.sites


def _emit_output(b: _Builder, branches: list[tuple[str, _Stream]]) -> None:
    if len(branches) == 1:
        feed = b.rescale(b.spatial(branches[0][1], 1), 1)
    else:
        feed = b.rescale(b.join("head", branches, "up", 1), 1)
        head = LayerSpec.conv(1, 1, activation="sigmoid", batch_norm=False)
        feed = _Stream(b.add("head", head, [feed.node_id]), 1)
    b.add("output", LayerSpec.output(), [feed.node_id])


def spdnn_merge(nets: Sequence[NetworkTopology], policy: ConcatPolicy | str = ConcatPolicy.AUTO,
                name: str = "merged") -> tuple[NetworkTopology, ContractionReport]:
    """Merge ``nets`` into a single semi-parallel network."""
    if len(nets) < 2:
        raise MergeError(f"merge needs at least two networks, got {len(nets)}")
    first = nets[0]
    for other in nets[1:]:
        if other.input != first.input:
            raise MergeError(
                f"input mismatch: {first.name!r} takes {list(first.input)}, "
                f"{other.name!r} takes {list(other.input)}")
    graphs = [to_graph(n) for n in nets]
    contracted, report = contract(parallelize(graphs))
    net, sites = _build_network(contracted, ConcatPolicy(policy), name)
    return net, replace(report, concat_sites=tuple(sites))
