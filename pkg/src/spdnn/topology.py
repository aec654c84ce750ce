"""Network intermediate representation.

A :class:`NetworkTopology` is a named DAG of layer nodes fed by a single
image input.  Node ``"input"`` is reserved and stands for that image.
Topologies are immutable; every constructor validates.

The JSON form written by :func:`serialize_topology` is canonical: nodes in
stable topological order, keys in the order of ``_NODE_KEYS``, a chain
edge (``inputs == [previous node]``) left implicit.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import ShapeError, TopologyError, TopologySyntaxError

INPUT_ID = "input"

_ID_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")

Shape3 = tuple[int, int, int]


class LayerKind(str, enum.Enum):
    CONV = "conv"
    DENSE = "dense"
    MAXPOOL = "maxpool"
    UNPOOL = "unpool"
    CONCAT = "concat"
    RESHAPE = "reshape"
    OUTPUT = "output"


class Padding(str, enum.Enum):
    SAME = "same"
    VALID = "valid"


class Activation(str, enum.Enum):
    NONE = "none"
    RELU = "relu"
    SIGMOID = "sigmoid"


class Align(str, enum.Enum):
    UP = "up"
    DOWN = "down"


# Which optional fields each kind carries.
_FIELDS_BY_KIND: dict[LayerKind, frozenset[str]] = {
    LayerKind.CONV: frozenset({"kernel", "channels", "padding", "activation", "batch_norm"}),
    LayerKind.DENSE: frozenset({"units", "activation", "dropout"}),
    LayerKind.MAXPOOL: frozenset({"factor"}),
    LayerKind.UNPOOL: frozenset({"factor"}),
    LayerKind.CONCAT: frozenset({"align"}),
    LayerKind.RESHAPE: frozenset({"target_shape"}),
    LayerKind.OUTPUT: frozenset(),
}
_ALL_FIELDS = (
    "kernel", "channels", "units", "factor", "padding", "activation",
    "batch_norm", "dropout", "align", "target_shape",
)


@dataclass(frozen=True)
class LayerSpec:
    """Structural description of one layer.

    Only the fields that belong to ``kind`` may be set; the rest stay
    ``None``.  Use the ``conv``/``dense``/... classmethods rather than the
    raw constructor.
    """

    kind: LayerKind
    kernel: int | None = None
    channels: int | None = None
    units: int | None = None
    factor: int | None = None
    padding: Padding | None = None
    activation: Activation | None = None
    batch_norm: bool | None = None
    dropout: float | None = None
    align: Align | None = None
    target_shape: Shape3 | None = None

    def __post_init__(self):
        kind = LayerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        allowed = _FIELDS_BY_KIND[kind]
        for name in _ALL_FIELDS:
            value = getattr(self, name)
            if name in allowed and value is None:
                raise TopologyError(f"{kind.value} layer requires field {name!r}")
            if name not in allowed and value is not None:
                raise TopologyError(f"field {name!r} is not valid for a {kind.value} layer")
        if kind is LayerKind.CONV:
            object.__setattr__(self, "padding", Padding(self.padding))
            object.__setattr__(self, "activation", Activation(self.activation))
            _positive("kernel", self.kernel)
            _positive("channels", self.channels)
            if not isinstance(self.batch_norm, bool):
                raise TopologyError("batch_norm must be a boolean")
            if self.padding is Padding.SAME and self.kernel % 2 == 0:
                raise TopologyError(f"same padding needs an odd kernel, got {self.kernel}")
        elif kind is LayerKind.DENSE:
            object.__setattr__(self, "activation", Activation(self.activation))
            _positive("units", self.units)
            if isinstance(self.dropout, bool) or not isinstance(self.dropout, (int, float)):
                raise TopologyError("dropout must be a real number")
            object.__setattr__(self, "dropout", float(self.dropout))
            if not 0.0 <= self.dropout < 1.0:
                raise TopologyError(f"dropout must lie in [0, 1), got {self.dropout}")
        elif kind in (LayerKind.MAXPOOL, LayerKind.UNPOOL):
            _positive("factor", self.factor)
            if self.factor < 2:
                raise TopologyError(f"{kind.value} factor must be >= 2, got {self.factor}")
        elif kind is LayerKind.CONCAT:
            object.__setattr__(self, "align", Align(self.align))
        elif kind is LayerKind.RESHAPE:
            shape = tuple(self.target_shape)
            if len(shape) != 3:
                raise TopologyError("reshape target must be a channels x height x width triple")
            for d in shape:
                _positive("target_shape entry", d)
            object.__setattr__(self, "target_shape", shape)

    @classmethod
    def conv(cls, kernel: int, channels: int, *, padding: str = "same",
             activation: str = "relu", batch_norm: bool = True) -> LayerSpec:
        return cls(LayerKind.CONV, kernel=kernel, channels=channels, padding=Padding(padding),
                   activation=Activation(activation), batch_norm=batch_norm)

    @classmethod
    def dense(cls, units: int, *, activation: str = "relu", dropout: float = 0.0) -> LayerSpec:
        return cls(LayerKind.DENSE, units=units, activation=Activation(activation), dropout=dropout)

    @classmethod
    def maxpool(cls, factor: int) -> LayerSpec:
        return cls(LayerKind.MAXPOOL, factor=factor)

    @classmethod
    def unpool(cls, factor: int) -> LayerSpec:
        return cls(LayerKind.UNPOOL, factor=factor)

    @classmethod
    def concat(cls, align: str = "up") -> LayerSpec:
        return cls(LayerKind.CONCAT, align=Align(align))

    @classmethod
    def reshape(cls, target_shape: Iterable[int]) -> LayerSpec:
        return cls(LayerKind.RESHAPE, target_shape=tuple(target_shape))

    @classmethod
    def output(cls) -> LayerSpec:
        return cls(LayerKind.OUTPUT)

    @property
    def has_params(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.DENSE)


def _positive(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise TopologyError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class Node:
    id: str
    spec: LayerSpec
    inputs: tuple[str, ...]


@dataclass(frozen=True)
class NetworkTopology:
    name: str
    input: Shape3
    nodes: tuple[Node, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(self.input))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        _validate(self)
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    def __getitem__(self, node_id: str) -> Node:
        return self._index[node_id]

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def output_id(self) -> str:
        return next(n.id for n in self.nodes if n.spec.kind is LayerKind.OUTPUT)

    @property
    def is_sequential(self) -> bool:
        return all(len(n.inputs) == 1 for n in self.nodes)

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {INPUT_ID: []}
        for n in self.nodes:
            out.setdefault(n.id, [])
        for n in self.nodes:
            for src in n.inputs:
                out[src].append(n.id)
        return out

    def structure(self) -> tuple:
        """Id-free description: equal for topologies that differ only in naming."""
        order = {INPUT_ID: -1}
        order.update({n.id: i for i, n in enumerate(self.nodes)})
        return (self.input, tuple((n.spec, tuple(order[s] for s in n.inputs)) for n in self.nodes))

    def structurally_equal(self, other: NetworkTopology) -> bool:
        return self.structure() == other.structure()

    @classmethod
    def sequential(cls, name: str, input_shape: Shape3, specs: Iterable[tuple[str, LayerSpec]]) -> NetworkTopology:
        nodes, prev = [], INPUT_ID
        for node_id, spec in specs:
            nodes.append(Node(node_id, spec, (prev,)))
            prev = node_id
        return cls(name, tuple(input_shape), tuple(nodes))


def _validate(net: NetworkTopology) -> None:
    if not isinstance(net.name, str) or not _ID_RE.match(net.name):
        raise TopologyError(f"invalid network name {net.name!r}")
    if len(net.input) != 3:
        raise TopologyError("input must be a channels x height x width triple")
    for d in net.input:
        _positive("input dimension", d)
    if not net.nodes:
        raise TopologyError("network has no nodes")

    ids: set[str] = set()
    for n in net.nodes:
        if not isinstance(n.id, str) or not _ID_RE.match(n.id):
            raise TopologyError(f"invalid node id {n.id!r}")
        if n.id == INPUT_ID:
            raise TopologyError(f"{INPUT_ID!r} is reserved for the network input", n.id)
        if n.id in ids:
            raise TopologyError("duplicate node id", n.id)
        ids.add(n.id)

    outputs = []
    for n in net.nodes:
        if not isinstance(n.spec, LayerSpec):
            raise TopologyError("spec must be a LayerSpec", n.id)
        for src in n.inputs:
            if src != INPUT_ID and src not in ids:
                raise TopologyError(f"unknown input id {src!r}", n.id)
        if len(set(n.inputs)) != len(n.inputs):
            raise TopologyError("repeated input id", n.id)
        if n.spec.kind is LayerKind.CONCAT:
            if len(n.inputs) < 2:
                raise TopologyError("concat needs at least two inputs", n.id)
        elif len(n.inputs) != 1:
            raise TopologyError(f"{n.spec.kind.value} takes exactly one input, got {len(n.inputs)}", n.id)
        if n.spec.kind is LayerKind.OUTPUT:
            outputs.append(n.id)
    if len(outputs) != 1:
        raise TopologyError(f"exactly one output node required, found {len(outputs)}")
    for n in net.nodes:
        if outputs[0] in n.inputs:
            raise TopologyError("the output node cannot feed another node", n.id)

    # Every node has an input and the graph is acyclic, so everything traces back to "input".
    topological_order(net.nodes)


def topological_order(nodes: Iterable[Node]) -> list[Node]:
    """Stable Kahn ordering: among ready nodes the earliest listed goes first."""
    nodes = list(nodes)
    position = {n.id: i for i, n in enumerate(nodes)}
    pending = {n.id: sum(1 for s in n.inputs if s != INPUT_ID) for n in nodes}
    users: dict[str, list[str]] = {n.id: [] for n in nodes}
    for n in nodes:
        for s in n.inputs:
            if s != INPUT_ID:
                users[s].append(n.id)
    ready = [position[n.id] for n in nodes if pending[n.id] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        n = nodes[heapq.heappop(ready)]
        out.append(n)
        for u in users[n.id]:
            pending[u] -= 1
            if pending[u] == 0:
                heapq.heappush(ready, position[u])
    if len(out) != len(nodes):
        stuck = sorted((nid for nid, c in pending.items() if c > 0), key=position.get)
        raise TopologyError("cycle detected", stuck[0])
    return out


# --------------------------------------------------------------------------
# JSON form

_OPS = {k.value: k for k in LayerKind}
_NODE_KEYS = ("id", "op", "inputs", "kernel", "channels", "units", "factor", "padding",
              "activation", "batchnorm", "dropout", "align", "shape")
_JSON_TO_FIELD = {
    "kernel": "kernel", "channels": "channels", "units": "units", "factor": "factor",
    "padding": "padding", "activation": "activation", "batchnorm": "batch_norm",
    "dropout": "dropout", "align": "align", "shape": "target_shape",
}
_FIELD_TO_JSON = {v: k for k, v in _JSON_TO_FIELD.items()}
_DEFAULTS = {
    LayerKind.CONV: {"padding": "same", "activation": "none", "batch_norm": False},
    LayerKind.DENSE: {"activation": "none", "dropout": 0.0},
    LayerKind.CONCAT: {"align": "up"},
}
_ENUM_FIELDS = {"padding": Padding, "activation": Activation, "align": Align}


def parse_topology(text: str) -> NetworkTopology:
    """Parse and validate topology JSON.

    Omitted optional keys take their defaults (conv: same padding, no
    activation, no batch norm; dense: no activation, dropout 0; concat:
    align up).  Nodes are returned in stable topological order.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologySyntaxError(exc.msg, exc.pos, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise TopologyError("top level must be an object")
    unknown = set(doc) - {"name", "input", "nodes"}
    if unknown:
        raise TopologyError(f"unknown top-level keys {sorted(unknown)}")
    for key in ("name", "input", "nodes"):
        if key not in doc:
            raise TopologyError(f"missing top-level key {key!r}")
    if not isinstance(doc["input"], list) or not all(_is_int(v) for v in doc["input"]):
        raise TopologyError("input must be an array of three integers")
    if not isinstance(doc["nodes"], list):
        raise TopologyError("nodes must be an array")

    nodes = []
    prev = INPUT_ID
    for i, raw in enumerate(doc["nodes"]):
        node = _parse_node(raw, i, prev)
        nodes.append(node)
        prev = node.id
    net = NetworkTopology(doc["name"], tuple(doc["input"]), tuple(nodes))
    ordered = tuple(topological_order(net.nodes))
    if ordered != net.nodes:
        net = NetworkTopology(net.name, net.input, ordered)
    return net


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_node(raw, index: int, prev: str) -> Node:
    if not isinstance(raw, dict):
        raise TopologyError(f"node #{index} must be an object")
    node_id = raw.get("id")
    if not isinstance(node_id, str):
        raise TopologyError(f"node #{index} lacks a string 'id'")
    unknown = set(raw) - set(_NODE_KEYS)
    if unknown:
        raise TopologyError(f"unknown keys {sorted(unknown)}", node_id)
    op = raw.get("op")
    if op not in _OPS:
        raise TopologyError(f"unknown op {op!r}", node_id)
    kind = _OPS[op]
    inputs = raw.get("inputs", [prev])
    if not isinstance(inputs, list) or not all(isinstance(s, str) for s in inputs):
        raise TopologyError("inputs must be an array of ids", node_id)

    kwargs = dict(_DEFAULTS.get(kind, {}))
    for key, value in raw.items():
        if key in ("id", "op", "inputs"):
            continue
        name = _JSON_TO_FIELD[key]
        if name not in _FIELDS_BY_KIND[kind]:
            raise TopologyError(f"key {key!r} is not valid for op {op!r}", node_id)
        kwargs[name] = value
    for name, enum_cls in _ENUM_FIELDS.items():
        if name in kwargs:
            try:
                kwargs[name] = enum_cls(kwargs[name])
            except ValueError:
                raise TopologyError(f"bad value {kwargs[name]!r} for {_FIELD_TO_JSON[name]!r}", node_id) from None
    if "target_shape" in kwargs:
        shape = kwargs["target_shape"]
        if not isinstance(shape, list) or not all(_is_int(v) for v in shape):
            raise TopologyError("shape must be an array of integers", node_id)
        kwargs["target_shape"] = tuple(shape)
    try:
        spec = LayerSpec(kind, **kwargs)
    except TopologyError as exc:
        raise TopologyError(str(exc), node_id) from None
    return Node(node_id, spec, tuple(inputs))


def topology_to_dict(net: NetworkTopology) -> dict:
    nodes = []
    prev = INPUT_ID
    for n in topological_order(net.nodes):
        d: dict = {"id": n.id, "op": n.spec.kind.value}
        if list(n.inputs) != [prev]:
            d["inputs"] = list(n.inputs)
        for key in _NODE_KEYS[3:]:
            value = getattr(n.spec, _JSON_TO_FIELD[key])
            if value is None:
                continue
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            d[key] = value
        nodes.append(d)
        prev = n.id
    return {"name": net.name, "input": list(net.input), "nodes": nodes}


def serialize_topology(net: NetworkTopology) -> str:
    return json.dumps(topology_to_dict(net), indent=2, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------
# Shape inference

ShapeTable = dict[str, Shape3]


def infer_shapes(net: NetworkTopology, input_shape: Shape3 | None = None) -> ShapeTable:
    """Map every node id to its output ``(channels, height, width)``.

    ``input_shape`` overrides the topology's declared input.
    """
    shapes: dict[str, Shape3] = {INPUT_ID: tuple(input_shape or net.input)}
    for n in net.nodes:
        shapes[n.id] = _node_shape(n, [shapes[s] for s in n.inputs])
    del shapes[INPUT_ID]
    return shapes


def _node_shape(n: Node, ins: list[Shape3]) -> Shape3:
    spec = n.spec
    c, h, w = ins[0]
    kind = spec.kind
    if kind is LayerKind.CONV:
        if spec.padding is Padding.SAME:
            return (spec.channels, h, w)
        k = spec.kernel
        for dim, size in (("height", h), ("width", w)):
            if size < k:
                raise ShapeError(f"{dim} {size} is smaller than kernel {k}", n.id)
        return (spec.channels, h - k + 1, w - k + 1)
    if kind is LayerKind.MAXPOOL:
        f = spec.factor
        for dim, size in (("height", h), ("width", w)):
            if size % f:
                raise ShapeError(f"maxpool factor {f}: {dim} {size} is not divisible by {f}", n.id)
        return (c, h // f, w // f)
    if kind is LayerKind.UNPOOL:
        return (c, h * spec.factor, w * spec.factor)
    if kind is LayerKind.DENSE:
        return (spec.units, 1, 1)
    if kind is LayerKind.RESHAPE:
        if math.prod(spec.target_shape) != c * h * w:
            raise ShapeError(
                f"reshape {c}x{h}x{w} -> {'x'.join(map(str, spec.target_shape))} changes element count", n.id)
        return spec.target_shape
    if kind is LayerKind.CONCAT:
        spatial = {(s[1], s[2]) for s in ins}
        if len(spatial) != 1:
            sizes = ", ".join(f"{s[1]}x{s[2]}" for s in ins)
            raise ShapeError(f"concat inputs disagree spatially ({sizes})", n.id)
        return (sum(s[0] for s in ins), h, w)
    return (c, h, w)


def format_shape(shape: Shape3) -> str:
    return "×".join(str(d) for d in shape)


# --------------------------------------------------------------------------
# Fixtures

def _hidden_conv() -> LayerSpec:
    return LayerSpec.conv(3, 8, activation="relu", batch_norm=True)


def _head_conv() -> LayerSpec:
    return LayerSpec.conv(1, 1, activation="sigmoid", batch_norm=False)


def fixtures(height: int = 80, width: int = 264) -> list[NetworkTopology]:
    """The eight source networks, built for a ``1 x height x width`` input.

    Networks 1-4 are fully convolutional (no pooling, then 2/4/8 pooling
    after the first conv, undone by one unpool before the head).  Networks
    5-8 mirror them with the last two convs swapped for a 32-unit dense
    layer and a ``(height/8)*(width/8)`` bottleneck that is reshaped and
    unpooled back to full size.
    """
    if height % 8 or width % 8:
        raise ShapeError(f"fixture size {height}x{width} must be divisible by 8")
    shape = (1, height, width)
    nets = []
    for i, pool in enumerate((1, 2, 4, 8)):
        specs = [("c1", _hidden_conv())]
        if pool > 1:
            specs.append(("p1", LayerSpec.maxpool(pool)))
        specs += [("c2", _hidden_conv()), ("c3", _hidden_conv()), ("c4", _hidden_conv())]
        if pool > 1:
            specs.append(("u1", LayerSpec.unpool(pool)))
        specs += [("head", _head_conv()), ("output", LayerSpec.output())]
        nets.append(NetworkTopology.sequential(f"net{i + 1}", shape, specs))
    bottleneck = (height // 8) * (width // 8)
    for i, pool in enumerate((1, 2, 4, 8)):
        specs = [("c1", _hidden_conv())]
        if pool > 1:
            specs.append(("p1", LayerSpec.maxpool(pool)))
        specs += [
            ("c2", _hidden_conv()),
            ("c3", _hidden_conv()),
            ("d1", LayerSpec.dense(32, activation="relu", dropout=0.5)),
            ("d2", LayerSpec.dense(bottleneck, activation="relu")),
            ("r1", LayerSpec.reshape((1, height // 8, width // 8))),
            ("u1", LayerSpec.unpool(8)),
            ("head", _head_conv()),
            ("output", LayerSpec.output()),
        ]
        nets.append(NetworkTopology.sequential(f"net{i + 5}", shape, specs))
    return nets
