"""Exception hierarchy shared by every stage of the toolkit."""

from __future__ import annotations


class SpdnnError(Exception):
    """Base class for all toolkit errors."""


class TopologySyntaxError(SpdnnError):
    """Topology text is not well-formed JSON."""

    def __init__(self, msg: str, position: int, line: int, column: int):
        super().__init__(f"{msg} at line {line} column {column} (char {position})")
        self.position = position
        self.line = line
        self.column = column


class TopologyError(SpdnnError):
    """A topology violates a structural rule; ``node_id`` names the culprit."""

    def __init__(self, msg: str, node_id: str | None = None):
        if node_id is not None:
            msg = f"node {node_id!r}: {msg}"
        super().__init__(msg)
        self.node_id = node_id


class ShapeError(SpdnnError):
    """Shape inference or a tensor operation received incompatible sizes."""

    def __init__(self, msg: str, node_id: str | None = None):
        if node_id is not None:
            msg = f"node {node_id!r}: {msg}"
        super().__init__(msg)
        self.node_id = node_id


class GraphError(SpdnnError):
    """Conversion to or manipulation of a labeled graph failed."""


class MergeError(SpdnnError):
    """Parallelization, contraction or back-conversion failed."""


class NumericError(SpdnnError):
    """Training diverged or produced non-finite values."""

    def __init__(self, msg: str, step: int | None = None):
        if step is not None:
            msg = f"step {step}: {msg}"
        super().__init__(msg)
        self.step = step


class ImageFormatError(SpdnnError):
    """A PGM file is malformed; ``offset`` is the byte position of the fault."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class WeightsFormatError(SpdnnError):
    """A weights file is malformed or does not match its topology."""
