"""Command-line entry point: ``spdnn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime or
numeric error.  Files are written to a temporary sibling and renamed only
once complete, so a failed command never leaves partial output behind.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import platform
import statistics
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (GraphError, ImageFormatError, MergeError, NumericError, ShapeError, SpdnnError,
                     TopologyError, TopologySyntaxError, WeightsFormatError)
from .exec import decode_weights, encode_weights, forward, init_params, train_demo
from .graphir import to_dot, to_graph
from .merge import ConcatPolicy, spdnn_merge
from .metrics import compute_metrics, format_report
from .pgm import decode_pgm, encode_pgm, from_unit, to_unit
from .topology import LayerKind, NetworkTopology, fixtures, format_shape, infer_shapes, parse_topology, serialize_topology

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

REFERENCE_SEC_PER_MP = 1.23

_VALIDATION_ERRORS = (TopologyError, TopologySyntaxError, ShapeError, GraphError, MergeError,
                      ImageFormatError, WeightsFormatError, ValueError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (SpdnnError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc


# --------------------------------------------------------------------------
# helpers

def parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts) or min(map(int, parts)) < 1:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def parse_seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def load_topology(path) -> NetworkTopology:
    with stage(f"parse {path}"):
        return parse_topology(Path(path).read_text(encoding="utf-8"))


def _input_shape(net: NetworkTopology, size) -> tuple[int, int, int]:
    if size is None:
        return net.input
    return (net.input[0], size[0], size[1])


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(Path(out), text)


# --------------------------------------------------------------------------
# subcommands

def cmd_fixtures(args) -> int:
    height, width = args.size or (80, 264)
    with stage("fixtures"):
        nets = fixtures(height, width)
    outdir = Path(args.out or "fixtures")
    outdir.mkdir(parents=True, exist_ok=True)
    for net in nets:
        atomic_write(outdir / f"{net.name}.json", serialize_topology(net))
    print(f"wrote {len(nets)} fixtures for 1×{height}×{width} to {outdir}")
    return EXIT_OK


def cmd_parse(args) -> int:
    net = load_topology(args.topology)
    _emit(serialize_topology(net), args.out)
    return EXIT_OK


def cmd_graph(args) -> int:
    net = load_topology(args.topology)
    with stage("graph"):
        dot = to_dot(to_graph(net))
    _emit(dot, args.out)
    return EXIT_OK


def cmd_shapes(args) -> int:
    net = load_topology(args.topology)
    shape = _input_shape(net, args.size)
    with stage("shapes"):
        table = infer_shapes(net, shape)
    width = max(len(n.id) for n in net.nodes)
    lines = [f"{'input'.ljust(width)}  {'':8}  {format_shape(shape)}"]
    for n in net.nodes:
        if n.spec.kind is LayerKind.OUTPUT:
            continue
        lines.append(f"{n.id.ljust(width)}  {n.spec.kind.value:8}  {format_shape(table[n.id])}")
    lines.append(f"output {format_shape(table[net.output_id])}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_merge(args) -> int:
    if len(args.topologies) < 2:
        raise UsageError("merge needs at least two topology files")
    nets = [load_topology(p) for p in args.topologies]
    first = nets[0]
    for path, net in zip(args.topologies[1:], nets[1:]):
        if net.input != first.input:
            raise StageError("merge", MergeError(
                f"input mismatch: {args.topologies[0]} takes {format_shape(first.input)}, "
                f"{path} takes {format_shape(net.input)}"))
    with stage("merge"):
        merged, report = spdnn_merge(nets, ConcatPolicy(args.policy))
    out = Path(args.out or "merged.json")
    report_path = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    atomic_write(out, serialize_topology(merged))
    atomic_write(report_path, report.to_json())
    print(f"contracted {report.source_total} → {report.merged_total} internal nodes; "
          f"{len(report.concat_sites)} concat sites; wrote {out} and {report_path}")
    return EXIT_OK


def _load_params(args, net, shape):
    if args.weights is None:
        return init_params(net, args.seed, shape)
    with stage(f"weights {args.weights}"):
        params = decode_weights(Path(args.weights).read_bytes())
    return params


def cmd_run(args) -> int:
    net = load_topology(args.topology)
    with stage(f"image {args.image}"):
        pixels, maxval = decode_pgm(Path(args.image).read_bytes())
    if net.input[0] != 1:
        raise StageError("run", ShapeError(f"PGM input is single-channel, network expects {net.input[0]}"))
    shape = (1, *pixels.shape)
    params = _load_params(args, net, shape)
    with stage("run"):
        out = forward(net, params, to_unit(pixels, maxval)[None])
    if out.shape[0] != 1:
        raise StageError("run", ShapeError(f"network output has {out.shape[0]} channels, PGM needs 1"))
    atomic_write(Path(args.out or "depth.pgm"), encode_pgm(from_unit(out[0], maxval), maxval))
    return EXIT_OK


def cmd_train_demo(args) -> int:
    net = load_topology(args.topology)
    shape = _input_shape(net, args.size)
    start = time.perf_counter()
    with stage("train-demo"):
        history, params = train_demo(net, args.steps, args.seed, args.lr, args.momentum,
                                     input_shape=shape, return_params=True)
    elapsed = time.perf_counter() - start
    csv = "step,loss\n" + "".join(f"{i},{loss:.17g}\n" for i, loss in enumerate(history))
    _emit(csv, args.out)
    if args.weights_out:
        atomic_write(Path(args.weights_out), encode_weights(params))
    ratio = history[-1] / history[0] if history[0] else float("nan")
    print(f"loss {history[0]:.6f} → {history[-1]:.6f} after {args.steps} steps "
          f"(ratio {ratio:.4f}, {elapsed:.1f} s)", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    images = []
    for path in (args.pred, args.ref):
        with stage(f"image {path}"):
            pixels, maxval = decode_pgm(Path(path).read_bytes())
        images.append(to_unit(pixels, maxval))
    with stage("eval"):
        report = compute_metrics(images[0], images[1])
    sys.stdout.write(format_report({Path(args.pred).stem: report}))
    if args.out:
        atomic_write(Path(args.out), report.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    net = load_topology(args.topology)
    shape = _input_shape(net, args.size)
    with stage("bench"):
        params = init_params(net, args.seed, shape)
        x = np.random.default_rng(args.seed).random(shape)
        forward(net, params, x)  # warm-up
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            forward(net, params, x)
            times.append(time.perf_counter() - t0)
    median = statistics.median(times)
    megapixels = shape[1] * shape[2] / 1e6
    print(f"forward {format_shape(shape)}: median {median:.4f} s over {args.repeats} runs")
    print(f"{median / megapixels:.4f} sec/MP")
    print(f"reference figure: ~ {REFERENCE_SEC_PER_MP} sec/MP (measured on different hardware; "
          f"not comparable)")
    print(f"hardware: {platform.machine()} {platform.processor() or 'unknown cpu'}, "
          f"{os.cpu_count()} logical cpus, Python {platform.python_version()}, numpy {np.__version__}, "
          f"64-bit CPU executor")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdnn", description="Semi-parallel network fusion toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fixtures", help="write the eight source topologies")
    p.add_argument("--out", help="output directory (default: fixtures)")
    p.add_argument("--size", type=parse_size, help="input HxW (default 80x264)")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("parse", help="validate a topology and print its canonical form")
    p.add_argument("topology")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("graph", help="export the labeled graph as DOT")
    p.add_argument("topology")
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("shapes", help="print the inferred shape of every node")
    p.add_argument("topology")
    p.add_argument("--size", type=parse_size)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("merge", help="merge two or more topologies")
    p.add_argument("topologies", nargs="+")
    p.add_argument("--policy", choices=[c.value for c in ConcatPolicy], default="auto")
    p.add_argument("--out", help="merged topology path (default: merged.json)")
    p.add_argument("--report", help="contraction report path (default: <out>.report.json)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("run", help="run a network on a PGM image")
    p.add_argument("topology")
    p.add_argument("image")
    p.add_argument("--weights", help="weights file (default: seeded initialization)")
    p.add_argument("--seed", type=parse_seed, default=0)
    p.add_argument("--out", help="output PGM (default: depth.pgm)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-demo", help="train on the seeded synthetic task, emit loss CSV")
    p.add_argument("topology")
    p.add_argument("--steps", type=positive_int, default=200)
    p.add_argument("--seed", type=parse_seed, default=0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--size", type=parse_size)
    p.add_argument("--out", help="loss CSV path (default: stdout)")
    p.add_argument("--weights-out", help="save trained weights here")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("eval", help="similarity metrics between two PGM images")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time a forward pass in seconds per megapixel")
    p.add_argument("topology")
    p.add_argument("--size", type=parse_size)
    p.add_argument("--seed", type=parse_seed, default=0)
    p.add_argument("--repeats", type=positive_int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def _thread_limit():
    value = os.environ.get("SPDNN_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        print(f"spdnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"spdnn {args.command}: error in {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.exc, _VALIDATION_ERRORS) else EXIT_RUNTIME
    except NumericError as exc:
        print(f"spdnn {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"spdnn {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
