"""
``icb`` command line: compress, decompress, gen, bench, serve.

Every flag can also be set through an ``ICB_``-prefixed environment variable
(``--batch-sizes`` -> ``ICB_BATCH_SIZES``), loaded from ``.env`` when present.
An explicit flag wins over a recorded ``--config`` file, which wins over the
environment, which wins over the built-in defaults.

Every run emits its resolved RunConfig: next to ``--out`` as
``<name>.run.json`` when there is an output file, otherwise as one JSON line
on stderr. Either form replays with ``--config``.
"""
import argparse
import asyncio
import json
import os
import signal
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional

from pydantic import ValidationError as PydanticValidationError

from iot_compression_bench import __version__
from iot_compression_bench.codec import available_codecs, default_codec, get_codec
from iot_compression_bench.config import (
    build_run_config,
    load_environment,
    load_run_config,
    parse_bool,
    parse_int_list,
    parse_modes,
    parse_rate,
    resolve,
)
from iot_compression_bench.constants import (
    DEFAULT_ADDR,
    DEFAULT_BATCH_SIZES,
    DEFAULT_CONTROL_ADDR,
    DEFAULT_INSTRUCTIONS_PER_BYTE,
    DEFAULT_QUEUE_CAPACITY,
    DEFAULT_RATE_BITS_PER_S,
    DEFAULT_REPETITIONS,
    DEFAULT_SEED,
    DEFAULT_TUPLES,
    DEFAULT_TX_COST_PER_BIT,
)
from iot_compression_bench.custom_logger import get_logger, set_level
from iot_compression_bench.energy_model import annotate_report
from iot_compression_bench.exceptions import (
    BenchError,
    CodecError,
    FramingError,
    IntegrityError,
    SinkRequestError,
    TransportError,
    ValidationError,
)
from iot_compression_bench.harness import compare_with_reference, emit_csv, emit_json, sweep
from iot_compression_bench.models import (
    ALL_MODES,
    CodecStats,
    DatasetSpec,
    EnergyParams,
    LinkKind,
    LinkSpec,
    Mode,
    RunConfig,
    SweepReport,
)
from iot_compression_bench.record_model import Dataset, write_redd
from iot_compression_bench.sink import SinkClient, SinkServer
from iot_compression_bench.utils import sidecar_path, write_json_record, write_report

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_TRANSPORT = 4
EXIT_INTEGRITY = 5
EXIT_CORRUPTION = 6

# Port 0 lets an in-process tcp sink pick a free port.
LOCAL_TCP_ADDR = "127.0.0.1:0"


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _parse_link_kind(text: str) -> LinkKind:
    try:
        return LinkKind(text.strip().lower())
    except ValueError:
        raise ValidationError(f"unknown link kind {text!r}") from None


def _parse_format(text: str) -> str:
    lowered = text.strip().lower()
    if lowered not in ("csv", "json"):
        raise ValidationError(f"unknown format {text!r}")
    return lowered


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="icb", description="IoT telemetry lossless-compression benchmark")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (ICB_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_ArgumentParser)

    def add_common(p):
        p.add_argument("--config", default=None, help="replay a recorded run configuration")

    def add_codec(p):
        p.add_argument("--codec", default=None, help=f"one of {', '.join(available_codecs())}")

    def add_io(p):
        p.add_argument("--input", "-i", default=None, help="input file")
        p.add_argument("--out", "-o", default=None, help="output file")

    p = sub.add_parser("compress", help="compress a file into one raw block")
    add_common(p)
    add_io(p)
    add_codec(p)

    p = sub.add_parser("decompress", help="decompress one raw block")
    add_common(p)
    add_io(p)
    add_codec(p)

    p = sub.add_parser("gen", help="write a synthetic REDD file")
    add_common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tuples", "-n", type=int, default=None)
    p.add_argument("--out", "-o", default=None)

    p = sub.add_parser("bench", help="run the batch size x mode sweep")
    add_common(p)
    p.add_argument("--input", "-i", default=None, help="REDD channel file; synthetic data when omitted")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tuples", "-n", type=int, default=None)
    p.add_argument("--batch-sizes", type=parse_int_list, default=None, help="e.g. 1000,200,100,20")
    p.add_argument("--modes", type=parse_modes, default=None, help="compress,precompressed,raw")
    p.add_argument("--rate", type=parse_rate, default=None, help="link rate in bit/s, K/M/G suffixes")
    p.add_argument("--repetitions", type=int, default=None)
    add_codec(p)
    p.add_argument("--tx-cost-per-bit", type=float, default=None)
    p.add_argument("--instr-per-byte", type=float, default=None)
    p.add_argument("--out", "-o", default=None, help="report file; stdout when omitted")
    p.add_argument("--format", type=_parse_format, default=None, help="csv or json")
    p.add_argument("--link", type=_parse_link_kind, default=None, help="inproc or tcp")
    p.add_argument("--addr", default=None, help="host:port for tcp, channel name for inproc")
    p.add_argument("--queue-capacity", type=int, default=None)
    p.add_argument("--pipelined", action="store_true", default=None, help="compress in a worker thread")
    p.add_argument("--remote", action="store_true", default=None, help="target an `icb serve` sink")
    p.add_argument("--control-addr", default=None, help="control API host:port of the remote sink")

    # The sink only receives; the sensor side paces the link.
    p = sub.add_parser("serve", help="run a tcp sink until interrupted")
    add_common(p)
    p.add_argument("--addr", default=None)
    p.add_argument("--control-addr", default=None)
    add_codec(p)
    return parser


def _required(value: Optional[str], flag: str) -> str:
    if not value:
        raise ValidationError(f"--{flag.replace('_', '-')} is required (or set ICB_{flag.upper()})")
    return value


def _recorded(args, subcommand: str) -> Optional[RunConfig]:
    if not getattr(args, "config", None):
        return None
    base = load_run_config(args.config)
    if base.subcommand != subcommand:
        raise ValidationError(f"{args.config} records a {base.subcommand} run, not {subcommand}")
    return base


def _picker(args, base: Optional[RunConfig]) -> Callable:
    """Resolves one flag: explicit, else the recorded value, else environment, else default."""

    def pick(flag: str, parse: Callable, default, recorded=None):
        explicit = getattr(args, flag, None)
        if base is not None and recorded is not None:
            return explicit if explicit is not None else recorded
        return resolve(flag, explicit, parse, default)

    return pick


def bench_config(args) -> RunConfig:
    """Merges flags, a recorded config, the environment and defaults into a RunConfig."""
    base = _recorded(args, "bench")
    pick = _picker(args, base)

    kind = pick("link", _parse_link_kind, LinkKind.INPROC, base and base.link.kind)
    remote = pick("remote", parse_bool, False, base and base.remote)
    if kind is LinkKind.TCP:
        default_addr = DEFAULT_ADDR if remote else LOCAL_TCP_ADDR
    else:
        default_addr = "sink"
    link = LinkSpec(
        kind=kind,
        address=pick("addr", str, default_addr, base and base.link.address),
        rate_bits_per_s=pick("rate", parse_rate, DEFAULT_RATE_BITS_PER_S, base and base.link.rate_bits_per_s),
        send_queue_capacity=pick("queue_capacity", int, DEFAULT_QUEUE_CAPACITY,
                                 base and base.link.send_queue_capacity),
    )
    dataset = DatasetSpec(
        path=pick("input", str, None, base and base.dataset.path),
        seed=pick("seed", int, DEFAULT_SEED, base and base.dataset.seed),
        tuples=pick("tuples", int, DEFAULT_TUPLES, base and base.dataset.tuples),
        **({"profile": base.dataset.profile} if base is not None else {}),
    )
    energy = EnergyParams(
        tx_cost_per_bit=pick("tx_cost_per_bit", float, DEFAULT_TX_COST_PER_BIT,
                             base and base.energy.tx_cost_per_bit),
        instructions_per_byte=pick("instr_per_byte", float, DEFAULT_INSTRUCTIONS_PER_BYTE,
                                   base and base.energy.instructions_per_byte),
    )
    return build_run_config(
        subcommand="bench",
        dataset=dataset,
        batch_sizes=pick("batch_sizes", parse_int_list, list(DEFAULT_BATCH_SIZES), base and base.batch_sizes),
        modes=pick("modes", parse_modes, list(ALL_MODES), base and base.modes),
        link=link,
        remote=remote,
        control_addr=pick("control_addr", str, DEFAULT_CONTROL_ADDR if remote else None,
                          base and base.control_addr),
        repetitions=pick("repetitions", int, DEFAULT_REPETITIONS, base and base.repetitions),
        codec=pick("codec", str, default_codec().name, base and base.codec),
        pipelined=pick("pipelined", parse_bool, False, base and base.pipelined),
        energy=energy,
        out=pick("out", str, None, base and base.out),
        format=pick("format", _parse_format, "csv", base and base.format),
    )


def codec_config(args, subcommand: str) -> RunConfig:
    """RunConfig of a ``compress`` or ``decompress`` run."""
    base = _recorded(args, subcommand)
    pick = _picker(args, base)
    return build_run_config(
        subcommand=subcommand,
        in_path=_required(pick("input", str, None, base and base.in_path), "input"),
        out=_required(pick("out", str, None, base and base.out), "out"),
        codec=pick("codec", str, default_codec().name, base and base.codec),
    )


def gen_config(args) -> RunConfig:
    base = _recorded(args, "gen")
    pick = _picker(args, base)
    dataset = DatasetSpec(
        seed=pick("seed", int, DEFAULT_SEED, base and base.dataset.seed),
        tuples=pick("tuples", int, DEFAULT_TUPLES, base and base.dataset.tuples),
        **({"profile": base.dataset.profile} if base is not None else {}),
    )
    return build_run_config(
        subcommand="gen",
        dataset=dataset,
        out=_required(pick("out", str, None, base and base.out), "out"),
    )


def serve_config(args) -> RunConfig:
    base = _recorded(args, "serve")
    pick = _picker(args, base)
    return build_run_config(
        subcommand="serve",
        link=LinkSpec(kind=LinkKind.TCP, address=pick("addr", str, DEFAULT_ADDR, base and base.link.address)),
        control_addr=pick("control_addr", str, DEFAULT_CONTROL_ADDR, base and base.control_addr),
        codec=pick("codec", str, default_codec().name, base and base.codec),
    )


def emit_run_config(config: RunConfig, **extra) -> None:
    """Writes the run record beside ``config.out``, or as one JSON line on stderr."""
    record = {"config": config.model_dump(mode="json"), **extra}
    if config.out:
        path = sidecar_path(config.out)
        write_json_record(record, path)
        logger.info(f"Run record written to {path}")
    else:
        sys.stderr.write(json.dumps(record) + "\n")
        sys.stderr.flush()


def _load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.path:
        return Dataset.from_file(spec.path)
    return Dataset.synthetic(spec.seed, spec.tuples, spec.profile)


async def run_bench(config: RunConfig) -> SweepReport:
    """Runs the sweep described by ``config`` and adds the energy columns when possible."""
    data = _load_dataset(config.dataset)
    codec = get_codec(config.codec)
    kwargs = dict(
        batch_sizes=config.batch_sizes,
        link=config.link,
        repetitions=config.repetitions,
        codec=codec,
        modes=config.modes,
        pipelined=config.pipelined,
    )
    if config.remote:
        if config.link.kind is not LinkKind.TCP:
            raise ValidationError("--remote needs --link tcp")
        async with SinkClient(config.control_addr or DEFAULT_CONTROL_ADDR) as client:
            report = await sweep(data, remote=client, **kwargs)
    else:
        report = await sweep(data, **kwargs)

    has_compressed = {Mode.COMPRESS_AND_TRANSMIT, Mode.PRECOMPRESSED_TRANSMIT} & set(config.modes)
    if Mode.RAW_TRANSMIT in config.modes and has_compressed:
        report = annotate_report(report, config.energy)
    return report


def cmd_bench(args) -> int:
    config = bench_config(args)
    report = asyncio.run(run_bench(config))
    rendered = emit_json(report) if config.format == "json" else emit_csv(report)
    if config.out:
        write_report(rendered, config.out)
        logger.info(f"Report written to {config.out}")
    else:
        sys.stdout.write(rendered)
    emit_run_config(
        config,
        environment=report.environment.model_dump(mode="json"),
        reference_comparison=compare_with_reference(report),
    )
    return EXIT_OK


def _stats_line(codec: str, raw_len: int, block_len: int, elapsed: float) -> str:
    defined = raw_len > 0
    return CodecStats(
        codec=codec,
        input_bytes=raw_len,
        output_bytes=block_len,
        elapsed=elapsed,
        ratio=raw_len / block_len if defined else 0.0,
        ratio_defined=defined,
    ).model_dump_json()


def cmd_compress(args) -> int:
    config = codec_config(args, "compress")
    codec = get_codec(config.codec)
    raw = Path(config.in_path).read_bytes()
    started = time.perf_counter()
    block = codec.compress(raw)
    elapsed = time.perf_counter() - started
    Path(config.out).write_bytes(block)
    print(_stats_line(codec.name, len(raw), len(block), elapsed))
    emit_run_config(config)
    return EXIT_OK


def cmd_decompress(args) -> int:
    config = codec_config(args, "decompress")
    codec = get_codec(config.codec)
    block = Path(config.in_path).read_bytes()
    started = time.perf_counter()
    raw = codec.decompress(block)
    elapsed = time.perf_counter() - started
    Path(config.out).write_bytes(raw)
    print(_stats_line(codec.name, len(raw), len(block), elapsed))
    emit_run_config(config)
    return EXIT_OK


def cmd_gen(args) -> int:
    config = gen_config(args)
    data = Dataset.synthetic(config.dataset.seed, config.dataset.tuples, config.dataset.profile)
    written = write_redd(data, config.out)
    logger.info(f"Wrote {written} readings to {config.out}")
    emit_run_config(config)
    return EXIT_OK


async def serve(config: RunConfig) -> None:
    server = SinkServer(config.link, config.control_addr, get_codec(config.codec))
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    final = await server.serve_until(stop)
    print(final.model_dump_json())


def cmd_serve(args) -> int:
    config = serve_config(args)
    emit_run_config(config)
    asyncio.run(serve(config))
    return EXIT_OK


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "gen": cmd_gen,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ValidationError, FramingError)):
        return EXIT_VALIDATION
    if isinstance(error, CodecError):
        return EXIT_CORRUPTION
    if isinstance(error, IntegrityError):
        return EXIT_INTEGRITY
    if isinstance(error, (TransportError, SinkRequestError)):
        return EXIT_TRANSPORT
    if isinstance(error, OSError):
        return EXIT_IO
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    load_environment()
    if os.getenv("ICB_LOG_LEVEL"):
        set_level(os.environ["ICB_LOG_LEVEL"])
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            set_level(args.log_level)
        return COMMANDS[args.subcommand](args)
    except (BenchError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{type(e).__name__}: {e}")
        return code
    except PydanticValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
