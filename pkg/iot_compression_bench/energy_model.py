"""
Transmit-versus-compute energy model.

Costs are in instruction-energy units: executing one instruction costs 1,
sending one bit costs ``tx_cost_per_bit`` (480 by default). Compression is
charged ``instructions_per_byte`` per input byte. No absolute energy
(joules) is modelled.

Transmission is commonly quoted at about 80% of a sensor node's energy
budget; that share is context only and not an input here.
"""
from fractions import Fraction
from typing import Dict, List, Optional

from iot_compression_bench.custom_logger import get_logger
from iot_compression_bench.exceptions import ValidationError
from iot_compression_bench.models import EnergyEstimate, EnergyParams, Mode, SweepReport, TimingSample

logger = get_logger(__name__)


def estimate(raw_bytes: int, compressed_bytes: int, params: Optional[EnergyParams] = None) -> EnergyEstimate:
    """
    Models sending ``raw_bytes`` uncompressed versus compressing them to
    ``compressed_bytes`` and sending that.

    Args:
        raw_bytes (int): Uncompressed size, at least 1.
        compressed_bytes (int): Compressed size, non-negative.
        params (EnergyParams, optional): Model parameters; defaults when omitted.

    Returns:
        EnergyEstimate: Exact (rational) transmit, compute and net figures.

    Raises:
        ValidationError: If ``raw_bytes`` < 1 or ``compressed_bytes`` < 0.
    """
    if raw_bytes < 1:
        raise ValidationError(f"raw_bytes must be >= 1, got {raw_bytes}")
    if compressed_bytes < 0:
        raise ValidationError(f"compressed_bytes must be >= 0, got {compressed_bytes}")
    params = params or EnergyParams()
    per_byte = 8 * Fraction(params.tx_cost_per_bit)
    raw_tx = per_byte * raw_bytes
    tx = per_byte * compressed_bytes
    compute = Fraction(params.instructions_per_byte) * raw_bytes
    return EnergyEstimate(
        raw_tx_units=raw_tx,
        tx_units=tx,
        compute_units=compute,
        net_savings_units=raw_tx - tx - compute,
    )


def worthwhile(raw_bytes: int, compressed_bytes: int, params: Optional[EnergyParams] = None) -> bool:
    """True iff compressing strictly saves energy; a tie is not worth it."""
    return estimate(raw_bytes, compressed_bytes, params).net_savings_units > 0


def break_even_ratio(params: Optional[EnergyParams] = None) -> Optional[Fraction]:
    """
    Compression ratio above which compressing pays off.

    Savings are positive iff ``raw / compressed > 8t / (8t - i)`` with
    ``t`` the per-bit transmit cost and ``i`` the instructions per byte.

    Returns:
        Optional[Fraction]: The ratio, or None when ``i >= 8t`` and no ratio
        can pay for the compute.
    """
    params = params or EnergyParams()
    per_byte = 8 * Fraction(params.tx_cost_per_bit)
    instructions = Fraction(params.instructions_per_byte)
    if instructions >= per_byte:
        return None
    return per_byte / (per_byte - instructions)


def ratio_is_worthwhile(ratio: Fraction, params: Optional[EnergyParams] = None) -> bool:
    threshold = break_even_ratio(params)
    return threshold is not None and ratio > threshold


def _compressed_row(report: SweepReport, batch_size: int) -> Optional[TimingSample]:
    return report.row(Mode.PRECOMPRESSED_TRANSMIT, batch_size) or report.row(Mode.COMPRESS_AND_TRANSMIT, batch_size)


def annotate_report(report: SweepReport, params: Optional[EnergyParams] = None) -> SweepReport:
    """
    Adds ``net_savings_units`` and ``worthwhile`` to every row.

    Each batch size is scored once, from its raw row and its compressed row
    (pre-compressed if present, else compress-and-transmit), and the result
    is copied onto all rows of that size. Other fields are left untouched.

    Raises:
        ValidationError: If a batch size lacks a raw or a compressed row.
    """
    params = params or EnergyParams()
    scores: Dict[int, EnergyEstimate] = {}
    for row in report.rows:
        if row.batch_size in scores:
            continue
        raw_row = report.row(Mode.RAW_TRANSMIT, row.batch_size)
        compressed_row = _compressed_row(report, row.batch_size)
        if raw_row is None or compressed_row is None:
            raise ValidationError(f"batch size {row.batch_size} needs both a raw and a compressed row")
        scores[row.batch_size] = estimate(raw_row.raw_bytes, compressed_row.payload_bytes, params)

    rows: List[TimingSample] = []
    for row in report.rows:
        net = scores[row.batch_size].net_savings_units
        rows.append(row.model_copy(update={"net_savings_units": net, "worthwhile": net > 0}))
    for size, score in scores.items():
        logger.info(f"Batch {size}: net savings {float(score.net_savings_units):,.0f} units")
    return report.model_copy(update={"rows": rows})
