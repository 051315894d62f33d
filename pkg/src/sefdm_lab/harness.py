"""Seeded Monte Carlo BER evaluation over Eb/N0 grids for any detector, with
the closed-form QPSK reference and CSV emission.

Each grid point derives its own RNG stream from (seed, point index) via a
splitmix64 hash, and frames are generated in fixed-size chunks whose seeds
derive from (point seed, chunk index). Chunks are independent, so they can be
dispatched to a thread pool; error counts are plain integer sums, making the
result identical for repeated runs at the same thread count (and exactly
reproducible in the single-threaded reference mode).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    QPSK_SYMBOLS,
    SefdmConfig,
    build_subcarrier_matrix,
    ebn0_to_n0,
    symbol_classes,
)
from .detectors import DetectorInterface
from .errors import ParameterError
from .factorizations import mgs_qr

FRAMES_PER_CHUNK = 512
DEFAULT_MIN_BITS = 400_000
DEFAULT_MIN_ERRORS = 100
# A point stops after max_bits even if min_errors was never reached.
MAX_BITS_FACTOR = 40


@dataclass(frozen=True)
class BerPoint:
    ebn0_db: float
    bits: int
    errors: int
    ber: float
    hit_cap: bool = False  # frame cap reached before min_errors


@dataclass(frozen=True)
class BerCurve:
    detector_name: str
    alpha: float
    n: int
    points: list[BerPoint] = field(default_factory=list)
    seed: int = 0


def _splitmix64(x: int) -> int:
    """Stable 64-bit mix; decorrelates derived seeds across grid points."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def point_seed(seed: int, grid_index: int) -> int:
    return (seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(grid_index + 1)


def _run_chunk(detector, f_alpha, q_conj, n0, pseed, chunk_index, frames, n, bits_per_frame):
    rng = np.random.default_rng([pseed, chunk_index])
    bits = rng.integers(0, 2, size=(frames, bits_per_frame), dtype=np.uint8)
    s = QPSK_SYMBOLS[symbol_classes(bits)]
    tx = s @ f_alpha.T
    scale = math.sqrt(n0 / 2.0)
    noise = rng.standard_normal(tx.shape) * scale + 1j * (rng.standard_normal(tx.shape) * scale)
    y = (tx + noise) @ q_conj
    decided = detector.detect_frames(y)
    return int(np.count_nonzero(decided != bits))


def run_ber(
    detector: DetectorInterface,
    cfg: SefdmConfig,
    ebn0_grid_db: list[float],
    min_bits: int = DEFAULT_MIN_BITS,
    min_errors: int = DEFAULT_MIN_ERRORS,
    seed: int = 0,
    threads: int = 1,
) -> BerCurve:
    """Measure a BER curve: per grid point, simulate frames until both
    min_bits and min_errors are met (or the bit cap of 40*min_bits is hit,
    in which case the point is flagged).

    Deterministic given (detector, cfg, grid, seed, threads); threads = 1 is
    the reference mode.
    """
    if min_bits < 10_000:
        raise ParameterError(f"min_bits must be >= 10^4, got {min_bits}")
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    grid = sorted(float(v) for v in ebn0_grid_db)
    if not grid:
        raise ParameterError("ebn0_grid_db must be nonempty")

    n = cfg.n_subcarriers
    f_alpha = build_subcarrier_matrix(n, cfg.alpha)
    q_conj = mgs_qr(f_alpha).q.conj()
    bits_per_frame = cfg.bits_per_frame
    max_bits = MAX_BITS_FACTOR * min_bits

    points = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for index, ebn0_db in enumerate(grid):
            n0 = ebn0_to_n0(ebn0_db, cfg.bits_per_symbol, es=1.0)
            pseed = point_seed(seed, index)
            bits_done = 0
            errors = 0
            chunk = 0
            hit_cap = False
            while True:
                if bits_done >= min_bits and errors >= min_errors:
                    break
                if bits_done >= max_bits:
                    hit_cap = True
                    break
                round_chunks = list(range(chunk, chunk + threads))
                chunk += threads
                args = [
                    (detector, f_alpha, q_conj, n0, pseed, ci, FRAMES_PER_CHUNK, n, bits_per_frame)
                    for ci in round_chunks
                ]
                if pool is None:
                    results = [_run_chunk(*a) for a in args]
                else:
                    results = list(pool.map(lambda a: _run_chunk(*a), args))
                errors += sum(results)
                bits_done += FRAMES_PER_CHUNK * bits_per_frame * len(round_chunks)
            points.append(
                BerPoint(
                    ebn0_db=ebn0_db,
                    bits=bits_done,
                    errors=errors,
                    ber=errors / bits_done,
                    hit_cap=hit_cap,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return BerCurve(
        detector_name=detector.name, alpha=cfg.alpha, n=n, points=points, seed=seed
    )


def theoretical_qpsk_ber(ebn0_db: float) -> float:
    """Gray-coded QPSK on AWGN: Q(sqrt(2 Eb/N0)) = erfc(sqrt(Eb/N0))/2."""
    return 0.5 * math.erfc(math.sqrt(10.0 ** (ebn0_db / 10.0)))


def db_loss_at_ber(curve: BerCurve, reference, target_ber: float) -> float:
    """Horizontal dB gap between a measured curve and a reference curve at the
    given BER level (log-BER is interpolated linearly in dB).

    The measured curve must bracket target_ber with nonzero-BER points;
    otherwise a ParameterError is raised.
    """
    if not 0.0 < target_ber < 1.0:
        raise ParameterError(f"target_ber must be in (0, 1), got {target_ber}")
    pts = [(p.ebn0_db, p.ber) for p in curve.points if p.ber > 0.0]
    if len(pts) < 2:
        raise ParameterError("curve has fewer than two nonzero-BER points")
    pts.sort()
    bers = [b for _, b in pts]
    if not (min(bers) <= target_ber <= max(bers)):
        raise ParameterError(
            f"target BER {target_ber:g} is not bracketed by the curve "
            f"(measured range {min(bers):g} .. {max(bers):g})"
        )
    curve_db = _interp_db_at_ber(pts, target_ber)
    ref_db = _invert_reference(reference, target_ber)
    return curve_db - ref_db


def _interp_db_at_ber(pts, target: float) -> float:
    log_t = math.log(target)
    for (db0, b0), (db1, b1) in zip(pts, pts[1:]):
        lo, hi = sorted((b0, b1))
        if lo <= target <= hi:
            l0, l1 = math.log(b0), math.log(b1)
            if l0 == l1:
                return db0
            frac = (log_t - l0) / (l1 - l0)
            return db0 + frac * (db1 - db0)
    raise ParameterError("target BER falls outside every curve segment")


def _invert_reference(reference, target: float, lo: float = -30.0, hi: float = 60.0) -> float:
    """Find the dB where the (strictly decreasing) reference hits target."""
    if reference(lo) < target or reference(hi) > target:
        raise ParameterError(f"reference curve does not reach BER {target:g} in [{lo}, {hi}] dB")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if reference(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


BER_CSV_HEADER = "detector,alpha,n,ebn0_db,bits,errors,ber,seed"


def ber_curve_rows(curve: BerCurve) -> list[str]:
    """CSV rows for one curve, floats at 10 significant digits."""
    rows = []
    for p in curve.points:
        rows.append(
            f"{curve.detector_name},{curve.alpha:.10g},{curve.n},"
            f"{p.ebn0_db:.10g},{p.bits},{p.errors},{p.ber:.10g},{curve.seed}"
        )
    return rows


def theory_rows(alpha: float, n: int, ebn0_grid_db: list[float], seed: int) -> list[str]:
    """Companion rows for the closed-form QPSK baseline (bits/errors are 0)."""
    return [
        f"theory_qpsk,{alpha:.10g},{n},{db:.10g},0,0,{theoretical_qpsk_ber(db):.10g},{seed}"
        for db in sorted(float(v) for v in ebn0_grid_db)
    ]
