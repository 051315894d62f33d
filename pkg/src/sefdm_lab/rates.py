"""Waterfilling power allocation and the SEFDM capacity / uncoded-rate sweeps.

Spectral efficiencies are reported in bits/s/Hz: the sum over sub-channels is
divided by alpha*N, crediting the bandwidth compression.

Capacity plots are parameterized by Eb/N0 with the standard normalized-capacity
convention Eb/N0 = (P/N0) / eta, where eta is that same curve's spectral
efficiency; the mapping is solved self-consistently per curve, and each swept
point also records the raw SNR so other conventions can be replotted without
recomputation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import SefdmConfig, build_subcarrier_matrix
from .errors import DegenerateMatrixError, ParameterError
from .factorizations import mgs_qr, svd_complex


@dataclass(frozen=True)
class PowerAllocation:
    """Waterfilling output: powers p (aligned with the input spectrum), water
    level mu, and the number of active sub-channels."""

    p: np.ndarray
    mu: float
    active_count: int


@dataclass(frozen=True)
class RatePoint:
    alpha: float
    n: int
    ebn0_db: float
    snr: float
    c_sefdm: float
    r_sefdm: float
    c_ofdm: float


def waterfill(sigma: np.ndarray, n0: float, total_power: float) -> PowerAllocation:
    """Optimal power allocation over parallel channels with gains sigma_i.

    Solves p_i = (mu - n0/sigma_i^2)^+ with sum(p) = total_power exactly:
    sort sigma descending, try M = N..1 active channels with
    mu = (total + sum_{i<=M} n0/sigma_i^2)/M, and accept the first M whose
    weakest active power is positive.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ParameterError(f"sigma must be a nonempty 1-D vector, got shape {sigma.shape}")
    if np.any(sigma < 0):
        raise ParameterError("singular values must be nonnegative")
    if not (n0 > 0 and total_power > 0):
        raise ParameterError(f"n0 and total_power must be > 0, got {n0}, {total_power}")
    if not np.any(sigma > 0):
        raise DegenerateMatrixError("all channel gains are zero; waterfilling is undefined")

    order = np.argsort(-sigma, kind="stable")
    inv_gain = np.full(sigma.size, np.inf)
    positive = sigma[order] > 0
    inv_gain[positive] = n0 / sigma[order][positive] ** 2

    mu = math.inf
    active = 0
    for m in range(int(np.count_nonzero(positive)), 0, -1):
        mu = (total_power + inv_gain[:m].sum()) / m
        if mu - inv_gain[m - 1] > 0:
            active = m
            break
    if active == 0:  # unreachable: m = 1 always yields positive power
        raise DegenerateMatrixError("waterfilling found no active channel")

    p_sorted = np.zeros(sigma.size)
    p_sorted[:active] = mu - inv_gain[:active]
    p = np.empty_like(p_sorted)
    p[order] = p_sorted
    return PowerAllocation(p=p, mu=float(mu), active_count=active)


@lru_cache(maxsize=128)
def singular_spectrum(n: int, alpha: float) -> np.ndarray:
    """Singular values of the projections matrix R for (N, alpha), descending.

    Cached: the factorization chain is SNR independent, so sweeps reuse it.
    """
    factors = mgs_qr(build_subcarrier_matrix(n, alpha))
    sigma = svd_complex(factors.r).sigma
    sigma.setflags(write=False)
    return sigma


def _capacity_from_spectrum(sigma: np.ndarray, alpha: float, snr: float) -> float:
    n = sigma.size
    alloc = waterfill(sigma, 1.0, n * snr)
    active = alloc.p > 0
    return float(np.log2(1.0 + sigma[active] ** 2 * alloc.p[active]).sum() / (alpha * n))


def _rate_from_spectrum(sigma: np.ndarray, alpha: float, snr: float) -> float:
    return float(np.log2(1.0 + sigma**2 * snr).sum() / (alpha * sigma.size))


def capacity_sefdm(cfg: SefdmConfig, power_per_subcarrier: float) -> float:
    """Waterfilling capacity in bits/s/Hz for the given config and per-subcarrier
    power budget."""
    if not power_per_subcarrier > 0:
        raise ParameterError(f"power must be > 0, got {power_per_subcarrier}")
    sigma = singular_spectrum(cfg.n_subcarriers, cfg.alpha)
    return _capacity_from_spectrum(sigma, cfg.alpha, power_per_subcarrier / cfg.n0)


def rate_equal_power(cfg: SefdmConfig, power_per_subcarrier: float) -> float:
    """Achievable rate with equal power P on every subcarrier (no precoding)."""
    if not power_per_subcarrier > 0:
        raise ParameterError(f"power must be > 0, got {power_per_subcarrier}")
    sigma = singular_spectrum(cfg.n_subcarriers, cfg.alpha)
    return _rate_from_spectrum(sigma, cfg.alpha, power_per_subcarrier / cfg.n0)


def ofdm_reference(power: float, n0: float) -> float:
    """Orthogonal-signalling baseline log2(1 + P/N0)."""
    if not (power >= 0 and n0 > 0):
        raise ParameterError(f"need power >= 0 and n0 > 0, got {power}, {n0}")
    return math.log2(1.0 + power / n0)


def _solve_snr_for_ebn0(eta, ebn0_lin: float, lo: float = 1e-12, hi: float = 1e15) -> float:
    """Solve snr/eta(snr) = ebn0_lin for snr; snr/eta is strictly increasing."""

    def gap(snr: float) -> float:
        return snr / eta(snr) - ebn0_lin

    if gap(lo) > 0 or gap(hi) < 0:
        raise ParameterError(
            f"Eb/N0 = {10*math.log10(ebn0_lin):.2f} dB is outside this curve's reachable range"
        )
    for _ in range(100):
        mid = math.sqrt(lo * hi)  # bisection in log-SNR
        if gap(mid) > 0:
            hi = mid
        else:
            lo = mid
    return math.sqrt(lo * hi)


def sweep(
    alphas: list[float], ns: list[int], ebn0_grid_db: list[float]
) -> list[RatePoint]:
    """One RatePoint per (alpha, N, Eb/N0), rows ordered like the input grids.

    Each of the three curves (waterfilling capacity, equal-power rate, OFDM
    reference) is evaluated at its own self-consistent SNR; the recorded snr
    column is the capacity curve's.
    """
    if not (alphas and ns and ebn0_grid_db):
        raise ParameterError("alphas, ns and ebn0_grid_db must all be nonempty")
    points = []
    for alpha in alphas:
        for n in ns:
            sigma = singular_spectrum(n, alpha)
            cap = lambda snr: _capacity_from_spectrum(sigma, alpha, snr)
            rate = lambda snr: _rate_from_spectrum(sigma, alpha, snr)
            ofdm = lambda snr: math.log2(1.0 + snr)
            for ebn0_db in ebn0_grid_db:
                ebn0 = 10.0 ** (ebn0_db / 10.0)
                snr_c = _solve_snr_for_ebn0(cap, ebn0)
                snr_r = _solve_snr_for_ebn0(rate, ebn0)
                snr_o = _solve_snr_for_ebn0(ofdm, ebn0)
                points.append(
                    RatePoint(
                        alpha=alpha,
                        n=n,
                        ebn0_db=ebn0_db,
                        snr=snr_c,
                        c_sefdm=cap(snr_c),
                        r_sefdm=rate(snr_r),
                        c_ofdm=ofdm(snr_o),
                    )
                )
    return points
